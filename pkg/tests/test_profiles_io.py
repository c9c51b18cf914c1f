"""Instrument grids and the IHIC file format."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import ihikit as ik
from ihikit import ihic_io
from ihikit.profiles import ProfileError


def test_standard_profile_matches_instrument_tables():
    p = ik.standard_profile()
    assert (p.w, p.num_opd, p.center, p.num_nu, p.num_lambda) == (2048, 256, 35, 221, 70)
    assert p.num_nu == p.num_opd - p.center
    assert np.isclose(p.opd_grid[0], -5140.8)
    assert np.isclose(p.opd_grid[255], 32313.6)  # table rounds this to 32313.7
    assert np.isclose(p.lambda_grid[0], 450.0)
    assert np.isclose(p.lambda_grid[1] - p.lambda_grid[0], 6.52)
    assert np.isclose(p.nu_grid[-1], 0.0034)
    assert np.isclose(p.delta_nu, 0.0034 / 220)
    assert np.isclose(2 * p.delta_l * p.nu_grid[-1], 0.998784)


def test_standard_profile_in_band_occupancy():
    p = ik.standard_profile()
    lo, hi = 1.0 / 900.0, 1.0 / 450.0
    inside = (p.nu_grid >= lo) & (p.nu_grid <= hi)
    assert inside.sum() == 72
    assert np.array_equal(p.in_band, inside)


def test_desk_profile_relations():
    p = ik.desk_profile()
    assert p.num_nu == 55 == p.num_opd - p.center
    assert 0.99 <= 2 * p.delta_l * p.nu_grid[-1] <= 1.0
    assert p.opd_grid[9] == 0.0
    assert p.lambda_grid[0] == 450.0 and p.lambda_grid[-1] == 900.0


def test_profile_invariants_enforced():
    p = ik.desk_profile()
    with pytest.raises(ProfileError):
        ik.InstrumentProfile(name="bad", h=4, w=4, lambda_grid=p.lambda_grid,
                             nu_grid=p.nu_grid[:-1], opd_grid=p.opd_grid,
                             center=p.center, delta_l=p.delta_l, delta_nu=p.delta_nu)
    with pytest.raises(ProfileError):
        ik.InstrumentProfile(name="bad", h=4, w=4, lambda_grid=p.lambda_grid,
                             nu_grid=p.nu_grid, opd_grid=p.opd_grid + 1.0,
                             center=p.center, delta_l=p.delta_l, delta_nu=p.delta_nu)


def test_profile_dict_round_trip():
    p = ik.standard_profile(h=120)
    q = ik.InstrumentProfile.from_dict(p.to_dict())
    assert q.name == p.name and q.h == p.h
    assert np.array_equal(q.nu_grid, p.nu_grid)
    assert np.array_equal(q.opd_grid, p.opd_grid)


# ---------------------------------------------------------------------------
# IHIC format

@settings(max_examples=40, deadline=None)
@given(
    dims=st.lists(st.integers(min_value=1, max_value=7), min_size=1, max_size=3),
    use64=st.booleans(),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_ihic_round_trip_bit_exact(tmp_path_factory, dims, use64, seed):
    gen = np.random.default_rng(seed)
    arr = gen.standard_normal(dims).astype(np.float64 if use64 else np.float32)
    path = tmp_path_factory.mktemp("ihic") / "x.ihic"
    ik.write_array(arr, path)
    back = ik.read_array(path)
    assert back.dtype == arr.dtype
    assert back.shape == arr.shape
    assert np.array_equal(back.view(np.uint8), arr.view(np.uint8))


def test_ihic_rejects_non_finite(tmp_path):
    arr = np.zeros((2, 2))
    arr[0, 0] = np.nan
    with pytest.raises(ihic_io.NonFiniteError):
        ik.write_array(arr, tmp_path / "bad.ihic")


def test_ihic_error_taxonomy(tmp_path):
    path = tmp_path / "x.ihic"
    ik.write_array(np.zeros((2, 2, 2), dtype=np.float32), path)
    blob = path.read_bytes()

    with pytest.raises(ihic_io.BadMagicError, match="magic"):
        ihic_io.decode_array(b"NOPE" + blob[4:])
    with pytest.raises(ihic_io.VersionMismatchError, match="version"):
        ihic_io.decode_array(blob[:4] + b"\x07\x00" + blob[6:])
    with pytest.raises(ihic_io.BadDtypeError, match="dtype"):
        ihic_io.decode_array(blob[:6] + b"\x09" + blob[7:])
    with pytest.raises(ihic_io.BadNdimError, match="ndim"):
        ihic_io.decode_array(blob[:7] + b"\x05" + blob[8:])
    # 2x2x2 header with a 7-float payload
    with pytest.raises(ihic_io.TruncatedPayloadError, match="payload"):
        ihic_io.decode_array(blob[:-4])
    # absurd dims imply a payload the file cannot hold
    huge = blob[:8] + (0xFFFFFFFF).to_bytes(4, "little") * 3 + blob[20:]
    with pytest.raises(ihic_io.DimOverflowError, match="dims"):
        ihic_io.decode_array(huge)


def test_write_rejects_unsupported_rank(tmp_path):
    with pytest.raises(ihic_io.BadNdimError):
        ik.write_array(np.zeros((1, 1, 1, 1)), tmp_path / "x.ihic")


def test_cube_sidecar_round_trip(tmp_path, desk):
    gen = np.random.default_rng(0)
    cube = ik.Cube(gen.random((3, desk.w, desk.num_lambda), dtype=np.float64),
                   "wavelength", desk)
    ik.write_cube(cube, tmp_path / "c.ihic")
    assert (tmp_path / "c.json").exists()
    back = ik.read_cube(tmp_path / "c.ihic")
    assert back.axis_kind == "wavelength"
    assert back.profile.name == desk.name
    assert np.array_equal(back.data, cube.data)
    assert np.array_equal(back.profile.opd_grid, desk.opd_grid)


def test_zero_cube_round_trip(tmp_path, desk):
    cube = ik.Cube(np.zeros((3, 4, desk.num_nu)), "wavenumber",
                   ik.desk_profile())
    ik.write_cube(cube, tmp_path / "z.ihic")
    assert np.array_equal(ik.read_cube(tmp_path / "z.ihic").data, cube.data)
