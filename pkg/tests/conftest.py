import dataclasses

import numpy as np
import pytest

import ihikit as ik
from ihikit import calibrate as cal
from ihikit import reconstruct as rec
from ihikit import synthesize as syn


@pytest.fixture(scope="session")
def desk():
    return ik.desk_profile()


@pytest.fixture(scope="session")
def closed_loop(desk):
    """One full calibration closed loop at the acceptance operating point:
    H=1024, n=3 levels, desk profile."""
    params, extras = ik.demo_instrument(desk, seed=1, e=0.0)
    calset = cal.synthesize_calibration_set(params, h=1024, rng=ik.RngHandle(7),
                                            m_r=extras["m_r"])
    est, report = cal.calibrate_all(calset, e=params.e)
    return {"truth": params, "extras": extras, "calset": calset,
            "est": est, "report": report}


@pytest.fixture(scope="session")
def stress(desk):
    """The method-ordering stress scene: shot noise at rate 1e3 and 20-count
    readout noise, with gain centred on 1 so the flat-field-only traditional
    pipeline is not scale-broken."""
    params = ik.demo_params(desk, seed=0, e=0.0, k_mean=1.0)
    params = dataclasses.replace(
        params, sigma_read=np.full((desk.w, desk.num_opd), 20.0))
    ops = rec.Operators.build(params)
    scene = ik.toy_scene(desk, desk.h, desk.w, seed=1)
    i_d, b0, scaled, factor = syn.synthesize_pair(scene, params, seed=5, target_rate=1e3)
    ref = ik.resample_wavenumber_to_hsi(b0)
    return {"params": params, "ops": ops, "scene": scene, "i_d": i_d,
            "b0": b0, "scaled": scaled, "ref": ref}


def median_rel_err(est, truth):
    return float(np.median(np.abs(est - truth) / np.maximum(np.abs(truth), 1e-30)))
