import pathlib

import pytest
import torch

# the producer toolkit is used here only to synthesize test fixtures on its
# public file formats; the package under test never imports it
import ihikit as ik
from ihikit import synthesize as syn
from ihikit.transform import export_operators

from ihrutnet import IhiDataset, TrainConfig, train


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory) -> pathlib.Path:
    """Toy desk-scale dataset: 4 full-width training patches, 2 held-out
    scenes, with the frozen operator files exported alongside the params."""
    root = tmp_path_factory.mktemp("ihi")
    desk = ik.desk_profile()
    params = ik.demo_params(desk, seed=0, e=0.05)
    src = root / "src"
    src.mkdir()
    for i in range(6):
        ik.write_cube(ik.toy_scene(desk, desk.h, desk.w, seed=i), src / f"s{i}.ihic")
    syn.make_dataset(src, params, root / "ds", patch=64, stride=32,
                     per_image_cap=2, test_hold_out=2, master_seed=3)
    export_operators(params, root / "ds" / "params")
    return root / "ds"


@pytest.fixture(scope="session")
def dataset(dataset_dir) -> IhiDataset:
    return IhiDataset(dataset_dir)


@pytest.fixture(scope="session")
def trained(dataset, tmp_path_factory):
    """Short training run on the full train split, for held-out comparisons
    and bridge serving."""
    out = tmp_path_factory.mktemp("run")
    cfg = TrainConfig(epochs=10**6, max_steps=260, lr=2e-4, warmup_steps=30,
                      seed=1, val_every=10**6)
    model, curves = train(dataset, cfg, out)
    model.eval()
    return {"model": model, "curves": curves, "dir": out}


@pytest.fixture(scope="session")
def desk_profile_meta(dataset):
    return dataset.manifest["profile"]


def tensor_of(gen, *shape):
    return torch.from_numpy(gen.random(shape)).float()
