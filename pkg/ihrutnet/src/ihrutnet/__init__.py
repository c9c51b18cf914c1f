"""Toy-scale unfolding transformer for interferometric hyperspectral
reconstruction, trained on synthesized datasets and served as a denoising
prior over a framed bridge protocol."""

from .data import IhiDataset
from .model import IhrutNet, NetConfig, count_parameters
from .operators import FrozenOperators
from .spe import SpeBlock
from .train import TrainConfig, load_checkpoint, psnr, train

__version__ = "0.1.0"

__all__ = [
    "FrozenOperators",
    "IhiDataset",
    "IhrutNet",
    "NetConfig",
    "SpeBlock",
    "TrainConfig",
    "count_parameters",
    "load_checkpoint",
    "psnr",
    "train",
]
