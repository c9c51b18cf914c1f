"""Interferometric hyperspectral imaging toolkit: calibrated degradation
simulation, parameter estimation, dataset synthesis, and reconstruction."""

from .calibrate import CalibrationSet, calibrate_all
from .cube import Cube, column_stats, resample_hsi_to_wavenumber, resample_wavenumber_to_hsi, spectral_mean
from .degrade import DegradationParams, degrade, demo_instrument, demo_params, load_params, save_params
from .evaluate import EvalReport, evaluate_run, psnr, ssim
from .ihic_io import read_array, read_cube, write_array, write_cube
from .profiles import InstrumentProfile, desk_profile, standard_profile
from .reconstruct import Operators, UnfoldConfig, UnfoldResult, precorrect, reconstruct_direct, reconstruct_traditional, unfold
from .rng import RngHandle
from .synthesize import DatasetManifest, make_dataset, make_patches, photometric_scale, synthesize_pair, toy_scene
from .transform import apply_forward, apply_inverse, build_basis, build_inverse, export_operators

__version__ = "0.1.0"

__all__ = [
    "CalibrationSet",
    "Cube",
    "DatasetManifest",
    "DegradationParams",
    "EvalReport",
    "InstrumentProfile",
    "Operators",
    "RngHandle",
    "UnfoldConfig",
    "UnfoldResult",
    "apply_forward",
    "apply_inverse",
    "build_basis",
    "build_inverse",
    "calibrate_all",
    "column_stats",
    "degrade",
    "demo_instrument",
    "demo_params",
    "desk_profile",
    "evaluate_run",
    "export_operators",
    "load_params",
    "make_dataset",
    "make_patches",
    "photometric_scale",
    "precorrect",
    "psnr",
    "read_array",
    "read_cube",
    "reconstruct_direct",
    "reconstruct_traditional",
    "resample_hsi_to_wavenumber",
    "resample_wavenumber_to_hsi",
    "save_params",
    "spectral_mean",
    "ssim",
    "standard_profile",
    "synthesize_pair",
    "toy_scene",
    "unfold",
    "write_array",
    "write_cube",
]
