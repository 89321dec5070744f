"""Spectra, eigenmodes, simulation and fits for a cavity coupled to two mechanical modes."""

__version__ = "0.1.0"

from .dynamics import EigenMode, UnstableSystemError, build_drift, eigenmodes, is_stable
from .fitting import FitConfig, FitResult, fit_heterodyne, fit_joint
from .model import DerivedCouplings, ParameterError, SystemParams, derive_couplings
from .oracle import NoiseModel, SimConfig, frequency_domain_psd, simulate_trajectory, welch_psd
from .spectra import (
    Spectrum,
    asymmetry_from_data,
    asymmetry_model,
    backaction_spectrum,
    bright_mode_psd,
    heterodyne_psd,
    interference_term,
)

__all__ = [
    "DerivedCouplings",
    "EigenMode",
    "FitConfig",
    "FitResult",
    "NoiseModel",
    "ParameterError",
    "SimConfig",
    "Spectrum",
    "SystemParams",
    "UnstableSystemError",
    "asymmetry_from_data",
    "asymmetry_model",
    "backaction_spectrum",
    "bright_mode_psd",
    "build_drift",
    "derive_couplings",
    "eigenmodes",
    "fit_heterodyne",
    "fit_joint",
    "frequency_domain_psd",
    "heterodyne_psd",
    "interference_term",
    "is_stable",
    "simulate_trajectory",
    "welch_psd",
]
