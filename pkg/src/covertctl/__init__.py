"""Covert control of AR(1) systems: closed-form detectability bounds and Monte Carlo checks."""
from .analytics import (
    CovMatrix,
    LogBase,
    Provenance,
    bound_report,
    kl_gain_change,
    kl_gaussian,
    kl_reset,
    q_function,
    q_inverse,
    reset_covariance,
    steady_covariance,
    transient_covariance,
)
from .ar1 import Ar1Params, Gaussian, InitPolicy, Trajectory, TruncatedGaussian, UniformBounded, simulate
from .controllers import GainChange, NoControl, OneBit, Threshold
from .detectors import Decision, DetectorVerdict, MagnitudeConfig
from .errors import ConfigurationError, CovertCtlError, DomainError, NumericError
from .montecarlo import ErrorRates, Scenario, empirical_covariance, estimate_error_rates, sweep

__version__ = "0.1.0"
