"""Willie's decision rules.

Each rule comes in two forms: a scalar function that returns a
:class:`DetectorVerdict` for one observation window, and a batch test class
used by the Monte Carlo runner, whose ``decide`` method maps a block of
simulated trials to a boolean array (``True`` means "controlled").
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy import linalg

from .analytics import CovMatrix, _as_matrix, _cholesky, _logdet, magnitude_threshold, reset_lrt_threshold
from .errors import ConfigurationError, DomainError

__all__ = [
    "Decision",
    "DetectorVerdict",
    "MagnitudeConfig",
    "magnitude_detector",
    "control_energy_threshold",
    "control_energy_detector",
    "residual_energy_threshold",
    "residual_energy_detector",
    "reset_lrt_detector",
    "gaussian_log_ratio",
    "gaussian_lrt_detector",
    "MagnitudeTest",
    "ControlEnergyTest",
    "ResidualEnergyTest",
    "ResetLrtTest",
    "GaussianLrtTest",
]


class Decision(enum.Enum):
    H0_UNCONTROLLED = 0
    H1_CONTROLLED = 1


@dataclass(frozen=True)
class DetectorVerdict:
    statistic: float
    threshold: float
    decision: Decision

    @property
    def controlled(self) -> bool:
        return self.decision is Decision.H1_CONTROLLED


def _verdict(statistic: float, threshold: float, h1: bool) -> DetectorVerdict:
    return DetectorVerdict(float(statistic), float(threshold), Decision.H1_CONTROLLED if h1 else Decision.H0_UNCONTROLLED)


def _check_delta(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")


# ---------------------------------------------------------------- magnitude

@dataclass(frozen=True)
class MagnitudeConfig:
    """Threshold ``M`` for an unstable plant whose stabilised state has ``E|X|^gamma <= c``."""

    M: float
    gamma: float
    c: float
    delta: float

    def __post_init__(self):
        try:
            floor = magnitude_threshold(self.c, self.gamma, self.delta)
        except DomainError as exc:
            raise ConfigurationError(str(exc)) from exc
        if self.M < floor * (1.0 - 1e-12):
            raise ConfigurationError(f"M={self.M} is below (2c/delta)^(1/gamma)={floor}")


def magnitude_detector(x_n0: float, config: MagnitudeConfig) -> DetectorVerdict:
    """Declare control when the state at the observation time stays within ``M``."""
    stat = abs(x_n0)
    return _verdict(stat, config.M, stat <= config.M)


# ------------------------------------------------------------ energy tests

def control_energy_threshold(sigma_v: float, delta: float, K: int) -> float:
    """``sigma_v^2 + 2 sigma_v^2 / sqrt(delta K)``."""
    return sigma_v**2 + 2.0 * sigma_v**2 / math.sqrt(delta * K)


def control_energy_detector(observations, sigma_v: float, delta: float) -> DetectorVerdict:
    """Energy detector on ``K`` noisy observations of the control signal."""
    w = np.asarray(observations, dtype=np.float64)
    if w.size == 0:
        raise DomainError("observation window is empty")
    if not sigma_v > 0.0:
        raise DomainError("sigma_v must be positive")
    _check_delta(delta)
    stat = float(np.mean(w * w))
    thr = control_energy_threshold(sigma_v, delta, w.size)
    return _verdict(stat, thr, stat >= thr)


def residual_energy_threshold(sigma2: float, m4: float, delta: float, K: int) -> float:
    """``sigma^2 + sqrt((m4 - sigma^4) / (K delta/2))``."""
    return sigma2 + math.sqrt(max(m4 - sigma2 * sigma2, 0.0) / (K * delta / 2.0))


def _check_residual(sigma2, m4, delta):
    if not sigma2 > 0.0:
        raise DomainError("sigma2 must be positive")
    if m4 < sigma2 * sigma2 * (1.0 - 1e-12):
        raise DomainError("fourth moment must be at least sigma2^2")
    _check_delta(delta)


def residual_energy_detector(states, a: float, sigma2: float, m4: float, delta: float) -> DetectorVerdict:
    """Energy of the one-step prediction residuals ``x_n - a x_{n-1}`` over K+1 states."""
    x = np.asarray(states, dtype=np.float64)
    if x.size < 2:
        raise DomainError("need at least two states")
    _check_residual(sigma2, m4, delta)
    y = x[1:] - a * x[:-1]
    stat = float(np.mean(y * y))
    thr = residual_energy_threshold(sigma2, m4, delta, y.size)
    return _verdict(stat, thr, stat >= thr)


# ---------------------------------------------------------------- reset LRT

def reset_lrt_detector(x_tau_plus_1: float, a: float, sigma: float, delta: float) -> DetectorVerdict:
    """Known-reset-time test: a small post-reset sample signals a reset."""
    thr = reset_lrt_threshold(a, sigma, delta)
    stat = x_tau_plus_1 * x_tau_plus_1
    return _verdict(stat, thr, stat <= thr)


# ------------------------------------------------------------ Gaussian LRT

def gaussian_log_ratio(samples, S0, S1) -> np.ndarray:
    """``log f1(x) - log f0(x)`` for zero-mean Gaussians, one value per row of ``samples``."""
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    m0, m1 = _as_matrix(S0), _as_matrix(S1)
    if m0.shape != m1.shape or x.shape[1] != m0.shape[0]:
        raise DomainError("dimension mismatch between sample and covariances")
    f1 = _cholesky(m1, "S1")
    if np.array_equal(m0, m1):
        return np.zeros(x.shape[0])
    f0 = _cholesky(m0, "S0")
    z1 = linalg.solve_triangular(f1[0], x.T, lower=True)
    z0 = linalg.solve_triangular(f0[0], x.T, lower=True)
    q1 = np.einsum("ij,ij->j", z1, z1)
    q0 = np.einsum("ij,ij->j", z0, z0)
    return 0.5 * (q0 - q1) + 0.5 * (_logdet(f0) - _logdet(f1))


def gaussian_lrt_detector(sample, S0, S1) -> DetectorVerdict:
    """Likelihood-ratio test between ``N(0, S0)`` and ``N(0, S1)`` at threshold 0."""
    stat = float(gaussian_log_ratio(sample, S0, S1)[0])
    return _verdict(stat, 0.0, stat >= 0.0)


# -------------------------------------------------------------- batch tests

@dataclass(frozen=True)
class MagnitudeTest:
    config: MagnitudeConfig
    n0: int

    def decide(self, batch) -> np.ndarray:
        if batch.states.shape[1] < self.n0:
            raise ConfigurationError("horizon is shorter than the observation time n0")
        return np.abs(batch.states[:, self.n0 - 1]) <= self.config.M

    def describe(self) -> dict:
        c = self.config
        return {"detector": "magnitude", "M": c.M, "gamma": c.gamma, "c": c.c, "delta": c.delta, "n0": self.n0}


@dataclass(frozen=True)
class ControlEnergyTest:
    """Observes ``W_k = U_k + v_k`` on steps ``2..K+1`` (``U_1`` is always 0)."""

    sigma_v: float
    delta: float
    K: int

    def decide(self, batch) -> np.ndarray:
        u = batch.controls[:, 1 : self.K + 1]
        if u.shape[1] != self.K:
            raise ConfigurationError("horizon must be at least K+1 for the control-energy test")
        w = u + batch.rng.normal(0.0, self.sigma_v, u.shape)
        return np.mean(w * w, axis=1) >= control_energy_threshold(self.sigma_v, self.delta, self.K)

    def describe(self) -> dict:
        return {"detector": "control_energy", "sigma_v": self.sigma_v, "delta": self.delta, "K": self.K}


@dataclass(frozen=True)
class ResidualEnergyTest:
    """Uses the last ``K+1`` states of each trial."""

    a: float
    sigma2: float
    m4: float
    delta: float
    K: int

    def __post_init__(self):
        _check_residual(self.sigma2, self.m4, self.delta)

    def decide(self, batch) -> np.ndarray:
        x = batch.states[:, -(self.K + 1) :]
        if x.shape[1] != self.K + 1:
            raise ConfigurationError("horizon must be at least K+1 for the residual-energy test")
        y = x[:, 1:] - self.a * x[:, :-1]
        return np.mean(y * y, axis=1) >= residual_energy_threshold(self.sigma2, self.m4, self.delta, self.K)

    def describe(self) -> dict:
        return {
            "detector": "residual_energy",
            "a": self.a,
            "sigma2": self.sigma2,
            "m4": self.m4,
            "delta": self.delta,
            "K": self.K,
        }


@dataclass(frozen=True)
class ResetLrtTest:
    """Reads ``X_{tau+1}`` at each trial's reset time; a missing time (-1) decides H0."""

    a: float
    sigma: float
    delta: float

    def decide(self, batch) -> np.ndarray:
        taus = batch.taus
        if taus is None:
            raise ConfigurationError("the reset LRT needs the reset time of every trial")
        t = reset_lrt_threshold(self.a, self.sigma, self.delta)
        valid = (taus >= 1) & (taus < batch.states.shape[1])
        x = batch.states[np.arange(len(taus)), np.where(valid, taus, 0)]
        return valid & (x * x <= t)

    def describe(self) -> dict:
        return {"detector": "reset_lrt", "a": self.a, "sigma": self.sigma, "delta": self.delta}


CovSource = Union[CovMatrix, Callable[[int], CovMatrix]]


@dataclass(frozen=True)
class GaussianLrtTest:
    """Full-window LRT; ``S1`` may depend on the trial's reset time."""

    S0: CovMatrix
    S1: CovSource
    label: str = "gaussian_lrt"

    def decide(self, batch) -> np.ndarray:
        x = batch.states
        if not callable(self.S1):
            return gaussian_log_ratio(x, self.S0, self.S1) >= 0.0
        if batch.taus is None:
            raise ConfigurationError("a reset-dependent alternative needs reset times")
        out = np.empty(x.shape[0], dtype=bool)
        for tau in np.unique(batch.taus):
            rows = batch.taus == tau
            out[rows] = gaussian_log_ratio(x[rows], self.S0, self.S1(int(tau))) >= 0.0
        return out

    def describe(self) -> dict:
        return {"detector": self.label, "n": self.S0.n}
