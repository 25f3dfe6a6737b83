"""Closed-form quantities: covariances, divergences, and detection/covertness thresholds.

All logarithms are natural unless a base is requested explicitly.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import erfc

from .errors import DomainError, NumericError

__all__ = [
    "Provenance",
    "CovMatrix",
    "BoundReport",
    "LogBase",
    "q_function",
    "q_inverse",
    "transient_covariance",
    "steady_covariance",
    "steady_precision",
    "reset_covariance",
    "reset_covariance_exact",
    "kl_gaussian",
    "trace_ratio_closed_form",
    "steady_det_closed_form",
    "kl_gain_change",
    "kl_reset",
    "bound_report",
    "covert_gain_bound_gain_change",
    "covert_gain_bound_reset",
    "gain_change_window_limit",
    "detection_gain_threshold",
    "k0_control_energy",
    "k0_residual_energy",
    "k0_residual_energy_compact",
    "n0_magnitude",
    "magnitude_threshold",
    "gaussian_abs_moment",
    "magnitude_false_alarm",
    "reset_lrt_threshold",
    "reset_lrt_false_alarm",
    "reset_lrt_miss",
]

_SQRT2 = math.sqrt(2.0)


# --------------------------------------------------------------------------
# Gaussian tail
# --------------------------------------------------------------------------

def q_function(x):
    """Standard normal upper tail ``Q(x) = P(N(0,1) > x)``; accepts arrays."""
    out = 0.5 * erfc(np.asarray(x, dtype=np.float64) / _SQRT2)
    return float(out) if np.ndim(out) == 0 else out


def _phi(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def q_inverse(p: float, tol: float = 1e-12) -> float:
    """Inverse of :func:`q_function` on ``(0, 1)``.

    Bisection narrows a bracket, then safeguarded Newton steps on ``Q``
    polish the root.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError(f"q_inverse needs 0 < p < 1, got {p}")
    if p > 0.5:
        return -q_inverse(1.0 - p, tol)
    if p == 0.5:
        return 0.0
    lo, hi = 0.0, 1.0
    while q_function(hi) > p:
        lo, hi = hi, 2.0 * hi
    while hi - lo > 1e-3:
        mid = 0.5 * (lo + hi)
        if q_function(mid) > p:
            lo = mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    for _ in range(100):
        dens = _phi(x)
        if dens == 0.0:
            break
        x_new = x + (q_function(x) - p) / dens
        if not lo <= x_new <= hi:
            x_new = 0.5 * (lo + hi)
        if q_function(x_new) > p:
            lo = x_new
        else:
            hi = x_new
        if abs(x_new - x) <= tol * max(1.0, abs(x)):
            return x_new
        x = x_new
    return x


# --------------------------------------------------------------------------
# Covariance builders
# --------------------------------------------------------------------------

class Provenance(enum.Enum):
    TRANSIENT = "transient"
    STEADY = "steady"
    PRECISION = "precision"
    RESET_BLOCK = "reset_block"
    RESET_TRANSIENT = "reset_transient"
    EMPIRICAL = "empirical"
    OTHER = "other"


@dataclass(frozen=True, eq=False)
class CovMatrix:
    """Dense symmetric PSD matrix tagged with the builder that produced it."""

    entries: np.ndarray
    provenance: Provenance = Provenance.OTHER
    tau: Optional[int] = None

    def __post_init__(self):
        m = np.array(self.entries, dtype=np.float64)
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise DomainError(f"covariance must be a non-empty square matrix, got shape {m.shape}")
        scale = max(1.0, float(np.max(np.abs(m))))
        if np.max(np.abs(m - m.T)) > 1e-12 * scale:
            raise DomainError("covariance matrix is not symmetric")
        if self.provenance is not Provenance.PRECISION:
            eig = np.linalg.eigvalsh(m)
            if eig[0] < -1e-9 * max(float(np.max(np.abs(eig))), 1e-300):
                raise DomainError(f"covariance matrix is not PSD (smallest eigenvalue {eig[0]:.3e})")
        if self.provenance in (Provenance.RESET_BLOCK, Provenance.RESET_TRANSIENT):
            if self.tau is None or not 1 <= self.tau < m.shape[0]:
                raise DomainError("reset covariance needs 1 <= tau <= n-1")
            if np.any(m[: self.tau, self.tau :] != 0.0):
                raise DomainError("cross-block entries of a reset covariance must be zero")

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


def _as_matrix(S) -> np.ndarray:
    return S.entries if isinstance(S, CovMatrix) else np.asarray(S, dtype=np.float64)


def _check_sigma(sigma: float) -> None:
    if not sigma > 0.0:
        raise DomainError("sigma must be positive")


def _lags(n: int):
    idx = np.arange(1, n + 1)
    return idx[:, None], idx[None, :]


def transient_covariance(a: float, sigma: float, n: int) -> CovMatrix:
    """Covariance of ``(X_1..X_n)`` started from ``X_0 = 0``."""
    _check_sigma(sigma)
    if abs(a) == 1.0:
        raise DomainError("transient covariance formula is singular at |a| = 1")
    i, j = _lags(n)
    m = sigma**2 / (1.0 - a * a) * (a ** np.abs(i - j) - a ** (i + j))
    return CovMatrix(m, Provenance.TRANSIENT)


def _steady(a: float, sigma: float, n: int) -> np.ndarray:
    i, j = _lags(n)
    return sigma**2 / (1.0 - a * a) * a ** np.abs(i - j).astype(np.float64)


def steady_covariance(a: float, sigma: float, n: int) -> CovMatrix:
    """Stationary Toeplitz covariance ``sigma^2 a^|i-j| / (1 - a^2)``."""
    _check_sigma(sigma)
    if not abs(a) < 1.0:
        raise DomainError("steady covariance needs |a| < 1")
    return CovMatrix(_steady(a, sigma, n), Provenance.STEADY)


def steady_precision(a: float, sigma: float, n: int) -> CovMatrix:
    """Tridiagonal inverse of :func:`steady_covariance`."""
    _check_sigma(sigma)
    if not abs(a) < 1.0:
        raise DomainError("steady precision needs |a| < 1")
    if n == 1:
        return CovMatrix([[(1.0 - a * a) / sigma**2]], Provenance.PRECISION)
    diag = np.full(n, 1.0 + a * a)
    diag[0] = diag[-1] = 1.0
    m = np.diag(diag) - a * (np.eye(n, k=1) + np.eye(n, k=-1))
    return CovMatrix(m / sigma**2, Provenance.PRECISION)


def _check_tau(n: int, tau: int) -> None:
    if not 1 <= tau <= n - 1:
        raise DomainError(f"tau must lie in [1, n-1] = [1, {n - 1}], got {tau}")


def reset_covariance(a: float, sigma: float, n: int, tau: int) -> CovMatrix:
    """Block-diagonal ``diag(steady_tau, steady_{n-tau})`` for a single reset."""
    _check_sigma(sigma)
    if not abs(a) < 1.0:
        raise DomainError("reset covariance needs |a| < 1")
    _check_tau(n, tau)
    m = linalg.block_diag(_steady(a, sigma, tau), _steady(a, sigma, n - tau))
    return CovMatrix(m, Provenance.RESET_BLOCK, tau)


def reset_covariance_exact(a: float, sigma: float, n: int, tau: int) -> CovMatrix:
    """Covariance of a stationary path reset to ``X_{tau+1} = Z_{tau+1}``.

    The segment after the reset restarts from zero, so its block is the
    transient covariance rather than the stationary one.
    """
    _check_sigma(sigma)
    if not abs(a) < 1.0:
        raise DomainError("reset covariance needs |a| < 1")
    _check_tau(n, tau)
    tail = transient_covariance(a, sigma, n - tau).entries
    m = linalg.block_diag(_steady(a, sigma, tau), tail)
    return CovMatrix(m, Provenance.RESET_TRANSIENT, tau)


# --------------------------------------------------------------------------
# Divergences
# --------------------------------------------------------------------------

def _cholesky(m: np.ndarray, name: str):
    try:
        return linalg.cho_factor(m, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        cond = np.linalg.cond(m)
        raise NumericError(f"{name} is singular or not positive definite (condition number {cond:.3e})") from exc


def _logdet(factor) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(factor[0]))))


def kl_gaussian(mu0, S0, mu1, S1) -> float:
    """``D(N(mu0, S0) || N(mu1, S1))`` in nats."""
    m0, m1 = _as_matrix(S0), _as_matrix(S1)
    mu0 = np.zeros(m0.shape[0]) if mu0 is None else np.asarray(mu0, dtype=np.float64)
    mu1 = np.zeros(m1.shape[0]) if mu1 is None else np.asarray(mu1, dtype=np.float64)
    n = m0.shape[0]
    if m0.shape != m1.shape or mu0.shape != (n,) or mu1.shape != (n,):
        raise DomainError("dimension mismatch between means and covariances")
    if np.array_equal(m0, m1) and np.array_equal(mu0, mu1):
        _cholesky(m1, "S1")
        return 0.0
    f1 = _cholesky(m1, "S1")
    f0 = _cholesky(m0, "S0")
    diff = mu1 - mu0
    trace = float(np.trace(linalg.cho_solve(f1, m0)))
    maha = float(diff @ linalg.cho_solve(f1, diff))
    kl = 0.5 * (trace + maha - n + _logdet(f1) - _logdet(f0))
    if kl < 0.0:
        if kl < -1e-10 * max(1.0, trace):
            raise NumericError(f"negative divergence {kl:.3e}; covariances are ill-conditioned")
        kl = 0.0
    return kl


def _check_stable(*gains: float) -> None:
    for g in gains:
        if not abs(g) < 1.0:
            raise DomainError(f"gain {g} is not stable (|gain| < 1 required)")


def trace_ratio_closed_form(a: float, b: float, n: int) -> float:
    """``tr(Sigma_b^{-1} Sigma_a)`` for stationary covariances of gains a, b."""
    _check_stable(a, b)
    return ((n - 2) * b * b - 2 * (n - 1) * a * b + n) / (1.0 - a * a)


def steady_det_closed_form(a: float, sigma: float, n: int) -> float:
    _check_stable(a)
    _check_sigma(sigma)
    return sigma ** (2 * n) / (1.0 - a * a)


def kl_gain_change(a: float, b: float, n: int) -> float:
    """Divergence between stationary gain-a and gain-b windows of length n."""
    _check_stable(a, b)
    d = b - a
    return 0.5 * ((d * d * n - 2.0 * b * d) / (1.0 - a * a) + math.log((1.0 - a * a) / (1.0 - b * b)))


def kl_reset(a: float) -> float:
    """Divergence between a stationary window and the same window with one reset."""
    _check_stable(a)
    return -0.5 * math.log1p(-a * a)


@dataclass(frozen=True)
class BoundReport:
    kl: float
    tv_upper: float
    error_sum_lower: float


def bound_report(kl: float) -> BoundReport:
    """Pinsker bound on total variation and the implied floor on ``alpha + beta``."""
    if not kl >= 0.0:
        raise DomainError(f"divergence must be non-negative, got {kl}")
    tv = min(1.0, math.sqrt(kl / 2.0))
    return BoundReport(kl, tv, 1.0 - tv)


# --------------------------------------------------------------------------
# Covertness and detection thresholds
# --------------------------------------------------------------------------

class LogBase(enum.Enum):
    NATURAL = "natural"
    TWO = "two"


def covert_gain_bound_gain_change(a: float, eps: float) -> float:
    """Largest |b| keeping a gain change ``eps``-covert."""
    _check_stable(a)
    if not eps > 0.0:
        raise DomainError("eps must be positive")
    return math.sqrt(1.0 - (1.0 - a * a) * math.exp(-4.0 * eps * eps))


def gain_change_window_limit(a: float, b: float) -> float:
    """Window length ``2b/(b-a)`` below which the trace term is negative."""
    if a == b:
        return math.inf
    return 2.0 * b / (b - a)


def covert_gain_bound_reset(eps: float, log_base: LogBase | str = LogBase.NATURAL) -> float:
    """Largest |a| for which a single reset stays ``eps``-covert."""
    if not eps > 0.0:
        raise DomainError("eps must be positive")
    base = LogBase(log_base)
    decay = math.exp(-4.0 * eps * eps) if base is LogBase.NATURAL else 2.0 ** (-4.0 * eps * eps)
    return math.sqrt(1.0 - decay)


def _check_prob(name: str, p: float) -> None:
    if not 0.0 < p < 1.0:
        raise DomainError(f"{name} must lie in (0, 1), got {p}")


def detection_gain_threshold(delta: float) -> float:
    """Smallest |a| at which the reset LRT is ``1 - delta`` detecting."""
    _check_prob("delta", delta)
    q = q_inverse((1.0 - delta / 2.0) / 2.0)
    return math.sqrt(max(0.0, 1.0 - q * q / (2.0 * math.log(2.0 / delta))))


def k0_control_energy(snr: float, delta: float) -> float:
    """Observation window needed by the energy detector on the control signal."""
    if not snr > 0.0:
        raise DomainError("snr must be positive")
    _check_prob("delta", delta)
    return 4.0 / (delta * snr * snr) * (1.0 + math.sqrt(1.0 + 2.0 * snr)) ** 2


def _check_residual_args(E_U, sigma2, m4, delta):
    if not (E_U > 0.0 and sigma2 > 0.0):
        raise DomainError("E_U and sigma2 must be positive")
    if m4 < sigma2 * sigma2 * (1.0 - 1e-12):
        raise DomainError("fourth moment must be at least sigma2^2")
    _check_prob("delta", delta)


def k0_residual_energy(E_U: float, sigma2: float, m4: float, delta: float) -> float:
    """Observation window needed by the residual-energy detector."""
    _check_residual_args(E_U, sigma2, m4, delta)
    excess = max(m4 - sigma2 * sigma2, 0.0)
    half = delta / 2.0
    return (math.sqrt((excess + 4.0 * E_U * sigma2) / half) + math.sqrt(excess / half)) ** 2 / E_U**2


def k0_residual_energy_compact(E_U: float, sigma2: float, m4: float, delta: float) -> float:
    """Simpler upper bound ``4 (m4 - s^4 + 4 E_U s^2) / (E_U^2 delta/2)`` on the window."""
    _check_residual_args(E_U, sigma2, m4, delta)
    excess = max(m4 - sigma2 * sigma2, 0.0)
    return 4.0 / E_U**2 * (excess + 4.0 * E_U * sigma2) / (delta / 2.0)


def n0_magnitude(a: float, sigma: float, M: float, delta: float) -> float:
    """Observation time after which ``|X_n| <= M`` separates the hypotheses."""
    if not abs(a) > 1.0:
        raise DomainError("n0 is defined for unstable plants (|a| > 1)")
    _check_sigma(sigma)
    if not M > 0.0:
        raise DomainError("M must be positive")
    _check_prob("delta", delta)
    q = q_inverse((1.0 - delta / 2.0) / 2.0)
    return math.log(M * math.sqrt(a * a - 1.0) / (sigma * q)) / math.log(abs(a))


def magnitude_threshold(c: float, gamma: float, delta: float) -> float:
    """Smallest admissible ``M = (2c/delta)^(1/gamma)``."""
    if not (c > 0.0 and gamma > 0.0):
        raise DomainError("c and gamma must be positive")
    _check_prob("delta", delta)
    return (2.0 * c / delta) ** (1.0 / gamma)


def gaussian_abs_moment(variance: float, gamma: float) -> float:
    """``E|X|^gamma`` for ``X ~ N(0, variance)``."""
    return (2.0 * variance) ** (gamma / 2.0) * math.gamma((gamma + 1.0) / 2.0) / math.sqrt(math.pi)


def magnitude_false_alarm(a: float, sigma: float, M: float, n: int) -> float:
    """Exact ``P(|X_n| <= M)`` for an uncontrolled Gaussian plant started at zero."""
    arg = M * math.sqrt(a * a - 1.0) / (sigma * math.sqrt(a ** (2 * n) - 1.0))
    return 1.0 - 2.0 * q_function(arg)


def reset_lrt_threshold(a: float, sigma: float, delta: float) -> float:
    """Threshold ``t`` on ``X_{tau+1}^2`` giving false alarm ``delta/2``."""
    _check_stable(a)
    _check_sigma(sigma)
    _check_prob("delta", delta)
    q = q_inverse((1.0 - delta / 2.0) / 2.0)
    return sigma**2 / (1.0 - a * a) * q * q


def reset_lrt_false_alarm(a: float, sigma: float, t: float) -> float:
    return 1.0 - 2.0 * q_function(math.sqrt(t * (1.0 - a * a)) / sigma)


def reset_lrt_miss(sigma: float, t: float) -> float:
    return 2.0 * q_function(math.sqrt(t) / sigma)
