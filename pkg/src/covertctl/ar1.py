"""AR(1) plant ``X_k = a X_{k-1} + Z_k - U_k`` and its simulator."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.special import erf

from . import _kernels
from ._rng import check_seed, stream
from .controllers import ControllerSpec, NoControl, OneBit
from .errors import ConfigurationError, DomainError

__all__ = [
    "Gaussian",
    "UniformBounded",
    "TruncatedGaussian",
    "NoiseModel",
    "InitPolicy",
    "Ar1Params",
    "Trajectory",
    "step",
    "simulate",
    "simulate_from_noises",
    "draw_batch",
    "closed_form_state",
]


@dataclass(frozen=True)
class Gaussian:
    """i.i.d. ``N(0, std^2)`` disturbance.  ``std = 0`` gives a noiseless plant."""

    std: float
    bound = None

    def __post_init__(self):
        if not self.std >= 0.0:
            raise ConfigurationError("std must be non-negative")

    @property
    def variance(self) -> float:
        return self.std**2

    @property
    def fourth_moment(self) -> float:
        return 3.0 * self.std**4

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        return rng.normal(0.0, self.std, shape)


@dataclass(frozen=True)
class UniformBounded:
    """Uniform on ``[-bound, bound]``."""

    bound: float

    def __post_init__(self):
        if not self.bound > 0.0:
            raise ConfigurationError("bound must be positive")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    @property
    def variance(self) -> float:
        return self.bound**2 / 3.0

    @property
    def fourth_moment(self) -> float:
        return self.bound**4 / 5.0

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        return rng.uniform(-self.bound, self.bound, shape)


@dataclass(frozen=True)
class TruncatedGaussian:
    """``N(0, std^2)`` conditioned on ``|Z| <= bound`` (default ``4 std``).

    ``std`` is the parent scale; :attr:`variance` is that of the truncated law.
    """

    std: float
    bound: Optional[float] = None

    def __post_init__(self):
        if not self.std > 0.0:
            raise ConfigurationError("std must be positive")
        if self.bound is None:
            object.__setattr__(self, "bound", 4.0 * self.std)
        if not self.bound > 0.0:
            raise ConfigurationError("bound must be positive")

    def _moments(self):
        beta = self.bound / self.std
        mass = erf(beta / math.sqrt(2.0))
        pdf = math.exp(-0.5 * beta * beta) / math.sqrt(2.0 * math.pi)
        m2 = 1.0 - 2.0 * beta * pdf / mass
        m4 = 3.0 - 2.0 * (beta**3 + 3.0 * beta) * pdf / mass
        return m2, m4

    @property
    def variance(self) -> float:
        return self.std**2 * self._moments()[0]

    @property
    def fourth_moment(self) -> float:
        return self.std**4 * self._moments()[1]

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        out = rng.normal(0.0, self.std, shape)
        bad = np.abs(out) > self.bound
        while bad.any():
            out[bad] = rng.normal(0.0, self.std, int(bad.sum()))
            bad = np.abs(out) > self.bound
        return out


NoiseModel = Union[Gaussian, UniformBounded, TruncatedGaussian]


class InitPolicy(enum.Enum):
    ZERO_START = "zero"
    STEADY_STATE = "steady"


@dataclass(frozen=True)
class Ar1Params:
    """Plant gain, horizon ``N``, noise law and how ``X_0`` is chosen.

    ``burn_in`` uncontrolled steps are run from zero before ``X_0`` is taken
    (ZeroStart only).
    """

    gain: float
    horizon: int
    noise: NoiseModel
    init_policy: InitPolicy = InitPolicy.ZERO_START
    burn_in: int = 0

    def __post_init__(self):
        if not math.isfinite(self.gain):
            raise ConfigurationError("gain must be finite")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigurationError("horizon must be a positive integer")
        if self.burn_in < 0:
            raise ConfigurationError("burn_in must be non-negative")
        if self.init_policy is InitPolicy.STEADY_STATE and not abs(self.gain) < 1.0:
            raise ConfigurationError("SteadyStateDraw needs |gain| < 1")

    @property
    def stationary_variance(self) -> float:
        return self.noise.variance / (1.0 - self.gain**2)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One realisation: ``states[k-1] = X_k`` and likewise for controls, noises."""

    states: np.ndarray
    controls: np.ndarray
    noises: np.ndarray
    seed: int
    x0: float = 0.0
    gain: float = field(default=0.0)

    def __len__(self):
        return len(self.states)


def step(x_prev: float, a: float, z: float, u: float) -> float:
    """One plant update ``a x_prev + z - u``."""
    if not all(math.isfinite(v) for v in (x_prev, a, z, u)):
        raise DomainError("step inputs must be finite")
    # drift first, so a full reset (u = a x_prev) leaves exactly z
    return a * x_prev - u + z


def _check_compatible(params: Ar1Params, controller: ControllerSpec) -> None:
    if isinstance(controller, OneBit):
        if params.noise.bound is None:
            raise ConfigurationError("the one-bit controller requires bounded-support noise")
        if params.noise.bound > controller.B * (1.0 + 1e-12):
            raise ConfigurationError(
                f"noise bound {params.noise.bound} exceeds the controller's B={controller.B}"
            )


def _initial_state(params: Ar1Params, controller: ControllerSpec, rng, rows, noises):
    """Return ``(x0, first_control)`` for a block of ``rows`` trajectories."""
    a = params.gain
    if params.init_policy is InitPolicy.STEADY_STATE:
        gain = controller.closed_loop_gain(a)
        if gain is None:
            gain = a
        if not abs(gain) < 1.0:
            raise ConfigurationError("SteadyStateDraw needs a stable closed loop")
        std = math.sqrt(params.noise.variance / (1.0 - gain * gain))
        x0 = rng.normal(0.0, std, rows)
        # a state-feedback law already acts on a random X_0; the one-bit law starts at U_1 = 0
        return x0, not isinstance(controller, (NoControl, OneBit))
    if params.burn_in:
        warm, _ = _kernels.run_batch(noises[:, : params.burn_in], np.zeros(rows), a, _kernels.KIND_NONE)
        return warm[:, -1].copy(), False
    return np.zeros(rows), False


def draw_batch(
    params: Ar1Params,
    controller: ControllerSpec,
    rng: np.random.Generator,
    rows: int,
    reset_at: Optional[np.ndarray] = None,
):
    """Simulate ``rows`` independent trajectories from ``rng``.

    Returns ``(states, controls, noises, x0)``; arrays are ``(rows, N)``.
    ``reset_at[t] = tau`` forces the reset ``X_{tau+1} = Z_{tau+1}``.
    """
    _check_compatible(params, controller)
    total = params.burn_in + params.horizon if params.init_policy is InitPolicy.ZERO_START else params.horizon
    all_noise = params.noise.sample(rng, (rows, total))
    x0, first_control = _initial_state(params, controller, rng, rows, all_noise)
    noises = all_noise[:, total - params.horizon :]
    kind, a_ctrl, p1, p2 = controller.kernel_args()
    states, controls = _kernels.run_batch(
        noises, x0, params.gain, kind, a_ctrl, p1, p2, reset_at=reset_at, first_control=first_control
    )
    return states, controls, np.ascontiguousarray(noises), x0


def simulate(params: Ar1Params, controller: ControllerSpec | None = None, seed: int = 0) -> Trajectory:
    """Simulate one trajectory; identical arguments give identical arrays."""
    controller = controller or NoControl()
    seed = check_seed(seed)
    states, controls, noises, x0 = draw_batch(params, controller, stream(seed), 1)
    return Trajectory(states[0], controls[0], noises[0], seed, float(x0[0]), params.gain)


def simulate_from_noises(
    params: Ar1Params,
    controller: ControllerSpec | None,
    noises,
    x0: float = 0.0,
    first_control: bool = False,
) -> Trajectory:
    """Replay the recursion on a given noise sequence (no randomness)."""
    controller = controller or NoControl()
    _check_compatible(params, controller)
    noises = np.asarray(noises, dtype=np.float64)
    if noises.shape != (params.horizon,):
        raise ConfigurationError(f"expected {params.horizon} noise samples, got shape {noises.shape}")
    kind, a_ctrl, p1, p2 = controller.kernel_args()
    states, controls = _kernels.run_batch(
        noises[None, :], np.array([x0]), params.gain, kind, a_ctrl, p1, p2, first_control=first_control
    )
    return Trajectory(states[0], controls[0], noises.copy(), 0, float(x0), params.gain)


def closed_form_state(a: float, noises, controls, k: int, x0: float = 0.0) -> float:
    """``X_k = a^k x0 + sum_{m=1}^k a^(k-m) (Z_m - U_m)``."""
    noises = np.asarray(noises, dtype=np.float64)
    controls = np.asarray(controls, dtype=np.float64)
    if not 1 <= k <= min(len(noises), len(controls)):
        raise DomainError(f"k={k} is outside [1, {min(len(noises), len(controls))}]")
    powers = a ** np.arange(k - 1, -1, -1, dtype=np.float64)
    return float(a**k * x0 + np.dot(powers, noises[:k] - controls[:k]))
