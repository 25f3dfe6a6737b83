"""Alice's control laws and their energy accounting.

Three feedback laws act on the previous state ``x_prev``:

* one-bit: ``u = (a/2) C_{n-1} sgn(x_prev)`` with the deterministic series
  ``C_n = (a/2) C_{n-1} + B``;
* threshold (reset): ``u = a x_prev`` once ``|x_prev| >= D``;
* gain change: ``u = (a - b) x_prev``, turning a gain-``a`` plant into a
  gain-``b`` plant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

from . import _kernels
from .errors import ConfigurationError, DomainError

__all__ = [
    "NoControl",
    "OneBit",
    "Threshold",
    "GainChange",
    "ControllerSpec",
    "c_next",
    "c_fixed_point",
    "c_closed_form",
    "one_bit_control",
    "one_bit_energy",
    "one_bit_energy_bounds",
    "threshold_control",
    "gain_change_control",
]


def _check_one_bit_gain(a: float) -> None:
    if not 0.0 < a < 2.0:
        raise DomainError(f"one-bit controller needs 0 < a < 2, got a={a}")


def sgn(x: float) -> float:
    """Sign with ``sgn(0) = +1``."""
    return 1.0 if x >= 0.0 else -1.0


def c_fixed_point(a: float, B: float) -> float:
    """Limit ``B / (1 - a/2)`` of the one-bit gain series."""
    _check_one_bit_gain(a)
    return B / (1.0 - a / 2.0)


def c_next(c_prev: float, a: float, B: float) -> float:
    _check_one_bit_gain(a)
    return (a / 2.0) * c_prev + B


def c_closed_form(C1: float, a: float, B: float, n: int) -> float:
    """``C_n`` without iterating: ``C* + (a/2)^(n-1) (C1 - C*)``."""
    fixed = c_fixed_point(a, B)
    if C1 < fixed * (1.0 - 1e-12):
        raise DomainError(f"C1={C1} is below the fixed point {fixed}")
    if n < 1:
        raise DomainError("n must be a positive integer")
    return fixed + (a / 2.0) ** (n - 1) * (C1 - fixed)


def one_bit_control(x_prev: float, c_prev: float, a: float) -> float:
    _check_one_bit_gain(a)
    return (a / 2.0) * c_prev * sgn(x_prev)


def one_bit_energy(a: float, B: float) -> float:
    """Steady energy ``(aB/(2-a))^2`` of the one-bit controller."""
    _check_one_bit_gain(a)
    return (a * B / (2.0 - a)) ** 2


def one_bit_energy_bounds(C1: float, a: float, B: float) -> tuple[float, float]:
    """Lower and upper bounds on the time-averaged control energy."""
    lower = one_bit_energy(a, B)
    upper = (a * C1 / 2.0) ** 2
    return lower, upper


def threshold_control(x_prev: float, D: float, a: float) -> float:
    if not D > 0.0:
        raise DomainError("threshold D must be positive")
    return a * x_prev if abs(x_prev) >= D else 0.0


def gain_change_control(x_prev: float, a: float, b: float) -> float:
    return (a - b) * x_prev


@dataclass(frozen=True)
class NoControl:
    kind = "none"

    def kernel_args(self):
        return _kernels.KIND_NONE, 0.0, 0.0, 0.0

    def closed_loop_gain(self, a: float) -> float:
        return a


@dataclass(frozen=True)
class OneBit:
    """One-bit controller; ``C1`` defaults to the fixed point of the series."""

    B: float
    a: float
    C1: float | None = None

    kind = "one_bit"

    def __post_init__(self):
        if not self.B > 0.0:
            raise ConfigurationError("one-bit controller needs a positive noise bound B")
        try:
            fixed = c_fixed_point(self.a, self.B)
        except DomainError as exc:
            raise ConfigurationError(str(exc)) from exc
        if self.C1 is None:
            object.__setattr__(self, "C1", fixed)
        elif self.C1 < fixed * (1.0 - 1e-12):
            raise ConfigurationError(f"C1={self.C1} must be at least B/(1-a/2)={fixed}")

    def c(self, n: int) -> float:
        return c_closed_form(self.C1, self.a, self.B, n)

    def energy(self) -> float:
        return one_bit_energy(self.a, self.B)

    def kernel_args(self):
        return _kernels.KIND_ONE_BIT, self.a, self.C1, self.B

    def closed_loop_gain(self, a: float):
        return None


@dataclass(frozen=True)
class Threshold:
    D: float
    a: float

    kind = "threshold"

    def __post_init__(self):
        if not self.D > 0.0:
            raise ConfigurationError("threshold D must be positive")

    def kernel_args(self):
        return _kernels.KIND_THRESHOLD, self.a, self.D, 0.0

    def closed_loop_gain(self, a: float):
        return None


@dataclass(frozen=True)
class GainChange:
    """``u = (a - b) x``.

    ``relaxed=True`` skips the ``0 < |a| < |b| < 1``, same-sign check so that
    converse experiments (e.g. stabilising an unstable plant) can use it.
    """

    a: float
    b: float
    relaxed: bool = False

    kind = "gain_change"

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ConfigurationError("gains must be finite")
        if self.relaxed:
            return
        if not 0.0 < abs(self.a) < abs(self.b) < 1.0:
            raise ConfigurationError(f"need 0 < |a| < |b| < 1, got a={self.a}, b={self.b}")
        if math.copysign(1.0, self.a) != math.copysign(1.0, self.b):
            raise ConfigurationError("a and b must have the same sign")

    def kernel_args(self):
        return _kernels.KIND_GAIN_CHANGE, self.a, self.b, 0.0

    def closed_loop_gain(self, a: float) -> float:
        return a - (self.a - self.b)


ControllerSpec = Union[NoControl, OneBit, Threshold, GainChange]
