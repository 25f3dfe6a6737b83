"""Named experiments pairing a simulated scenario with its closed-form guarantee.

Each builder turns a flat dict of parameters (the shape of a TOML table)
into an :class:`ExperimentPlan`: a :class:`~covertctl.montecarlo.Scenario`
plus the bound the empirical error sum is compared against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict

from . import analytics as an
from .ar1 import Ar1Params, Gaussian, InitPolicy, UniformBounded
from .controllers import GainChange, OneBit, Threshold, one_bit_energy
from .detectors import (
    ControlEnergyTest,
    GaussianLrtTest,
    MagnitudeConfig,
    MagnitudeTest,
    ResetLrtTest,
    ResidualEnergyTest,
)
from .errors import ConfigurationError, DomainError
from .montecarlo import ErrorRates, ResetPrior, Scenario

__all__ = ["Bound", "ExperimentPlan", "Experiment", "EXPERIMENTS", "SWEEP_AXES", "CHECKS", "experiment"]

DETECTION = "detection"
COVERTNESS = "covertness"

# check name -> (bound kind it applies to, whether the analytic guarantee is also required)
CHECKS = {
    "detection": (DETECTION, False),
    "must_detect": (DETECTION, True),
    "covertness": (COVERTNESS, False),
    "must_be_covert": (COVERTNESS, True),
}

SWEEP_AXES = {"a": "a", "b": "b", "D": "D", "delta": "delta", "δ": "delta", "K": "K", "snr": "snr", "SNR": "snr", "eps": "eps", "ε": "eps"}


@dataclass(frozen=True)
class Bound:
    """Closed-form target for the error sum.

    Detection bounds require ``sum <= value``; covertness bounds require
    ``sum >= value - 4 (se_alpha + se_beta)``.  ``guaranteed`` says whether
    the parameters sit in the regime where the guarantee applies.
    """

    name: str
    kind: str
    value: float
    guaranteed: bool

    def holds(self, rates: ErrorRates) -> bool:
        if self.kind == DETECTION:
            return rates.sum <= self.value
        return rates.sum >= self.value - 4.0 * (rates.std_err_alpha + rates.std_err_beta)

    def check(self, name: str, rates: ErrorRates) -> bool:
        if name not in CHECKS:
            raise ConfigurationError(f"unknown check {name!r}; choose from {sorted(CHECKS)}")
        kind, strict = CHECKS[name]
        if kind != self.kind:
            raise ConfigurationError(f"check {name!r} does not apply to a {self.kind} bound")
        return self.holds(rates) and (self.guaranteed or not strict)


@dataclass(frozen=True)
class ExperimentPlan:
    scenario: Scenario
    bound: Bound
    derived: dict = field(default_factory=dict)


def _magnitude(p):
    a, sigma, delta, gamma, b = p["a"], p["sigma"], p["delta"], p["gamma"], p["b"]
    if not abs(b) < 1.0:
        raise ConfigurationError("the stabiliser gain b must satisfy |b| < 1")
    c = an.gaussian_abs_moment(sigma**2 / (1.0 - b * b), gamma)
    M = p["M"] if p["M"] is not None else an.magnitude_threshold(c, gamma, delta)
    n0_min = an.n0_magnitude(a, sigma, M, delta)
    n0 = int(p["n0"]) if p["n0"] is not None else max(1, math.ceil(n0_min))
    params = Ar1Params(a, n0, Gaussian(sigma))
    detector = MagnitudeTest(MagnitudeConfig(M, gamma, c, delta), n0)
    guaranteed = n0 >= n0_min
    plan_bound = Bound("delta", DETECTION, delta, guaranteed)
    return params, GainChange(a, b, relaxed=True), detector, plan_bound, {"c": c, "M": M, "n0": n0, "n0_min": n0_min}, {}


def _gain_change(p):
    a, eps, n, sigma = p["a"], p["eps"], int(p["n"]), p["sigma"]
    limit = an.covert_gain_bound_gain_change(a, eps)
    b = p["b"] if p["b"] is not None else p["b_fraction"] * limit
    window = an.gain_change_window_limit(a, b)
    params = Ar1Params(a, n, Gaussian(sigma), InitPolicy.STEADY_STATE)
    detector = GaussianLrtTest(an.steady_covariance(a, sigma, n), an.steady_covariance(b, sigma, n))
    guaranteed = abs(b) < limit and n < window
    return (
        params,
        GainChange(a, b),
        detector,
        Bound("1-eps", COVERTNESS, 1.0 - eps, guaranteed),
        {"b": b, "b_limit": limit, "window_limit": window},
        {},
    )


def _control_energy(p):
    a, B, delta, K = p["a"], p["B"], p["delta"], int(p["K"])
    E_U = one_bit_energy(a, B)
    if p["snr"] is not None:
        snr = p["snr"]
        sigma_v = math.sqrt(E_U / snr)
    else:
        sigma_v = p["sigma_v"]
        snr = E_U / sigma_v**2
    K0 = an.k0_control_energy(snr, delta)
    params = Ar1Params(a, K + 1, UniformBounded(B))
    return (
        params,
        OneBit(B, a),
        ControlEnergyTest(sigma_v, delta, K),
        Bound("delta", DETECTION, delta, K >= math.ceil(K0)),
        {"E_U": E_U, "sigma_v": sigma_v, "snr": snr, "K0": K0},
        {},
    )


def _residual_energy(p):
    a, B, delta = p["a"], p["B"], p["delta"]
    noise = UniformBounded(B)
    E_U = one_bit_energy(a, B)
    K0 = an.k0_residual_energy(E_U, noise.variance, noise.fourth_moment, delta)
    K = int(p["K"]) if p["K"] is not None else math.ceil(K0)
    init = InitPolicy.STEADY_STATE if abs(a) < 1.0 else InitPolicy.ZERO_START
    params = Ar1Params(a, K + 1, noise, init)
    detector = ResidualEnergyTest(a, noise.variance, noise.fourth_moment, delta, K)
    return (
        params,
        OneBit(B, a),
        detector,
        Bound("delta", DETECTION, delta, K >= math.ceil(K0)),
        {"E_U": E_U, "K0": K0, "K": K},
        {},
    )


def _reset_timing(p):
    if p["tau"] is not None:
        return {"forced_reset_time": int(p["tau"])}
    return {"reset_prior": ResetPrior.UNIFORM}


def _reset_covert(p):
    eps, n, sigma = p["eps"], int(p["n"]), p["sigma"]
    limit = an.covert_gain_bound_reset(eps, p["log_base"])
    a = p["a"] if p["a"] is not None else p["a_fraction"] * limit
    params = Ar1Params(a, n, Gaussian(sigma), InitPolicy.STEADY_STATE)
    if p["lrt_covariance"] == "block":
        alt = an.reset_covariance
    elif p["lrt_covariance"] == "exact":
        alt = an.reset_covariance_exact
    else:
        raise ConfigurationError("lrt_covariance must be 'block' or 'exact'")
    cache: Dict[int, an.CovMatrix] = {}

    def s1(tau: int) -> an.CovMatrix:
        if tau not in cache:
            cache[tau] = alt(a, sigma, n, tau)
        return cache[tau]

    detector = GaussianLrtTest(an.steady_covariance(a, sigma, n), s1, "gaussian_lrt_reset")
    return (
        params,
        Threshold(math.inf, a),
        detector,
        Bound("1-eps", COVERTNESS, 1.0 - eps, abs(a) <= limit),
        {"a": a, "a_limit": limit, "kl_reset": an.kl_reset(a)},
        _reset_timing(p),
    )


def _reset_lrt(p):
    a, delta, n, sigma = p["a"], p["delta"], int(p["n"]), p["sigma"]
    threshold = an.detection_gain_threshold(delta)
    params = Ar1Params(a, n, Gaussian(sigma), InitPolicy.STEADY_STATE)
    t = an.reset_lrt_threshold(a, sigma, delta)
    return (
        params,
        Threshold(math.inf, a),
        ResetLrtTest(a, sigma, delta),
        Bound("delta", DETECTION, delta, abs(a) >= threshold),
        {
            "gain_threshold": threshold,
            "t": t,
            "alpha_analytic": an.reset_lrt_false_alarm(a, sigma, t),
            "beta_analytic": an.reset_lrt_miss(sigma, t),
        },
        _reset_timing(p),
    )


def _reset_organic(p):
    a, delta, n, sigma, D = p["a"], p["delta"], int(p["n"]), p["sigma"], p["D"]
    threshold = an.detection_gain_threshold(delta)
    # warm up uncontrolled so X_0 is close to stationary without a state-feedback step at k=1
    params = Ar1Params(a, n, Gaussian(sigma), InitPolicy.ZERO_START, burn_in=int(p["burn_in"]))
    return (
        params,
        Threshold(D, a),
        ResetLrtTest(a, sigma, delta),
        Bound("delta", DETECTION, delta, abs(a) >= threshold),
        {"gain_threshold": threshold},
        {"reset_prior": ResetPrior.FIRST_CROSSING},
    )


_DEFAULTS = {
    "magnitude": ({"a": 1.5, "sigma": 1.0, "delta": 0.1, "gamma": 2.0, "b": 0.5, "M": None, "n0": None, "trials": 10_000}, _magnitude),
    "gain_change": ({"a": 0.3, "eps": 0.2, "b": None, "b_fraction": 0.95, "n": 4, "sigma": 1.0, "trials": 100_000}, _gain_change),
    "control_energy": ({"a": 1.0, "B": 1.0, "sigma_v": 1.0, "snr": None, "delta": 0.1, "K": 400, "trials": 10_000}, _control_energy),
    "residual_energy": ({"a": 0.9, "B": 1.0, "delta": 0.1, "K": None, "trials": 10_000}, _residual_energy),
    "reset_covert": (
        {
            "eps": 0.3,
            "log_base": "natural",
            "a": None,
            "a_fraction": 0.95,
            "n": 10,
            "sigma": 1.0,
            "tau": None,
            "lrt_covariance": "block",
            "trials": 100_000,
        },
        _reset_covert,
    ),
    "reset_lrt": ({"a": 0.99, "delta": 0.5, "n": 10, "sigma": 1.0, "tau": None, "trials": 100_000}, _reset_lrt),
    "reset_organic": ({"a": 0.99, "D": 5.0, "delta": 0.5, "n": 50, "sigma": 1.0, "burn_in": 200, "trials": 10_000}, _reset_organic),
}

EXPERIMENTS = tuple(_DEFAULTS)


@dataclass(frozen=True)
class Experiment:
    """An experiment name plus its fully resolved parameter table."""

    name: str
    params: dict

    def with_param(self, key: str, value) -> "Experiment":
        key = SWEEP_AXES.get(key)
        if key is None or key not in self.params:
            raise ConfigurationError(
                f"cannot sweep {self.name} over this axis; mutable axes: "
                f"{sorted(k for k in set(SWEEP_AXES.values()) if k in self.params)}"
            )
        return self.with_overrides({key: value})

    def with_overrides(self, overrides: dict) -> "Experiment":
        unknown = set(overrides) - set(self.params)
        if unknown:
            raise ConfigurationError(f"unknown parameter(s) for {self.name}: {sorted(unknown)}")
        return Experiment(self.name, {**self.params, **overrides})

    def build(self, seed: int) -> ExperimentPlan:
        builder = _DEFAULTS[self.name][1]
        try:
            params, controller, detector, bound, derived, timing = builder(self.params)
            scenario = Scenario(params, controller, detector, int(self.params["trials"]), seed, **timing)
        except DomainError as exc:
            raise ConfigurationError(f"{self.name}: {exc}") from exc
        return ExperimentPlan(scenario, bound, derived)


def experiment(name: str, **overrides) -> Experiment:
    if name not in _DEFAULTS:
        raise ConfigurationError(f"unknown experiment {name!r}; choose from {list(EXPERIMENTS)}")
    return Experiment(name, dict(_DEFAULTS[name][0])).with_overrides(overrides)
