"""Monte Carlo estimation of Willie's error probabilities.

Trials are split into fixed-size blocks; every block draws from its own
stream keyed by ``(master_seed, hypothesis, block index)``.  The block
layout never depends on the thread count, so serial and threaded runs
produce the same counts.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Any, Optional, Sequence

import numpy as np

from ._rng import check_seed, stream
from .analytics import CovMatrix, Provenance
from .ar1 import Ar1Params, draw_batch
from .controllers import ControllerSpec, NoControl, Threshold
from .errors import ConfigurationError

__all__ = [
    "BLOCK_SIZE",
    "ResetPrior",
    "Scenario",
    "TrialBatch",
    "ErrorRates",
    "estimate_error_rates",
    "empirical_covariance",
    "empirical_covariance_with_se",
    "SweepRow",
    "sweep",
]

BLOCK_SIZE = 2048

_H0, _H1 = 0, 1


class ResetPrior:
    """How the reset time of each trial is chosen."""

    FIXED = "fixed"
    UNIFORM = "uniform"
    FIRST_CROSSING = "first_crossing"
    ALL = (FIXED, UNIFORM, FIRST_CROSSING)


@dataclass(frozen=True)
class Scenario:
    """One H0-vs-H1 experiment.

    With ``reset_prior="fixed"`` and a ``forced_reset_time`` every H1 trial is
    reset at that step; ``"uniform"`` draws tau uniformly from ``1..N-1`` per
    trial; ``"first_crossing"`` lets a threshold controller fire on its own and
    reports the first crossing as tau (under both hypotheses).
    """

    params: Ar1Params
    controller: ControllerSpec
    detector: Any
    trials: int
    master_seed: int
    forced_reset_time: Optional[int] = None
    reset_prior: str = ResetPrior.FIXED

    def __post_init__(self):
        if int(self.trials) != self.trials or self.trials < 1:
            raise ConfigurationError("trials must be a positive integer")
        check_seed(self.master_seed)
        n = self.params.horizon
        if self.reset_prior not in ResetPrior.ALL:
            raise ConfigurationError(f"unknown reset prior {self.reset_prior!r}")
        if self.forced_reset_time is not None:
            if self.reset_prior != ResetPrior.FIXED:
                raise ConfigurationError("a forced reset time implies the fixed reset prior")
            if not 1 <= self.forced_reset_time <= n - 1:
                raise ConfigurationError(f"forced_reset_time must lie in [1, {n - 1}]")
        if self.resets and not isinstance(self.controller, Threshold):
            raise ConfigurationError("reset experiments need a threshold controller")
        if self.reset_prior == ResetPrior.UNIFORM and n < 2:
            raise ConfigurationError("a uniform reset time needs a horizon of at least 2")

    @property
    def resets(self) -> bool:
        return self.forced_reset_time is not None or self.reset_prior != ResetPrior.FIXED

    def describe(self) -> dict:
        p = self.params
        return {
            "gain": p.gain,
            "horizon": p.horizon,
            "noise": type(p.noise).__name__,
            "noise_variance": p.noise.variance,
            "init_policy": p.init_policy.value,
            "burn_in": p.burn_in,
            "controller": self.controller.kind,
            **self.detector.describe(),
            "trials": self.trials,
            "forced_reset_time": self.forced_reset_time,
            "reset_prior": self.reset_prior,
        }


@dataclass(frozen=True, eq=False)
class TrialBatch:
    """What a detector sees for one block of trials."""

    states: np.ndarray
    controls: np.ndarray
    noises: np.ndarray
    x0: np.ndarray
    taus: Optional[np.ndarray]
    rng: np.random.Generator
    hypothesis: int


@dataclass(frozen=True)
class ErrorRates:
    alpha_hat: float
    beta_hat: float
    sum: float
    trials: int
    std_err_alpha: float
    std_err_beta: float

    @classmethod
    def from_counts(cls, false_alarms: int, misses: int, trials: int) -> "ErrorRates":
        a = false_alarms / trials
        b = misses / trials
        return cls(a, b, a + b, trials, math.sqrt(a * (1 - a) / trials), math.sqrt(b * (1 - b) / trials))


def _first_crossing(states: np.ndarray, D: float) -> np.ndarray:
    # tau is the first step with |X_tau| >= D among 1..N-1; -1 if none
    hit = np.abs(states[:, :-1]) >= D
    any_hit = hit.any(axis=1)
    return np.where(any_hit, hit.argmax(axis=1) + 1, -1)


def _block_sizes(trials: int):
    full, rest = divmod(trials, BLOCK_SIZE)
    return [BLOCK_SIZE] * full + ([rest] if rest else [])


def _run_block(scenario: Scenario, hyp: int, index: int, rows: int) -> int:
    rng = stream(scenario.master_seed, hyp, index)
    n = scenario.params.horizon
    taus = None
    if scenario.forced_reset_time is not None:
        taus = np.full(rows, scenario.forced_reset_time, dtype=np.int64)
    elif scenario.reset_prior == ResetPrior.UNIFORM:
        taus = rng.integers(1, n, rows, dtype=np.int64)

    controller = scenario.controller if hyp == _H1 else NoControl()
    reset_at = None
    if taus is not None and hyp == _H1:
        reset_at = taus
        controller = NoControl()  # forced resets bypass the crossing rule
    states, controls, noises, x0 = draw_batch(scenario.params, controller, rng, rows, reset_at)
    if scenario.reset_prior == ResetPrior.FIRST_CROSSING:
        taus = _first_crossing(states, scenario.controller.D)
    batch = TrialBatch(states, controls, noises, x0, taus, rng, hyp)
    return int(np.count_nonzero(scenario.detector.decide(batch)))


def _default_threads() -> int:
    return os.cpu_count() or 1


def estimate_error_rates(scenario: Scenario, threads: Optional[int] = None) -> ErrorRates:
    """Run ``trials`` trajectories per hypothesis and count detector errors.

    H0 trials run the plant with no control; H1 trials run the scenario's
    controller.  ``threads`` only changes wall time, never the result.
    """
    threads = _default_threads() if threads is None else int(threads)
    if threads < 1:
        raise ConfigurationError("threads must be at least 1")
    tasks = [(hyp, i, rows) for hyp in (_H0, _H1) for i, rows in enumerate(_block_sizes(scenario.trials))]
    if threads == 1:
        counts = [_run_block(scenario, *t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            counts = list(pool.map(lambda t: _run_block(scenario, *t), tasks))
    h1_under_h0 = sum(c for (hyp, _, _), c in zip(tasks, counts) if hyp == _H0)
    h1_under_h1 = sum(c for (hyp, _, _), c in zip(tasks, counts) if hyp == _H1)
    return ErrorRates.from_counts(h1_under_h0, scenario.trials - h1_under_h1, scenario.trials)


def _collect_states(params, trials, seed, controller, forced_reset_time):
    check_seed(seed)
    if int(trials) != trials or trials < 2:
        raise ConfigurationError("need at least two trials for a sample covariance")
    controller = controller or NoControl()
    if forced_reset_time is not None and not 1 <= forced_reset_time <= params.horizon - 1:
        raise ConfigurationError(f"forced_reset_time must lie in [1, {params.horizon - 1}]")
    parts = []
    for i, rows in enumerate(_block_sizes(trials)):
        reset_at = None if forced_reset_time is None else np.full(rows, forced_reset_time, dtype=np.int64)
        states, *_ = draw_batch(params, controller, stream(seed, 2, i), rows, reset_at)
        parts.append(states)
    return np.concatenate(parts)


def empirical_covariance_with_se(
    params: Ar1Params,
    trials: int,
    seed: int,
    controller: ControllerSpec | None = None,
    forced_reset_time: Optional[int] = None,
):
    """Unbiased sample covariance and the entrywise standard error of each entry."""
    x = _collect_states(params, trials, seed, controller, forced_reset_time)
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (trials - 1)
    cov = 0.5 * (cov + cov.T)
    prod_sq = (xc * xc).T @ (xc * xc) / trials
    se = np.sqrt(np.maximum(prod_sq - cov * cov, 0.0) / trials)
    return CovMatrix(cov, Provenance.EMPIRICAL), se


def empirical_covariance(
    params: Ar1Params,
    trials: int,
    seed: int,
    controller: ControllerSpec | None = None,
    forced_reset_time: Optional[int] = None,
) -> CovMatrix:
    return empirical_covariance_with_se(params, trials, seed, controller, forced_reset_time)[0]


@dataclass(frozen=True)
class SweepRow:
    value: float
    rates: ErrorRates
    bound_name: str
    bound_value: float
    passed: bool


def sweep(template, axis: str, values: Sequence[float], seed: int, threads: Optional[int] = None) -> list:
    """Evaluate ``template`` at each value of ``axis``.

    ``template`` is an experiment object exposing ``with_param(axis, value)``
    and ``build(seed)``; rows come back in the order of ``values``.
    """
    rows = []
    for v in values:
        plan = template.with_param(axis, v).build(seed)
        rates = estimate_error_rates(plan.scenario, threads)
        rows.append(SweepRow(v, rates, plan.bound.name, plan.bound.value, plan.bound.holds(rates)))
    return rows
