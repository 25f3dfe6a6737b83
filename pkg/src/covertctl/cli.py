"""``covertctl`` command line front end.

Every subcommand reads its options from the command line, optionally seeded
from a table of the same name in a TOML file passed with ``--config``.
Command-line values win over file values, and ``--set key=value`` overrides
experiment parameters.

Exit status: 0 on success, 1 on a configuration or usage error, 2 when a
requested bound check fails.

CSV output of ``sweep`` uses the column order in :data:`SWEEP_COLUMNS`.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from typing import Any, Dict, List, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import analytics as an
from ._rng import MAX_SEED
from .ar1 import Ar1Params, Gaussian, InitPolicy, TruncatedGaussian, UniformBounded, simulate
from .controllers import GainChange, NoControl, OneBit, Threshold, one_bit_energy
from .errors import CovertCtlError
from .experiments import CHECKS, EXPERIMENTS, experiment
from .montecarlo import empirical_covariance, estimate_error_rates, sweep

__all__ = ["main", "SWEEP_COLUMNS", "RECORD_KEYS"]

SEED_ENV = "COVERTCTL_SEED"
RECORD_KEYS = ("scenario", "seed", "alpha_hat", "beta_hat", "sum", "bound_name", "bound_value", "pass")
SWEEP_COLUMNS = (
    "axis",
    "value",
    "alpha_hat",
    "beta_hat",
    "sum",
    "std_err_alpha",
    "std_err_beta",
    "trials",
    "bound_name",
    "bound_value",
    "pass",
)
SUBCOMMANDS = ("simulate", "covariance", "kl", "bounds", "detect", "sweep")
EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2


class UsageError(CovertCtlError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class Outcome:
    """What a subcommand produced: a JSON payload, optional CSV rows, check results."""

    def __init__(self, payload, rows=None, checks=None, summary=None):
        self.payload = payload
        self.rows = rows
        self.checks: Dict[str, bool] = checks or {}
        self.summary: List[str] = summary or []


# ------------------------------------------------------------------ helpers

def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _parse_overrides(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = _parse_value(value.strip())
    return out


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    except tomllib.TOMLDecodeError as exc:
        # tomli reports "(at line L, column C)" in the message
        raise UsageError(f"malformed config {path}: {exc}") from exc
    unknown = set(data) - set(SUBCOMMANDS) - {"output"}
    if unknown:
        raise UsageError(f"unknown table(s) in {path}: {sorted(unknown)}")
    return data


def _resolve_seed(cli_seed, table: dict) -> int:
    seed = cli_seed
    if seed is None:
        seed = table.get("seed")
    if seed is None and os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError as exc:
            raise UsageError(f"{SEED_ENV} must be an integer") from exc
    seed = 0 if seed is None else seed
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= MAX_SEED:
        raise UsageError(f"seed must be an integer in [0, 2^64 - 1], got {seed!r}")
    return seed


def _merge(table: dict, args: argparse.Namespace, names) -> dict:
    out = dict(table)
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            out[name] = value
    return out


def _get(opts: dict, key: str, default=None, kind=float):
    value = opts.get(key, default)
    if value is None:
        return None
    try:
        if kind is int and (isinstance(value, bool) or int(value) != value):
            raise ValueError
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{key} must be {kind.__name__}, got {value!r}") from exc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def dumps(payload) -> str:
    # repr-based float output is the shortest string that round-trips exactly
    return json.dumps(_jsonable(payload), indent=2, sort_keys=False, allow_nan=False) + "\n"


def _fmt(v) -> str:
    return f"{v:.5g}" if isinstance(v, float) else str(v)


# ------------------------------------------------------------ subcommands

def _noise(opts):
    kind = opts.get("noise", "gaussian")
    sigma = _get(opts, "sigma", 1.0)
    if kind == "gaussian":
        return Gaussian(sigma)
    if kind == "uniform":
        return UniformBounded(_get(opts, "B", 1.0))
    if kind == "truncated":
        return TruncatedGaussian(sigma, _get(opts, "B"))
    raise UsageError(f"unknown noise {kind!r}")


def _controller(opts, a):
    kind = opts.get("controller", "none")
    if kind == "none":
        return NoControl()
    if kind == "one_bit":
        return OneBit(_get(opts, "B", 1.0), a, _get(opts, "C1"))
    if kind == "threshold":
        return Threshold(_get(opts, "D", 1.0), a)
    if kind == "gain_change":
        return GainChange(a, _get(opts, "b"), bool(opts.get("relaxed", False)))
    raise UsageError(f"unknown controller {kind!r}")


def cmd_simulate(opts: dict, seed: int, threads) -> Outcome:
    a = _get(opts, "a", 0.5)
    init = InitPolicy(opts.get("init", "zero"))
    params = Ar1Params(a, _get(opts, "n", 10, int), _noise(opts), init, _get(opts, "burn_in", 0, int))
    traj = simulate(params, _controller(opts, a), seed)
    payload = {
        "a": a,
        "seed": seed,
        "x0": traj.x0,
        "states": traj.states,
        "controls": traj.controls,
        "noises": traj.noises,
    }
    rows = [["k", "state", "control", "noise"]] + [
        [k + 1, traj.states[k], traj.controls[k], traj.noises[k]] for k in range(len(traj))
    ]
    return Outcome(payload, rows)


def cmd_covariance(opts: dict, seed: int, threads) -> Outcome:
    kind = opts.get("kind", "steady")
    a, sigma, n = _get(opts, "a", 0.5), _get(opts, "sigma", 1.0), _get(opts, "n", 5, int)
    tau = _get(opts, "tau", None, int)
    if kind == "transient":
        m = an.transient_covariance(a, sigma, n)
    elif kind == "steady":
        m = an.steady_covariance(a, sigma, n)
    elif kind == "precision":
        m = an.steady_precision(a, sigma, n)
    elif kind in ("reset", "reset_exact"):
        if tau is None:
            raise UsageError("reset covariances need --tau")
        m = (an.reset_covariance if kind == "reset" else an.reset_covariance_exact)(a, sigma, n, tau)
    elif kind == "empirical":
        init = InitPolicy(opts.get("init", "zero"))
        params = Ar1Params(a, n, Gaussian(sigma), init)
        ctrl = Threshold(math.inf, a) if tau is not None else None
        m = empirical_covariance(params, _get(opts, "trials", 10_000, int), seed, ctrl, tau)
    else:
        raise UsageError(f"unknown covariance kind {kind!r}")
    payload = {"kind": kind, "provenance": m.provenance.value, "a": a, "sigma": sigma, "n": n, "tau": m.tau, "entries": m.entries}
    return Outcome(payload, [list(r) for r in m.entries])


def cmd_kl(opts: dict, seed: int, threads) -> Outcome:
    kind = opts.get("kind", "reset")
    a = _get(opts, "a", 0.5)
    if kind == "reset":
        kl = an.kl_reset(a)
        params = {"a": a}
    elif kind == "gain_change":
        b, n = _get(opts, "b"), _get(opts, "n", 10, int)
        if b is None:
            raise UsageError("gain_change divergence needs --b")
        kl = an.kl_gain_change(a, b, n)
        params = {"a": a, "b": b, "n": n}
    else:
        raise UsageError(f"unknown divergence kind {kind!r}")
    rep = an.bound_report(kl)
    payload = {"kind": kind, **params, "kl": rep.kl, "tv_upper": rep.tv_upper, "error_sum_lower": rep.error_sum_lower}
    return Outcome(payload, [["kl", "tv_upper", "error_sum_lower"], [rep.kl, rep.tv_upper, rep.error_sum_lower]])


def _try(fn, *args):
    try:
        return fn(*args)
    except (CovertCtlError, TypeError, ValueError) as exc:
        return f"n/a ({exc})"


def cmd_bounds(opts: dict, seed: int, threads) -> Outcome:
    a, b = _get(opts, "a"), _get(opts, "b")
    eps, delta = _get(opts, "eps", 0.3), _get(opts, "delta", 0.1)
    sigma, M, snr, B = _get(opts, "sigma", 1.0), _get(opts, "M", 10.0), _get(opts, "snr", 1.0), _get(opts, "B", 1.0)
    base = opts.get("log_base", "natural")
    needs_a = "n/a (needs --a)"

    def residual_k0(a_):
        noise = UniformBounded(B)
        return an.k0_residual_energy(one_bit_energy(a_, B), noise.variance, noise.fourth_moment, delta)

    table = {
        "magnitude_n0": _try(an.n0_magnitude, a, sigma, M, delta) if a is not None else needs_a,
        "gain_change_bound": _try(an.covert_gain_bound_gain_change, a, eps) if a is not None else needs_a,
        "control_energy_K0": _try(an.k0_control_energy, snr, delta),
        "residual_energy_K0": _try(residual_k0, a) if a is not None else needs_a,
        "reset_gain_bound": _try(an.covert_gain_bound_reset, eps, base),
        "reset_detection_gain": _try(an.detection_gain_threshold, delta),
    }
    if a is not None and b is not None:
        table["gain_change_window"] = _try(an.gain_change_window_limit, a, b)
    inputs = {"a": a, "b": b, "eps": eps, "delta": delta, "sigma": sigma, "M": M, "snr": snr, "B": B, "log_base": base}
    summary = [f"{k:<24} {_fmt(v)}" for k, v in table.items()]
    return Outcome({"inputs": inputs, "bounds": table}, [["name", "value"]] + [[k, v] for k, v in table.items()], summary=summary)


def _experiment_from(opts: dict, overrides: dict):
    name = opts.get("experiment")
    if name is None:
        raise UsageError(f"an experiment is required; choose from {list(EXPERIMENTS)}")
    params = {k: v for k, v in opts.items() if k not in _EXPERIMENT_KEYS}
    return experiment(name, **{**params, **overrides})


_EXPERIMENT_KEYS = {"experiment", "checks", "seed", "axis", "values", "set"}


def _checks(opts: dict, bound_kind: str) -> List[str]:
    checks = opts.get("checks")
    if checks is None:
        return []
    if isinstance(checks, str):
        checks = [c for c in checks.split(",") if c]
    for c in checks:
        if c not in CHECKS:
            raise UsageError(f"unknown check {c!r}; choose from {sorted(CHECKS)}")
    return list(checks)


def _record(exp, plan, seed, rates, passed, extra=None) -> dict:
    scenario = {
        "experiment": exp.name,
        "params": exp.params,
        "derived": plan.derived,
        **plan.scenario.describe(),
        "std_err_alpha": rates.std_err_alpha,
        "std_err_beta": rates.std_err_beta,
        "guaranteed": plan.bound.guaranteed,
        "bound_kind": plan.bound.kind,
        **(extra or {}),
    }
    return {
        "scenario": scenario,
        "seed": seed,
        "alpha_hat": rates.alpha_hat,
        "beta_hat": rates.beta_hat,
        "sum": rates.sum,
        "bound_name": plan.bound.name,
        "bound_value": plan.bound.value,
        "pass": passed,
    }


def cmd_detect(opts: dict, seed: int, threads, overrides=None) -> Outcome:
    exp = _experiment_from(opts, overrides or {})
    plan = exp.build(seed)
    rates = estimate_error_rates(plan.scenario, threads)
    checks = {c: plan.bound.check(c, rates) for c in _checks(opts, plan.bound.kind)}
    passed = all(checks.values()) if checks else plan.bound.holds(rates)
    record = _record(exp, plan, seed, rates, passed, {"checks": checks})
    summary = [
        f"{exp.name} {name}: {'PASS' if ok else 'FAIL'} (sum={rates.sum:.5g}, {plan.bound.name}={plan.bound.value:.5g}, "
        f"guaranteed={plan.bound.guaranteed})"
        for name, ok in checks.items()
    ]
    return Outcome(record, checks=checks, summary=summary)


def _values(raw) -> list:
    if isinstance(raw, str):
        raw = [_parse_value(v.strip()) for v in raw.split(",") if v.strip()]
    if not isinstance(raw, list) or not raw:
        raise UsageError("--values needs a non-empty comma-separated list")
    return raw


def cmd_sweep(opts: dict, seed: int, threads, overrides=None) -> Outcome:
    exp = _experiment_from(opts, overrides or {})
    axis = opts.get("axis")
    if axis is None:
        raise UsageError("sweep needs --axis")
    values = _values(opts.get("values"))
    rows = sweep(exp, axis, values, seed, threads)
    checks = {}
    check_names = _checks(opts, "")
    records, csv_rows = [], [list(SWEEP_COLUMNS)]
    for row in rows:
        point = exp.with_param(axis, row.value)
        plan = point.build(seed)
        row_checks = {c: plan.bound.check(c, row.rates) for c in check_names}
        for c, ok in row_checks.items():
            checks[f"{c}@{axis}={row.value}"] = ok
        passed = all(row_checks.values()) if row_checks else row.passed
        records.append(_record(point, plan, seed, row.rates, passed, {"axis": axis, "value": row.value, "checks": row_checks}))
        r = row.rates
        csv_rows.append(
            [axis, row.value, r.alpha_hat, r.beta_hat, r.sum, r.std_err_alpha, r.std_err_beta, r.trials, row.bound_name, row.bound_value, passed]
        )
    summary = [f"{exp.name} {k}: {'PASS' if ok else 'FAIL'}" for k, ok in checks.items()]
    return Outcome(records, csv_rows, checks, summary)


_HANDLERS = {
    "simulate": cmd_simulate,
    "covariance": cmd_covariance,
    "kl": cmd_kl,
    "bounds": cmd_bounds,
    "detect": cmd_detect,
    "sweep": cmd_sweep,
}


# ----------------------------------------------------------------- parser

def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="TOML file; its table for this subcommand supplies defaults")
    p.add_argument("--seed", type=int, help=f"master seed (falls back to ${SEED_ENV}, then 0)")
    p.add_argument("--threads", type=int, help="worker threads for Monte Carlo (default: CPU count)")
    p.add_argument("--out", help="write the result here instead of stdout")
    p.add_argument("--format", choices=("json", "csv"), help="output format")
    p.add_argument("--log-base", dest="log_base", choices=("natural", "two"), help="logarithm base for the reset gain bound")


_OPTION_NAMES = {
    "simulate": ("a", "n", "noise", "sigma", "B", "controller", "b", "D", "C1", "init", "burn_in"),
    "covariance": ("kind", "a", "sigma", "n", "tau", "trials", "init"),
    "kl": ("kind", "a", "b", "n"),
    "bounds": ("a", "b", "eps", "delta", "sigma", "M", "snr", "B", "log_base"),
    "detect": ("experiment", "checks"),
    "sweep": ("experiment", "axis", "values", "checks"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="covertctl", description="Covert control of AR(1) systems: closed forms and Monte Carlo.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate one trajectory")
    _common(p)
    p.add_argument("--a", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--noise", choices=("gaussian", "uniform", "truncated"))
    p.add_argument("--sigma", type=float)
    p.add_argument("--B", type=float)
    p.add_argument("--controller", choices=("none", "one_bit", "threshold", "gain_change"))
    p.add_argument("--b", type=float)
    p.add_argument("--D", type=float)
    p.add_argument("--C1", type=float)
    p.add_argument("--init", choices=("zero", "steady"))
    p.add_argument("--burn-in", dest="burn_in", type=int)

    p = sub.add_parser("covariance", help="closed-form or empirical covariance of the state vector")
    _common(p)
    p.add_argument("--kind", choices=("transient", "steady", "precision", "reset", "reset_exact", "empirical"))
    p.add_argument("--a", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--tau", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--init", choices=("zero", "steady"))

    p = sub.add_parser("kl", help="closed-form divergence and the implied error-sum floor")
    _common(p)
    p.add_argument("--kind", choices=("reset", "gain_change"))
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--n", type=int)

    p = sub.add_parser("bounds", help="print all six threshold formulas")
    _common(p)
    for name in ("a", "b", "eps", "delta", "sigma", "M", "snr", "B"):
        p.add_argument(f"--{name}", type=float)

    for name, helptext in (("detect", "estimate error rates of a named experiment"), ("sweep", "sweep one experiment parameter")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--experiment", choices=EXPERIMENTS)
        p.add_argument("--set", dest="set", action="append", metavar="KEY=VALUE", help="override an experiment parameter")
        p.add_argument("--checks", help="comma-separated bound checks: " + ", ".join(CHECKS))
        if name == "sweep":
            p.add_argument("--axis")
            p.add_argument("--values", help="comma-separated axis values")

    p = sub.add_parser("run", help="run every subcommand table in a config file")
    _common(p)
    p.add_argument("--set", dest="set", action="append", metavar="KEY=VALUE", help="override an experiment parameter")
    return parser


# ---------------------------------------------------------------- driving

def _render(outcome: Outcome, fmt: Optional[str]) -> str:
    if fmt == "csv":
        if outcome.rows is None:
            raise UsageError("this result has no CSV form")
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        for row in outcome.rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
        return buf.getvalue()
    return dumps(outcome.payload)


def _emit(text: str, out: Optional[str]):
    if out:
        try:
            with open(out, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            raise UsageError(f"cannot write {out}: {exc.strerror}") from exc
    else:
        sys.stdout.write(text)


def _run_one(command, table, args, overrides, seed, threads) -> Outcome:
    opts = _merge(table, args, _OPTION_NAMES[command] + (("log_base",) if command == "bounds" else ()))
    if command in ("detect", "sweep"):
        overrides = {**_parse_overrides(opts.pop("set", None) if isinstance(opts.get("set"), list) else None), **overrides}
        return _HANDLERS[command](opts, seed, threads, overrides)
    return _HANDLERS[command](opts, seed, threads)


def _execute(args, config) -> int:
    output = config.get("output", {})
    fmt = args.format or output.get("format")
    out = args.out or output.get("path")
    threads = args.threads
    if threads is not None and threads < 1:
        raise UsageError("--threads must be at least 1")
    overrides = _parse_overrides(getattr(args, "set", None))

    if args.command == "run":
        commands = [c for c in SUBCOMMANDS if c in config]
        if not commands:
            raise UsageError("the config has no subcommand tables to run")
        if fmt == "csv" and len(commands) != 1:
            raise UsageError("CSV output needs exactly one subcommand table")
        outcomes = {}
        for c in commands:
            seed = _resolve_seed(args.seed, config[c])
            outcomes[c] = _run_one(c, config[c], args, overrides, seed, threads)
        if fmt == "csv":
            text = _render(outcomes[commands[0]], "csv")
        else:
            text = dumps({c: o.payload for c, o in outcomes.items()})
        checks = {f"{c}.{k}": ok for c, o in outcomes.items() for k, ok in o.checks.items()}
        summary = [line for o in outcomes.values() for line in o.summary]
    else:
        table = config.get(args.command, {})
        seed = _resolve_seed(args.seed, table)
        outcome = _run_one(args.command, table, args, overrides, seed, threads)
        default_fmt = "csv" if args.command == "sweep" else None
        fmt = fmt or default_fmt
        if fmt is None and args.command in ("bounds", "kl"):
            text = "\n".join(outcome.summary or [f"{k:<24} {_fmt(v)}" for k, v in outcome.payload.items()]) + "\n"
            summary = []
        else:
            text = _render(outcome, fmt)
            summary = outcome.summary
        checks = outcome.checks

    _emit(text, out)
    # keep stdout machine-readable when the result itself went there
    stream = sys.stdout if out else sys.stderr
    for line in summary:
        print(line, file=stream)
    return EXIT_CHECK if checks and not all(checks.values()) else EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_CONFIG
        config = _load_config(args.config)
        return _execute(args, config)
    except UsageError as exc:
        print(f"covertctl: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CovertCtlError as exc:
        print(f"covertctl: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
