"""Command-line front end.

Exit status is 0 on success, 2 on a configuration error and 3 when a
solver fails.  JSON outputs carry the resolved configuration and the tool
version; rates are in bits per channel use.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .channel import ChannelModel, build_model
from .dp import calibrate_gamma, trajectory_optimize, value_iteration_solve
from .errors import (
    BracketFailure,
    ChannelError,
    ConsistencyError,
    GridError,
    Infeasible,
    NonConvergent,
    NoPositiveRoot,
)
from .kalman import PolicyStage
from .sim import simulate
from .stationary import butman_ar1_rate, first_order_rate, solve_stationary
from .waterfill import feedforward_capacity

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

CSV_HEADER = ["P", "snr_db", "solver", "rate_bits", "power_achieved", "gamma", "residual"]
SOLVER_ERRORS = (NonConvergent, Infeasible, BracketFailure, GridError, NoPositiveRoot, ConsistencyError)


class ConfigError(ValueError):
    pass


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _emit(doc: dict, output: str | None):
    text = json.dumps(_jsonable(doc), indent=2, sort_keys=False) + "\n"
    if output:
        with open(output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _envelope(command: str, config: dict, result: dict) -> dict:
    return {"tool": "fbcap", "version": __version__, "command": command, "config": config, "result": result}


def _load_json(path: str, what: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {what} '{path}': {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {what} '{path}': {exc}") from None


def _load_channel(path: str) -> ChannelModel:
    return ChannelModel.from_config(_load_json(path, "channel config"))


def _positive(name: str, value: float) -> float:
    if not (math.isfinite(value) and value > 0.0):
        raise ConfigError(f"'{name}' must be a positive real, got {value}")
    return value


def _stage_from(obj, where: str) -> PolicyStage:
    if not isinstance(obj, dict):
        raise ConfigError(f"policy field '{where}' must be an object with 'd' and 'e'")
    for key in ("d", "e"):
        if key not in obj:
            raise ConfigError(f"policy field '{where}.{key}' is missing")
    if not isinstance(obj["d"], list):
        raise ConfigError(f"policy field '{where}.d' must be a list of reals")
    try:
        return PolicyStage(obj["d"], obj["e"])
    except (TypeError, ValueError):
        raise ConfigError(f"policy field '{where}' has non-numeric or non-finite entries") from None


def load_policy(obj):
    """Parse ``{"stages": [...]}`` or ``{"stationary": {...}}``."""
    if not isinstance(obj, dict):
        raise ConfigError("policy must be a JSON object")
    if "stationary" in obj:
        return _stage_from(obj["stationary"], "stationary")
    if "stages" in obj:
        if not isinstance(obj["stages"], list) or not obj["stages"]:
            raise ConfigError("policy field 'stages' must be a nonempty list")
        return [_stage_from(s, f"stages[{i}]") for i, s in enumerate(obj["stages"])]
    raise ConfigError("policy needs a 'stages' or 'stationary' field")


def _nblock(model: ChannelModel, n: int, solver: str, gamma=None, power=None):
    if solver == "auto":
        solver = "value_iteration" if model.L == 1 else "trajectory"
    if power is not None:
        return calibrate_gamma(model, n, power, solver=solver)[1]
    if solver == "value_iteration":
        return value_iteration_solve(model, gamma, n)
    return trajectory_optimize(model, gamma, n)


# ---------------------------------------------------------------------------
# sweep


_SOLVER_RE = re.compile(r"^(\w+)(?:\((.*)\))?$")


def _parse_solver(item) -> dict:
    """Accept ``"stationary"``, ``"nblock(n=5)"`` or ``{"name": ..., ...}``."""
    if isinstance(item, dict):
        spec = dict(item)
    elif isinstance(item, str):
        m = _SOLVER_RE.match(item.replace(" ", ""))
        if not m:
            raise ConfigError(f"unrecognized solver entry '{item}'")
        spec = {"name": m.group(1)}
        for kv in filter(None, (m.group(2) or "").split(",")):
            key, _, val = kv.partition("=")
            try:
                spec[key] = json.loads(val)
            except json.JSONDecodeError:
                spec[key] = val
    else:
        raise ConfigError(f"solver entries must be strings or objects, got {item!r}")
    name = spec.get("name")
    if name not in ("stationary", "first_order", "butman", "nblock", "waterfill", "simulate"):
        raise ConfigError(f"unknown solver '{name}' in field 'solvers'")
    if name in ("nblock", "waterfill"):
        n = spec.get("n")
        if not isinstance(n, int) or n < 1:
            raise ConfigError(f"solver '{name}' needs an integer n >= 1")
    if name == "simulate":
        spec.setdefault("steps", 100_000)
        spec.setdefault("seed", 0)
        if not isinstance(spec["steps"], int) or spec["steps"] < 100:
            raise ConfigError("solver 'simulate' needs an integer steps >= 100")
    return spec


def _label(spec: dict) -> str:
    name = spec["name"]
    if name in ("nblock", "waterfill"):
        return f"{name}(n={spec['n']})"
    if name == "simulate":
        return f"simulate(steps={spec['steps']},seed={spec['seed']})"
    return name


def _stationary_stage(model: ChannelModel, P: float) -> PolicyStage:
    if model.L == 1:
        return first_order_rate(float(model.a[0]), float(model.c[0]), model.sigma_w2, P).stage
    return solve_stationary(model, P).stage


def _sweep_point(args):
    cfg, spec, P = args
    model = ChannelModel.from_config(cfg)
    name = spec["name"]
    gamma = ""
    if name == "stationary":
        r = solve_stationary(model, P)
        rate, power, resid = r.I_max_bits, P, max(r.riccati_residual, r.power_residual)
    elif name == "first_order":
        if model.L != 1:
            raise ConfigError("solver 'first_order' needs a channel of order 1")
        r = first_order_rate(float(model.a[0]), float(model.c[0]), model.sigma_w2, P)
        rate, power, resid = r.I_max_bits, P, r.quartic_residual
    elif name == "butman":
        if model.L != 1 or model.a[0] != 0.0:
            raise ConfigError("solver 'butman' needs a first-order channel with a = 0")
        r = butman_ar1_rate(float(model.c[0]), model.sigma_w2, P)
        snr = P / model.sigma_w2
        c = abs(float(model.c[0]))
        rate, power = r.I_max_bits, P
        resid = abs(r.chi**2 - 1.0 - snr * ((r.chi + c) / r.chi) ** 2)
    elif name == "nblock":
        r = _nblock(model, spec["n"], spec.get("solver", "auto"), power=P)
        rate, power, gamma = r.capacity_bits, r.power, r.gamma
        resid = abs(r.power - P) / P
    elif name == "waterfill":
        r = feedforward_capacity(model, spec["n"], P)
        rate, power, resid = r.capacity_bits, P, 0.0
    else:
        st = _stationary_stage(model, P)
        r = simulate(model, st, spec["steps"], spec["seed"])
        rate, power, resid = r.empirical_rate_bits, r.empirical_power, r.rate_stderr
    return (P, _label(spec), rate, power, gamma, resid)


def _fmt(x) -> str:
    return x if isinstance(x, str) else format(float(x), ".12g")


def run_sweep(spec: dict, jobs: int = 1) -> str:
    """Evaluate a sweep spec and return CSV text (rows sorted by P, solver)."""
    if not isinstance(spec, dict):
        raise ConfigError("sweep spec must be a JSON object")
    if "channel" not in spec:
        raise ConfigError("sweep spec missing field 'channel'")
    model = ChannelModel.from_config(spec["channel"])
    s2 = model.sigma_w2
    if "powers" in spec:
        powers = spec["powers"]
        field_name = "powers"
    elif "snr_db" in spec:
        field_name = "snr_db"
        powers = spec["snr_db"]
    else:
        raise ConfigError("sweep spec needs field 'powers' or 'snr_db'")
    if not isinstance(powers, list) or not powers:
        raise ConfigError(f"sweep field '{field_name}' must be a nonempty list")
    try:
        vals = [float(p) for p in powers]
    except (TypeError, ValueError):
        raise ConfigError(f"sweep field '{field_name}' must hold reals") from None
    if field_name == "snr_db":
        vals = [s2 * 10.0 ** (v / 10.0) for v in vals]
    for v in vals:
        _positive(field_name, v)
    solvers = spec.get("solvers")
    if not isinstance(solvers, list) or not solvers:
        raise ConfigError("sweep field 'solvers' must be a nonempty list")
    parsed = [_parse_solver(s) for s in solvers]
    cfg = model.to_config()
    tasks = [(cfg, sv, P) for P in vals for sv in parsed]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    rows.sort(key=lambda r: (r[0], r[1]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for P, label, rate, power, gamma, resid in rows:
        snr_db = 10.0 * math.log10(P / s2)
        w.writerow([_fmt(P), _fmt(snr_db), label, _fmt(rate), _fmt(power), _fmt(gamma), _fmt(resid)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fbcap", description="Feedback capacity of ARMA Gaussian noise channels.")
    p.add_argument("--version", action="version", version=f"fbcap {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def out(sp):
        sp.add_argument("--output", "-o", help="write to this file instead of stdout")

    sp = sub.add_parser("stationary", help="maximal stationary rate of any order")
    sp.add_argument("--config", required=True)
    sp.add_argument("--power", type=float, required=True)
    sp.add_argument("--restarts", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    out(sp)

    sp = sub.add_parser("first-order", help="closed-form first-order optimum")
    sp.add_argument("--a", type=float, required=True)
    sp.add_argument("--c", type=float, required=True)
    sp.add_argument("--sigma-w2", type=float, required=True)
    sp.add_argument("--power", type=float, required=True)
    out(sp)

    sp = sub.add_parser("butman", help="AR(1) rate of Butman's linear scheme")
    sp.add_argument("--c", type=float, required=True)
    sp.add_argument("--sigma-w2", type=float, required=True)
    sp.add_argument("--power", type=float, required=True)
    out(sp)

    sp = sub.add_parser("nblock", help="n-block feedback capacity")
    sp.add_argument("--config", required=True)
    sp.add_argument("--n", type=int, required=True)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--gamma", type=float)
    g.add_argument("--power", type=float)
    sp.add_argument("--solver", choices=["auto", "value_iteration", "trajectory"], default="auto")
    out(sp)

    sp = sub.add_parser("waterfill", help="n-block capacity without feedback")
    sp.add_argument("--config", required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--power", type=float, required=True)
    out(sp)

    sp = sub.add_parser("simulate", help="Monte-Carlo run of a policy")
    sp.add_argument("--config", required=True)
    sp.add_argument("--policy", required=True)
    sp.add_argument("--steps", type=int, required=True)
    sp.add_argument("--seed", type=int, required=True)
    out(sp)

    sp = sub.add_parser("sweep", help="CSV sweep over powers and solvers")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--jobs", type=int, default=1)
    out(sp)
    return p


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "stationary":
        model = _load_channel(args.config)
        P = _positive("power", args.power)
        r = solve_stationary(model, P, restarts=args.restarts, seed=args.seed)
        cfg = {"channel": model.to_config(), "power": P, "restarts": args.restarts, "seed": args.seed}
        _emit(_envelope(cmd, cfg, r.to_dict()), args.output)
    elif cmd == "first-order":
        P = _positive("power", args.power)
        model = build_model([args.a], [args.c], args.sigma_w2)
        r = first_order_rate(args.a, args.c, args.sigma_w2, P)
        _emit(_envelope(cmd, {"channel": model.to_config(), "power": P}, r.to_dict()), args.output)
    elif cmd == "butman":
        P = _positive("power", args.power)
        model = build_model([0.0], [args.c], args.sigma_w2)
        r = butman_ar1_rate(args.c, args.sigma_w2, P)
        _emit(_envelope(cmd, {"channel": model.to_config(), "power": P}, r._asdict()), args.output)
    elif cmd == "nblock":
        model = _load_channel(args.config)
        if args.n < 1:
            raise ConfigError(f"'n' must be at least 1, got {args.n}")
        if args.power is not None:
            _positive("power", args.power)
        else:
            _positive("gamma", args.gamma)
        r = _nblock(model, args.n, args.solver, gamma=args.gamma, power=args.power)
        cfg = {"channel": model.to_config(), "n": args.n, "solver": args.solver,
               "gamma": args.gamma, "power": args.power}
        _emit(_envelope(cmd, cfg, r.to_dict()), args.output)
    elif cmd == "waterfill":
        model = _load_channel(args.config)
        if args.n < 1:
            raise ConfigError(f"'n' must be at least 1, got {args.n}")
        P = _positive("power", args.power)
        r = feedforward_capacity(model, args.n, P)
        _emit(_envelope(cmd, {"channel": model.to_config(), "n": args.n, "power": P}, r.to_dict()), args.output)
    elif cmd == "simulate":
        model = _load_channel(args.config)
        policy_doc = _load_json(args.policy, "policy")
        policy = load_policy(policy_doc)
        if args.steps < 100:
            raise ConfigError(f"'steps' must be at least 100, got {args.steps}")
        r = simulate(model, policy, args.steps, args.seed)
        cfg = {"channel": model.to_config(), "policy": policy_doc, "steps": args.steps, "seed": args.seed}
        _emit(_envelope(cmd, cfg, r.to_dict()), args.output)
    elif cmd == "sweep":
        spec = _load_json(args.spec, "sweep spec")
        text = run_sweep(spec, jobs=max(1, args.jobs))
        if args.output:
            with open(args.output, "w") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return _dispatch(args)
    except SOLVER_ERRORS as exc:
        resid = getattr(exc, "residual", None)
        extra = f" (residual {resid:.3e})" if isinstance(resid, float) and math.isfinite(resid) else ""
        print(f"fbcap: solver failure: {type(exc).__name__}: {exc}{extra}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, ChannelError, ValueError, TypeError) as exc:
        print(f"fbcap: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
