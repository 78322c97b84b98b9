"""n-block feedback capacity by deterministic dynamic programming.

The optimal source is centred and its coefficients depend on the past only
through the posterior covariance, which evolves deterministically.  The
n-use problem is therefore a deterministic control problem on ``K``:

* :func:`value_iteration_scalar` tabulates the reward-to-go on a ``K`` grid
  for first-order channels;
* :func:`trajectory_optimize` optimizes the ``n (L + 1)`` stage
  coefficients directly for any order;
* :func:`calibrate_gamma` finds the shadow price whose optimal source uses
  a prescribed average power.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.interpolate
import scipy.optimize

from .channel import ChannelModel
from .errors import BracketFailure, GridError
from .kalman import PolicyStage, cov_update
from .rate import LOG2E, ShadowPrice

__all__ = [
    "GridConfig",
    "ValueTable",
    "NBlockResult",
    "value_iteration_scalar",
    "value_iteration_solve",
    "trajectory_optimize",
    "rollout",
    "calibrate_gamma",
]

GAMMA_LO = 1e-6
GAMMA_HI = 1e3
POWER_RTOL = 1e-6
MAX_CALIBRATION_ITERS = 200
SWEEP_TOL = 1e-10


@dataclass
class NBlockResult:
    n: int
    gamma: float
    stages: list
    K_traj: list
    power: float
    capacity_nats: float
    rates_nats: np.ndarray = field(repr=False)
    powers: np.ndarray = field(repr=False)
    metadata: dict = field(default_factory=dict)

    @property
    def capacity_bits(self) -> float:
        return self.capacity_nats * LOG2E

    @property
    def objective(self) -> float:
        """Summed Lagrangian reward (nats)."""
        return float(np.sum(self.rates_nats) - self.gamma * np.sum(self.powers))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "gamma": self.gamma,
            "power": self.power,
            "capacity_nats": self.capacity_nats,
            "capacity_bits": self.capacity_bits,
            "rate_bits": self.capacity_bits,
            "stages": [s.to_dict() for s in self.stages],
            "K_traj": [np.asarray(K).tolist() for K in self.K_traj],
            "metadata": self.metadata,
        }


def rollout(model: ChannelModel, stages: Sequence[PolicyStage], gamma: float = 0.0) -> NBlockResult:
    """Evaluate a stage schedule from a known initial state.

    Power is the n-average of ``d_t^T K_{t-1} d_t + e_t^2`` and capacity the
    n-average of the per-use rates; neither depends on the initial state
    value or on the posterior mean.
    """
    stages = list(stages)
    if not stages:
        raise ValueError("rollout needs at least one stage")
    L = model.L
    K = np.zeros((L, L))
    traj = [K]
    rates = np.empty(len(stages))
    powers = np.empty(len(stages))
    for t, st in enumerate(stages):
        hd = model.h + st.d
        e2 = st.e * st.e
        rates[t] = 0.5 * math.log1p(max(float(hd @ K @ hd) + e2, 0.0) / model.sigma_w2)
        powers[t] = max(float(st.d @ K @ st.d), 0.0) + e2
        K = cov_update(model, K, st)
        traj.append(K)
    n = len(stages)
    return NBlockResult(
        n=n, gamma=float(gamma), stages=stages, K_traj=traj,
        power=float(powers.mean()), capacity_nats=float(rates.mean()),
        rates_nats=rates, powers=powers,
    )


# ---------------------------------------------------------------------------
# value iteration, first-order channels


@dataclass(frozen=True)
class GridConfig:
    """Quantization of the value iteration.

    ``k_max`` defaults to ``max(10 (P + s2), 2 s2 / (1 - c^2))``; the second
    term bounds every reachable posterior variance.  Controls are searched
    as ``(u, e)`` with ``u = d sqrt(K)`` over ``|u|, e <= sqrt(p_max)``,
    ``p_max = 4 / gamma``; a coarse grid is followed by zoom rounds that
    shrink the cell ``refine_factor`` times each.  ``interp`` selects how
    ``J`` is read between nodes: ``"cubic"`` (natural spline in
    ``log(K + K_min)``) or ``"linear"``.
    """

    size: int = 400
    k_min_rel: float = 1e-8
    k_max: float | None = None
    n_u: int = 61
    n_e: int = 31
    refine_rounds: int = 2
    refine_factor: int = 10
    power_ref: float = 1.0
    interp: str = "cubic"

    def __post_init__(self):
        if self.interp not in ("cubic", "linear"):
            raise ValueError(f"interp must be 'cubic' or 'linear', got {self.interp!r}")
        if self.size < 4 or self.n_u < 3 or self.n_e < 2:
            raise ValueError("grid sizes too small")

    def k_grid(self, model: ChannelModel) -> np.ndarray:
        s2 = model.sigma_w2
        c = float(model.c[0])
        k_max = self.k_max
        if k_max is None:
            k_max = max(10.0 * (self.power_ref + s2), 2.0 * s2 / (1.0 - c * c))
        return np.r_[0.0, np.geomspace(self.k_min_rel * s2, k_max, self.size)]


@dataclass(frozen=True)
class ValueTable:
    """Reward-to-go ``J[k]`` (nats) for ``k = 0..n`` stages on a ``K`` grid.

    ``J[0]`` is identically zero; ``argmax_d[k]``, ``argmax_e[k]`` hold the
    maximizing controls of the ``k``-stage problem at each grid node.
    """

    grid: np.ndarray
    J: np.ndarray
    argmax_d: np.ndarray
    argmax_e: np.ndarray
    gamma: float
    k_shift: float
    interp: str = "cubic"

    @property
    def n(self) -> int:
        return self.J.shape[0] - 1

    def interpolant(self, k: int) -> Callable[[np.ndarray], np.ndarray]:
        if k == 0:
            return lambda K: np.zeros(np.shape(K))
        x = np.log(self.grid + self.k_shift)
        if self.interp == "linear":
            grid, Jk = self.grid, self.J[k]
            return lambda K: np.interp(K, grid, Jk)
        spline = scipy.interpolate.CubicSpline(x, self.J[k], bc_type="natural")
        shift = self.k_shift
        return lambda K: spline(np.log(np.asarray(K) + shift))


class _ScalarStage:
    """Vectorized stage arithmetic of a first-order channel in ``(u, e)``."""

    def __init__(self, model: ChannelModel, gamma: float):
        self.a = float(model.a[0])
        self.c = float(model.c[0])
        self.s2 = model.sigma_w2
        self.gamma = gamma
        self.white = model.is_white

    def evaluate(self, K, u, e):
        sk = np.sqrt(K)
        e2 = e * e
        var = ((self.a + self.c) * sk + u) ** 2 + e2
        rate = 0.5 * np.log1p(var / self.s2)
        power = u * u + e2
        num = (self.a * sk + u) ** 2 * self.s2 + self.c * self.c * e2 * K + e2 * self.s2
        K_next = num / (var + self.s2)
        return rate - self.gamma * power, K_next


def _search(stage: _ScalarStage, K: np.ndarray, J_next, cfg: GridConfig, p_max: float):
    """Coarse-then-zoom maximization of ``Omega + J_next(K')`` at each ``K``.

    Returns best ``(value, u, e, K_next)`` arrays aligned with ``K``.
    """
    K = np.asarray(K, dtype=float).reshape(-1, 1, 1)
    r = math.sqrt(p_max)
    u_free = (K > 0.0) & (not stage.white)
    n_u = cfg.n_u if cfg.n_u % 2 == 1 else cfg.n_u + 1
    u_axis = np.linspace(-r, r, n_u).reshape(1, -1, 1)
    e_axis = np.linspace(0.0, r, cfg.n_e).reshape(1, 1, -1)
    u = np.where(u_free, u_axis, 0.0)
    e = np.broadcast_to(e_axis, u.shape[:1] + (1, cfg.n_e))

    def score(u, e):
        omega, Kn = stage.evaluate(K, u, e)
        return omega + J_next(Kn), Kn

    total, _ = score(u, e)
    flat = total.reshape(K.shape[0], -1).argmax(axis=1)
    iu, ie = np.unravel_index(flat, total.shape[1:])
    u_c = np.where(u_free[:, 0, 0], u_axis[0, iu, 0], 0.0)
    e_c = e_axis[0, 0, ie]
    du = 2.0 * r / (n_u - 1)
    de = r / (cfg.n_e - 1)

    m = 2 * cfg.refine_factor + 1
    offs = np.linspace(-1.0, 1.0, m)
    for _ in range(cfg.refine_rounds):
        uu = u_c[:, None, None] + du * offs[None, :, None]
        uu = np.where(u_free, uu, 0.0)
        ee = np.abs(e_c[:, None, None] + de * offs[None, None, :])
        total, _ = score(uu, ee)
        flat = total.reshape(K.shape[0], -1).argmax(axis=1)
        iu, ie = np.unravel_index(flat, total.shape[1:])
        rows = np.arange(K.shape[0])
        u_c = np.broadcast_to(uu, (K.shape[0], m, 1))[rows, iu, 0]
        e_c = np.broadcast_to(ee, (K.shape[0], 1, m))[rows, 0, ie]
        du /= cfg.refine_factor
        de /= cfg.refine_factor

    best, Kn = score(u_c.reshape(-1, 1, 1), e_c.reshape(-1, 1, 1))
    return best.reshape(-1), u_c, e_c, Kn.reshape(-1)


def _p_max(gamma: float, cfg: GridConfig) -> float:
    return max(4.0 / gamma, 4.0 * cfg.power_ref)


def value_iteration_scalar(
    model: ChannelModel, price, n: int, grid_cfg: GridConfig | None = None
) -> ValueTable:
    """Tabulate ``J^(k)`` for ``k = 1..n`` on a first-order channel.

    ``J^(k)(K) = max_{d,e} Omega(K, d, e) + J^(k-1)(K')`` with ``J^(0) = 0``;
    ``J^(k-1)`` between nodes comes from a cubic spline in ``log(K + K_min)``.

    Raises
    ------
    ValueError
        If the channel is not first order or ``n < 1``.
    GridError
        If a maximizing control moves ``K'`` beyond the grid.
    """
    if model.L != 1:
        raise ValueError(f"value iteration is tabulated for L = 1 only, got L = {model.L}")
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    gamma = price.gamma if isinstance(price, ShadowPrice) else ShadowPrice(price).gamma
    cfg = grid_cfg or GridConfig()
    grid = cfg.k_grid(model)
    stage = _ScalarStage(model, gamma)
    p_max = _p_max(gamma, cfg)
    G = grid.size
    J = np.zeros((n + 1, G))
    arg_d = np.zeros((n + 1, G))
    arg_e = np.zeros((n + 1, G))
    table = ValueTable(grid, J, arg_d, arg_e, gamma, cfg.k_min_rel * model.sigma_w2, cfg.interp)
    top = grid[-1] * (1.0 + 1e-9)
    for k in range(1, n + 1):
        J_next = table.interpolant(k - 1)
        best, u, e, Kn = _search(stage, grid, J_next, cfg, p_max)
        if np.any(Kn > top):
            raise GridError(
                f"stage {k}: optimal K' = {Kn.max():.4g} exceeds grid maximum {grid[-1]:.4g}"
            )
        J[k] = best
        with np.errstate(divide="ignore", invalid="ignore"):
            arg_d[k] = np.where(grid > 0.0, u / np.sqrt(grid), 0.0)
        arg_e[k] = e
    for arr in (grid, J, arg_d, arg_e):
        arr.setflags(write=False)
    return table


def _extract_policy(model: ChannelModel, table: ValueTable, cfg: GridConfig) -> list:
    """Forward pass from ``K_0 = 0`` re-maximizing at the realized ``K``."""
    stage = _ScalarStage(model, table.gamma)
    p_max = _p_max(table.gamma, cfg)
    n = table.n
    K = 0.0
    stages = []
    for t in range(1, n + 1):
        k = n - t + 1
        J_next = table.interpolant(k - 1)
        _, u0, e0, _ = _search(stage, np.array([K]), J_next, cfg, p_max)
        u_free = K > 0.0 and not stage.white

        def neg(x, K=K, J_next=J_next, u_free=u_free):
            u = x[0] if u_free else 0.0
            omega, Kn = stage.evaluate(K, u, x[-1])
            return -(omega + float(J_next(Kn)))

        x0 = np.array([u0[0], e0[0]]) if u_free else np.array([e0[0]])
        step = 1e-3 * max(1.0, math.sqrt(p_max)) / (10 ** cfg.refine_rounds)
        simplex = np.vstack([x0] + [x0 + step * np.eye(x0.size)[i] for i in range(x0.size)])
        res = scipy.optimize.minimize(
            neg, x0, method="Nelder-Mead",
            options={"xatol": 1e-12, "fatol": 1e-15, "maxfev": 4000, "initial_simplex": simplex},
        )
        x = res.x if res.fun <= neg(x0) else x0
        u = float(x[0]) if u_free else 0.0
        e = abs(float(x[-1]))
        d = u / math.sqrt(K) if K > 0.0 else 0.0
        stages.append(PolicyStage([d], e))
        _, K = stage.evaluate(K, u, e)
        K = float(K)
    return stages


def value_iteration_solve(
    model: ChannelModel, price, n: int, grid_cfg: GridConfig | None = None
) -> NBlockResult:
    """Value iteration followed by policy extraction and exact rollout."""
    cfg = grid_cfg or GridConfig()
    table = value_iteration_scalar(model, price, n, cfg)
    stages = _extract_policy(model, table, cfg)
    res = rollout(model, stages, table.gamma)
    res.metadata.update(solver="value_iteration", grid_size=int(table.grid.size), J_n=float(table.J[n, 0]))
    return res


# ---------------------------------------------------------------------------
# direct trajectory optimization, any order


class _Trajectory:
    """Packs stage coefficients into a flat vector and scores it.

    Stage 1 sees ``K_0 = 0`` so its gain is irrelevant and fixed at zero;
    on white channels all gains are fixed at zero.
    """

    def __init__(self, model: ChannelModel, n: int, gamma: float):
        self.model = model
        self.n = n
        self.gamma = gamma
        self.L = model.L
        self.gains = not model.is_white
        self.scalar = self.L == 1

    @property
    def size(self) -> int:
        per = (self.L if self.gains else 0) + 1
        return per * self.n - (self.L if self.gains else 0)

    def pack(self, stages) -> np.ndarray:
        out = []
        for t, st in enumerate(stages):
            if self.gains and t > 0:
                out.extend(st.d)
            out.append(st.e)
        return np.asarray(out, dtype=float)

    def unpack(self, theta) -> list:
        stages = []
        pos = 0
        for t in range(self.n):
            if self.gains and t > 0:
                d = theta[pos : pos + self.L]
                pos += self.L
            else:
                d = np.zeros(self.L)
            stages.append(PolicyStage(d, theta[pos]))
            pos += 1
        return stages

    def objective(self, theta) -> float:
        if self.scalar:
            return self._objective_scalar(theta)
        model, L = self.model, self.L
        K = np.zeros((L, L))
        total = 0.0
        for st in self.unpack(theta):
            hd = model.h + st.d
            e2 = st.e * st.e
            total += 0.5 * math.log1p(max(float(hd @ K @ hd) + e2, 0.0) / model.sigma_w2)
            total -= self.gamma * (float(st.d @ K @ st.d) + e2)
            K = cov_update(model, K, st)
        return total

    def _objective_scalar(self, theta) -> float:
        a = float(self.model.a[0])
        c = float(self.model.c[0])
        s2 = self.model.sigma_w2
        gamma = self.gamma
        K = 0.0
        total = 0.0
        pos = 0
        for t in range(self.n):
            if self.gains and t > 0:
                d = theta[pos]
                pos += 1
            else:
                d = 0.0
            e2 = theta[pos] * theta[pos]
            pos += 1
            hd = a + c + d
            delta = hd * hd * K + e2 + s2
            total += 0.5 * math.log(delta / s2) - gamma * (d * d * K + e2)
            K = ((a + d) ** 2 * K * s2 + c * c * e2 * K + e2 * s2) / delta
        return total


def _default_starts(model: ChannelModel, n: int, gamma: float, rng) -> list:
    s2 = model.sigma_w2
    L = model.L
    p = max(1.0 / (2.0 * gamma) - s2, 0.1 * s2)
    starts = [[PolicyStage(np.zeros(L), math.sqrt(p)) for _ in range(n)]]
    if not model.is_white:
        h = model.h
        scale = 1.5 / max(float(np.linalg.norm(h)), 1e-3)
        stat = [PolicyStage(np.zeros(L), math.sqrt(p))]
        stat += [PolicyStage(scale * h, 0.1 * math.sqrt(p)) for _ in range(n - 1)]
        starts.append(stat)
        rand = [PolicyStage(np.zeros(L), math.sqrt(p))]
        rand += [PolicyStage(rng.standard_normal(L), abs(rng.standard_normal()) * math.sqrt(p)) for _ in range(n - 1)]
        starts.append(rand)
    return starts


def _coordinate_sweeps(traj: _Trajectory, theta: np.ndarray, max_sweeps: int):
    """Backward stage-by-stage polishing; returns ``(theta, value, sweeps, stalled)``."""
    per = traj.L + 1 if traj.gains else 1
    blocks = []
    pos = 0
    for t in range(traj.n):
        width = per if (t > 0 or not traj.gains) else 1
        blocks.append(slice(pos, pos + width))
        pos += width
    value = traj.objective(theta)
    for sweep in range(1, max_sweeps + 1):
        start = value
        for blk in reversed(blocks):
            def neg(x, blk=blk):
                th = theta.copy()
                th[blk] = x
                return -traj.objective(th)

            res = scipy.optimize.minimize(
                neg, theta[blk], method="Nelder-Mead",
                options={"xatol": 1e-11, "fatol": 1e-14, "maxfev": 400 * (blk.stop - blk.start)},
            )
            if -res.fun > value:
                theta = theta.copy()
                theta[blk] = res.x
                value = -res.fun
        if value - start < SWEEP_TOL:
            return theta, value, sweep, False
    return theta, value, max_sweeps, True


def trajectory_optimize(
    model: ChannelModel,
    price,
    n: int,
    init: Sequence[PolicyStage] | None = None,
    n_random: int = 1,
    seed: int = 0,
    max_sweeps: int = 50,
) -> NBlockResult:
    """Maximize the summed stage reward over all ``n`` stages directly.

    Each start is first improved by BFGS on the full coefficient vector and
    then by backward coordinate sweeps (one stage at a time) until a sweep
    gains less than 1e-10 nats.  The landscape is nonconvex, so the best of
    several starts is returned; ``metadata["stalled"]`` flags a start that
    ran out of sweeps.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    gamma = price.gamma if isinstance(price, ShadowPrice) else ShadowPrice(price).gamma
    traj = _Trajectory(model, n, gamma)
    rng = np.random.default_rng(seed)
    starts = [list(init)] if init is not None else []
    if init is not None and len(starts[0]) != n:
        raise ValueError(f"init has {len(starts[0])} stages, expected {n}")
    starts += _default_starts(model, n, gamma, rng)[: (3 if init is None else 1) + max(n_random - 1, 0)]

    best = None
    for k, st in enumerate(starts):
        theta0 = traj.pack(st)
        res = scipy.optimize.minimize(
            lambda th: -traj.objective(th), theta0, method="BFGS", options={"gtol": 1e-9, "maxiter": 2000}
        )
        theta = res.x if -res.fun >= traj.objective(theta0) else theta0
        theta, value, sweeps, stalled = _coordinate_sweeps(traj, theta, max_sweeps)
        if best is None or value > best[1]:
            best = (theta, value, sweeps, stalled, k)

    theta, value, sweeps, stalled, k = best
    result = rollout(model, traj.unpack(theta), gamma)
    result.metadata.update(
        solver="trajectory", start=k, starts=len(starts), sweeps=sweeps, stalled=bool(stalled)
    )
    return result


# ---------------------------------------------------------------------------
# shadow-price calibration


def _slope_guess(model: ChannelModel, P: float) -> float:
    # the optimal gamma equals dC/dP; the white-noise slope is a fair start
    return 1.0 / (2.0 * (P + model.sigma_w2))


def calibrate_gamma(
    model: ChannelModel,
    n: int,
    target_P: float,
    solver: str = "trajectory",
    gamma_lo: float = GAMMA_LO,
    gamma_hi: float = GAMMA_HI,
    rtol: float = POWER_RTOL,
    max_iter: int = MAX_CALIBRATION_ITERS,
    grid_cfg: GridConfig | None = None,
):
    """Shadow price whose optimal ``n``-use source spends ``target_P``.

    Power decreases monotonically in ``gamma``, so a bracket is grown from
    the white-noise slope ``1/(2(P + s2))`` and then shrunk by Illinois-type
    regula falsi in ``log gamma`` (a bisection step is forced whenever an
    endpoint stalls).

    Returns
    -------
    (gamma, NBlockResult)

    Raises
    ------
    BracketFailure
        If even ``gamma_lo`` yields less than ``target_P``.
    """
    target_P = float(target_P)
    if not math.isfinite(target_P) or target_P <= 0.0:
        raise ValueError(f"target_P must be positive, got {target_P}")
    if solver in ("value_iteration", "value_iteration_scalar", "vi"):
        cfg = grid_cfg or GridConfig(power_ref=target_P)

        def solve(g, warm):
            return value_iteration_solve(model, g, n, cfg)
    elif solver in ("trajectory", "trajectory_optimize"):
        def solve(g, warm):
            return trajectory_optimize(model, g, n, init=warm.stages if warm is not None else None)
    else:
        raise ValueError(f"unknown solver '{solver}'")

    history = []
    cache = {}

    def evaluate(g):
        if g in cache:
            return cache[g]
        warm = min(cache.items(), key=lambda kv: abs(math.log(kv[0] / g)))[1] if cache else None
        res = solve(g, warm)
        cache[g] = res
        history.append((g, res.power))
        return res

    def done(res):
        return abs(res.power - target_P) <= rtol * target_P

    g0 = min(max(_slope_guess(model, target_P), gamma_lo), gamma_hi)
    r0 = evaluate(g0)
    if done(r0):
        return g0, _tag(r0, history)
    # grow the bracket geometrically from the guess
    if r0.power > target_P:
        lo, r_lo = g0, r0
        hi = min(g0 * 2.0, gamma_hi)
        r_hi = evaluate(hi)
        while r_hi.power > target_P and hi < gamma_hi:
            lo, r_lo = hi, r_hi
            hi = min(hi * 4.0, gamma_hi)
            r_hi = evaluate(hi)
        if r_hi.power > target_P:
            return hi, _tag(r_hi, history)
    else:
        hi, r_hi = g0, r0
        lo = max(g0 / 2.0, gamma_lo)
        r_lo = evaluate(lo)
        while r_lo.power < target_P and lo > gamma_lo:
            hi, r_hi = lo, r_lo
            lo = max(lo / 4.0, gamma_lo)
            r_lo = evaluate(lo)
        if r_lo.power < target_P:
            raise BracketFailure(
                f"power {r_lo.power:.6g} at gamma_lo={gamma_lo:g} is below target {target_P:g}"
            )
    for r in (r_lo, r_hi):
        if done(r):
            return (lo if r is r_lo else hi), _tag(r, history)

    x_lo, x_hi = math.log(lo), math.log(hi)
    f_lo, f_hi = r_lo.power - target_P, r_hi.power - target_P
    side = 0
    best = min((r_lo, r_hi), key=lambda r: abs(r.power - target_P))
    best_g = lo if best is r_lo else hi
    for it in range(max_iter):
        if f_lo - f_hi > 0.0 and it % 8 != 7:
            x = x_hi - f_hi * (x_hi - x_lo) / (f_hi - f_lo)
            if not (min(x_lo, x_hi) < x < max(x_lo, x_hi)):
                x = 0.5 * (x_lo + x_hi)
        else:
            x = 0.5 * (x_lo + x_hi)
        g = math.exp(x)
        r = evaluate(g)
        f = r.power - target_P
        if abs(f) < abs(best.power - target_P):
            best, best_g = r, g
        if done(r):
            break
        if f > 0.0:
            x_lo, f_lo = x, f
            if side == -1:
                f_hi *= 0.5
            side = -1
        else:
            x_hi, f_hi = x, f
            if side == 1:
                f_lo *= 0.5
            side = 1
        if abs(x_hi - x_lo) < 1e-15:
            break
    return best_g, _tag(best, history)


def _tag(res: NBlockResult, history) -> NBlockResult:
    res.metadata["calibration_evals"] = len(history)
    return res
