"""Maximal information rate of stationary feedback sources.

Three routes:

* :func:`solve_stationary` -- numerical program over ``(d, e)`` with the
  power equality and the steady-state Riccati equation as constraints.
* :func:`first_order_rate` -- closed form for ``L = 1`` through the largest
  positive root of a quartic.
* :func:`butman_ar1_rate` -- the AR(1) special case, solved by bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.optimize

from .channel import ChannelModel
from .errors import Infeasible, NonConvergent, NonStationaryPolicy, NoPositiveRoot
from .kalman import PolicyStage, riccati_fixed_point, riccati_residual, stationary_covariance
from .rate import LOG2E, stage_rate

__all__ = [
    "StationaryResult",
    "FirstOrderResult",
    "ButmanRate",
    "solve_stationary",
    "first_order_rate",
    "butman_ar1_rate",
    "first_order_quartic",
]

N_RESTARTS = 8
MAX_EVALS = 2000
XATOL = 1e-10
FATOL = 1e-12


@dataclass
class StationaryResult:
    d: np.ndarray
    e: float
    K: np.ndarray
    I_max_nats: float
    I_max_bits: float
    P: float
    riccati_residual: float
    power_residual: float
    feasible_restarts: int = 0
    evaluations: int = 0

    @property
    def stage(self) -> PolicyStage:
        return PolicyStage(self.d, self.e)

    def to_dict(self) -> dict:
        return {
            "d": self.d.tolist(),
            "e": self.e,
            "K": self.K.tolist(),
            "I_max_nats": self.I_max_nats,
            "I_max_bits": self.I_max_bits,
            "P": self.P,
            "riccati_residual": self.riccati_residual,
            "power_residual": self.power_residual,
            "feasible_restarts": self.feasible_restarts,
            "evaluations": self.evaluations,
        }


@dataclass
class FirstOrderResult:
    """Closed-form optimum of a first-order channel.

    ``eta`` is NaN on the ``a + c = 0`` branch, which is AWGN-equivalent and
    puts all power into ``e``.
    """

    eta: float
    d: float
    K: float
    I_max_nats: float
    I_max_bits: float
    quartic_residual: float
    P: float
    e: float = 0.0
    coefficients: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    @property
    def stage(self) -> PolicyStage:
        return PolicyStage([self.d], self.e)

    def to_dict(self) -> dict:
        return {
            "eta": None if math.isnan(self.eta) else self.eta,
            "d": self.d,
            "e": self.e,
            "K": self.K,
            "I_max_nats": self.I_max_nats,
            "I_max_bits": self.I_max_bits,
            "quartic_residual": self.quartic_residual,
            "P": self.P,
        }


class ButmanRate(NamedTuple):
    chi: float
    I_max_bits: float


def first_order_quartic(a: float, c: float, sigma_w2: float, P: float) -> np.ndarray:
    """Coefficients (highest power first) of the quartic in ``eta``."""
    snr = P / sigma_w2
    h = a + c
    return np.array([snr, 2.0 * snr, snr + 1.0 - a * a, -2.0 * a * h, -h * h])


def _largest_positive_root(coeffs: np.ndarray) -> float:
    monic = coeffs[1:] / coeffs[0]
    deg = monic.size
    companion = np.zeros((deg, deg))
    companion[0, :] = -monic
    companion[1:, :-1] = np.eye(deg - 1)
    roots = np.linalg.eigvals(companion)
    real = roots[np.abs(roots.imag) <= 1e-9 * np.maximum(1.0, np.abs(roots))].real
    real = real[real > 0.0]
    if real.size == 0:
        raise NoPositiveRoot(f"quartic {coeffs.tolist()} has no positive real root")
    eta = float(real.max())
    deriv = np.polyder(coeffs)
    for _ in range(3):
        slope = np.polyval(deriv, eta)
        if slope == 0.0:
            break
        step = np.polyval(coeffs, eta) / slope
        if not math.isfinite(step) or abs(step) > 0.1 * eta:
            break
        eta -= step
    return eta


def first_order_rate(a: float, c: float, sigma_w2: float, P: float) -> FirstOrderResult:
    """Optimal stationary rate of the channel with scalar taps ``a``, ``c``.

    Parameters
    ----------
    a, c : float
        MA and AR taps, each in ``(-1, 1)``.
    sigma_w2 : float
        White-noise variance.
    P : float
        Power budget.

    Returns
    -------
    FirstOrderResult
        ``eta`` is the largest positive root of the quartic, the steady-state
        source is ``d = (a + c) / eta``, ``e = 0`` and ``K = P / d**2``.
    """
    a, c, sigma_w2, P = float(a), float(c), float(sigma_w2), float(P)
    if not (-1.0 < a < 1.0 and -1.0 < c < 1.0):
        raise ValueError(f"first-order taps must lie in (-1, 1), got a={a}, c={c}")
    if sigma_w2 <= 0.0 or P <= 0.0:
        raise ValueError("sigma_w2 and P must be positive")
    snr = P / sigma_w2
    if a + c == 0.0:
        K = P * sigma_w2 / ((1.0 - c * c) * (P + sigma_w2))
        nats = 0.5 * math.log1p(snr)
        return FirstOrderResult(
            eta=float("nan"), d=0.0, K=K, I_max_nats=nats, I_max_bits=nats * LOG2E,
            quartic_residual=0.0, P=P, e=math.sqrt(P),
        )
    coeffs = first_order_quartic(a, c, sigma_w2, P)
    eta = _largest_positive_root(coeffs)
    d = (a + c) / eta
    K = P / (d * d)
    nats = 0.5 * math.log1p((1.0 + eta) ** 2 * snr)
    return FirstOrderResult(
        eta=eta, d=d, K=K, I_max_nats=nats, I_max_bits=nats * LOG2E,
        quartic_residual=float(abs(np.polyval(coeffs, eta))), P=P, coefficients=coeffs,
    )


def scalar_riccati_map(a: float, c: float, sigma_w2: float, K: float, d: float, e: float) -> float:
    """Steady-state covariance map of a first-order channel, scalar form."""
    num = (a + d) ** 2 * K * sigma_w2 + c * c * e * e * K + e * e * sigma_w2
    return num / ((a + c + d) ** 2 * K + e * e + sigma_w2)


def butman_ar1_rate(c: float, sigma_w2: float, P: float) -> ButmanRate:
    """Butman's AR(1) feedback rate ``log2(chi)``.

    ``chi > 1`` solves ``chi^2 = 1 + (P / sigma_w2) ((chi + |c|) / chi)^2``.
    """
    c, sigma_w2, P = float(c), float(sigma_w2), float(P)
    if c == 0.0:
        raise ValueError("c = 0 is the white-noise channel; use 0.5*log2(1 + P/sigma_w2)")
    if sigma_w2 <= 0.0 or P <= 0.0:
        raise ValueError("sigma_w2 and P must be positive")
    snr = P / sigma_w2
    ac = abs(c)

    def f(chi):
        return chi * chi - 1.0 - snr * ((chi + ac) / chi) ** 2

    hi = 1.0 + math.sqrt(snr) * (2.0 + ac)
    chi = scipy.optimize.bisect(f, 1.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return ButmanRate(chi, math.log2(chi))


class _Inner:
    """Power-split inner solve: given a gain direction and split ``rho``,
    find the gain scale meeting ``d^T K d = rho P`` with ``K`` the steady
    state of ``(d, e)``."""

    def __init__(self, model: ChannelModel, P: float):
        self.model = model
        self.P = P
        self.evals = 0

    def covariance(self, d, e):
        self.evals += 1
        return stationary_covariance(self.model, PolicyStage(d, e))

    def solve(self, u: np.ndarray, rho: float, alpha_hint: float | None = None):
        P = self.P
        e = math.sqrt(max(1.0 - rho, 0.0) * P)
        target = rho * P
        if target <= 1e-14 * P:
            d = np.zeros(self.model.L)
            return d, e, self.covariance(d, e), 0.0

        def g(alpha):
            K = self.covariance(alpha * u, e)
            return alpha * alpha * float(u @ K @ u) - target

        lo = 0.0
        hi = alpha_hint if alpha_hint and alpha_hint > 0.0 else 1.0
        g_hi = g(hi)
        expansions = 0
        while not g_hi > 0.0:
            lo = hi
            hi *= 2.0
            g_hi = g(hi)
            expansions += 1
            if expansions > 80:
                raise Infeasible("power target unreachable along this gain direction")
        if alpha_hint and lo == 0.0:
            # contract toward the origin while the value stays above target
            probe = hi / 1.5
            for _ in range(60):
                if g(probe) <= 0.0:
                    lo = probe
                    break
                hi = probe
                probe /= 1.5
        alpha = scipy.optimize.brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=300)
        d = alpha * u
        return d, e, self.covariance(d, e), alpha


def _direction(w: np.ndarray) -> np.ndarray | None:
    norm = float(np.linalg.norm(w))
    if not math.isfinite(norm) or norm < 1e-12:
        return None
    return w / norm


def solve_stationary(
    model: ChannelModel,
    P: float,
    restarts: int = N_RESTARTS,
    max_evals: int = MAX_EVALS,
    seed: int = 0,
) -> StationaryResult:
    """Best stationary source under power ``P``.

    The gain ``d`` is written as ``alpha * u`` with ``|u| = 1``; the split
    ``rho = sin(phi)^2`` assigns ``rho P`` to ``d^T K d`` and the rest to
    ``e^2``.  A Nelder-Mead search over ``(u, phi)`` wraps an exact inner
    solve for ``alpha`` so both constraints hold at every evaluated point.

    Raises
    ------
    Infeasible
        If no restart yields any feasible point.
    NonStationaryPolicy
        If every failure came from a Riccati iteration that did not settle.
    """
    P = float(P)
    if not math.isfinite(P) or P <= 0.0:
        raise ValueError(f"P must be positive, got {P}")
    L = model.L
    inner = _Inner(model, P)

    if model.is_white:
        d = np.zeros(L)
        e = math.sqrt(P)
        K = riccati_fixed_point(model, PolicyStage(d, e), tol=1e-14) if L else np.zeros((0, 0))
        return _finish(model, P, d, e, K, feasible=1, evals=1)

    rng = np.random.default_rng(seed)
    h = model.h
    starts = []
    for k in range(restarts):
        if L == 1:
            sign = 1.0 if k % 2 == 0 else -1.0
            sign *= 1.0 if h[0] >= 0 else -1.0
            w = np.array([sign])
            phi = [1.4, 0.9, 0.5, 1.1][(k // 2) % 4]
        elif k == 0:
            w, phi = h.copy(), 1.4
        elif k == 1:
            w, phi = -h.copy(), 1.4
        else:
            w, phi = rng.standard_normal(L), rng.uniform(0.2, 1.5)
        starts.append((w, phi))

    best: dict = {}
    failures: list[Exception] = []
    feasible = 0

    for w0, phi0 in starts:
        hint = {"alpha": None}
        fixed_dir = _direction(w0) if L == 1 else None

        def unpack(theta):
            if L == 1:
                return fixed_dir, math.sin(theta[0]) ** 2
            return _direction(theta[:-1]), math.sin(theta[-1]) ** 2

        def objective(theta):
            u, rho = unpack(theta)
            if u is None:
                return 0.0
            try:
                d, e, K, alpha = inner.solve(u, rho, hint["alpha"])
            except (Infeasible, NonConvergent, ValueError) as exc:
                failures.append(exc)
                return 1e3
            if alpha:
                hint["alpha"] = alpha
            value = -stage_rate(model, K, PolicyStage(d, e))
            if value < best.get("value", math.inf):
                best.update(value=value, d=d, e=e, K=K)
            return value

        x0 = np.array([phi0]) if L == 1 else np.r_[w0, phi0]
        res = scipy.optimize.minimize(
            objective, x0, method="Nelder-Mead",
            options={"xatol": XATOL, "fatol": FATOL, "maxfev": max_evals},
        )
        if res.fun < 1e3 - 1:
            feasible += 1

    if not best:
        if failures and all(isinstance(f, NonConvergent) for f in failures):
            raise NonStationaryPolicy(
                f"no steady state found for any restart ({len(failures)} attempts)",
                residual=getattr(failures[-1], "residual", float("nan")),
            )
        raise Infeasible(f"no feasible stationary point found for P={P}")
    return _finish(model, P, best["d"], best["e"], best["K"], feasible=feasible, evals=inner.evals)


def _finish(model, P, d, e, K, feasible, evals) -> StationaryResult:
    stage = PolicyStage(d, e)
    if model.L:
        K = riccati_fixed_point(model, stage, tol=1e-14, K0=K)
    nats = stage_rate(model, K, stage)
    power = float(stage.d @ K @ stage.d) + stage.e**2
    return StationaryResult(
        d=stage.d, e=stage.e, K=np.asarray(K), I_max_nats=nats, I_max_bits=nats * LOG2E, P=P,
        riccati_residual=riccati_residual(model, K, stage) if model.L else 0.0,
        power_residual=power - P, feasible_restarts=feasible, evaluations=evals,
    )
