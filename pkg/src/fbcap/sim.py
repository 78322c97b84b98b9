"""Monte-Carlo check of the signaling scheme with the filter in the loop.

The transmitter sends ``x_t = d_t^T (s_{t-1} - m_{t-1}) + e_t z_t``; the
receiver-side filter tracks ``(m_t, K_t)``.  Rates are estimated from the
variance of the output innovations ``y_t - (a + c)^T m_{t-1}``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import ChannelModel
from .errors import NonStationaryWarning
from .kalman import PolicyStage, _gain_terms, cov_update, stationary_covariance
from .rate import LOG2E

__all__ = ["SimReport", "simulate", "PRNG_ID"]

PRNG_ID = "numpy.PCG64/standard_normal"
BURN_IN = 0.1
N_BATCHES = 50
MIN_STEPS = 100
SETTLE_TOL = 1e-8


@dataclass
class SimReport:
    steps: int
    seed: int
    burn_in: int
    empirical_power: float
    power_stderr: float
    empirical_rate_bits: float
    rate_stderr: float
    innovation_variance: float
    innovation_lag1: float
    state_error_cov: np.ndarray
    state_error_mean: np.ndarray
    state_error_mean_stderr: np.ndarray
    k_tail: np.ndarray
    k_traj_mismatch: float
    converged: bool
    prng: str = PRNG_ID
    metadata: dict = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        """Whether the rate estimate refers to a settled filter."""
        return self.converged

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "seed": self.seed,
            "burn_in": self.burn_in,
            "prng": self.prng,
            "empirical_power": self.empirical_power,
            "power_stderr": self.power_stderr,
            "empirical_rate_bits": self.empirical_rate_bits,
            "rate_bits": self.empirical_rate_bits,
            "rate_stderr": self.rate_stderr,
            "innovation_variance": self.innovation_variance,
            "innovation_lag1": self.innovation_lag1,
            "state_error_cov": np.asarray(self.state_error_cov).tolist(),
            "state_error_mean": np.asarray(self.state_error_mean).tolist(),
            "state_error_mean_stderr": np.asarray(self.state_error_mean_stderr).tolist(),
            "k_tail": np.asarray(self.k_tail).tolist(),
            "k_traj_mismatch": self.k_traj_mismatch,
            "converged": self.converged,
            "valid": self.valid,
            "metadata": self.metadata,
        }


def _batch_stderr(x: np.ndarray) -> np.ndarray:
    """Standard error of the mean from non-overlapping batch means."""
    nb = min(N_BATCHES, x.shape[0] // 2)
    size = x.shape[0] // nb
    means = x[: nb * size].reshape((nb, size) + x.shape[1:]).mean(axis=1)
    return np.std(means, axis=0, ddof=1) / math.sqrt(nb)


def _schedule(model: ChannelModel, policy):
    """Normalize the policy to a list of stages and note stationary priming.

    A time-invariant stage with ``e = 0`` never leaves ``K = 0`` from a known
    state, and the map preserves rank, so the first ``L`` uses add
    ``e_1 = sqrt(d^T K* d)`` (the steady-state power of the stage); the
    covariance then has full rank and settles on the stabilizing solution.
    """
    if isinstance(policy, PolicyStage):
        st = policy
        if st.e == 0.0 and np.any(st.d != 0.0):
            K_star = stationary_covariance(model, st)
            e1 = math.sqrt(max(float(st.d @ K_star @ st.d), 0.0))
            return [PolicyStage(st.d, e1)] * model.L + [st], True, e1
        return [st], True, None
    stages = list(policy)
    if not stages:
        raise ValueError("policy schedule is empty")
    return stages, False, None


def simulate(
    model: ChannelModel,
    policy: PolicyStage | Sequence[PolicyStage],
    steps: int,
    seed: int,
    burn_in: float = BURN_IN,
) -> SimReport:
    """Simulate ``steps`` channel uses from ``s_0 = m_0 = 0``, ``K_0 = 0``.

    ``policy`` is a single stage used at every step or a schedule whose last
    stage is repeated once exhausted.  Statistics are taken over the steps
    after the first ``burn_in`` fraction.

    Warns
    -----
    NonStationaryWarning
        If ``K_t`` still moves by more than 1e-8 (Frobenius) at the end; the
        report is then flagged ``valid = False``.
    """
    steps = int(steps)
    if steps < MIN_STEPS:
        raise ValueError(f"steps must be at least {MIN_STEPS}, got {steps}")
    if not 0.0 <= burn_in < 0.9:
        raise ValueError(f"burn_in fraction must lie in [0, 0.9), got {burn_in}")
    stages, stationary, e_prime = _schedule(model, policy)
    for st in stages:
        if st.d.size != model.L:
            raise ValueError(f"stage has {st.d.size} gains for a channel of order {model.L}")
    L = model.L
    s2 = model.sigma_w2

    # deterministic part: K_{t-1} and filter gains, reused once settled
    D = np.empty((steps, L))
    E = np.empty(steps)
    G = np.empty((steps, L))
    K_prev = np.empty((steps, L, L))
    K = np.zeros((L, L))
    last_step = float("inf")
    frozen = False
    for t in range(steps):
        st = stages[min(t, len(stages) - 1)]
        D[t], E[t] = st.d, st.e
        K_prev[t] = K
        if frozen:
            G[t] = G[t - 1]
            continue
        _, v, delta, _ = _gain_terms(model, K, st)
        G[t] = v / delta
        Kn = cov_update(model, K, st)
        last_step = float(np.linalg.norm(Kn - K))
        if t >= len(stages) and last_step <= 1e-15 * max(1.0, float(np.linalg.norm(K))):
            frozen = True
            last_step = 0.0
        K = Kn
    K_final = K

    rng = np.random.Generator(np.random.PCG64(seed))
    Z = rng.standard_normal(steps)
    W = rng.standard_normal(steps) * math.sqrt(s2)

    A, b, h = model.A, model.b, model.h
    s = np.zeros(L)
    m = np.zeros(L)
    X = np.empty(steps)
    INNOV = np.empty(steps)
    ERR = np.empty((steps, L))
    for t in range(steps):
        x = float(D[t] @ (s - m)) + E[t] * Z[t]
        y = float(h @ s) + x + W[t]
        innov = y - float(h @ m)
        s = A @ s + b * x
        m = A @ m + G[t] * innov
        X[t] = x
        INNOV[t] = innov
        ERR[t] = s - m

    n0 = int(math.floor(burn_in * steps))
    X, INNOV, ERR = X[n0:], INNOV[n0:], ERR[n0:]
    # K_t after step t is K_prev[t + 1]; the last one is K_final
    K_post = np.concatenate([K_prev[n0 + 1 :], K_final[None]], axis=0)

    x2 = X * X
    power = float(x2.mean())
    power_se = float(_batch_stderr(x2))
    innov_var = float(np.var(INNOV, ddof=1))
    i2 = (INNOV - INNOV.mean()) ** 2
    var_se = float(_batch_stderr(i2))
    rate = 0.5 * math.log(innov_var / s2) * LOG2E if innov_var > 0.0 else float("-inf")
    rate_se = 0.5 * LOG2E * var_se / innov_var if innov_var > 0.0 else 0.0
    ic = INNOV - INNOV.mean()
    denom = float(ic @ ic)
    lag1 = float(ic[1:] @ ic[:-1]) / denom if denom > 0.0 else 0.0

    err_mean = ERR.mean(axis=0)
    err_cov = np.atleast_2d(np.cov(ERR, rowvar=False)) if L > 0 else np.zeros((0, 0))
    err_se = _batch_stderr(ERR) if L > 0 else np.zeros(0)
    K_bar = K_post.mean(axis=0)
    ref = float(np.linalg.norm(K_bar))
    diff = float(np.linalg.norm(err_cov - K_bar))
    mismatch = diff / ref if ref > 0.0 else diff

    converged = last_step <= SETTLE_TOL
    if not converged:
        warnings.warn(
            f"covariance still moving at the end of the run (step {last_step:.2e})",
            NonStationaryWarning,
            stacklevel=2,
        )
    meta = {"stationary_policy": stationary}
    if e_prime is not None:
        meta["primed_e1"] = e_prime
    return SimReport(
        steps=steps, seed=int(seed), burn_in=n0,
        empirical_power=power, power_stderr=power_se,
        empirical_rate_bits=rate, rate_stderr=rate_se,
        innovation_variance=innov_var, innovation_lag1=lag1,
        state_error_cov=err_cov, state_error_mean=err_mean, state_error_mean_stderr=err_se,
        k_tail=K_final, k_traj_mismatch=mismatch, converged=converged, metadata=meta,
    )
