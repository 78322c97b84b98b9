"""Kalman-Bucy propagation of the posterior channel-state statistics.

Under the centred source ``x_t = d^T (s_{t-1} - m_{t-1}) + e z_t`` the
posterior of ``s_t`` given the outputs is Gaussian with mean ``m_t`` and
covariance ``K_t``.  The covariance recursion does not depend on the
outputs, so it can be run off-line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .channel import ChannelModel
from .errors import ConsistencyError, NonConvergent

PSD_FLOOR = 1e-10

__all__ = [
    "Posterior",
    "PolicyStage",
    "cov_update",
    "mean_update",
    "riccati_fixed_point",
    "riccati_residual",
    "stationary_covariance",
]


@dataclass(frozen=True)
class Posterior:
    m: np.ndarray
    K: np.ndarray

    @classmethod
    def known(cls, model: ChannelModel, s0=None) -> "Posterior":
        """Posterior of a perfectly known initial state (``K = 0``)."""
        m = np.zeros(model.L) if s0 is None else np.asarray(s0, dtype=float).copy()
        return cls(m, np.zeros((model.L, model.L)))


@dataclass(frozen=True)
class PolicyStage:
    """Source coefficients of one channel use.

    The centring offset is implied (``g = -d^T m``).  ``e`` is stored as a
    magnitude since ``z_t`` is symmetric.
    """

    d: np.ndarray
    e: float

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.d, dtype=float)).reshape(-1)
        e = abs(float(self.e))
        if not (np.all(np.isfinite(d)) and np.isfinite(e)):
            raise ValueError("policy stage coefficients must be finite")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "e", e)

    @classmethod
    def zero(cls, L: int) -> "PolicyStage":
        return cls(np.zeros(L), 0.0)

    def to_dict(self) -> dict:
        return {"d": self.d.tolist(), "e": self.e}


def _check_dims(model: ChannelModel, stage: PolicyStage):
    if stage.d.size != model.L:
        raise ValueError(f"stage has {stage.d.size} gains for a channel of order {model.L}")


def _gain_terms(model: ChannelModel, K: np.ndarray, stage: PolicyStage):
    """Return ``(Q, v, delta, hd)`` of one Kalman-Bucy step."""
    hd = model.h + stage.d
    Q = model.A + np.outer(model.b, stage.d)
    Kh = K @ hd
    e2 = stage.e * stage.e
    v = Q @ Kh + model.b * e2
    delta = float(hd @ Kh) + e2 + model.sigma_w2
    return Q, v, delta, hd


def _psd_clamp(K: np.ndarray) -> np.ndarray:
    K = 0.5 * (K + K.T)
    if K.size == 0:
        return K
    scale = max(1.0, float(np.abs(K).max()))
    if K.shape[0] == 1:
        if K[0, 0] < 0.0:
            if K[0, 0] < -PSD_FLOOR * scale:
                raise ConsistencyError(f"covariance update went negative: {K[0, 0]:.3e}")
            K[0, 0] = 0.0
        return K
    w, V = np.linalg.eigh(K)
    if w[0] >= 0.0:
        return K
    if w[0] < -PSD_FLOOR * scale:
        raise ConsistencyError(f"covariance update is indefinite: min eigenvalue {w[0]:.3e}")
    w = np.maximum(w, 0.0)
    K = (V * w) @ V.T
    return 0.5 * (K + K.T)


def cov_update(model: ChannelModel, K, stage: PolicyStage) -> np.ndarray:
    """One step of the posterior covariance recursion (Riccati map).

    ``K' = Q K Q^T + e^2 b b^T - v v^T / delta`` with ``Q = A + b d^T``,
    ``v = Q K (a + c + d) + b e^2`` and
    ``delta = (a + c + d)^T K (a + c + d) + e^2 + sigma_w2``.
    """
    _check_dims(model, stage)
    K = np.asarray(K, dtype=float).reshape(model.L, model.L)
    Q, v, delta, _ = _gain_terms(model, K, stage)
    e2 = stage.e * stage.e
    Kn = Q @ K @ Q.T + e2 * np.outer(model.b, model.b) - np.outer(v, v) / delta
    return _psd_clamp(Kn)


def mean_update(model: ChannelModel, post: Posterior, stage: PolicyStage, y: float) -> np.ndarray:
    """Posterior mean after observing ``y``.

    The innovation is ``y - E[Y | past]`` with ``E[Y | past] = (a + c)^T m``
    once the centring offset is applied.
    """
    _check_dims(model, stage)
    m = np.asarray(post.m, dtype=float)
    _, v, delta, _ = _gain_terms(model, np.asarray(post.K, dtype=float), stage)
    y_hat = float(model.h @ m)
    return model.A @ m + v * ((y - y_hat) / delta)


def riccati_residual(model: ChannelModel, K, stage: PolicyStage) -> float:
    """Frobenius norm of ``K - cov_update(K)``."""
    K = np.asarray(K, dtype=float).reshape(model.L, model.L)
    return float(np.linalg.norm(K - cov_update(model, K, stage)))


def _seed(model: ChannelModel, stage: PolicyStage) -> np.ndarray:
    # With e = 0 the origin is a fixed point and the map preserves rank, so a
    # rank-one seed can settle on a non-stabilizing solution; use sigma_w2 I.
    if stage.e > 0.0:
        return stage.e**2 * np.outer(model.b, model.b)
    return model.sigma_w2 * np.eye(model.L)


def riccati_fixed_point(
    model: ChannelModel,
    stage: PolicyStage,
    tol: float = 1e-12,
    max_iter: int = 100_000,
    K0=None,
) -> np.ndarray:
    """Steady-state posterior covariance of a time-invariant stage.

    Iterates :func:`cov_update` until
    ``||K - cov_update(K)||_F <= tol * max(1, ||K||_F)``.

    Raises
    ------
    NonConvergent
        If the tolerance is not met within ``max_iter`` iterations.
    """
    _check_dims(model, stage)
    K = _seed(model, stage) if K0 is None else np.asarray(K0, dtype=float).reshape(model.L, model.L)
    resid = float("inf")
    for it in range(max_iter):
        Kn = cov_update(model, K, stage)
        resid = float(np.linalg.norm(Kn - K))
        if resid <= tol * max(1.0, float(np.linalg.norm(K))):
            return K
        if not np.all(np.isfinite(Kn)):
            break
        K = Kn
    raise NonConvergent(
        f"Riccati iteration stalled at residual {resid:.3e} after {max_iter} iterations",
        residual=resid,
        iterations=max_iter,
    )


def _scalar_steady_state(model: ChannelModel, stage: PolicyStage) -> float:
    # Largest root of h^2 K^2 + (e^2 + s2 - s2 (a + d)^2 - c^2 e^2) K - e^2 s2 = 0.
    a, c, s2 = float(model.a[0]), float(model.c[0]), model.sigma_w2
    d, e2 = float(stage.d[0]), stage.e * stage.e
    h = a + c + d
    lin = e2 + s2 - s2 * (a + d) ** 2 - c * c * e2
    if h == 0.0:
        return e2 * s2 / lin if lin > 0.0 else 0.0
    qa = h * h
    disc = lin * lin + 4.0 * qa * e2 * s2
    root = (-lin + math.sqrt(disc)) / (2.0 * qa) if lin <= 0.0 else 2.0 * e2 * s2 / (lin + math.sqrt(disc))
    return max(root, 0.0)


def stationary_covariance(model: ChannelModel, stage: PolicyStage, tol: float = 1e-12) -> np.ndarray:
    """Steady-state covariance via a generalized-eigenvalue DARE solve.

    The stabilizing DARE solution is the limit of the recursion from a
    positive seed; it is polished by :func:`riccati_fixed_point` so the
    returned matrix meets the same residual contract.  Falls back to plain
    iteration if the DARE solver fails.
    """
    _check_dims(model, stage)
    L = model.L
    if L == 0:
        return np.zeros((0, 0))
    if L == 1:
        K0 = np.array([[_scalar_steady_state(model, stage)]])
        return riccati_fixed_point(model, stage, tol=tol, K0=K0)
    hd = model.h + stage.d
    Q = model.A + np.outer(model.b, stage.d)
    e2 = stage.e * stage.e
    try:
        X = scipy.linalg.solve_discrete_are(
            Q.T,
            hd.reshape(L, 1),
            e2 * np.outer(model.b, model.b),
            np.array([[e2 + model.sigma_w2]]),
            s=(e2 * model.b).reshape(L, 1),
        )
        if not np.all(np.isfinite(X)):
            raise np.linalg.LinAlgError("non-finite DARE solution")
        K0 = _psd_clamp(np.array(X))
    except (np.linalg.LinAlgError, ValueError, ConsistencyError):
        K0 = None
    return riccati_fixed_point(model, stage, tol=tol, K0=K0)
