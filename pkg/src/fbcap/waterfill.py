"""Feed-forward n-block capacity by water-filling over noise eigenmodes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .channel import ChannelModel, noise_autocovariance

__all__ = ["WaterfillResult", "noise_cov_matrix", "waterfill_capacity", "feedforward_capacity"]

EIG_FLOOR = 1e-8
K_GUARD = 1e-12


@dataclass
class WaterfillResult:
    n: int
    eigenvalues: np.ndarray
    k: int
    capacity_bits: float
    P: float

    @property
    def water_level(self) -> float:
        r = self.eigenvalues
        return (self.n * self.P + float(r[: self.k].sum())) / self.k

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "P": self.P,
            "capacity_bits": self.capacity_bits,
            "rate_bits": self.capacity_bits,
            "water_level": self.water_level,
            "eigenvalues": self.eigenvalues.tolist(),
        }


def noise_cov_matrix(model: ChannelModel, n: int) -> np.ndarray:
    """Symmetric Toeplitz covariance of ``n`` consecutive noise samples."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    return scipy.linalg.toeplitz(noise_autocovariance(model, n - 1))


def waterfill_capacity(eigenvalues, P: float) -> WaterfillResult:
    """Water-filling capacity (bits per use) over noise eigenvalues.

    ``k`` is the largest integer with ``n P + r_1 + ... + r_k > k r_k`` for
    ascending eigenvalues ``r``; the strict inequality is tested with a
    relative guard so ties resolve to "not active".
    """
    r = np.sort(np.asarray(eigenvalues, dtype=float).reshape(-1))
    if r.size == 0:
        raise ValueError("need at least one eigenvalue")
    if not np.all(np.isfinite(r)) or r[0] <= 0.0:
        raise ValueError("eigenvalues must be positive and finite")
    P = float(P)
    if not math.isfinite(P) or P <= 0.0:
        raise ValueError(f"P must be positive, got {P}")
    n = r.size
    budget = n * P
    csum = np.cumsum(r)
    ks = np.arange(1, n + 1)
    lhs = budget + csum
    rhs = ks * r
    active = lhs - rhs > K_GUARD * np.maximum(1.0, np.abs(rhs))
    k = int(ks[active].max())
    level = lhs[k - 1] / k
    cap = float(np.sum(np.log2(level / r[:k]))) / (2.0 * n)
    return WaterfillResult(n=n, eigenvalues=r, k=k, capacity_bits=cap, P=P)


def feedforward_capacity(model: ChannelModel, n: int, P: float) -> WaterfillResult:
    """n-block capacity without feedback for the model's noise."""
    R = noise_cov_matrix(model, n)
    eig = np.linalg.eigvalsh(R)
    # quadrature round-off can leave a non-positive smallest mode
    eig = np.maximum(eig, EIG_FLOOR * max(float(eig[-1]), EIG_FLOOR))
    return waterfill_capacity(eig, P)
