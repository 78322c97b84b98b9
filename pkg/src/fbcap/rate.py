"""Per-use information rate, input power and Lagrangian reward.

Rates are in nats; :data:`LOG2E` converts to bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelModel
from .kalman import PolicyStage, Posterior

LOG2E = 1.0 / math.log(2.0)

__all__ = [
    "ShadowPrice",
    "stage_rate",
    "stage_power",
    "stage_power_uncentered",
    "reward_omega",
    "nats_to_bits",
]


def nats_to_bits(x):
    return x * LOG2E


@dataclass(frozen=True)
class ShadowPrice:
    """Lagrange multiplier on the input power (nats per unit power)."""

    gamma: float

    def __post_init__(self):
        g = float(self.gamma)
        if not math.isfinite(g) or g <= 0.0:
            raise ValueError(f"shadow price must be positive and finite, got {self.gamma}")
        object.__setattr__(self, "gamma", g)


def _as_price(price) -> float:
    return price.gamma if isinstance(price, ShadowPrice) else ShadowPrice(price).gamma


def stage_rate(model: ChannelModel, K, stage: PolicyStage) -> float:
    """Information carried by one use: ``0.5 ln(delta / sigma_w2)`` nats."""
    K = np.asarray(K, dtype=float).reshape(model.L, model.L)
    hd = model.h + stage.d
    excess = float(hd @ K @ hd) + stage.e**2
    return 0.5 * math.log1p(max(excess, 0.0) / model.sigma_w2)


def stage_power(model: ChannelModel, post: Posterior, stage: PolicyStage) -> float:
    """Expected input power ``d^T K d + e^2`` of the centred source."""
    K = np.asarray(post.K, dtype=float).reshape(model.L, model.L)
    return max(float(stage.d @ K @ stage.d), 0.0) + stage.e**2


def stage_power_uncentered(model: ChannelModel, post: Posterior, stage: PolicyStage, g: float) -> float:
    """Input power for an arbitrary offset ``g``; exceeds the centred power
    by ``(d^T m + g)^2``.  Diagnostic only."""
    offset = float(stage.d @ np.asarray(post.m, dtype=float)) + g
    return offset * offset + stage_power(model, post, stage)


def reward_omega(model: ChannelModel, post: Posterior, stage: PolicyStage, price) -> float:
    """Stage reward: rate minus ``gamma`` times power."""
    gamma = _as_price(price)
    return stage_rate(model, post.K, stage) - gamma * stage_power(model, post, stage)
