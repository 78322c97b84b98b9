"""ARMA noise channel in state-space (shift-register) form.

The noise is white Gaussian noise of variance ``sigma_w2`` passed through

    H(z) = (1 - sum_l a_l z^-l) / (1 + sum_l c_l z^-l).

After whitening, the channel is an ISI channel driven by the state
``s_t = A s_{t-1} + b x_t`` with output ``y_t = (a + c)^T s_{t-1} + x_t + w_t``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ChannelError, UnitCircleZeroWarning

ZERO_RADIUS_MAX = 1.0 + 1e-12
UNIT_ZERO_BAND = 1e-9
PSD_GRID = 8192

__all__ = [
    "ChannelModel",
    "build_model",
    "noise_psd",
    "noise_autocovariance",
    "step_channel",
]


@dataclass(frozen=True)
class ChannelModel:
    """Validated channel of order ``L``.

    Use :func:`build_model` rather than the constructor; it derives the
    state-space matrices and checks stability.
    """

    a: np.ndarray
    c: np.ndarray
    sigma_w2: float
    A: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    zero_radii: np.ndarray = field(repr=False)
    pole_radii: np.ndarray = field(repr=False)
    unit_circle_zero: bool = False

    @property
    def L(self) -> int:
        return int(self.a.size)

    @property
    def h(self) -> np.ndarray:
        """Output tap vector ``a + c`` acting on ``s_{t-1}``."""
        return self.a + self.c

    @property
    def is_white(self) -> bool:
        return self.L == 0 or (not np.any(self.a) and not np.any(self.c))

    def to_config(self) -> dict:
        return {
            "a": self.a.tolist(),
            "c": self.c.tolist(),
            "sigma_w2": float(self.sigma_w2),
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "ChannelModel":
        """Build from the ``{"a": [...], "c": [...], "sigma_w2": x}`` schema."""
        if not isinstance(cfg, dict):
            raise ChannelError("channel config must be a JSON object")
        for key in ("a", "c", "sigma_w2"):
            if key not in cfg:
                raise ChannelError(f"channel config missing field '{key}'")
        for key in ("a", "c"):
            if not isinstance(cfg[key], list):
                raise ChannelError(f"channel field '{key}' must be a list of reals")
        return build_model(cfg["a"], cfg["c"], cfg["sigma_w2"])

    @classmethod
    def from_json(cls, path) -> "ChannelModel":
        with open(path) as fh:
            return cls.from_config(json.load(fh))


def _root_radii(coeffs: np.ndarray) -> np.ndarray:
    # coeffs are [1, p_1, ..., p_L]; np.roots keeps trailing zeros as roots at 0.
    if coeffs.size == 1:
        return np.zeros(0)
    return np.abs(np.roots(coeffs))


def build_model(a: Sequence[float], c: Sequence[float], sigma_w2: float) -> ChannelModel:
    """Validate ARMA coefficients and build the state-space channel.

    Parameters
    ----------
    a : sequence of float
        Moving-average taps ``a_1..a_L`` (numerator of H).
    c : sequence of float
        Autoregressive taps ``c_1..c_L`` (denominator of H).
    sigma_w2 : float
        Variance of the driving white noise.

    Raises
    ------
    ChannelError
        On length mismatch, non-finite input, a pole on or outside the unit
        circle, a zero outside it, or non-positive ``sigma_w2``.
    """
    try:
        a = np.asarray(a, dtype=float).reshape(-1)
        c = np.asarray(c, dtype=float).reshape(-1)
        sigma_w2 = float(sigma_w2)
    except (TypeError, ValueError) as exc:
        raise ChannelError(f"non-numeric channel parameter: {exc}") from None
    if a.size != c.size:
        raise ChannelError(f"a and c must have equal length, got {a.size} and {c.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(c))):
        raise ChannelError("channel coefficients must be finite")
    if not np.isfinite(sigma_w2) or sigma_w2 <= 0.0:
        raise ChannelError(f"sigma_w2 must be finite and positive, got {sigma_w2}")

    L = a.size
    zero_radii = _root_radii(np.r_[1.0, -a])
    pole_radii = _root_radii(np.r_[1.0, c])
    if np.any(pole_radii >= 1.0):
        raise ChannelError(
            f"unstable noise filter: pole modulus {pole_radii.max():.12g} >= 1"
        )
    if np.any(zero_radii > ZERO_RADIUS_MAX):
        raise ChannelError(
            f"non-minimum-phase noise filter: zero modulus {zero_radii.max():.12g} > 1"
        )
    unit_zero = bool(np.any(zero_radii >= 1.0 - UNIT_ZERO_BAND))
    if unit_zero:
        warnings.warn(
            "noise filter has a zero on the unit circle; the noise PSD vanishes there",
            UnitCircleZeroWarning,
            stacklevel=2,
        )

    A = np.zeros((L, L))
    if L:
        A[0, :] = a
        A[1:, :-1] = np.eye(L - 1)
    b = np.zeros(L)
    if L:
        b[0] = 1.0
    for arr in (a, c, A, b, zero_radii, pole_radii):
        arr.setflags(write=False)
    return ChannelModel(a, c, sigma_w2, A, b, zero_radii, pole_radii, unit_zero)


def noise_psd(model: ChannelModel, omega):
    """Noise power spectral density ``sigma_w2 |H(e^{jw})|^2``.

    Accepts a scalar or an array of angular frequencies.
    """
    w = np.asarray(omega, dtype=float)
    lags = np.arange(1, model.L + 1)
    phase = np.exp(-1j * np.multiply.outer(w, lags))
    num = 1.0 - phase @ model.a
    den = 1.0 + phase @ model.c
    out = model.sigma_w2 * np.abs(num) ** 2 / np.abs(den) ** 2
    return float(out) if out.ndim == 0 else out


def noise_autocovariance(model: ChannelModel, max_lag: int) -> np.ndarray:
    """Autocovariances ``R(0..max_lag)`` by uniform-grid spectral quadrature.

    The trapezoid rule on a periodic integrand reduces to an equal-weight
    sum over the grid, computed here with an FFT.
    """
    if max_lag < 0:
        raise ValueError(f"max_lag must be nonnegative, got {max_lag}")
    n_grid = PSD_GRID
    while n_grid < 4 * (max_lag + 1):
        n_grid *= 2
    omega = 2.0 * np.pi * np.arange(n_grid) / n_grid
    S = noise_psd(model, omega)
    R = np.fft.ifft(S).real
    return R[: max_lag + 1].copy()


def step_channel(model: ChannelModel, s_prev, x: float, w: float):
    """Advance the channel one use; returns ``(s, y)``."""
    s_prev = np.asarray(s_prev, dtype=float)
    y = float(model.h @ s_prev) + x + w
    s = model.A @ s_prev + model.b * x
    return s, y
