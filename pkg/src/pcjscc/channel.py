"""Real-valued AWGN and block-Rayleigh channels.

Randomness comes from numpy's PCG64 bit generator seeded through
``numpy.random.SeedSequence`` (``numpy.random.default_rng(seed)``); the same
seed yields the same noise on any platform numpy supports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

RAYLEIGH_SCALE = math.sqrt(2.0) / 2.0  # E[h^2] = 2 * scale^2 = 1


def noise_variance(snr_db: float) -> float:
    """Per-element noise variance for unit-power symbols: 10^(-SNR/10); 0 at +inf dB."""
    if snr_db == math.inf:
        return 0.0
    return 10.0 ** (-snr_db / 10.0)


def receiver_snr_estimate(snr_db: float, offset_db: float = 0.0) -> float:
    """The decoder-side SNR input: true SNR plus a deliberate estimate offset."""
    if not math.isfinite(offset_db):
        raise ValueError("SNR estimate offset must be finite")
    return snr_db + offset_db


@dataclass
class ChannelRealization:
    snr_db: float
    kind: str = "awgn"
    offset_db: float = 0.0
    seed: int | None = None
    theta: float = RAYLEIGH_SCALE
    h: np.ndarray | None = field(default=None, repr=False)

    @property
    def sigma2(self) -> float:
        return noise_variance(self.snr_db)

    @property
    def snr_estimate_db(self) -> float:
        return receiver_snr_estimate(self.snr_db, self.offset_db)


def _values(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def awgn(x, snr_db: float, rng: np.random.Generator):
    """``Y = x + n`` with i.i.d. N(0, 10^(-SNR/10)) noise. Tensors stay on the tape."""
    sigma2 = noise_variance(snr_db)
    if sigma2 == 0.0:
        return x
    n = rng.normal(0.0, math.sqrt(sigma2), size=np.shape(_values(x)))
    return x + Tensor(n) if isinstance(x, Tensor) else x + n


def draw_rayleigh(size: int, rng: np.random.Generator, theta: float = RAYLEIGH_SCALE) -> np.ndarray:
    return rng.rayleigh(scale=theta, size=size)


def rayleigh(x, snr_db: float, rng: np.random.Generator, h: np.ndarray | None = None,
             theta: float = RAYLEIGH_SCALE):
    """Block fading ``Y = h * x + n``: one ``h`` per sample (leading axis), shared by all its symbols.

    Returns ``(Y, h)``. Passing ``h`` forces the fading coefficients.
    """
    xv = _values(x)
    if h is None:
        h = draw_rayleigh(xv.shape[0], rng, theta)
    h = np.asarray(h, dtype=np.float64).reshape((-1,) + (1,) * (xv.ndim - 1))
    faded = x * Tensor(h) if isinstance(x, Tensor) else x * h
    return awgn(faded, snr_db, rng), h.reshape(-1)


@dataclass
class Channel:
    """Channel plus receiver-side conventions for the learned path."""

    kind: str = "awgn"
    snr_db: float = 10.0
    offset_db: float = 0.0
    csi_equalize: bool = False

    def __post_init__(self):
        if self.kind not in ("awgn", "rayleigh"):
            raise ValueError(f"unknown channel kind {self.kind!r}")

    def __call__(self, x, rng: np.random.Generator, snr_db: float | None = None):
        """Transmit ``x``; returns ``(Y, realization)``."""
        snr = self.snr_db if snr_db is None else snr_db
        real = ChannelRealization(snr, self.kind, self.offset_db)
        if self.kind == "awgn":
            return awgn(x, snr, rng), real
        y, h = rayleigh(x, snr, rng)
        real.h = h
        if self.csi_equalize:
            hb = h.reshape((-1,) + (1,) * (_values(x).ndim - 1))
            y = y * Tensor(1.0 / hb) if isinstance(y, Tensor) else y / hb
        return y, real
