"""Reusable experiment runs: training from a config, scored transmission, sweeps, ablations.

Channel randomness for trial ``t`` of a run seeded ``s`` is
``default_rng([s, t])``; every grid point of a sweep reuses the same trial
streams (common random numbers), so a one-point sweep reproduces a single
transmission with the same seed exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .channel import Channel
from .config import RunConfig, from_flat
from .data import ShapeDataset, ply_dataset, split, toy_dataset
from .metrics import DistortionReport, distortion
from .model import TransmissionModel
from .stf import budget
from .trainer import train

SWEEP_AXES = ("snr", "cbr", "offset")

# name -> flat config overrides (decoder stages, then loss/conditioning ablations)
VARIANTS: dict[str, dict] = {
    "none": {},
    "transformer": {"decoder.ablation": "transformer"},
    "upsample": {"decoder.ablation": "upsample"},
    "residual": {"decoder.ablation": "residual"},
    "coarse-only": {"decoder.ablation": "coarse-only"},
    "no-snr": {"decoder.snr_embedding": False},
    "no-sym": {"loss.lambda_sym": 0.0},
    "no-sparsity": {"loss.lambda_sparsity": 0.0},
    "no-diversity": {"loss.lambda_diversity": 0.0},
}


def variant_config(base: RunConfig, name: str) -> RunConfig:
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
    return from_flat(VARIANTS[name], base)


def load_dataset(cfg: RunConfig) -> ShapeDataset:
    n = cfg.model.points
    if cfg.data.source == "toy":
        return toy_dataset(cfg.data.count, n, cfg.data.seed)
    return ply_dataset(cfg.data.source, n)


def datasets(cfg: RunConfig) -> tuple[ShapeDataset, ShapeDataset]:
    return split(load_dataset(cfg), cfg.data.val_fraction, cfg.data.seed)


def train_run(cfg: RunConfig, checkpoint_dir: str | Path | None = None, data=None):
    """Build the model from ``cfg`` (initialised with ``train.seed``) and train it.

    Returns ``(model, history, train_set, val_set)``.
    """
    tr, va = data if data is not None else datasets(cfg)
    model = TransmissionModel(cfg.model, seed=cfg.train.seed)
    model, history = train(model, tr, va, cfg.train, checkpoint_dir=checkpoint_dir)
    return model, history, tr, va


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([seed, trial])


def score(model: TransmissionModel, points: np.ndarray, channel: Channel, rng: np.random.Generator,
          keep_tokens: int | None = None, grouping=None) -> tuple[list[DistortionReport], np.ndarray]:
    """Transmit a (B, N, 3) batch once; per-cloud distortion reports and the reconstructions."""
    res = model.transmit(points, channel, rng, keep_tokens, grouping)
    return [distortion(points[i], res.x_hat[i]) for i in range(len(points))], res.x_hat


@dataclass
class SweepRow:
    axis: str
    value: float
    snr_db: float
    offset_db: float
    keep_tokens: int
    cbr: float
    bpp: float
    trials: int
    clouds: int
    d1_psnr: float
    d2_psnr: float
    d1_std: float
    monotone: int

    FIELDS = ("axis", "value", "snr_db", "offset_db", "keep_tokens", "cbr", "bpp", "trials", "clouds",
              "d1_psnr", "d2_psnr", "d1_std", "monotone")

    def as_row(self) -> dict:
        return {f: getattr(self, f) for f in self.FIELDS}


def sweep(model: TransmissionModel, points: np.ndarray, axis: str, grid, trials: int, seed: int,
          channel: Channel, keep_tokens: int | None = None) -> list[SweepRow]:
    """Average D1/D2 over ``trials`` channel draws and all clouds at each grid value.

    ``axis`` picks what the grid varies: ``snr`` (dB), ``offset`` (receiver
    estimate offset in dB at ``channel.snr_db``) or ``cbr`` (kept token count K).
    ``monotone`` is 1 when a row's mean D1 is not below the previous row's.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    grid = list(grid)
    if not grid:
        raise ValueError("sweep grid is empty")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    cfg = model.cfg
    grouping = model.group(points)
    rows: list[SweepRow] = []
    for value in grid:
        ch, k = channel, cfg.keep_tokens if keep_tokens is None else keep_tokens
        if axis == "snr":
            ch = replace(channel, snr_db=float(value))
        elif axis == "offset":
            ch = replace(channel, offset_db=float(value))
        else:
            k = int(value)
        d1, d2 = [], []
        for t in range(trials):
            reps, _ = score(model, points, ch, trial_rng(seed, t), k, grouping)
            d1 += [r.d1_psnr for r in reps]
            d2 += [r.d2_psnr for r in reps]
        b = budget(k, cfg.dim, cfg.points, cfg.bits)
        mean_d1 = float(np.mean(d1))
        mono = 1 if not rows or mean_d1 >= rows[-1].d1_psnr else 0
        rows.append(SweepRow(axis, float(value), ch.snr_db, ch.offset_db, k, float(b.cbr), float(b.bpp),
                             trials, len(points), mean_d1, float(np.mean(d2)),
                             float(np.std(d1)) if all(map(math.isfinite, d1)) else math.nan, mono))
    return rows


def offset_spread(rows: list[SweepRow]) -> float:
    """|D1(largest offset) - D1(smallest offset)| of an offset sweep."""
    by = {r.value: r.d1_psnr for r in rows}
    return abs(by[max(by)] - by[min(by)])
