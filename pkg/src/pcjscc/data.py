"""Synthetic toy shapes (spheres, cubes, tori) for desk-scale training."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pointcloud import PointCloud, fps, group_batch, load_ply, normalize_bbox

SHAPES = ("sphere", "cube", "torus")


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def sample_surface(kind: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "sphere":
        v = rng.normal(size=(n, 3))
        pts = v / np.linalg.norm(v, axis=1, keepdims=True)
        pts = pts * rng.uniform(0.6, 1.0, size=3)  # ellipsoid
    elif kind == "cube":
        pts = rng.uniform(-1.0, 1.0, size=(n, 3))
        face = rng.integers(0, 3, size=n)
        pts[np.arange(n), face] = rng.choice([-1.0, 1.0], size=n)
        pts = pts * rng.uniform(0.5, 1.0, size=3)  # box
    elif kind == "torus":
        big = 1.0
        small = rng.uniform(0.2, 0.45)
        u, v = rng.uniform(0, 2 * np.pi, size=(2, n))
        pts = np.stack([(big + small * np.cos(v)) * np.cos(u),
                        (big + small * np.cos(v)) * np.sin(u),
                        small * np.sin(v)], axis=1)
    else:
        raise ValueError(f"unknown shape {kind!r}")
    return pts @ _random_rotation(rng).T


def make_shape(kind: str, n: int, rng: np.random.Generator, oversample: int = 4) -> np.ndarray:
    """Dense surface sample, FPS-downsampled to ``n`` points, normalised to the unit cube."""
    return prepare(PointCloud(sample_surface(kind, n * oversample, rng)), n).points


def prepare(pc: PointCloud, n: int) -> PointCloud:
    """FPS to ``n`` points, then normalise to the unit cube (offset/scale kept for undoing it)."""
    if len(pc) < n:
        raise ValueError(f"cloud has {len(pc)} points, fewer than the N={n} the model expects")
    return normalize_bbox(PointCloud(pc.points[fps(pc, n)], offset=pc.offset, scale=pc.scale))


@dataclass
class ShapeDataset:
    points: np.ndarray  # (S, N, 3)
    labels: list[str]
    centers: np.ndarray | None = None
    rel: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.points)

    def group(self, tokens: int, patch: int) -> "ShapeDataset":
        self.centers, self.rel = group_batch(self.points, tokens, patch)
        return self

    def subset(self, idx) -> "ShapeDataset":
        idx = np.asarray(idx)
        return ShapeDataset(
            self.points[idx],
            [self.labels[i] for i in idx],
            None if self.centers is None else self.centers[idx],
            None if self.rel is None else self.rel[idx],
        )


def toy_dataset(count: int = 200, n: int = 256, seed: int = 0) -> ShapeDataset:
    """``count`` shapes cycling sphere/cube/torus, each with its own random parameters."""
    rng = np.random.default_rng(seed)
    labels = [SHAPES[i % len(SHAPES)] for i in range(count)]
    pts = np.stack([make_shape(k, n, rng) for k in labels])
    return ShapeDataset(pts, labels)


def split(ds: ShapeDataset, val_fraction: float = 0.1, seed: int = 0) -> tuple[ShapeDataset, ShapeDataset]:
    """Random train/validation split (90/10 by default)."""
    perm = np.random.default_rng(seed).permutation(len(ds))
    n_val = max(1, int(round(len(ds) * val_fraction)))
    return ds.subset(np.sort(perm[n_val:])), ds.subset(np.sort(perm[:n_val]))


def ply_dataset(directory: str | Path, n: int) -> ShapeDataset:
    """Every ``*.ply`` in ``directory`` (sorted by name), FPS-sampled to ``n`` and normalised."""
    paths = sorted(Path(directory).glob("*.ply"))
    if not paths:
        raise FileNotFoundError(f"no .ply files in {directory}")
    pts = np.stack([prepare(load_ply(p), n).points for p in paths])
    return ShapeDataset(pts, [p.stem for p in paths])
