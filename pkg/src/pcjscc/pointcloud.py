"""Point clouds: PLY I/O, unit-cube normalisation, FPS and kNN patch grouping."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class PlyError(ValueError):
    """Malformed or unsupported PLY input; ``offset`` is the byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class DegenerateExtentError(ValueError):
    pass


@dataclass
class PointCloud:
    points: np.ndarray
    bbox_min: np.ndarray | None = None
    bbox_max: np.ndarray | None = None
    # normalized = (original - offset) / scale
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if len(pts) < 1:
            raise ValueError("point cloud must hold at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        self.points = pts
        if self.bbox_min is None:
            self.bbox_min = pts.min(axis=0)
            self.bbox_max = pts.max(axis=0)

    def __len__(self) -> int:
        return len(self.points)

    def denormalized(self) -> np.ndarray:
        return self.points * self.scale + self.offset


@dataclass
class PatchGrouping:
    center_indices: np.ndarray  # (T,)
    centers: np.ndarray  # (T, 3)
    member_indices: np.ndarray  # (T, k)
    relative_coords: np.ndarray  # (T, k, 3)


# PLY ------------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_header(raw: bytes):
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply"):
        raise PlyError("missing 'ply' magic", 0)
    if end < 0:
        raise PlyError("missing end_header", len(raw))
    nl = raw.find(b"\n", end)
    body_start = len(raw) if nl < 0 else nl + 1
    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    offset = 0
    for line in raw[:end].split(b"\n"):
        words = line.decode("ascii", errors="replace").split()
        if not words or words[0] in ("ply", "comment", "obj_info"):
            pass
        elif words[0] == "format":
            if len(words) < 2 or words[1] not in ("ascii", "binary_little_endian"):
                raise PlyError(f"unsupported format line {line!r}", offset)
            fmt = words[1]
        elif words[0] == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise PlyError(f"bad element line {line!r}", offset)
            elements.append((words[1], int(words[2]), []))
        elif words[0] == "property":
            if not elements:
                raise PlyError("property before any element", offset)
            if words[1] == "list":
                elements[-1][2].append((words[-1], "list"))
            else:
                if len(words) != 3 or words[1] not in _PLY_TYPES:
                    raise PlyError(f"bad property line {line!r}", offset)
                elements[-1][2].append((words[2], _PLY_TYPES[words[1]]))
        else:
            raise PlyError(f"unexpected header keyword {words[0]!r}", offset)
        offset += len(line) + 1
    if fmt is None:
        raise PlyError("missing format line", 0)
    return fmt, elements, body_start


def load_ply(path: str | Path) -> PointCloud:
    """Read the x/y/z vertex coordinates of an ASCII or binary-LE PLY file."""
    raw = Path(path).read_bytes()
    fmt, elements, pos = _parse_header(raw)
    if not elements or elements[0][0] != "vertex":
        raise PlyError("first element must be 'vertex'", pos)
    _, count, props = elements[0]
    names = [p[0] for p in props]
    for axis in "xyz":
        if axis not in names:
            raise PlyError(f"vertex element lacks property {axis!r}", pos)
    if any(t == "list" for _, t in props):
        raise PlyError("list properties on vertex are not supported", pos)
    if fmt == "binary_little_endian":
        dtype = np.dtype([(n, "<" + t) for n, t in props])
        need = dtype.itemsize * count
        if len(raw) - pos < need:
            raise PlyError(f"truncated payload: need {need} bytes, have {len(raw) - pos}", len(raw))
        rec = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
        pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    else:
        cols = [names.index(a) for a in "xyz"]
        lines = raw[pos:].split(b"\n")
        pts = np.empty((count, 3))
        cursor = pos
        filled = len(lines)
        while filled and not lines[filled - 1].strip():
            filled -= 1
        for i in range(count):
            if i >= filled:
                raise PlyError(f"truncated payload: expected {count} vertices, got {i}", len(raw))
            words = lines[i].split()
            if len(words) < len(props):
                raise PlyError(f"vertex {i} has {len(words)} values, expected {len(props)}", cursor)
            try:
                pts[i] = [float(words[c]) for c in cols]
            except ValueError:
                raise PlyError(f"vertex {i} is not numeric", cursor) from None
            cursor += len(lines[i]) + 1
    return PointCloud(pts)


def save_ply(pc: PointCloud | np.ndarray, path: str | Path, binary: bool = True) -> None:
    """Write x/y/z as 32-bit floats."""
    pts = pc.points if isinstance(pc, PointCloud) else np.asarray(pc)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {len(pts)}\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
    ).encode("ascii")
    pts32 = np.asarray(pts, dtype="<f4")
    if binary:
        body = pts32.tobytes()
    else:
        body = "".join(f"{x:.6f} {y:.6f} {z:.6f}\n" for x, y, z in pts32.astype(np.float64)).encode()
    Path(path).write_bytes(header + body)


# normalisation ----------------------------------------------------------------

def normalize_bbox(pc: PointCloud) -> PointCloud:
    """Map into the unit cube: translate the min corner to 0, scale the longest axis to 1."""
    pts = pc.points
    lo = pts.min(axis=0)
    extent = float((pts.max(axis=0) - lo).max())
    if extent == 0.0:
        raise DegenerateExtentError("all points coincide; bounding box has zero extent")
    out = (pts - lo) / extent
    return PointCloud(
        out,
        bbox_min=pc.bbox_min,
        bbox_max=pc.bbox_max,
        offset=pc.offset + pc.scale * lo,
        scale=pc.scale * extent,
    )


# sampling / grouping ----------------------------------------------------------

def _as_points(pc) -> np.ndarray:
    return pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64)


def fps(pc, m: int, seed: int | None = None, start: int | None = None) -> np.ndarray:
    """Greedy farthest-point sampling of ``m`` indices.

    The first index is ``start`` if given, else a seeded random index when
    ``seed`` is given, else the point nearest the centroid. Distance ties go
    to the lower index.
    """
    pts = _as_points(pc)
    n = len(pts)
    if not 1 <= m <= n:
        raise ValueError(f"fps needs 1 <= M <= N, got M={m}, N={n}")
    if start is None:
        if seed is not None:
            start = int(np.random.default_rng(seed).integers(n))
        else:
            start = int(np.argmin(((pts - pts.mean(axis=0)) ** 2).sum(axis=1)))
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = start
    dist = ((pts - pts[start]) ** 2).sum(axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        dist = np.minimum(dist, ((pts - pts[nxt]) ** 2).sum(axis=1))
    return chosen


def knn_indices(pts: np.ndarray, queries: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest ``pts`` to each query; ties to the lower index."""
    d = ((queries[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def knn_group(pc, t: int, k: int | None = None, seed: int | None = None) -> PatchGrouping:
    """FPS ``t`` patch centers and gather each center's ``k`` nearest points."""
    pts = _as_points(pc)
    n = len(pts)
    if k is None:
        k = max(1, n // t)
    if k > n:
        raise ValueError(f"patch size k={k} exceeds point count {n}")
    if t > n:
        raise ValueError(f"token count T={t} exceeds point count {n}")
    centers_idx = fps(pts, t, seed=seed)
    centers = pts[centers_idx]
    members = knn_indices(pts, centers, k)
    rel = pts[members] - centers[:, None, :]
    return PatchGrouping(centers_idx, centers, members, rel)


def group_batch(points: np.ndarray, t: int, k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Group a (B, N, 3) batch; returns centers (B, T, 3) and relative coords (B, T, k, 3)."""
    groups = [knn_group(p, t, k) for p in points]
    return (np.stack([g.centers for g in groups]), np.stack([g.relative_coords for g in groups]))
