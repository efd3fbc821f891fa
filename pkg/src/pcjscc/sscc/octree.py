"""A simplified breadth-first octree geometry codec (no entropy coding, no contexts).

Bitstream layout (all little-endian)::

    offset  size  field
    0       4     magic b"OCT1"
    4       1     depth d (1..16)
    5       24    cube origin x, y, z (float64)
    29      8     cube edge length (float64, > 0)
    37      4     number of occupancy bytes M (uint32)
    41      M     occupancy bytes, breadth-first

Each occupied node at level l < d emits one byte whose bit i (LSB = bit 0)
marks child i as occupied, where child i = 4*x + 2*y + z for the child's
half-cell offsets (x, y, z) in {0, 1}. Nodes of one level are visited in
ascending Morton order, which is the order their parents emitted them.
The decoder returns the centres of the occupied leaf cells. Bytes after
the declared M occupancy bytes are ignored (channel-code padding).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"OCT1"
_HEADER = struct.Struct("<4sB3ddI")
HEADER_SIZE = _HEADER.size
MAX_DEPTH = 16


class OctreeDecodeError(ValueError):
    pass


@dataclass(frozen=True)
class OctreeCode:
    depth: int
    occupancy: bytes
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    size: float = 1.0

    def to_bytes(self) -> bytes:
        return _HEADER.pack(MAGIC, self.depth, *self.origin, self.size, len(self.occupancy)) + self.occupancy

    @classmethod
    def from_bytes(cls, data: bytes) -> "OctreeCode":
        if len(data) < HEADER_SIZE:
            raise OctreeDecodeError(f"stream of {len(data)} bytes is shorter than the {HEADER_SIZE}-byte header")
        magic, depth, ox, oy, oz, size, m = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise OctreeDecodeError(f"bad magic {magic!r}")
        if not 1 <= depth <= MAX_DEPTH:
            raise OctreeDecodeError(f"depth {depth} outside [1, {MAX_DEPTH}]")
        if not (np.isfinite([ox, oy, oz, size]).all() and size > 0):
            raise OctreeDecodeError("non-finite origin or non-positive cube size")
        if HEADER_SIZE + m > len(data):
            raise OctreeDecodeError(f"header declares {m} occupancy bytes, stream has {len(data) - HEADER_SIZE}")
        return cls(depth, bytes(data[HEADER_SIZE:HEADER_SIZE + m]), (ox, oy, oz), size)

    @property
    def leaf_size(self) -> float:
        return self.size / 2**self.depth


def _morton(cells: np.ndarray, depth: int) -> np.ndarray:
    code = np.zeros(len(cells), dtype=np.uint64)
    for bit in range(depth - 1, -1, -1):
        for axis in range(3):
            code = (code << np.uint64(1)) | ((cells[:, axis] >> bit) & 1).astype(np.uint64)
    return code


def octree_encode(points, depth: int, origin=(0.0, 0.0, 0.0), size: float = 1.0) -> OctreeCode:
    """Voxelise ``points`` (inside the cube ``origin + [0, size]^3``) at ``depth`` and serialise."""
    pts = np.asarray(getattr(points, "points", points), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
        raise ValueError(f"expected a nonempty (N, 3) cloud, got shape {pts.shape}")
    if not 1 <= depth <= MAX_DEPTH:
        raise ValueError(f"octree depth must lie in [1, {MAX_DEPTH}], got {depth}")
    if not size > 0:
        raise ValueError("cube size must be positive")
    side = 2**depth
    rel = (pts - np.asarray(origin, dtype=np.float64)) / size
    if rel.min() < 0 or rel.max() > 1:
        raise ValueError("points lie outside the coding cube")
    cells = np.minimum(np.floor(rel * side).astype(np.int64), side - 1)
    codes = np.unique(_morton(cells, depth))
    out = bytearray()
    for level in range(depth):
        shift = np.uint64(3 * (depth - level - 1))
        child = codes >> shift
        parent = child >> np.uint64(3)
        slot = (child & np.uint64(7)).astype(np.int64)
        uniq, start = np.unique(parent, return_index=True)
        occ = np.zeros(len(uniq), dtype=np.uint8)
        grp = np.searchsorted(uniq, parent)
        np.bitwise_or.at(occ, grp, (1 << slot).astype(np.uint8))
        out.extend(occ.tobytes())
    return OctreeCode(depth, bytes(out), tuple(float(v) for v in origin), float(size))


def octree_decode(code: OctreeCode | bytes) -> np.ndarray:
    """Leaf-cell centres, in Morton order. Raises :class:`OctreeDecodeError` on a malformed stream."""
    if isinstance(code, (bytes, bytearray)):
        code = OctreeCode.from_bytes(code)
    occ = np.frombuffer(code.occupancy, dtype=np.uint8)
    nodes = np.zeros(1, dtype=np.uint64)
    pos = 0
    for level in range(code.depth):
        if pos + len(nodes) > len(occ):
            raise OctreeDecodeError(f"stream ended at level {level}: need {len(nodes)} bytes, "
                                    f"{len(occ) - pos} left")
        b = occ[pos:pos + len(nodes)]
        pos += len(nodes)
        if np.any(b == 0):
            raise OctreeDecodeError(f"empty occupancy byte at level {level}")
        bits = (b[:, None] >> np.arange(8)) & 1
        parent, slot = np.nonzero(bits)
        nodes = (nodes[parent] << np.uint64(3)) | slot.astype(np.uint64)
    if pos != len(occ):
        raise OctreeDecodeError(f"{len(occ) - pos} occupancy bytes left over after the last level")
    cells = np.zeros((len(nodes), 3), dtype=np.int64)
    for bit in range(code.depth):
        for axis in range(3):
            shift = np.uint64(3 * bit + (2 - axis))
            cells[:, axis] |= ((nodes >> shift) & np.uint64(1)).astype(np.int64) << bit
    return np.asarray(code.origin) + (cells + 0.5) * code.leaf_size
