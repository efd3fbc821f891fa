"""Point-to-point (D1) and point-to-plane (D2) geometric PSNR.

Symmetric errors take the max of the two directional MSEs; the default peak
is sqrt(3), the diagonal of the unit normalisation cube. Identical clouds
report ``math.inf``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_PEAK = math.sqrt(3.0)
NORMAL_K = 12


def _as_points(pc) -> np.ndarray:
    pts = getattr(pc, "points", pc)
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) cloud, got shape {pts.shape}")
    if len(pts) == 0:
        raise ValueError("point cloud is empty")
    return pts


def estimate_normals(pc, k: int = NORMAL_K, rank_tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals from the k-nearest-neighbour covariance (smallest-eigenvalue eigenvector).

    Returns ``(normals, valid)``. Neighbourhoods of rank < 2 (all points
    coincident or collinear) get a zero normal and ``valid=False``.
    """
    pts = _as_points(pc)
    if k < 3:
        raise ValueError(f"normal estimation needs k >= 3, got {k}")
    if len(pts) < k:
        raise ValueError(f"normal estimation needs at least k={k} points, got {len(pts)}")
    _, nbr = cKDTree(pts).query(pts, k=k)
    nb = pts[nbr]
    d = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", d, d) / k
    w, v = np.linalg.eigh(cov)
    normals = v[:, :, 0]
    scale = np.maximum(w[:, -1], 1e-300)
    valid = w[:, 1] > rank_tol * scale
    valid &= w[:, -1] > 0
    normals = np.where(valid[:, None], normals, 0.0)
    return normals, valid


def _nn(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Index into ``dst`` of the nearest neighbour of each ``src`` point."""
    return cKDTree(dst).query(src, k=1)[1]


def _psnr(mse: float, peak: float) -> float:
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def d1_mse(a: np.ndarray, b: np.ndarray) -> float:
    """Directional point-to-point MSE from every point of ``a`` to its nearest in ``b``."""
    a, b = _as_points(a), _as_points(b)
    e = a - b[_nn(a, b)]
    return float(np.mean(np.sum(e * e, axis=1)))


def d2_mse_ref_to_rec(ref: np.ndarray, rec: np.ndarray, ref_normals: np.ndarray,
                     ref_valid: np.ndarray | None = None) -> float:
    """Point-to-plane MSE of each reference point against its nearest reconstructed point."""
    ref, rec = _as_points(ref), _as_points(rec)
    proj = np.sum((ref - rec[_nn(ref, rec)]) * ref_normals, axis=1)
    return _mean_valid(proj, ref_valid)


def d2_mse_rec_to_ref(ref: np.ndarray, rec: np.ndarray, ref_normals: np.ndarray,
                     ref_valid: np.ndarray | None = None) -> float:
    """Point-to-plane MSE of each reconstructed point against the plane of its nearest reference point."""
    ref, rec = _as_points(ref), _as_points(rec)
    j = _nn(rec, ref)
    proj = np.sum((rec - ref[j]) * ref_normals[j], axis=1)
    return _mean_valid(proj, None if ref_valid is None else ref_valid[j])


def _mean_valid(proj: np.ndarray, valid: np.ndarray | None) -> float:
    # pairs whose reference normal is degenerate are excluded; none left -> 0
    if valid is not None:
        proj = proj[valid]
    return float(np.mean(proj * proj)) if len(proj) else 0.0


def d1_psnr(ref, rec, peak: float = DEFAULT_PEAK) -> float:
    ref, rec = _as_points(ref), _as_points(rec)
    return _psnr(max(d1_mse(ref, rec), d1_mse(rec, ref)), peak)


def d2_psnr(ref, rec, ref_normals: np.ndarray | None = None, peak: float = DEFAULT_PEAK,
            k: int = NORMAL_K) -> float:
    return distortion(ref, rec, peak, ref_normals, k).d2_psnr


@dataclass
class DistortionReport:
    d1_psnr: float
    d2_psnr: float
    mse_d1_ab: float
    mse_d1_ba: float
    mse_d2_ab: float
    mse_d2_ba: float
    peak: float

    def as_row(self) -> dict:
        return asdict(self)


CSV_FIELDS = ["d1_psnr", "d2_psnr", "mse_d1_ab", "mse_d1_ba", "mse_d2_ab", "mse_d2_ba", "peak"]


def distortion(ref, rec, peak: float = DEFAULT_PEAK, ref_normals: np.ndarray | None = None,
               k: int = NORMAL_K) -> DistortionReport:
    """Symmetric D1/D2 report; ``_ab`` is reference -> reconstruction, ``_ba`` the reverse.

    D2 projects every error vector onto the normal of the reference point in
    the pair, so only reference normals are needed; they are estimated with
    :func:`estimate_normals` when not given (a reference smaller than ``k``
    points has no usable normals and D2 MSE is then 0).
    """
    ref, rec = _as_points(ref), _as_points(rec)
    if not peak > 0:
        raise ValueError(f"peak must be positive, got {peak}")
    if ref_normals is not None:
        normals = np.asarray(ref_normals, dtype=np.float64)
        if normals.shape != ref.shape:
            raise ValueError(f"normals shape {normals.shape} does not match cloud {ref.shape}")
        valid = np.linalg.norm(normals, axis=1) > 0
    elif len(ref) >= k:
        normals, valid = estimate_normals(ref, k)
    else:
        normals, valid = np.zeros_like(ref), np.zeros(len(ref), dtype=bool)
    m1ab, m1ba = d1_mse(ref, rec), d1_mse(rec, ref)
    m2ab = d2_mse_ref_to_rec(ref, rec, normals, valid)
    m2ba = d2_mse_rec_to_ref(ref, rec, normals, valid)
    return DistortionReport(
        d1_psnr=_psnr(max(m1ab, m1ba), peak),
        d2_psnr=_psnr(max(m2ab, m2ba), peak),
        mse_d1_ab=m1ab, mse_d1_ba=m1ba, mse_d2_ab=m2ab, mse_d2_ba=m2ba, peak=peak,
    )


def auto_peak(ref) -> float:
    """Bounding-box diagonal of ``ref`` (equals sqrt(3) for a cloud spanning the unit cube)."""
    pts = _as_points(ref)
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
