"""Non-learned point-cloud geometry: sampling, neighbourhoods, distances and cropping.

Point clouds are plain ``(n, 3)`` numpy arrays. ``chamfer`` additionally accepts
graph tensors so it can sit inside the training loss.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from . import numerics as nx


class SizeError(ValueError):
    pass


class ScaleError(ValueError):
    pass


# fixed evaluation viewpoints: the 8 cube-corner directions
EVAL_VIEWPOINTS = np.array(
    [[sx, sy, sz] for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)], dtype=np.float64
) / np.sqrt(3.0)

VIEWPOINT_RADIUS = 1.0
NORMS = ("L1", "L2", "L2SQ")


def as_cloud(points, name: str = "cloud") -> np.ndarray:
    arr = np.asarray(points)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise SizeError(f"{name} must have shape (n, 3), got {arr.shape}")
    if arr.shape[0] < 1:
        raise SizeError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite coordinates")
    return arr


def unit_viewpoint(direction) -> np.ndarray:
    v = np.asarray(direction, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("viewpoint direction must be nonzero")
    return v / norm


def sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact pairwise squared distances in f64 (difference form, no expansion)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = a[:, None, :] - b[None, :, :]
    return diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]


def fps(cloud, k: int, start_index: int = 0) -> np.ndarray:
    pts = as_cloud(cloud).astype(np.float64)
    n = len(pts)
    if not 1 <= k <= n:
        raise SizeError(f"cannot pick {k} of {n} points")
    if not 0 <= start_index < n:
        raise IndexError(f"start index {start_index} out of range")
    picked = np.empty(k, dtype=np.int64)
    picked[0] = start_index
    d = ((pts - pts[start_index]) ** 2).sum(axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(d))  # lowest index on ties
        picked[i] = nxt
        d = np.minimum(d, ((pts - pts[nxt]) ** 2).sum(axis=1))
    return picked


def fps_start(cloud) -> int:
    """Order-independent FPS seed: the point furthest from the centroid."""
    pts = np.asarray(cloud, dtype=np.float64)
    return int(np.argmax(((pts - pts.mean(axis=0)) ** 2).sum(axis=1)))


def knn(queries, keys, k: int) -> np.ndarray:
    """Indices of the k nearest keys per query, sorted by (distance, index)."""
    q = as_cloud(queries, "queries")
    kk = as_cloud(keys, "keys")
    n = len(kk)
    if not 1 <= k <= n:
        raise SizeError(f"k={k} but only {n} keys")
    if k < n and len(q) * n > _BRUTE_FORCE_LIMIT:
        return _knn_tree(q, kk, k)
    d = sq_dists(q, kk)
    if k == n:
        return np.argsort(d, axis=1, kind="stable")
    part = np.argpartition(d, k - 1, axis=1)[:, :k]
    rows = np.arange(len(q))[:, None]
    chosen = d[rows, part]
    kth = chosen.max(axis=1)
    # ties straddling the k-th slot need the full ordering
    tied = (d <= kth[:, None]).sum(axis=1) > k
    order = np.lexsort((part, chosen), axis=1)
    out = np.take_along_axis(part, order, axis=1)
    if np.any(tied):
        out[tied] = np.argsort(d[tied], axis=1, kind="stable")[:, :k]
    return out


_BRUTE_FORCE_LIMIT = 20_000


def _knn_tree(q: np.ndarray, keys: np.ndarray, k: int) -> np.ndarray:
    """KD-tree candidates re-ranked with the exact difference-form distances.

    Rows whose k-th and (k+1)-th candidates tie fall back to a full scan so the
    lowest-index rule still holds.
    """
    q64 = np.asarray(q, dtype=np.float64)
    k64 = np.asarray(keys, dtype=np.float64)
    _, cand = cKDTree(k64).query(q64, k=k + 1)
    diff = q64[:, None, :] - k64[cand]
    d = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
    order = np.lexsort((cand, d), axis=1)
    cand = np.take_along_axis(cand, order, axis=1)
    d = np.take_along_axis(d, order, axis=1)
    out = cand[:, :k].copy()
    tied = np.flatnonzero(d[:, k - 1] == d[:, k])
    for row in tied:
        full = sq_dists(q64[row : row + 1], k64)[0]
        out[row] = np.argsort(full, kind="stable")[:k]
    return out


def _nearest(src: np.ndarray, dst: np.ndarray, norm: str) -> np.ndarray:
    tree = cKDTree(np.asarray(dst, dtype=np.float64))
    _, idx = tree.query(np.asarray(src, dtype=np.float64), k=1, p=1 if norm == "L1" else 2)
    return idx


def nearest_distances(src, dst, norm: str = "L2") -> np.ndarray:
    """For each src point, distance (per ``norm``) to its nearest dst point, in f64."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    diff = src - dst[_nearest(src, dst, norm)]
    if norm == "L1":
        return np.abs(diff).sum(axis=1)
    sq = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
    return sq if norm == "L2SQ" else np.sqrt(sq)


def chamfer(p, g, norm: str = "L2"):
    """Symmetric mean nearest-neighbour distance.

    Returns a float for arrays, or a differentiable scalar ``Tensor`` when either
    side is a ``Tensor``.
    """
    if norm not in NORMS:
        raise ValueError(f"unknown norm {norm!r}; expected one of {NORMS}")
    if isinstance(p, nx.Tensor) or isinstance(g, nx.Tensor):
        pt, gt = nx.as_tensor(p), nx.as_tensor(g)
        as_cloud(pt.data, "p")
        as_cloud(gt.data, "g")
        pg = _nearest(pt.data, gt.data, norm)
        gp = _nearest(gt.data, pt.data, norm)
        d_pg = nx.row_norm(nx.sub(pt, nx.gather_rows(gt, pg)), norm)
        d_gp = nx.row_norm(nx.sub(gt, nx.gather_rows(pt, gp)), norm)
        return nx.add(nx.mean(d_pg), nx.mean(d_gp))
    p = as_cloud(p, "p")
    g = as_cloud(g, "g")
    return float(nearest_distances(p, g, norm).mean() + nearest_distances(g, p, norm).mean())


def fscore_threshold(gt, fraction: float = 0.01) -> float:
    """``fraction`` of the largest bounding-box side of ``gt``."""
    gt = as_cloud(gt)
    return float(fraction * np.max(gt.max(axis=0) - gt.min(axis=0)))


def fscore(p, g, tau: float) -> float:
    if tau <= 0:
        raise ValueError("tau must be positive")
    p = as_cloud(p, "p")
    g = as_cloud(g, "g")
    precision = float(np.mean(nearest_distances(p, g) <= tau))
    recall = float(np.mean(nearest_distances(g, p) <= tau))
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def fidelity(inp, out) -> float:
    """Mean squared distance from each input point to the nearest output point."""
    inp = as_cloud(inp, "input")
    out = as_cloud(out, "output")
    return float(nearest_distances(inp, out, "L2SQ").mean())


def crop_by_viewpoint(cloud, viewpoint, n: int):
    """Drop the ``n`` points furthest from the viewpoint; returns (partial, removed)."""
    pts = as_cloud(cloud)
    if not 0 < n < len(pts):
        raise SizeError(f"cannot remove {n} of {len(pts)} points")
    eye = unit_viewpoint(viewpoint) * VIEWPOINT_RADIUS
    diff = pts.astype(np.float64) - eye
    dist = np.sqrt((diff * diff).sum(axis=1))
    order = np.lexsort((np.arange(len(pts)), -dist))
    drop = np.zeros(len(pts), dtype=bool)
    drop[order[:n]] = True
    return pts[~drop], pts[drop]


def downsample_random(cloud, m: int, seed) -> np.ndarray:
    pts = as_cloud(cloud)
    if m < 1:
        raise SizeError("m must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = len(pts)
    if m <= n:
        idx = rng.choice(n, size=m, replace=False)
    else:
        idx = np.concatenate([rng.permutation(n), rng.integers(0, n, size=m - n)])
    return pts[idx]


def normalize_unit(cloud):
    """Centre on the centroid and scale so the furthest point has norm 1.

    Returns ``(normalized, centroid, scale)`` with ``cloud = normalized * scale + centroid``.
    """
    pts = as_cloud(cloud)
    p64 = pts.astype(np.float64)
    centroid = p64.mean(axis=0)
    centered = p64 - centroid
    scale = float(np.sqrt((centered * centered).sum(axis=1)).max())
    if scale <= 1e-12:
        raise ScaleError("degenerate cloud: all points coincide")
    return (centered / scale).astype(pts.dtype), centroid, scale


def denormalize(cloud, centroid, scale: float) -> np.ndarray:
    pts = np.asarray(cloud)
    return (pts.astype(np.float64) * scale + np.asarray(centroid)).astype(pts.dtype)
