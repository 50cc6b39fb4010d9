"""Sampling, neighbour search, density estimation, grouping, interpolation.

Every ordering decision is canonical: ties between equidistant points are
broken by lexicographic (x, y, z) and then by index, and squared distances
are always evaluated by :func:`sqdist` in the same arithmetic order.  This
makes the whole pipeline invariant to the order in which points arrive.

Batched helpers take positions of shape (B, N, 3); the single-cloud
functions named in the public API wrap them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.spatial import cKDTree

from danet import ops
from danet.tensor import Tensor

GAUSS_NORM = (2.0 * np.pi) ** -1.5
INTERP_EPS = 1e-8
_CHUNK = 1 << 22  # max pairwise-distance entries materialised at once


@dataclass
class PointCloud:
    positions: np.ndarray
    attributes: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError(f"positions must be N x 3, got {self.positions.shape}")
        n = self.positions.shape[0]
        if n < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.isfinite(self.positions).all():
            raise ValueError("positions must be finite")
        if self.attributes is not None:
            self.attributes = np.asarray(self.attributes, dtype=np.float64)
            if self.attributes.ndim != 2 or self.attributes.shape[0] != n:
                raise ValueError(f"attributes must be {n} x A, got {self.attributes.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ValueError(f"labels must have length {n}, got {self.labels.shape}")

    def __len__(self) -> int:
        return self.positions.shape[0]

    def subset(self, index: np.ndarray) -> "PointCloud":
        index = np.asarray(index)
        return PointCloud(
            self.positions[index],
            None if self.attributes is None else self.attributes[index],
            None if self.labels is None else self.labels[index],
        )


@dataclass
class NeighborhoodIndex:
    centers: np.ndarray    # (N_s,)
    neighbors: np.ndarray  # (N_s, K)
    distances: np.ndarray  # (N_s, K), nondecreasing per row

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]


@dataclass
class DensityField:
    values: np.ndarray
    bandwidth: float


CloudLike = Union[PointCloud, np.ndarray]


def _positions(cloud: CloudLike) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.positions
    pos = np.asarray(cloud, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ValueError(f"expected N x 3 positions, got {pos.shape}")
    if pos.shape[0] == 0:
        raise ValueError("empty point cloud")
    return pos


def sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance with a fixed summation order (broadcasting)."""
    dx = a[..., 0] - b[..., 0]
    dy = a[..., 1] - b[..., 1]
    dz = a[..., 2] - b[..., 2]
    return dx * dx + dy * dy + dz * dz


def lex_rank(pos: np.ndarray) -> np.ndarray:
    """Rank of each point under (x, y, z, index) ordering; works on (..., N, 3)."""
    if pos.ndim == 2:
        order = np.lexsort((pos[:, 2], pos[:, 1], pos[:, 0]))
        rank = np.empty(pos.shape[0], dtype=np.int64)
        rank[order] = np.arange(pos.shape[0])
        return rank
    return np.stack([lex_rank(p) for p in pos])


# -- farthest point sampling ---------------------------------------------------

def batch_fps(pos: np.ndarray, n_samples: int) -> np.ndarray:
    """FPS for each cloud in a (B, N, 3) batch -> (B, n_samples) indices."""
    b, n, _ = pos.shape
    if not 1 <= n_samples <= n:
        raise ValueError(f"farthest_point_sample: need 1 <= n_samples <= {n}, got {n_samples}")
    rank = lex_rank(pos)
    rows = np.arange(b)
    out = np.empty((b, n_samples), dtype=np.int64)
    cur = rank.argmin(axis=1)
    mind = np.full((b, n), np.inf)
    for t in range(n_samples):
        out[:, t] = cur
        d = sqdist(pos, pos[rows, cur][:, None, :])
        np.minimum(mind, d, out=mind)
        mind[rows, cur] = -1.0  # never pick a selected index again
        if t + 1 < n_samples:
            best = mind.max(axis=1, keepdims=True)
            cur = np.where(mind == best, rank, n).argmin(axis=1)
    return out


def farthest_point_sample(cloud: CloudLike, n_samples: int) -> np.ndarray:
    """Greedy farthest point sampling from the lexicographically smallest point."""
    pos = _positions(cloud)
    return batch_fps(pos[None], n_samples)[0]


# -- k nearest neighbours --------------------------------------------------------

def _knn_brute(pos: np.ndarray, queries: np.ndarray, k: int, rank: np.ndarray):
    """One cloud: exact k-NN under (distance, rank) ordering, k <= N."""
    n = pos.shape[0]
    order = np.argsort(rank)  # columns in canonical order
    canon = pos[order]
    m = queries.shape[0]
    idx = np.empty((m, k), dtype=np.int64)
    d2 = np.empty((m, k))
    step = max(1, _CHUNK // n)
    for s in range(0, m, step):
        q = queries[s:s + step]
        full = sqdist(canon[None, :, :], q[:, None, :])
        # stable sort over canonically ordered columns breaks ties by rank
        sel = np.argsort(full, axis=1, kind="stable")[:, :k]
        idx[s:s + step] = order[sel]
        d2[s:s + step] = np.take_along_axis(full, sel, axis=1)
    return idx, d2


def _knn_kdtree(pos: np.ndarray, queries: np.ndarray, k: int, rank: np.ndarray):
    n = pos.shape[0]
    extra = min(n, k + 8)
    tree = cKDTree(pos)
    kd_dist, cand = tree.query(queries, k=extra)
    cand = cand.reshape(queries.shape[0], extra)
    kd_dist = kd_dist.reshape(queries.shape[0], extra)
    d2 = sqdist(pos[cand], queries[:, None, :])
    # lexsort keys: last is primary
    perm = np.lexsort((rank[cand], d2), axis=1)
    cand = np.take_along_axis(cand, perm, axis=1)
    d2 = np.take_along_axis(d2, perm, axis=1)
    idx, out_d2 = cand[:, :k].copy(), d2[:, :k].copy()
    if extra < n:
        bound = kd_dist[:, -1] ** 2 * (1.0 - 1e-9)
        unsafe = np.nonzero(~(out_d2[:, -1] < bound))[0]
        if unsafe.size:
            bi, bd = _knn_brute(pos, queries[unsafe], k, rank)
            idx[unsafe], out_d2[unsafe] = bi, bd
    return idx, out_d2


def knn_query(pos: np.ndarray, queries: np.ndarray, k: int,
              method: str = "auto", rank: Optional[np.ndarray] = None):
    """k nearest cloud points to arbitrary query positions.

    Returns (indices, distances), both (M, k).  With fewer than k points the
    rows are padded by repeating the nearest point.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n = pos.shape[0]
    if n == 0:
        raise ValueError("knn on an empty cloud")
    if rank is None:
        rank = lex_rank(pos)
    kk = min(k, n)
    if method == "auto":
        method = "kdtree" if n > 2048 else "brute"
    if method == "brute":
        idx, d2 = _knn_brute(pos, queries, kk, rank)
    elif method == "kdtree":
        idx, d2 = _knn_kdtree(pos, queries, kk, rank)
    else:
        raise ValueError(f"unknown knn method '{method}'")
    if kk < k:
        pad = k - kk
        idx = np.concatenate([idx, np.repeat(idx[:, :1], pad, axis=1)], axis=1)
        d2 = np.concatenate([d2, np.repeat(d2[:, :1], pad, axis=1)], axis=1)
    return idx, np.sqrt(d2)


def knn_search(cloud: CloudLike, query_indices, k: int, method: str = "auto") -> NeighborhoodIndex:
    """k-NN of selected cloud points (a query point is its own candidate)."""
    pos = _positions(cloud)
    centers = np.asarray(query_indices, dtype=np.int64).reshape(-1)
    if centers.size and (centers.min() < 0 or centers.max() >= pos.shape[0]):
        raise IndexError("query index out of range")
    idx, dist = knn_query(pos, pos[centers], k, method)
    return NeighborhoodIndex(centers, idx, dist)


def batch_knn(pos: np.ndarray, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """k-NN for each cloud of a batch: pos (B, N, 3), queries (B, M, 3)."""
    idx = np.empty(queries.shape[:2] + (k,), dtype=np.int64)
    dist = np.empty(queries.shape[:2] + (k,))
    for b in range(pos.shape[0]):
        idx[b], dist[b] = knn_query(pos[b], queries[b], k)
    return idx, dist


# -- density ---------------------------------------------------------------------

def _check_sigma(sigma: float) -> None:
    if not sigma > 0:
        raise ValueError(f"KDE bandwidth must be > 0, got {sigma}")


def batch_kde(pos: np.ndarray, neighbors: np.ndarray, centers: np.ndarray,
              sigma) -> np.ndarray:
    """Gaussian KDE over given neighbourhoods.

    ``pos`` (..., N, 3); ``centers`` (..., M) and ``neighbors`` (..., M, K)
    index into it.  ``sigma`` is a scalar or one value per cloud.
    d_i = 1/(K sigma) * sum_j (2 pi)^(-3/2) exp(-|p_j - p_i|^2 / (2 sigma^2)).
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if not np.all(sigma > 0):
        raise ValueError(f"KDE bandwidth must be > 0, got {sigma}")
    k = neighbors.shape[-1]
    pc = np.take_along_axis(pos, centers[..., None], axis=-2)
    flat = neighbors.reshape(neighbors.shape[:-2] + (-1,))
    pn = np.take_along_axis(pos, flat[..., None], axis=-2).reshape(neighbors.shape + (3,))
    s = sigma.reshape(sigma.shape + (1,) * (neighbors.ndim - sigma.ndim))
    u2 = sqdist(pn, pc[..., None, :]) / (s * s)
    total = np.exp(-0.5 * u2).sum(axis=-1)
    return GAUSS_NORM * total / (k * s[..., 0])


def kde_density(cloud: CloudLike, nbr: NeighborhoodIndex, sigma: float) -> DensityField:
    """Per-center density over the center's K-neighbourhood."""
    _check_sigma(sigma)
    pos = _positions(cloud)
    vals = batch_kde(pos, nbr.neighbors, nbr.centers, sigma)
    return DensityField(vals, float(sigma))


def mean_nn_distance(pos: np.ndarray) -> float:
    """Mean distance from each point to its nearest other point (1.0 if degenerate)."""
    if pos.shape[0] < 2:
        return 1.0
    _, dist = knn_query(pos, pos, 2)
    val = float(dist[:, 1].mean())
    return val if val > 0 else 1.0


# -- grouping / interpolation -------------------------------------------------------

def group_features(features: Tensor, nbr: Union[NeighborhoodIndex, np.ndarray]) -> Tensor:
    """Gather neighbour rows: (N, C) -> (N_s, K, C); batched (B, N, C) also works."""
    idx = nbr.neighbors if isinstance(nbr, NeighborhoodIndex) else np.asarray(nbr)
    return ops.gather_rows(features, idx)


def interpolation_weights(coarse: np.ndarray, fine: np.ndarray):
    """3-NN inverse-distance weights of fine points w.r.t. coarse points (one cloud)."""
    idx, dist = knn_query(coarse, fine, 3)
    inv = 1.0 / (dist + INTERP_EPS)
    return idx, inv / inv.sum(axis=1, keepdims=True)


def batch_interpolate(coarse_pos: np.ndarray, coarse_features: Tensor,
                      fine_pos: np.ndarray) -> Tensor:
    """(B, Nc, 3), (B, Nc, C), (B, Nf, 3) -> (B, Nf, C)."""
    b, nf, _ = fine_pos.shape
    idx = np.empty((b, nf, 3), dtype=np.int64)
    w = np.empty((b, nf, 3))
    for i in range(b):
        idx[i], w[i] = interpolation_weights(coarse_pos[i], fine_pos[i])
    g = ops.gather_rows(coarse_features, idx)
    wt = ops.expand(Tensor(w[..., None]), g.shape)
    return ops.sum(ops.mul(g, wt), axis=2)


def interpolate_features(coarse_cloud: CloudLike, coarse_features: Tensor,
                         fine_cloud: CloudLike) -> Tensor:
    """Inverse-distance weighted average of the 3 nearest coarse features."""
    coarse = _positions(coarse_cloud)
    fine = _positions(fine_cloud)
    if coarse_features.shape[0] != coarse.shape[0]:
        raise ValueError(f"features for {coarse_features.shape[0]} points, cloud has {coarse.shape[0]}")
    out = batch_interpolate(coarse[None], ops.reshape(coarse_features, (1,) + coarse_features.shape),
                            fine[None])
    return ops.reshape(out, out.shape[1:])
