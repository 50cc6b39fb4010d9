"""Density adaptive convolution.

Per neighbourhood (center i, neighbours j = 1..K) the operator builds an
8-vector ``L = [p_i, p_j - p_i, d_j - d_i, |p_j - p_i|]``, maps it through a
small MLP ``phi`` to C_mid logits, and normalises those over the K
neighbours into dynamic weights ``Wt`` (K x C_mid).  A learned static kernel
``T`` (C_in x C_mid x C_out) completes the weight: the full per-neighbour
kernel would be ``W[j, c_in, :] = sum_m Wt[j, m] T[c_in, m, :]``.

:func:`daconv_naive` materialises ``W`` and contracts it with the features.
:func:`daconv_reformulated` never builds ``W``: it applies ``T`` and ``Wt``
as two 1x1 convolutions and then aggregates over neighbours.  With
``aggregation="sum"`` both give the same numbers up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from danet import ops
from danet.geometry import NeighborhoodIndex, sqdist
from danet.layers import Linear, Module, uniform_init
from danet.tensor import Tensor

ENC_DIM = 8
PHI_HIDDEN = 16
DEFAULT_CMID = 16
AGGREGATIONS = ("max", "sum", "none")
_CHUNK = 1 << 21  # entries of the per-chunk outer-product buffer


# -- fusion ----------------------------------------------------------------------

def batch_fuse(pos: np.ndarray, dens: np.ndarray, centers: np.ndarray,
               neighbors: np.ndarray) -> np.ndarray:
    """Geometric encoding for (..., N, 3) positions and (..., N) densities.

    ``centers`` (..., M) and ``neighbors`` (..., M, K) index the same cloud;
    the result is (..., M, K, 8).
    """
    pi = np.take_along_axis(pos, centers[..., None], axis=-2)
    flat = neighbors.reshape(neighbors.shape[:-2] + (-1,))
    pj = np.take_along_axis(pos, flat[..., None], axis=-2).reshape(neighbors.shape + (3,))
    di = np.take_along_axis(dens, centers, axis=-1)
    dj = np.take_along_axis(dens, flat, axis=-1).reshape(neighbors.shape)
    pi_b = np.broadcast_to(pi[..., None, :], pj.shape)
    enc = np.empty(neighbors.shape + (ENC_DIM,))
    enc[..., 0:3] = pi_b
    enc[..., 3:6] = pj - pi_b
    enc[..., 6] = dj - di[..., None]
    enc[..., 7] = np.sqrt(sqdist(pj, pi_b))
    return enc


def fuse_geometry(positions: np.ndarray, densities: np.ndarray,
                  nbr: NeighborhoodIndex) -> np.ndarray:
    """(N_s, K, 8) encodings ``[p_i, p_j - p_i, d_j - d_i, |p_j - p_i|]``.

    ``densities`` holds one value per point of ``positions`` (not per center).
    """
    positions = np.asarray(positions, dtype=np.float64)
    densities = np.asarray(densities, dtype=np.float64)
    if densities.shape != positions.shape[:1]:
        raise ValueError(f"need one density per point: {densities.shape} vs {positions.shape}")
    return batch_fuse(positions, densities, nbr.centers, nbr.neighbors)


# -- parameters ---------------------------------------------------------------------

class DAConv(Module):
    """Parameters of one DAConv block: static kernel ``T`` and weight MLP ``phi``.

    ``sigma`` is the KDE bandwidth of the layer the block belongs to
    (``None`` means "derive from the group", see the network module).
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 c_mid: int = DEFAULT_CMID, aggregation: str = "max",
                 sigma: Optional[float] = None, hidden: int = PHI_HIDDEN):
        if min(c_in, c_out, c_mid, hidden) < 1:
            raise ValueError("DAConv channel counts must be >= 1")
        if aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        self.c_in, self.c_mid, self.c_out = c_in, c_mid, c_out
        self.aggregation = aggregation
        self.sigma = sigma
        self.T = uniform_init(rng, (c_in, c_mid, c_out), c_in)
        self.phi1 = Linear(ENC_DIM, hidden, rng)
        self.phi2 = Linear(hidden, c_mid, rng)


DAConvParams = DAConv


def adaptive_weights(enc: Union[np.ndarray, Tensor], params: DAConv) -> Tensor:
    """Dynamic weights (..., K, C_mid): softmax over the K axis of phi(L)."""
    enc = enc if isinstance(enc, Tensor) else Tensor(enc)
    if enc.shape[-1] != ENC_DIM:
        raise ValueError(f"encodings must end in {ENC_DIM}, got {enc.shape}")
    hidden = ops.leaky_relu(params.phi1(enc))
    return ops.softmax(params.phi2(hidden), axis=-2)


# -- the two formulations ----------------------------------------------------------------

def dynamic_conv(features: Tensor, weights: Tensor, kernel: Tensor) -> Tensor:
    """Both 1x1 convolutions for P neighbour rows, without aggregation.

    features (P, C_in), weights (P, C_mid), kernel (C_in, C_mid, C_out)
    -> (P, C_out) with ``out[p] = sum_{i,m} features[p,i] weights[p,m] kernel[i,m]``.
    The contraction is grouped so the inner product runs as one GEMM per
    chunk of rows; rows are processed in chunks to bound memory.
    """
    (p, ci), (p2, cm) = features.shape, weights.shape
    if p != p2 or kernel.shape[:2] != (ci, cm):
        raise ValueError(f"dynamic_conv: features {features.shape}, weights {weights.shape}, "
                         f"kernel {kernel.shape}")
    co = kernel.shape[2]
    f, w = features.data, weights.data
    t2 = kernel.data.reshape(ci * cm, co)
    step = max(1, _CHUNK // (ci * cm))
    out = np.empty((p, co))
    for s in range(0, p, step):
        x = (f[s:s + step, :, None] * w[s:s + step, None, :]).reshape(-1, ci * cm)
        np.matmul(x, t2, out=out[s:s + step])

    need_f, need_w = features.requires_grad, weights.requires_grad

    def back(g):
        gf = np.empty_like(f) if need_f else None
        gw = np.empty_like(w) if need_w else None
        gt = np.zeros((ci * cm, co))
        for s in range(0, p, step):
            fs, ws, gs = f[s:s + step], w[s:s + step], g[s:s + step]
            x = (fs[:, :, None] * ws[:, None, :]).reshape(-1, ci * cm)
            gt += x.T @ gs
            if need_f or need_w:
                gx = (gs @ t2.T).reshape(-1, ci, cm)
                if need_f:
                    gf[s:s + step] = np.einsum("pim,pm->pi", gx, ws)
                if need_w:
                    gw[s:s + step] = np.einsum("pim,pi->pm", gx, fs)
        return gf, gw, gt.reshape(kernel.shape)

    return Tensor._make(out, (features, weights, kernel), back, "dynamic_conv")


def _aggregate(x: Tensor, how: str) -> Tensor:
    """Reduce the neighbour axis (second to last)."""
    if how == "max":
        return ops.max_pool(x, axis=-2)
    if how == "sum":
        return ops.sum(x, axis=-2)
    if how == "none":
        return x
    raise ValueError(f"unknown aggregation '{how}'")


def _check_features(features: Tensor, enc_shape: tuple, params: DAConv, op: str) -> None:
    if features.shape[:-1] != tuple(enc_shape[:-1]) or features.shape[-1] != params.c_in:
        raise ValueError(f"{op}: features {features.shape} do not match encodings "
                         f"{tuple(enc_shape)} with C_in={params.c_in}")


def daconv_reformulated(features: Tensor, enc, params: DAConv,
                        aggregation: Optional[str] = None,
                        weights: Optional[Tensor] = None) -> Tensor:
    """Efficient DAConv: Conv1x1(T) then Conv1x1(Wt), then aggregate over K.

    ``features`` (..., K, C_in) and ``enc`` (..., K, 8).  Returns (..., C_out),
    or (..., K, C_out) for ``aggregation="none"``.  Precomputed dynamic
    ``weights`` may be passed to skip ``phi``.
    """
    how = aggregation or params.aggregation
    enc_shape = enc.shape
    _check_features(features, enc_shape, params, "daconv_reformulated")
    if weights is None:
        weights = adaptive_weights(enc, params)
    lead = features.shape[:-1]
    flat_f = ops.reshape(features, (-1, params.c_in))
    flat_w = ops.reshape(weights, (-1, params.c_mid))
    msg = ops.reshape(dynamic_conv(flat_f, flat_w, params.T), lead + (params.c_out,))
    return _aggregate(msg, how)


def daconv_naive(features: Tensor, enc, params: DAConv,
                 aggregation: Optional[str] = None,
                 weights: Optional[Tensor] = None) -> Tensor:
    """Reference DAConv: build W (..., K, C_in, C_out) explicitly, then contract.

    Uses only primitive tensor ops, so it doubles as an oracle for
    :func:`daconv_reformulated`.  Memory grows with K*C_in*C_mid*C_out.
    """
    how = aggregation or params.aggregation
    _check_features(features, enc.shape, params, "daconv_naive")
    if weights is None:
        weights = adaptive_weights(enc, params)
    ci, cm, co = params.c_in, params.c_mid, params.c_out
    lead = features.shape[:-1]                            # (..., K)
    full = lead + (ci, cm, co)
    wt = ops.expand(ops.reshape(weights, lead + (1, cm, 1)), full)
    tk = ops.expand(params.T, full)
    kernel = ops.sum(ops.mul(wt, tk), axis=-2)            # (..., K, C_in, C_out)
    f = ops.expand(ops.reshape(features, lead + (ci, 1)), lead + (ci, co))
    msg = ops.sum(ops.mul(kernel, f), axis=-2)            # (..., K, C_out)
    return _aggregate(msg, how)


# -- cost accounting -------------------------------------------------------------------

@dataclass(frozen=True)
class CostReport:
    dynamic_weight_count: int
    static_weight_count: int
    multiply_add_count: int

    def __post_init__(self):
        if min(self.dynamic_weight_count, self.static_weight_count,
               self.multiply_add_count) < 0:
            raise ValueError("cost counts must be nonnegative")

    @property
    def total_weight_count(self) -> int:
        return self.dynamic_weight_count + self.static_weight_count

    def __add__(self, other: "CostReport") -> "CostReport":
        return CostReport(self.dynamic_weight_count + other.dynamic_weight_count,
                          self.static_weight_count + other.static_weight_count,
                          self.multiply_add_count + other.multiply_add_count)


def count_cost(k: int, c_in: int, c_mid: int, c_out: int, variant: str) -> CostReport:
    """Weight and multiply-add counts for one neighbourhood (one center).

    naive: W (K x C_in x C_out) is generated per neighbourhood from Wt and T
    (K*C_in*C_mid*C_out MACs) and contracted with F (K*C_in*C_out MACs).
    reformulated: Conv1x1(T) costs K*C_in*C_mid*C_out MACs, Conv1x1(Wt)
    K*C_mid*C_out.  The weight MLP phi is identical in both and excluded.
    """
    if min(k, c_in, c_mid, c_out) < 1:
        raise ValueError("counts must be >= 1")
    if variant == "naive":
        return CostReport(k * c_in * c_out, 0,
                          k * c_in * c_mid * c_out + k * c_in * c_out)
    if variant == "reformulated":
        return CostReport(k * c_mid, c_in * c_mid * c_out,
                          k * c_in * c_mid * c_out + k * c_mid * c_out)
    raise ValueError(f"variant must be 'naive' or 'reformulated', got '{variant}'")


def weight_reduction(k: int, c_in: int, c_mid: int, c_out: int) -> float:
    """1 - (reformulated dynamic + static) / naive dynamic weights."""
    naive = count_cost(k, c_in, c_mid, c_out, "naive")
    ref = count_cost(k, c_in, c_mid, c_out, "reformulated")
    return 1.0 - ref.total_weight_count / naive.dynamic_weight_count
