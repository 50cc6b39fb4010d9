"""Interactive attention over grouped features laid out as (B, C, N, K).

N is the group direction (neighbourhood centers), K the local direction
(points inside a neighbourhood).  Features are average-pooled along each
direction, encoded jointly by a shared 1x1 MLP with reduced width
ceil(C / r), split again, and turned into two softmax attention maps that
rescale the input multiplicatively on top of a residual connection.
"""

from __future__ import annotations

import math

import numpy as np

from danet import ops
from danet.layers import Linear, Module, conv1x1
from danet.tensor import Tensor

SUPPORTED_RATIOS = (4, 8, 16, 32)
DEFAULT_RATIO = 16


def reduced_width(channels: int, r: int) -> int:
    if r not in SUPPORTED_RATIOS:
        raise ValueError(f"reduction ratio {r} not supported; choose from {SUPPORTED_RATIOS}")
    if channels < 1:
        raise ValueError("channel count must be >= 1")
    return math.ceil(channels / r)


class IAM(Module):
    """Parameters: shared MLP C -> C/r, attention MLPs C/r -> C (all with bias).

    ``zero_attention=True`` zero-initialises both attention MLPs, which makes
    the attention maps exactly uniform.
    """

    def __init__(self, channels: int, rng: np.random.Generator,
                 r: int = DEFAULT_RATIO, zero_attention: bool = False):
        self.channels = channels
        self.r = r
        self.reduced = reduced_width(channels, r)
        self.shared = Linear(channels, self.reduced, rng)
        self.attn_n = Linear(self.reduced, channels, rng, zero=zero_attention)
        self.attn_k = Linear(self.reduced, channels, rng, zero=zero_attention)

    def __call__(self, features: Tensor) -> Tensor:
        return apply_iam(features, self)


IAMParams = IAM


def _check(features: Tensor, params: IAM, op: str) -> None:
    if features.ndim != 4 or features.shape[1] != params.channels:
        raise ValueError(f"{op}: expected (B, {params.channels}, N, K), got {features.shape}")


def joint_encoding(features: Tensor, params: IAM) -> Tensor:
    """Pool both directions, concatenate along space, shared MLP: (B, C/r, N+K, 1)."""
    _check(features, params, "joint_encoding")
    mid_n = ops.avg_pool(features, axis=3)                              # (B, C, N, 1)
    mid_k = ops.transpose(ops.avg_pool(features, axis=2), (0, 1, 3, 2))  # (B, C, K, 1)
    joint = ops.concat([mid_n, mid_k], axis=2)                          # (B, C, N+K, 1)
    return ops.leaky_relu(conv1x1(joint, params.shared, axis=1))


def encode_spatial(features: Tensor, params: IAM) -> tuple[Tensor, Tensor]:
    """Encoded maps (B, C/r, N, 1) and (B, C/r, 1, K)."""
    _check(features, params, "encode_spatial")
    n, k = features.shape[2], features.shape[3]
    joint = joint_encoding(features, params)
    out_n = ops.narrow(joint, 2, 0, n)
    out_k = ops.transpose(ops.narrow(joint, 2, n, k), (0, 1, 3, 2))
    return out_n, out_k


def attention_maps(out_n: Tensor, out_k: Tensor, params: IAM) -> tuple[Tensor, Tensor]:
    """A_N (B, C, N, 1) normalised over N and A_K (B, C, 1, K) normalised over K."""
    a_n = ops.softmax(conv1x1(out_n, params.attn_n, axis=1), axis=2)
    a_k = ops.softmax(conv1x1(out_k, params.attn_k, axis=1), axis=3)
    return a_n, a_k


def apply_iam(features: Tensor, params: IAM) -> Tensor:
    """``A_N * A_K * F + F`` with the maps broadcast over the missing axis."""
    _check(features, params, "apply_iam")
    a_n, a_k = attention_maps(*encode_spatial(features, params), params)
    shape = features.shape
    scaled = ops.mul(ops.mul(features, ops.expand(a_n, shape)), ops.expand(a_k, shape))
    return ops.add(scaled, features)


def iam_parameter_count(channels: int, r: int) -> int:
    cr = reduced_width(channels, r)
    return (channels * cr + cr) + 2 * (cr * channels + channels)


def iam_flops(channels: int, n: int, k: int, r: int) -> int:
    """Multiply-adds of the three MLPs plus elementwise pooling/softmax/apply work."""
    cr = reduced_width(channels, r)
    mlp = (n + k) * channels * cr + n * cr * channels + k * cr * channels
    pooling = 2 * n * k * channels
    softmax = 3 * (n + k) * channels
    apply = 3 * n * k * channels
    return mlp + pooling + softmax + apply
