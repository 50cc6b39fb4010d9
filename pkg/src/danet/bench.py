"""Robustness sweeps and cost reports behind the command-line verbs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from danet.dataio import SplitData, downsample_indices
from danet.iam import SUPPORTED_RATIOS, iam_flops
from danet.layers import Module
from danet.network import NetworkSpec, count_flops, count_parameters, walk
from danet.training import accuracy, predict_logits, rotation_y

REFERENCE_LEVELS = (1024, 768, 512, 384, 256, 128, 64)
REFERENCE_POINTS = 1024


def sweep_levels(train_points: int) -> list[int]:
    """The reference ladder rescaled to the training resolution (1024 -> train_points)."""
    return [max(1, round(level * train_points / REFERENCE_POINTS)) for level in REFERENCE_LEVELS]


def density_sweep(model: Module, data: SplitData, levels: Optional[Sequence[int]] = None,
                  mode: str = "random", seed: int = 0, batch_size: int = 16) -> list[tuple[int, float]]:
    """Accuracy after downsampling every test sample to each level (non-strict forward)."""
    n_full = data.positions.shape[1]
    levels = sweep_levels(n_full) if levels is None else list(levels)
    rows = []
    for level in levels:
        idx = [downsample_indices(p, level, mode, seed=[seed, i])
               for i, p in enumerate(data.positions)]
        pos = np.stack([p[ix] for p, ix in zip(data.positions, idx)])
        feats = None
        if data.attributes is not None:
            feats = np.stack([a[ix] for a, ix in zip(data.attributes, idx)])
        logits = predict_logits(model, pos, feats, batch_size, strict=False)
        rows.append((level, accuracy(logits, data.labels)))
    return rows


# -- perturbations ----------------------------------------------------------------------

Transform = Callable[[np.ndarray, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class Perturbation:
    name: str
    apply: Transform


def _rotate(deg: float) -> Transform:
    rot = rotation_y(math.radians(deg))
    return lambda p, rng: p @ rot.T


def _translate_z(dz: float) -> Transform:
    return lambda p, rng: p + np.array([0.0, 0.0, dz])


def _scale(half_width: float) -> Transform:
    # one uniform draw in [-1, 1] per axis, shared by every range, so narrower
    # ranges are nested inside wider ones sample by sample
    return lambda p, rng: p * (1.0 + half_width * rng.uniform(-1.0, 1.0, size=3))


def _jitter(std: float = 0.01, clip: float = 0.05) -> Transform:
    return lambda p, rng: p + np.clip(rng.normal(0.0, std, p.shape), -clip, clip)


PERTURBATIONS = (
    Perturbation("none", lambda p, rng: p),
    Perturbation("permutation", lambda p, rng: p[rng.permutation(len(p))]),
    Perturbation("rotate_y_-90", _rotate(-90.0)),
    Perturbation("rotate_y_90", _rotate(90.0)),
    Perturbation("rotate_y_180", _rotate(180.0)),
    Perturbation("translate_z_+0.2", _translate_z(0.2)),
    Perturbation("translate_z_-0.2", _translate_z(-0.2)),
    Perturbation("scale_0.5-1.5", _scale(0.5)),
    Perturbation("scale_0.6-1.4", _scale(0.4)),
    Perturbation("scale_0.7-1.3", _scale(0.3)),
    Perturbation("scale_0.8-1.2", _scale(0.2)),
    Perturbation("scale_0.9-1.1", _scale(0.1)),
    Perturbation("jitter", _jitter()),
)


def perturb(data: SplitData, perturbation: Perturbation, seed: int = 0) -> np.ndarray:
    return np.stack([perturbation.apply(p, np.random.default_rng([seed, i]))
                     for i, p in enumerate(data.positions)])


def perturb_sweep(model: Module, data: SplitData, seed: int = 0,
                  batch_size: int = 16) -> list[tuple[str, float]]:
    """One accuracy per condition.  Per-point attributes are not perturbed, so
    this sweep is meant for xyz-only data."""
    if data.attributes is not None:
        raise ValueError("perturbation sweep supports xyz-only data")
    rows = []
    for pert in PERTURBATIONS:
        logits = predict_logits(model, perturb(data, pert, seed), None, batch_size)
        rows.append((pert.name, accuracy(logits, data.labels)))
    return rows


# -- cost report ------------------------------------------------------------------------

def cost_report(spec: NetworkSpec, n_points: int,
                ratios: Sequence[int] = SUPPORTED_RATIOS) -> list[str]:
    lines = [f"parameters {count_parameters(spec)}",
             f"flops {count_flops(spec, n_points)}  (multiply-adds per sample, {n_points} points)",
             "",
             "layer  points  k     c_in  c_out  naive_dynamic  reform_dynamic  reform_static  "
             "naive_macs  reform_macs"]
    for info in walk(spec, n_points):
        if info.kind == "fc":
            continue
        nv, rf = info.naive, info.reformulated
        lines.append(f"{info.name:<6} {info.points_out:<7} {info.k:<5} {info.c_in:<5} "
                     f"{info.c_out:<6} {nv.dynamic_weight_count:<14} {rf.dynamic_weight_count:<15} "
                     f"{rf.static_weight_count:<14} {nv.multiply_add_count:<11} "
                     f"{rf.multiply_add_count}")
    lines += ["", "r   iam_flops   network_flops  parameters"]
    for r in ratios:
        s = spec.with_overrides(use_iam=True, r=r)
        iam = sum(info.iam_flops for info in walk(s, n_points))
        lines.append(f"{r:<3} {iam:<11} {count_flops(s, n_points):<14} {count_parameters(s)}")
    return lines


def iam_ratio_sweep(channels: int, n: int, k: int,
                    ratios: Sequence[int] = SUPPORTED_RATIOS) -> list[tuple[int, int]]:
    return [(r, iam_flops(channels, n, k, r)) for r in ratios]
