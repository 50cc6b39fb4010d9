"""SGD with momentum, learning-rate schedules, augmentation, evaluation, training loop."""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from danet import ops
from danet.checkpoint import save_checkpoint
from danet.dataio import SplitData
from danet.geometry import PointCloud
from danet.layers import Module
from danet.tensor import Tensor, backward, no_grad

MOMENTUM = 0.9
METRICS_HEADER = "epoch,lr,train_loss,train_acc,val_acc"


# -- optimizer ---------------------------------------------------------------------

@dataclass
class OptimizerState:
    lr: float
    momentum: float = MOMENTUM
    buffers: list[np.ndarray] = field(default_factory=list)


def sgd_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]],
             state: OptimizerState) -> None:
    """``v = momentum * v + g``; ``w -= lr * v``, in place."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.buffers:
        state.buffers = [np.zeros_like(p.data) for p in params]
    if len(state.buffers) != len(params):
        raise ValueError("optimizer state does not match the parameter list")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            raise ValueError(f"parameter {i} {p.shape} has no gradient")
        v = state.buffers[i]
        if v.shape != p.shape or g.shape != p.shape:
            raise ValueError(f"parameter {i}: shape {p.shape}, buffer {v.shape}, grad {g.shape}")
        v *= state.momentum
        v += g
        p.data -= state.lr * v


class SGD:
    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = MOMENTUM):
        self.params = list(params)
        self.state = OptimizerState(lr, momentum)

    def step(self) -> None:
        sgd_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# -- schedules --------------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    kind: str = "cosine"
    lr_init: float = 0.1
    lr_floor: float = 0.001
    total_epochs: int = 50
    step_every: int = 10
    step_gamma: float = 0.7

    def __post_init__(self):
        if self.kind not in ("cosine", "step"):
            raise ValueError(f"schedule kind must be cosine or step, got '{self.kind}'")
        if not 0 <= self.lr_floor <= self.lr_init:
            raise ValueError("need 0 <= lr_floor <= lr_init")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")


def lr_at(schedule: Schedule, epoch: int) -> float:
    if not 0 <= epoch <= schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs}]")
    lo, hi = schedule.lr_floor, schedule.lr_init
    if schedule.kind == "cosine":
        return lo + 0.5 * (hi - lo) * (1.0 + math.cos(math.pi * epoch / schedule.total_epochs))
    return max(lo, hi * schedule.step_gamma ** (epoch // schedule.step_every))


# -- augmentation --------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentationConfig:
    scale: Optional[tuple[float, float]] = (0.67, 1.5)
    translate: float = 0.2
    jitter_std: float = 0.0
    jitter_clip: float = 0.05
    rotate_deg: float = 0.0          # uniform in [-rotate_deg, rotate_deg] about y
    shuffle: bool = True

    def __post_init__(self):
        if self.scale is not None and not 0 < self.scale[0] <= self.scale[1]:
            raise ValueError(f"scale range must be positive and ordered, got {self.scale}")
        if self.translate < 0 or self.jitter_std < 0 or self.jitter_clip < 0 or self.rotate_deg < 0:
            raise ValueError("augmentation magnitudes must be >= 0")

    @classmethod
    def identity(cls) -> "AugmentationConfig":
        return cls(scale=None, translate=0.0, shuffle=False)


def rotation_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def augment_arrays(pos: np.ndarray, config: AugmentationConfig, rng: np.random.Generator):
    """Augmented copy of (N, 3) positions, the point permutation and the rotation applied."""
    out = np.array(pos, dtype=np.float64)
    rot = np.eye(3)
    if config.rotate_deg:
        rot = rotation_y(math.radians(rng.uniform(-config.rotate_deg, config.rotate_deg)))
        out = out @ rot.T
    if config.scale is not None:
        out = out * rng.uniform(config.scale[0], config.scale[1], size=3)
    if config.translate:
        out = out + rng.uniform(-config.translate, config.translate, size=3)
    if config.jitter_std:
        noise = rng.normal(0.0, config.jitter_std, out.shape)
        out = out + np.clip(noise, -config.jitter_clip, config.jitter_clip)
    perm = rng.permutation(len(out)) if config.shuffle else np.arange(len(out))
    return out[perm], perm, rot


def augment(cloud: PointCloud, config: AugmentationConfig, seed) -> PointCloud:
    rng = np.random.default_rng(seed)
    pos, perm, rot = augment_arrays(cloud.positions, config, rng)
    attrs = cloud.attributes
    if attrs is not None:
        attrs = attrs.copy()
        if attrs.shape[1] >= 3:  # normals turn with the shape
            attrs[:, :3] = attrs[:, :3] @ rot.T
        attrs = attrs[perm]
    labels = None if cloud.labels is None else cloud.labels[perm]
    return PointCloud(pos, attrs, labels)


# -- evaluation -----------------------------------------------------------------------

def predict_logits(model: Module, positions: np.ndarray, features: Optional[np.ndarray] = None,
                   batch_size: int = 16, strict: bool = True) -> np.ndarray:
    """Eval-mode logits for (M, N, 3) positions, batch by batch."""
    was_training = model.training
    model.eval()
    chunks = []
    try:
        with no_grad():
            for s in range(0, len(positions), batch_size):
                f = None if features is None else features[s:s + batch_size]
                chunks.append(model(positions[s:s + batch_size], f, strict).data)
    finally:
        model.train(was_training)
    return np.concatenate(chunks)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=-1) == labels))


def evaluate(model: Module, data: SplitData, batch_size: int = 16,
             transform: Optional[Callable[[np.ndarray, int], np.ndarray]] = None,
             strict: bool = True) -> float:
    """Accuracy (overall, per point for segmentation).

    ``transform(positions, i)`` may rewrite each sample's positions first.
    """
    pos = data.positions
    if transform is not None:
        pos = np.stack([transform(p, i) for i, p in enumerate(pos)])
    logits = predict_logits(model, pos, data.attributes, batch_size, strict)
    return accuracy(logits, data.labels)


def sample_seed(positions: np.ndarray) -> int:
    """Seed derived from the sample content, so duplicates vote identically."""
    digest = hashlib.sha256(np.ascontiguousarray(positions, dtype=np.float64).tobytes()).digest()
    return int.from_bytes(digest[:8], "little")


def evaluate_with_voting(model: Module, data: SplitData, votes: int = 10,
                         scale: Optional[tuple[float, float]] = (0.67, 1.5),
                         batch_size: int = 16) -> float:
    """Average logits over ``votes`` randomly scaled copies of each sample."""
    if votes < 1:
        raise ValueError("votes must be >= 1")
    m = len(data)
    copies = np.empty((m, votes) + data.positions.shape[1:])
    for i, pos in enumerate(data.positions):
        rng = np.random.default_rng(sample_seed(pos))
        for v in range(votes):
            s = 1.0 if scale is None else rng.uniform(scale[0], scale[1], size=3)
            copies[i, v] = pos * s
    feats = None
    if data.attributes is not None:
        feats = np.repeat(data.attributes, votes, axis=0)
    flat = copies.reshape((m * votes,) + data.positions.shape[1:])
    logits = predict_logits(model, flat, feats, batch_size)
    mean = logits.reshape((m, votes) + logits.shape[1:]).mean(axis=1)
    return accuracy(mean, data.labels)


# -- training loop --------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    schedule: str = "cosine"
    lr_init: float = 0.1
    lr_floor: float = 0.001
    momentum: float = MOMENTUM
    seed: int = 0
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    out_dir: str = "run"
    checkpoint_name: str = "model.dack"
    metrics_name: str = "metrics.csv"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("need epochs >= 1 and batch_size >= 2 (batch norm)")
        if isinstance(self.augmentation, dict):
            aug = dict(self.augmentation)
            if aug.get("scale") is not None:
                aug["scale"] = tuple(aug["scale"])
            self.augmentation = AugmentationConfig(**aug)

    @property
    def lr_schedule(self) -> Schedule:
        return Schedule(self.schedule, self.lr_init, self.lr_floor, self.epochs)


@dataclass
class TrainResult:
    checkpoint: Path
    metrics: Path
    rows: list[dict]
    seconds: float

    @property
    def final_val_acc(self) -> float:
        return self.rows[-1]["val_acc"]


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    batches = [order[s:s + batch_size] for s in range(0, n, batch_size)]
    # a single leftover sample cannot be batch-normalised; fold it into the previous batch
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def _fmt(x: float) -> str:
    return "nan" if x != x else repr(float(x))


def train(model: Module, dataset: SplitData, config: TrainConfig,
          val: Optional[SplitData] = None, log: Optional[Callable[[str], None]] = None) -> TrainResult:
    """Train with mean cross-entropy; writes a checkpoint and a per-epoch metrics CSV.

    All randomness (batch order, augmentation, dropout) follows ``config.seed``
    and the model's own seed.
    """
    if len(dataset) == 0:
        raise ValueError("training set is empty")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    schedule = config.lr_schedule
    opt = SGD(model.parameters(), lr_at(schedule, 0), config.momentum)
    order_rng = np.random.default_rng([config.seed, 0])
    rows = []
    start = time.perf_counter()
    metrics_path = out / config.metrics_name
    lines = [f"# seed={config.seed}", METRICS_HEADER]
    for epoch in range(config.epochs):
        opt.state.lr = lr_at(schedule, epoch)
        model.train()
        total_loss, correct, seen = 0.0, 0, 0
        for b, idx in enumerate(_batches(len(dataset), config.batch_size, order_rng)):
            pos = np.empty((len(idx),) + dataset.positions.shape[1:])
            labels = dataset.labels[idx].copy()
            feats = None
            if dataset.attributes is not None:
                feats = np.empty((len(idx),) + dataset.attributes.shape[1:])
            for j, i in enumerate(idx):
                rng = np.random.default_rng([config.seed, 1, epoch, int(i)])
                pos[j], perm, _ = augment_arrays(dataset.positions[i], config.augmentation, rng)
                if feats is not None:
                    feats[j] = dataset.attributes[i][perm]
                if labels.ndim > 1:
                    labels[j] = labels[j][perm]
            logits = model(pos, feats)
            flat = ops.reshape(logits, (-1, logits.shape[-1]))
            loss = ops.cross_entropy(flat, labels.reshape(-1))
            opt.zero_grad()
            backward(loss)
            opt.step()
            total_loss += loss.item() * len(idx)
            pred = np.argmax(logits.data, axis=-1)
            hits = pred == labels
            correct += float(hits.mean(axis=1).sum() if hits.ndim > 1 else hits.sum())
            seen += len(idx)
        val_acc = evaluate(model, val, config.batch_size) if val is not None else float("nan")
        row = dict(epoch=epoch + 1, lr=opt.state.lr, train_loss=total_loss / seen,
                   train_acc=correct / seen, val_acc=val_acc)
        rows.append(row)
        lines.append(",".join([str(row["epoch"])] + [_fmt(row[k]) for k in
                                                      ("lr", "train_loss", "train_acc", "val_acc")]))
        metrics_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        if log is not None:
            log(f"epoch {epoch + 1:3d}  lr {row['lr']:.4f}  loss {row['train_loss']:.4f}  "
                f"train {row['train_acc']:.3f}  val {val_acc:.3f}  "
                f"({time.perf_counter() - start:.0f}s)")
    ckpt = out / config.checkpoint_name
    save_checkpoint(ckpt, model.state_dict())
    return TrainResult(ckpt, metrics_path, rows, time.perf_counter() - start)
