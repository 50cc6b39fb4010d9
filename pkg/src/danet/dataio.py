"""Point-cloud files, manifests, synthetic shapes and downsampling.

Point files are text, one point per line with 3, 6 or 9 comma- or
whitespace-separated reals (xyz, xyz+normal, xyz+normal+extra).

A manifest is line-oriented::

    #classes sphere,cube,...
    #schema xyz
    #points 256
    #split train
    0<TAB>train/sphere_0000.txt
    ...
    #split test
    ...
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from danet.geometry import PointCloud, farthest_point_sample

SCHEMAS = {"xyz": 3, "xyz+normal": 6, "9-dim": 9}
SHAPE_FAMILIES = ("sphere", "cube", "cylinder", "cone", "torus", "plane", "helix", "cross")
_SPLIT = re.compile(r"[,\s]+")


class DataError(ValueError):
    pass


# -- point files ---------------------------------------------------------------------

def load_pointcloud_text(path) -> PointCloud:
    rows: list[list[float]] = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = [t for t in _SPLIT.split(line) if t]
            if len(fields) not in (3, 6, 9):
                raise DataError(f"{path}:{lineno}: expected 3, 6 or 9 values, got {len(fields)}")
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise DataError(f"{path}:{lineno}: ragged file, {len(fields)} values "
                                f"after {width}-value lines")
            try:
                rows.append([float(t) for t in fields])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        raise DataError(f"{path}: no points")
    arr = np.array(rows)
    return PointCloud(arr[:, :3], arr[:, 3:] if arr.shape[1] > 3 else None)


def write_pointcloud_text(path, cloud: PointCloud) -> None:
    arr = cloud.positions
    if cloud.attributes is not None:
        arr = np.concatenate([arr, cloud.attributes], axis=1)
    lines = [" ".join(repr(float(v)) for v in row) for row in arr]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- synthetic shapes -------------------------------------------------------------------

@dataclass
class SyntheticShapeSpec:
    family: str
    noise: float = 0.01

    def __post_init__(self):
        if self.family not in SHAPE_FAMILIES:
            raise DataError(f"unknown shape family '{self.family}'")
        if self.noise < 0:
            raise DataError("noise must be >= 0")


def _sphere(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _box(rng, n, dims):
    """Uniform samples on the surface of an axis-aligned box centred at 0."""
    a, b, c = dims
    areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=(n, 3)) * np.asarray(dims)
    axis = face // 2
    sign = np.where(face % 2 == 0, -0.5, 0.5)
    u[np.arange(n), axis] = sign * np.asarray(dims)[axis]
    return u


def _cylinder(rng, n, radius, height):
    side = 2 * np.pi * radius * height
    cap = np.pi * radius ** 2
    part = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    theta = rng.uniform(0, 2 * np.pi, n)
    y = rng.uniform(-height / 2, height / 2, n)
    rad = np.where(part == 0, radius, radius * np.sqrt(rng.uniform(0, 1, n)))
    y = np.where(part == 1, -height / 2, np.where(part == 2, height / 2, y))
    return np.stack([rad * np.cos(theta), y, rad * np.sin(theta)], axis=1)


def _cone(rng, n, radius, height):
    slant = np.hypot(radius, height)
    side = np.pi * radius * slant
    base = np.pi * radius ** 2
    on_side = rng.uniform(0, side + base, n) < side
    theta = rng.uniform(0, 2 * np.pi, n)
    t = np.sqrt(rng.uniform(0, 1, n))  # area-uniform along the slant / disc
    rad = radius * t
    y = np.where(on_side, height / 2 - height * t, -height / 2)
    return np.stack([rad * np.cos(theta), y, rad * np.sin(theta)], axis=1)


def _torus(rng, n, major, minor):
    out = np.empty((0, 3))
    while out.shape[0] < n:
        u = rng.uniform(0, 2 * np.pi, 2 * n)
        v = rng.uniform(0, 2 * np.pi, 2 * n)
        keep = rng.uniform(0, major + minor, 2 * n) < major + minor * np.cos(v)
        u, v = u[keep], v[keep]
        ring = major + minor * np.cos(v)
        pts = np.stack([ring * np.cos(u), minor * np.sin(v), ring * np.sin(u)], axis=1)
        out = np.concatenate([out, pts])
    return out[:n]


def _plane(rng, n, aspect):
    return np.stack([rng.uniform(-1, 1, n), np.zeros(n), rng.uniform(-aspect, aspect, n)], axis=1)


def _helix(rng, n, turns, tube):
    t = rng.uniform(0, 1, n)
    ang = 2 * np.pi * turns * t
    center = np.stack([np.cos(ang), 2.0 * t - 1.0, np.sin(ang)], axis=1)
    return center + tube * _sphere(rng, n)


def _cross(rng, n, arm, thick):
    which = rng.integers(0, 3, n)
    dims = np.full((3, 3), thick)
    dims[np.arange(3), np.arange(3)] = 2 * arm
    out = np.empty((n, 3))
    for axis in range(3):
        sel = which == axis
        out[sel] = _box(rng, int(sel.sum()), dims[axis])
    return out


def sample_shape(spec: SyntheticShapeSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Surface samples of one random instance, centred and scaled into the unit sphere."""
    fam = spec.family
    if fam == "sphere":
        pts = _sphere(rng, n)
    elif fam == "cube":
        pts = _box(rng, n, rng.uniform(0.8, 1.2, 3))
    elif fam == "cylinder":
        pts = _cylinder(rng, n, rng.uniform(0.35, 0.5), rng.uniform(1.4, 2.0))
    elif fam == "cone":
        pts = _cone(rng, n, rng.uniform(0.5, 0.7), rng.uniform(1.2, 1.8))
    elif fam == "torus":
        pts = _torus(rng, n, rng.uniform(0.7, 0.9), rng.uniform(0.2, 0.3))
    elif fam == "plane":
        pts = _plane(rng, n, rng.uniform(0.5, 1.0))
    elif fam == "helix":
        pts = _helix(rng, n, rng.uniform(2.0, 3.0), 0.08)
    else:
        pts = _cross(rng, n, rng.uniform(0.8, 1.0), rng.uniform(0.15, 0.25))
    if spec.noise:
        pts = pts + np.clip(rng.normal(0, spec.noise, pts.shape), -3 * spec.noise, 3 * spec.noise)
    return normalize_unit_sphere(pts)


def normalize_unit_sphere(pts: np.ndarray) -> np.ndarray:
    """Centre on the bounding-box midpoint and scale the farthest point to radius 1.

    The box midpoint (not the centroid) keeps a sampled sphere on the unit
    sphere up to the noise, independent of how the samples happen to fall.
    """
    centred = pts - 0.5 * (pts.min(axis=0) + pts.max(axis=0))
    radius = np.linalg.norm(centred, axis=1).max()
    return centred / radius if radius > 0 else centred


# -- manifests --------------------------------------------------------------------------

@dataclass
class DatasetManifest:
    root: Path
    class_names: list[str]
    splits: dict[str, list[tuple[int, str]]] = field(default_factory=dict)
    points_per_sample: int = 0
    schema: str = "xyz"

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def write(self, path=None) -> Path:
        path = Path(path) if path is not None else self.root / "manifest.txt"
        lines = [f"#classes {','.join(self.class_names)}", f"#schema {self.schema}",
                 f"#points {self.points_per_sample}"]
        for split, items in self.splits.items():
            lines.append(f"#split {split}")
            lines.extend(f"{label}\t{rel}" for label, rel in items)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    classes: Optional[list[str]] = None
    schema, points = "xyz", 0
    splits: dict[str, list[tuple[int, str]]] = {}
    current: Optional[str] = None
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(" ")
            value = value.strip()
            if key == "classes":
                classes = value.split(",")
            elif key == "schema":
                if value not in SCHEMAS:
                    raise DataError(f"{path}:{lineno}: unknown schema '{value}'")
                schema = value
            elif key == "points":
                points = int(value)
            elif key == "split":
                current = value
                splits.setdefault(current, [])
            continue
        if current is None:
            raise DataError(f"{path}:{lineno}: sample listed before any '#split' line")
        label_s, sep, rel = line.partition("\t")
        if not sep:
            raise DataError(f"{path}:{lineno}: expected 'class_index<TAB>path'")
        splits[current].append((int(label_s), rel))
    if classes is None:
        raise DataError(f"{path}: missing '#classes' header")
    manifest = DatasetManifest(path.parent, classes, splits, points, schema)
    for split, items in splits.items():
        for label, rel in items:
            if not 0 <= label < len(classes):
                raise DataError(f"{path}: class index {label} outside [0, {len(classes)})")
            if not (manifest.root / rel).is_file():
                raise DataError(f"{path}: listed file missing: {rel}")
    return manifest


@dataclass
class SplitData:
    positions: np.ndarray            # (M, N, 3)
    labels: np.ndarray               # (M,)
    attributes: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.labels.shape[0]


def load_split(manifest: DatasetManifest, split: str) -> SplitData:
    if split not in manifest.splits:
        raise DataError(f"manifest has no split '{split}'")
    clouds = [load_pointcloud_text(manifest.root / rel) for _, rel in manifest.splits[split]]
    if not clouds:
        raise DataError(f"split '{split}' is empty")
    sizes = {len(c) for c in clouds}
    if len(sizes) != 1:
        raise DataError(f"split '{split}' mixes point counts {sorted(sizes)}")
    pos = np.stack([c.positions for c in clouds])
    attrs = None
    if clouds[0].attributes is not None:
        attrs = np.stack([c.attributes for c in clouds])
    labels = np.array([label for label, _ in manifest.splits[split]], dtype=np.int64)
    return SplitData(pos, labels, attrs)


def generate_synthetic_dataset(specs: Sequence[Union[SyntheticShapeSpec, str]], n_train: int,
                               n_test: int, points_per_sample: int, seed: int,
                               root) -> DatasetManifest:
    """Write ``n_train``/``n_test`` samples per class plus a manifest under ``root``."""
    specs = [s if isinstance(s, SyntheticShapeSpec) else SyntheticShapeSpec(s) for s in specs]
    if len(specs) < 2:
        raise DataError("need at least two shape classes")
    if points_per_sample < 64:
        raise DataError("points_per_sample must be >= 64")
    root = Path(root)
    manifest = DatasetManifest(root, [s.family for s in specs], {},
                               points_per_sample, "xyz")
    for split_id, (split, count) in enumerate((("train", n_train), ("test", n_test))):
        (root / split).mkdir(parents=True, exist_ok=True)
        items = manifest.splits.setdefault(split, [])
        for i in range(count):
            for label, spec in enumerate(specs):
                rng = np.random.default_rng([seed, split_id, label, i])
                pts = sample_shape(spec, points_per_sample, rng)
                rel = f"{split}/{spec.family}_{i:04d}.txt"
                write_pointcloud_text(root / rel, PointCloud(pts))
                items.append((label, rel))
    manifest.write()
    return manifest


# -- downsampling -------------------------------------------------------------------------

def downsample_indices(positions: np.ndarray, n: int, mode: str = "random",
                       seed: int = 0) -> np.ndarray:
    total = positions.shape[0]
    if not 1 <= n <= total:
        raise DataError(f"cannot downsample {total} points to {n}")
    if n == total:
        return np.arange(total)
    if mode == "random":
        idx = np.random.default_rng(seed).choice(total, size=n, replace=False)
    elif mode == "fps":
        idx = farthest_point_sample(positions, n)
    else:
        raise DataError(f"unknown downsampling mode '{mode}'")
    return np.sort(idx)


def downsample(cloud: PointCloud, n: int, mode: str = "random", seed: int = 0) -> PointCloud:
    """Exact subset of ``n`` points, kept in their original order."""
    return cloud.subset(downsample_indices(cloud.positions, n, mode, seed))
