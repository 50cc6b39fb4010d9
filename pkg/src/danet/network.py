"""Hierarchical DAConv networks: specs, config files, model, cost walker.

Architecture notation, one layer per line::

    task classification
    features 0
    E 256 32 64,64,64 sigma=0.1 iam=0
    E 64 32 64,64,128 sigma=0.2 iam=0
    E none all 256,512,1024 sigma=none iam=0
    FC 1024,512,256,40 dropout=0.4

``E Ns K widths`` is an encoding layer (FPS to Ns centers, K-NN grouping,
optional IAM, one DAConv block per width; ``none all`` is a single global
group).  ``D widths`` is a decoding layer (3-NN interpolation, skip concat,
an MLP per width but the last, one DAConv for the last).  ``FC widths`` is
the head, whose last width is the class count.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from danet import geometry, ops
from danet.daconv import (DEFAULT_CMID, ENC_DIM, PHI_HIDDEN, CostReport, DAConv,
                          batch_fuse, count_cost, daconv_reformulated)
from danet.iam import DEFAULT_RATIO, IAM, apply_iam, iam_flops, iam_parameter_count
from danet.layers import BatchNorm, Linear, Module
from danet.tensor import Tensor

TASKS = ("classification", "semantic_seg", "part_seg")
DECODER_K = 16


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str                          # encode | decode | fc
    widths: tuple[int, ...]
    n_samples: Optional[int] = None    # None: one global group ("none")
    k: Optional[int] = None            # None: all points ("all")
    sigma: Optional[float] = None      # None: derived from the group ("none")
    use_iam: bool = False
    r: int = DEFAULT_RATIO
    c_mid: int = DEFAULT_CMID
    dropout: float = 0.0

    def __post_init__(self):
        if self.kind not in ("encode", "decode", "fc"):
            raise ConfigError(f"unknown layer kind '{self.kind}'")
        if not self.widths or min(self.widths) < 1:
            raise ConfigError(f"{self.kind} layer needs positive widths, got {self.widths}")
        if self.sigma is not None and not self.sigma > 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if self.n_samples is not None and self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if self.k is not None and self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.kind == "fc" and len(self.widths) < 2:
            raise ConfigError("FC needs at least an input and an output width")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def is_global(self) -> bool:
        return self.kind == "encode" and self.n_samples is None


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    task: str = "classification"
    in_features: int = 0               # per-point input channels besides xyz

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}")
        kinds = [layer.kind for layer in self.layers]
        if not kinds or kinds[-1] != "fc" or kinds.count("fc") != 1:
            raise ConfigError("a network ends in exactly one FC layer")
        n_enc, n_dec = kinds.count("encode"), kinds.count("decode")
        if n_enc < 1:
            raise ConfigError("a network needs at least one encoding layer")
        if kinds != ["encode"] * n_enc + ["decode"] * n_dec + ["fc"]:
            raise ConfigError("layers must be ordered encoders, decoders, FC")
        if self.task == "classification" and n_dec:
            raise ConfigError("classification networks have no decoders")
        if self.task != "classification" and n_dec != n_enc:
            raise ConfigError(f"segmentation needs as many decoders as encoders ({n_enc} vs {n_dec})")
        if self.in_features < 0:
            raise ConfigError("in_features must be >= 0")

    @property
    def encoders(self) -> list[LayerSpec]:
        return [layer for layer in self.layers if layer.kind == "encode"]

    @property
    def decoders(self) -> list[LayerSpec]:
        return [layer for layer in self.layers if layer.kind == "decode"]

    @property
    def head(self) -> LayerSpec:
        return self.layers[-1]

    @property
    def num_classes(self) -> int:
        return self.head.widths[-1]

    def decoder_sigma(self, index: int) -> Optional[float]:
        """Bandwidth for decoder ``index``: that of the encoder consuming its level."""
        landing = len(self.encoders) - 1 - index
        return self.encoders[landing].sigma

    def with_overrides(self, **kwargs) -> "NetworkSpec":
        """Copy with fields of every encoding/decoding layer replaced (e.g. r, c_mid)."""
        layers = tuple(replace(layer, **kwargs) if layer.kind != "fc" else layer
                       for layer in self.layers)
        return replace(self, layers=layers)


# -- builders ---------------------------------------------------------------------

def build_classifier(num_classes: int = 40, n_samples: tuple[int, int] = (256, 64),
                     k: int = 32, use_iam: bool = False, c_mid: int = DEFAULT_CMID) -> NetworkSpec:
    """EC1 (256, 32, [64,64,64]), EC2 (64, 32, [64,64,128]), EC3 (none, all,
    [256,512,1024]), FC (1024,512,256,classes); bandwidths 0.1, 0.2, none."""
    enc = dict(use_iam=use_iam, c_mid=c_mid)
    return NetworkSpec((
        LayerSpec("encode", (64, 64, 64), n_samples[0], k, 0.1, **enc),
        LayerSpec("encode", (64, 64, 128), n_samples[1], k, 0.2, **enc),
        LayerSpec("encode", (256, 512, 1024), None, None, None, **enc),
        LayerSpec("fc", (1024, 512, 256, num_classes), dropout=0.4),
    ), task="classification")


def build_semantic_segmenter(num_classes: int = 13, in_features: int = 9,
                             r: int = DEFAULT_RATIO, c_mid: int = DEFAULT_CMID) -> NetworkSpec:
    enc = dict(use_iam=True, r=r, c_mid=c_mid)
    return NetworkSpec((
        LayerSpec("encode", (32, 32, 64), 1024, 32, 0.1, **enc),
        LayerSpec("encode", (64, 64, 128), 256, 32, 0.2, **enc),
        LayerSpec("encode", (128, 128, 256), 64, 32, 0.4, **enc),
        LayerSpec("encode", (256, 256, 512), 16, 32, 0.8, **enc),
        LayerSpec("decode", (256, 256), k=DECODER_K, c_mid=c_mid),
        LayerSpec("decode", (256, 256), k=DECODER_K, c_mid=c_mid),
        LayerSpec("decode", (256, 128), k=DECODER_K, c_mid=c_mid),
        LayerSpec("decode", (128, 128, 128), k=DECODER_K, c_mid=c_mid),
        LayerSpec("fc", (128, 128, num_classes), dropout=0.5),
    ), task="semantic_seg", in_features=in_features)


def build_part_segmenter(num_classes: int = 50, in_features: int = 0,
                         r: int = DEFAULT_RATIO, c_mid: int = DEFAULT_CMID) -> NetworkSpec:
    enc = dict(use_iam=True, r=r, c_mid=c_mid)
    return NetworkSpec((
        LayerSpec("encode", (64, 64, 128), 512, 32, 0.1, **enc),
        LayerSpec("encode", (128, 128, 256), 128, 32, 0.2, **enc),
        LayerSpec("encode", (256, 512, 1024), None, None, None, **enc),
        LayerSpec("decode", (256, 256), k=DECODER_K, c_mid=c_mid),
        LayerSpec("decode", (256, 128), k=DECODER_K, c_mid=c_mid),
        LayerSpec("decode", (128, 128, 128), k=DECODER_K, c_mid=c_mid),
        LayerSpec("fc", (128, 128, num_classes), dropout=0.5),
    ), task="part_seg", in_features=in_features)


# -- config files -------------------------------------------------------------------

_KEYS = {"E": {"sigma", "iam", "r", "cmid"}, "D": {"k", "cmid"}, "FC": {"dropout"}}


def _int(token: str, what: str, lineno: int) -> int:
    try:
        value = int(token)
    except ValueError:
        raise ConfigError(f"line {lineno}: {what} must be an integer, got '{token}'") from None
    return value


def _float(token: str, what: str, lineno: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise ConfigError(f"line {lineno}: {what} must be a number, got '{token}'") from None


def _widths(token: str, lineno: int) -> tuple[int, ...]:
    return tuple(_int(t, "width", lineno) for t in token.split(","))


def parse_architecture(text: str) -> NetworkSpec:
    task, in_features = "classification", 0
    layers: list[LayerSpec] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0]
        if head == "task":
            if len(tokens) != 2:
                raise ConfigError(f"line {lineno}: 'task <name>'")
            task = tokens[1]
            continue
        if head == "features":
            if len(tokens) != 2:
                raise ConfigError(f"line {lineno}: 'features <count>'")
            in_features = _int(tokens[1], "features", lineno)
            continue
        if head not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown directive '{head}'")
        positional = [t for t in tokens[1:] if "=" not in t]
        options: dict[str, str] = {}
        for t in tokens[1:]:
            if "=" in t:
                key, _, value = t.partition("=")
                if key not in _KEYS[head]:
                    raise ConfigError(f"line {lineno}: unknown key '{key}' for {head}")
                if key in options:
                    raise ConfigError(f"line {lineno}: duplicate key '{key}'")
                options[key] = value
        try:
            if head == "E":
                if len(positional) != 3:
                    raise ConfigError(f"line {lineno}: 'E <Ns|none> <K|all> <widths> [key=value...]'")
                ns = None if positional[0] == "none" else _int(positional[0], "Ns", lineno)
                k = None if positional[1] == "all" else _int(positional[1], "K", lineno)
                sig = options.get("sigma", "none")
                iam_flag = options.get("iam", "0")
                if iam_flag not in ("0", "1"):
                    raise ConfigError(f"line {lineno}: iam must be 0 or 1")
                layers.append(LayerSpec(
                    "encode", _widths(positional[2], lineno), ns, k,
                    None if sig == "none" else _float(sig, "sigma", lineno),
                    iam_flag == "1",
                    _int(options.get("r", str(DEFAULT_RATIO)), "r", lineno),
                    _int(options.get("cmid", str(DEFAULT_CMID)), "cmid", lineno)))
            elif head == "D":
                if len(positional) != 1:
                    raise ConfigError(f"line {lineno}: 'D <widths> [k=..] [cmid=..]'")
                layers.append(LayerSpec(
                    "decode", _widths(positional[0], lineno),
                    k=_int(options.get("k", str(DECODER_K)), "k", lineno),
                    c_mid=_int(options.get("cmid", str(DEFAULT_CMID)), "cmid", lineno)))
            else:
                if len(positional) != 1:
                    raise ConfigError(f"line {lineno}: 'FC <widths> [dropout=..]'")
                layers.append(LayerSpec(
                    "fc", _widths(positional[0], lineno),
                    dropout=_float(options.get("dropout", "0"), "dropout", lineno)))
        except ConfigError as exc:
            if str(exc).startswith("line "):
                raise
            raise ConfigError(f"line {lineno}: {exc}") from None
    return NetworkSpec(tuple(layers), task=task, in_features=in_features)


def load_architecture(path) -> NetworkSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_architecture(fh.read())


def format_architecture(spec: NetworkSpec) -> str:
    lines = [f"task {spec.task}", f"features {spec.in_features}"]
    for layer in spec.layers:
        widths = ",".join(str(w) for w in layer.widths)
        if layer.kind == "encode":
            ns = "none" if layer.n_samples is None else str(layer.n_samples)
            k = "all" if layer.k is None else str(layer.k)
            sig = "none" if layer.sigma is None else repr(layer.sigma)
            lines.append(f"E {ns} {k} {widths} sigma={sig} iam={int(layer.use_iam)} "
                         f"r={layer.r} cmid={layer.c_mid}")
        elif layer.kind == "decode":
            lines.append(f"D {widths} k={layer.k} cmid={layer.c_mid}")
        else:
            lines.append(f"FC {widths} dropout={layer.dropout!r}")
    return "\n".join(lines) + "\n"


# -- model ---------------------------------------------------------------------------

def _take_points(pos: np.ndarray, index: np.ndarray) -> np.ndarray:
    """pos (B, N, 3), index (B, ...) -> (B, ..., 3)."""
    flat = index.reshape(index.shape[0], -1)
    out = np.take_along_axis(pos, flat[..., None], axis=1)
    return out.reshape(index.shape + (3,))


def _bandwidths(pos: np.ndarray, sigma: Optional[float]) -> np.ndarray:
    if sigma is not None:
        return np.full(pos.shape[0], float(sigma))
    return np.array([geometry.mean_nn_distance(p) for p in pos])


def _grouping_geometry(pos: np.ndarray, centers: np.ndarray, k: int, sigma: Optional[float]):
    """Neighbour indices (B, M, k) of ``centers`` and their (B, M, k, 8) encodings.

    Densities use the same k-neighbourhood, evaluated around every point.
    """
    b, n, _ = pos.shape
    nbr, _ = geometry.batch_knn(pos, _take_points(pos, centers), k)
    everyone = np.broadcast_to(np.arange(n), (b, n))
    if centers.shape[1] == n and np.array_equal(centers, everyone):
        all_nbr = nbr
    else:
        all_nbr, _ = geometry.batch_knn(pos, pos, k)
    dens = geometry.batch_kde(pos, all_nbr, np.ascontiguousarray(everyone), _bandwidths(pos, sigma))
    return nbr, batch_fuse(pos, dens, centers, nbr)


def _group(enc: np.ndarray, features: Optional[Tensor], nbr: np.ndarray) -> Tensor:
    rel = Tensor(enc[..., 3:6])
    if features is None:
        return rel
    return ops.concat([rel, ops.gather_rows(features, nbr)], axis=-1)


class EncoderLayer(Module):
    def __init__(self, spec: LayerSpec, in_channels: int, rng: np.random.Generator, name: str):
        self.spec = spec
        self.name = name
        c = 3 + in_channels
        self.iam = IAM(c, rng, r=spec.r) if spec.use_iam else None
        self.blocks: list[DAConv] = []
        self.norms: list[BatchNorm] = []
        for i, width in enumerate(spec.widths):
            last = i == len(spec.widths) - 1
            self.blocks.append(DAConv(c, width, rng, c_mid=spec.c_mid,
                                      aggregation="max" if last else "none",
                                      sigma=spec.sigma))
            self.norms.append(BatchNorm(width))
            c = width
        self.out_channels = c

    def __call__(self, pos: np.ndarray, features: Optional[Tensor], strict: bool = True):
        b, n, _ = pos.shape
        spec = self.spec
        if spec.is_global:
            centroid = pos.mean(axis=1)
            centers = np.stack([geometry.knn_query(pos[i], centroid[i:i + 1], 1)[0][0]
                                for i in range(b)])
            k = n
        else:
            ns = spec.n_samples
            if n < ns:
                if strict:
                    raise ValueError(f"{self.name}: needs at least {ns} points, got {n}")
                ns = n
            centers = geometry.batch_fps(pos, ns)
            k = spec.k if spec.k is not None else n
        nbr, enc = _grouping_geometry(pos, centers, k, spec.sigma)
        x = _group(enc, features, nbr)
        if self.iam is not None:
            x = ops.transpose(apply_iam(ops.transpose(x, (0, 3, 1, 2)), self.iam), (0, 2, 3, 1))
        for block, norm in zip(self.blocks, self.norms):
            x = ops.leaky_relu(norm(daconv_reformulated(x, enc, block)))
        return _take_points(pos, centers), x


class DecoderLayer(Module):
    def __init__(self, spec: LayerSpec, in_channels: int, sigma: Optional[float],
                 rng: np.random.Generator, name: str):
        self.spec = spec
        self.name = name
        self.sigma = sigma
        self.mlps: list[Linear] = []
        self.norms: list[BatchNorm] = []
        c = in_channels
        for width in spec.widths[:-1]:
            self.mlps.append(Linear(c, width, rng))
            self.norms.append(BatchNorm(width))
            c = width
        self.conv = DAConv(3 + c, spec.widths[-1], rng, c_mid=spec.c_mid,
                           aggregation="max", sigma=sigma)
        self.conv_norm = BatchNorm(spec.widths[-1])
        self.out_channels = spec.widths[-1]

    def __call__(self, coarse_pos: np.ndarray, coarse: Tensor,
                 fine_pos: np.ndarray, skip: Optional[Tensor]) -> Tensor:
        x = geometry.batch_interpolate(coarse_pos, coarse, fine_pos)
        if skip is not None:
            x = ops.concat([x, skip], axis=-1)
        for lin, norm in zip(self.mlps, self.norms):
            x = ops.leaky_relu(norm(lin(x)))
        b, n, _ = fine_pos.shape
        centers = np.ascontiguousarray(np.broadcast_to(np.arange(n), (b, n)))
        nbr, enc = _grouping_geometry(fine_pos, centers, self.spec.k or DECODER_K, self.sigma)
        y = daconv_reformulated(_group(enc, x, nbr), enc, self.conv)
        return ops.leaky_relu(self.conv_norm(y))


class Head(Module):
    def __init__(self, spec: LayerSpec, rng: np.random.Generator):
        self.dropout = spec.dropout
        w = spec.widths
        self.linears = [Linear(w[i], w[i + 1], rng) for i in range(len(w) - 1)]
        self.norms = [BatchNorm(c) for c in w[1:-1]]

    def __call__(self, x: Tensor, rng: np.random.Generator) -> Tensor:
        for i, lin in enumerate(self.linears):
            x = lin(x)
            if i < len(self.norms):
                x = ops.leaky_relu(self.norms[i](x))
                x = ops.dropout(x, self.dropout, rng, self.training)
        return x


class DANet(Module):
    """Model instantiated from a :class:`NetworkSpec`.

    Call with positions (B, N, 3) and optional per-point features
    (B, N, in_features).  Classification returns (B, classes) logits,
    segmentation (B, N, classes).
    """

    def __init__(self, spec: NetworkSpec, seed: int = 0):
        self.spec = spec
        rng = np.random.default_rng(seed)
        self.dropout_rng = np.random.default_rng([seed, 1])
        self.encoders: list[EncoderLayer] = []
        channels = [spec.in_features]
        c = spec.in_features
        for i, layer in enumerate(spec.encoders):
            enc = EncoderLayer(layer, c, rng, f"encoder {i + 1}")
            self.encoders.append(enc)
            c = enc.out_channels
            channels.append(c)
        self.decoders: list[DecoderLayer] = []
        for i, layer in enumerate(spec.decoders):
            level = len(spec.encoders) - 1 - i
            skip = channels[level] if channels[level] > 0 else 3
            dec = DecoderLayer(layer, c + skip, spec.decoder_sigma(i), rng, f"decoder {i + 1}")
            self.decoders.append(dec)
            c = dec.out_channels
        if spec.head.widths[0] != c:
            raise ConfigError(f"FC input width {spec.head.widths[0]} does not match "
                              f"the {c} channels feeding it")
        self.head = Head(spec.head, rng)

    def __call__(self, positions, features=None, strict: bool = True) -> Tensor:
        pos = np.asarray(positions, dtype=np.float64)
        if pos.ndim != 3 or pos.shape[2] != 3:
            raise ValueError(f"positions must be (B, N, 3), got {pos.shape}")
        spec = self.spec
        feats: Optional[Tensor] = None
        if spec.in_features:
            if features is None:
                raise ValueError(f"network expects {spec.in_features} input features per point")
            feats = features if isinstance(features, Tensor) else Tensor(features)
            if feats.shape != pos.shape[:2] + (spec.in_features,):
                raise ValueError(f"features must be {pos.shape[:2] + (spec.in_features,)}, "
                                 f"got {feats.shape}")
        levels = [(pos, feats)]
        cur_pos, cur = pos, feats
        for enc in self.encoders:
            cur_pos, cur = enc(cur_pos, cur, strict)
            levels.append((cur_pos, cur))
        if spec.task == "classification":
            if cur.shape[1] > 1:
                cur = ops.max_pool(cur, axis=1)
            else:
                cur = ops.reshape(cur, (cur.shape[0], cur.shape[2]))
            return self.head(cur, self.dropout_rng)
        x = cur
        for i, dec in enumerate(self.decoders):
            coarse_pos = levels[-1 - i][0]
            fine_pos, skip = levels[-2 - i]
            if skip is None:
                skip = Tensor(fine_pos)
            x = dec(coarse_pos, x, fine_pos, skip)
        return self.head(x, self.dropout_rng)


def forward(model: DANet, positions, features=None, strict: bool = True) -> Tensor:
    return model(positions, features, strict)


# -- symbolic walker --------------------------------------------------------------------

@dataclass
class LayerInfo:
    name: str
    kind: str
    points_in: int
    points_out: int
    k: int
    c_in: int
    c_out: int
    parameters: int
    flops: int
    iam_flops: int = 0
    naive: CostReport = field(default_factory=lambda: CostReport(0, 0, 0))
    reformulated: CostReport = field(default_factory=lambda: CostReport(0, 0, 0))

    @property
    def out_shape(self) -> tuple[int, int]:
        return (self.points_out, self.c_out)


def _daconv_block(centers: int, k: int, ci: int, cm: int, co: int):
    params = ci * cm * co + (ENC_DIM * PHI_HIDDEN + PHI_HIDDEN) + (PHI_HIDDEN * cm + cm) + 2 * co
    phi = centers * k * (ENC_DIM * PHI_HIDDEN + PHI_HIDDEN * cm)
    naive = count_cost(k, ci, cm, co, "naive")
    ref = count_cost(k, ci, cm, co, "reformulated")
    scale = lambda c: CostReport(centers * c.dynamic_weight_count, c.static_weight_count,
                                 centers * c.multiply_add_count)
    flops = phi + centers * ref.multiply_add_count
    return params, flops, scale(naive), scale(ref)


def walk(spec: NetworkSpec, n_points: int) -> list[LayerInfo]:
    """Per-layer shapes, parameter counts and multiply-add counts for one sample."""
    infos: list[LayerInfo] = []
    n, c = n_points, spec.in_features
    level_points, level_channels = [n], [c]
    for i, layer in enumerate(spec.encoders):
        centers = 1 if layer.is_global else min(layer.n_samples, n)
        k = n if layer.k is None else layer.k
        ci = 3 + c
        params = flops = iflops = 0
        if layer.use_iam:
            params += iam_parameter_count(ci, layer.r)
            iflops = iam_flops(ci, centers, k, layer.r)
            flops += iflops
        naive_total = ref_total = CostReport(0, 0, 0)
        c_block = ci
        for width in layer.widths:
            p, f, nv, rf = _daconv_block(centers, k, c_block, layer.c_mid, width)
            params += p
            flops += f
            naive_total += nv
            ref_total += rf
            c_block = width
        infos.append(LayerInfo(f"E{i + 1}", "encode", n, centers, k, ci, c_block,
                               params, flops, iflops, naive_total, ref_total))
        n, c = centers, c_block
        level_points.append(n)
        level_channels.append(c)
    for i, layer in enumerate(spec.decoders):
        level = len(spec.encoders) - 1 - i
        nf = level_points[level]
        skip = level_channels[level] if level_channels[level] > 0 else 3
        ci = c + skip
        params = 0
        flops = nf * 3 * c
        cc = ci
        for width in layer.widths[:-1]:
            params += cc * width + width + 2 * width
            flops += nf * cc * width
            cc = width
        p, f, nv, rf = _daconv_block(nf, layer.k, 3 + cc, layer.c_mid, layer.widths[-1])
        infos.append(LayerInfo(f"D{i + 1}", "decode", n, nf, layer.k, ci, layer.widths[-1],
                               params + p, flops + f, 0, nv, rf))
        n, c = nf, layer.widths[-1]
    w = spec.head.widths
    rows = 1 if spec.task == "classification" else n
    params = sum(w[j] * w[j + 1] + w[j + 1] for j in range(len(w) - 1)) + 2 * sum(w[1:-1])
    flops = rows * sum(w[j] * w[j + 1] for j in range(len(w) - 1))
    infos.append(LayerInfo("FC", "fc", n, rows, 0, c, w[-1], params, flops))
    return infos


def count_parameters(spec: NetworkSpec) -> int:
    return sum(info.parameters for info in walk(spec, 1024))


def count_flops(spec: NetworkSpec, n_points: int) -> int:
    return sum(info.flops for info in walk(spec, n_points))


def network_cost(spec: NetworkSpec, n_points: int, variant: str = "reformulated") -> CostReport:
    """DAConv weight counts (naive or reformulated) and total multiply-adds."""
    infos = walk(spec, n_points)
    total = CostReport(0, 0, 0)
    for info in infos:
        total += info.naive if variant == "naive" else info.reformulated
    return CostReport(total.dynamic_weight_count, total.static_weight_count,
                      sum(info.flops for info in infos))
