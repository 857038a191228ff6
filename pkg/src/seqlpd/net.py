"""Descriptor network: forward inference and loss evaluation.

The network maps a normalized submap plus its per-point features to a
256-d unit-norm global descriptor:

    coords -> input transform (3x3) -> [x', y', z', dz_max, z_var, s2d, l2d]
    -> shared per-point MLP -> graph aggregation over feature-space kNN
    -> shared MLP -> NetVLAD pooling -> projection -> L2 normalize

Inference runs in float32; the NetVLAD accumulation runs in float64 so
that permutations of the input rows perturb the output far below test
tolerances.  There is no training here: weights come from a file or from
a seeded random initializer, and a weight-free histogram baseline covers
pipeline tests.  Descriptors are plain float32 numpy vectors.
"""

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._accel import thread_count
from . import kernels
from .cloud import Submap
from .errors import EmptyInput, FormatError, InvalidParams, IoError, NormError, ShapeError
from .features import FEATURE_DIM

DESCRIPTOR_DIM = 256
INPUT_DIM = 3 + FEATURE_DIM

_LPDW_MAGIC = b"LPDW"
_LPDW_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    """Layer widths and aggregation sizes of the descriptor network."""

    k_graph: int = 20
    vlad_clusters: int = 64
    point_mlp: tuple = (64, 64)
    edge_mlp: tuple = (64, 128)
    post_mlp: tuple = (1024,)
    tnet_mlp: tuple = (64, 128, 256)
    tnet_fc: tuple = (128, 64)
    descriptor_dim: int = DESCRIPTOR_DIM

    def __post_init__(self):
        if self.k_graph < 1:
            raise InvalidParams("k_graph must be >= 1")
        if self.vlad_clusters < 1:
            raise InvalidParams("vlad_clusters must be >= 1")

    @property
    def feature_width(self) -> int:
        return self.point_mlp[-1]

    @property
    def vlad_width(self) -> int:
        return self.post_mlp[-1]


def _chain(shapes: dict, prefix: str, d_in: int, widths) -> int:
    for i, w in enumerate(widths):
        shapes[f"{prefix}.{i}.w"] = (d_in, w)
        shapes[f"{prefix}.{i}.b"] = (w,)
        d_in = w
    return d_in


def expected_shapes(config: NetConfig) -> dict:
    """Tensor name -> shape map required by ``config``, in canonical order."""
    shapes = {}
    for prefix, d in (("tin", 3), ("tfeat", config.feature_width)):
        last = _chain(shapes, f"{prefix}.mlp", d, config.tnet_mlp)
        last = _chain(shapes, f"{prefix}.fc", last, config.tnet_fc)
        shapes[f"{prefix}.out.w"] = (last, d * d)
        shapes[f"{prefix}.out.b"] = (d * d,)
    _chain(shapes, "point", INPUT_DIM, config.point_mlp)
    _chain(shapes, "edge", 2 * config.feature_width, config.edge_mlp)
    _chain(shapes, "post", config.edge_mlp[-1], config.post_mlp)
    d = config.vlad_width
    c = config.vlad_clusters
    shapes["vlad.assign.w"] = (d, c)
    shapes["vlad.assign.b"] = (c,)
    shapes["vlad.centers"] = (c, d)
    shapes["vlad.proj.w"] = (c * d, config.descriptor_dim)
    shapes["vlad.proj.b"] = (config.descriptor_dim,)
    return shapes


class WeightSet:
    """Named float32 tensors; immutable once constructed and safe to share."""

    def __init__(self, tensors: dict):
        self._tensors = {name: np.ascontiguousarray(t, dtype=np.float32)
                         for name, t in tensors.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._tensors[name]
        except KeyError:
            raise ShapeError(f"missing tensor '{name}'") from None

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def validate(self, config: NetConfig) -> None:
        """Raise ShapeError unless the tensor names and shapes match ``config`` exactly."""
        want = expected_shapes(config)
        for name, shape in want.items():
            if name not in self._tensors:
                raise ShapeError(f"missing tensor '{name}'")
            got = self._tensors[name].shape
            if tuple(got) != tuple(shape):
                raise ShapeError(f"tensor '{name}' has shape {tuple(got)}, expected {tuple(shape)}")
        for name in self._tensors:
            if name not in want:
                raise ShapeError(f"unexpected tensor '{name}'")


def save_weights(ws: WeightSet, path) -> None:
    """Write the LPDW container (magic, version, count, then name/rank/dims/float32 payload)."""
    try:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sII", _LPDW_MAGIC, _LPDW_VERSION, len(ws.names())))
            for name, tensor in ws.items():
                raw = name.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<B", tensor.ndim))
                fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
                fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


def load_weights(path, config: NetConfig = None) -> WeightSet:
    """Read an LPDW file; validates shapes against ``config`` when given."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc

    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise FormatError(f"{path}: truncated at byte {off}")
        out = blob[off:off + n]
        off += n
        return out

    magic, version, count = struct.unpack("<4sII", take(12))
    if magic != _LPDW_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != _LPDW_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        if name in tensors:
            raise FormatError(f"{path}: duplicate tensor '{name}'")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n_items = 1
        for d in dims:
            n_items *= d
        payload = take(4 * n_items)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")
    ws = WeightSet(tensors)
    if config is not None:
        ws.validate(config)
    return ws


def random_weights(config: NetConfig, seed: int) -> WeightSet:
    """Seeded uniform [-0.05, 0.05] tensors; transform-net output biases start at identity."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in expected_shapes(config).items():
        tensors[name] = rng.uniform(-0.05, 0.05, size=shape).astype(np.float32)
    tensors["tin.out.b"] = np.eye(3, dtype=np.float32).ravel()
    f = config.feature_width
    tensors["tfeat.out.b"] = np.eye(f, dtype=np.float32).ravel()
    return WeightSet(tensors)


def _dense(x: np.ndarray, ws: WeightSet, name: str, relu: bool = True) -> np.ndarray:
    w = ws[f"{name}.w"]
    b = ws[f"{name}.b"]
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"tensor '{name}.w' expects input width {w.shape[0]}, got {x.shape[-1]}")
    out = x @ w + b
    return np.maximum(out, np.float32(0.0)) if relu else out


def _mlp(x: np.ndarray, ws: WeightSet, prefix: str, n_layers: int) -> np.ndarray:
    for i in range(n_layers):
        x = _dense(x, ws, f"{prefix}.{i}")
    return x


def _transform(x: np.ndarray, ws: WeightSet, prefix: str, n_mlp: int, n_fc: int) -> np.ndarray:
    """Shared transform net: per-point MLP, max-pool, FC head, square matrix out."""
    if x.shape[0] < 1:
        raise EmptyInput("transform net needs at least one row")
    h = _mlp(x.astype(np.float32, copy=False), ws, f"{prefix}.mlp", n_mlp)
    pooled = h.max(axis=0)
    g = _mlp(pooled, ws, f"{prefix}.fc", n_fc)
    out = _dense(g, ws, f"{prefix}.out", relu=False)
    d = x.shape[1]
    if out.shape[0] != d * d:
        raise ShapeError(f"tensor '{prefix}.out.w' produces {out.shape[0]} values, expected {d * d}")
    return out.reshape(d, d)


def input_transform(points: np.ndarray, ws: WeightSet, config: NetConfig = NetConfig()) -> np.ndarray:
    """3x3 coordinate alignment matrix (applied by right-multiplication)."""
    pts = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    return _transform(pts, ws, "tin", len(config.tnet_mlp), len(config.tnet_fc))


def feature_transform(feats: np.ndarray, ws: WeightSet, config: NetConfig = NetConfig()) -> np.ndarray:
    """FxF feature-space alignment matrix (applied by right-multiplication)."""
    x = np.asarray(feats, dtype=np.float32)
    return _transform(x, ws, "tfeat", len(config.tnet_mlp), len(config.tnet_fc))


def graph_aggregate(feats: np.ndarray, k_graph: int, ws: WeightSet,
                    config: NetConfig = NetConfig()) -> np.ndarray:
    """Neighborhood aggregation over the feature-space kNN graph.

    Neighbors are found in the transformed feature space (a point is never
    its own neighbor; saturates at n-1), edges are built in the original
    space as concat(p_i, p_i - p_j), passed through the shared edge MLP and
    max-pooled per point.  A single row degenerates to one self-edge with a
    zero difference part.
    """
    x = np.asarray(feats, dtype=np.float32)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeError("feature matrix must be (n, F) with n >= 1")
    n, f = x.shape
    t = feature_transform(x, ws, config)
    transformed = x @ t
    kk = min(k_graph, n - 1)
    if kk == 0:
        edges = np.concatenate([x, np.zeros_like(x)], axis=1)[:, None, :]
    else:
        nbr = kernels.feature_knn(transformed, kk)
        diff = x[:, None, :] - x[nbr]
        edges = np.concatenate([np.broadcast_to(x[:, None, :], diff.shape), diff], axis=2)
    flat = edges.reshape(-1, 2 * f).astype(np.float32, copy=False)
    out = _mlp(flat, ws, "edge", len(config.edge_mlp))
    out = out.reshape(n, edges.shape[1], -1)
    return out.max(axis=1)


def netvlad(feats: np.ndarray, ws: WeightSet, config: NetConfig = NetConfig()) -> np.ndarray:
    """Soft-assign rows to cluster centers, pool residuals, project to the unit descriptor.

    Residual accumulation runs in float64 so the result is invariant to row
    permutations well below 1e-6.
    """
    x = np.asarray(feats, dtype=np.float32)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeError("feature matrix must be (n, F') with n >= 1")
    centers = ws["vlad.centers"]
    if x.shape[1] != centers.shape[1]:
        raise ShapeError(f"tensor 'vlad.centers' expects width {centers.shape[1]}, got {x.shape[1]}")
    logits = _dense(x, ws, "vlad.assign", relu=False).astype(np.float64)
    logits -= logits.max(axis=1, keepdims=True)
    a = np.exp(logits)
    a /= a.sum(axis=1, keepdims=True)
    x64 = x.astype(np.float64)
    vlad = a.T @ x64 - a.sum(axis=0)[:, None] * centers.astype(np.float64)
    norms = np.linalg.norm(vlad, axis=1)
    nonzero = norms > 0.0
    vlad[nonzero] /= norms[nonzero, None]
    flat = vlad.ravel()
    proj_w = ws["vlad.proj.w"]
    if flat.shape[0] != proj_w.shape[0]:
        raise ShapeError(f"tensor 'vlad.proj.w' expects input width {proj_w.shape[0]}, "
                         f"got {flat.shape[0]}")
    out = flat @ proj_w.astype(np.float64) + ws["vlad.proj.b"].astype(np.float64)
    norm = float(np.linalg.norm(out))
    if norm == 0.0:
        raise NormError("projection produced a zero vector")
    return (out / norm).astype(np.float32)


def describe(submap: Submap, lf: np.ndarray, ws: WeightSet,
             config: NetConfig = NetConfig()) -> np.ndarray:
    """Full forward pass from a normalized submap to its global descriptor."""
    lf = np.asarray(lf, dtype=np.float32)
    if lf.ndim != 2 or lf.shape[1] != FEATURE_DIM:
        raise ShapeError(f"feature matrix must be (n, {FEATURE_DIM})")
    if lf.shape[0] != len(submap):
        raise ShapeError(f"{len(submap)} points vs {lf.shape[0]} feature rows")
    ws.validate(config)
    coords = submap.points.astype(np.float32)
    t_in = input_transform(coords, ws, config)
    aligned = coords @ t_in
    inp = np.concatenate([aligned, lf], axis=1)
    h = _mlp(inp, ws, "point", len(config.point_mlp))
    g = graph_aggregate(h, config.k_graph, ws, config)
    h2 = _mlp(g, ws, "post", len(config.post_mlp))
    return netvlad(h2, ws, config)


# histogram layout of the weight-free baseline: value range and bin count per channel
_BASELINE_BINS = (
    ((-1.0, 1.0), 64),  # z coordinate
    ((0.0, 2.0), 48),   # dz_max
    ((0.0, 1.0), 48),   # z_var
    ((0.0, 2.0), 48),   # s2d
    ((0.0, 1.0), 48),   # l2d
)


def baseline_descriptor(submap: Submap, lf: np.ndarray) -> np.ndarray:
    """Weight-free 256-d descriptor: concatenated fixed-bin histograms, L2-normalized.

    Bins cover z plus the four local features; counts are square-root damped
    before normalization so no single crowded bin dominates the vector.
    Deterministic and invariant to point order.
    """
    lf = np.asarray(lf, dtype=np.float64)
    if lf.shape[0] != len(submap):
        raise ShapeError(f"{len(submap)} points vs {lf.shape[0]} feature rows")
    channels = [submap.points[:, 2], lf[:, 0], lf[:, 1], lf[:, 2], lf[:, 3]]
    parts = []
    for (values, ((lo, hi), bins)) in zip(channels, _BASELINE_BINS):
        clipped = np.clip(values, lo, hi)
        counts, _ = np.histogram(clipped, bins=bins, range=(lo, hi))
        parts.append(counts.astype(np.float64))
    vec = np.sqrt(np.concatenate(parts))
    vec /= np.linalg.norm(vec)
    return vec.astype(np.float32)


def describe_many(items, ws: WeightSet = None, config: NetConfig = NetConfig()) -> list:
    """Descriptors for (submap, features) pairs; pool size honors SEQLPD_THREADS.

    Work splits across whole submaps only, so results are identical for any
    worker count.  ``ws=None`` selects the weight-free baseline.
    """
    items = list(items)
    if ws is None:
        fn = lambda pair: baseline_descriptor(pair[0], pair[1])
    else:
        fn = lambda pair: describe(pair[0], pair[1], ws, config)
    workers = min(thread_count(), max(1, len(items)))
    if workers == 1:
        return [fn(pair) for pair in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def lazy_quadruplet_loss(d_anchor, positives, negatives, neg_star,
                         alpha: float = 0.5, beta: float = 0.2) -> float:
    """Hinge loss over an anchor, positives, negatives and an extra negative.

    With squared L2 distances d, the value is
    max_j [alpha + min_pos - d(anchor, neg_j)]+  +
    max_k [beta + min_pos - d(neg*, neg_k)]+ .
    """
    anchor = np.asarray(d_anchor, dtype=np.float64)
    pos = np.asarray(positives, dtype=np.float64)
    neg = np.asarray(negatives, dtype=np.float64)
    star = np.asarray(neg_star, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[0] < 1:
        raise EmptyInput("need at least one positive")
    if neg.ndim != 2 or neg.shape[0] < 1:
        raise EmptyInput("need at least one negative")
    min_pos = float(((pos - anchor) ** 2).sum(axis=1).min())
    d_neg = ((neg - anchor) ** 2).sum(axis=1)
    d_star = ((neg - star) ** 2).sum(axis=1)
    first = float(np.maximum(alpha + min_pos - d_neg, 0.0).max())
    second = float(np.maximum(beta + min_pos - d_star, 0.0).max())
    return first + second
