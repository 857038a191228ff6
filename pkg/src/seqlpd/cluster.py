"""Descriptor-space clustering and super-keyframe selection.

The place map is partitioned with K-means++ (Lloyd refinement, empty-cluster
repair), K is chosen by the Elbow method on the distortion curve, then grown
until every member sits within L2 distance D of its center.  Each cluster
exports a super keyframe (the member nearest the center, the "typical place")
and a KD-tree over member descriptors for fast in-cluster lookups.

All cluster math runs in float64; ties break toward the lower index at every
step so equal seeds give bitwise-equal results.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (EmptyInput, FormatError, InvalidCluster, InvalidK, InvalidParams,
                     IoError, ShapeError)
from .placemap import PlaceMap

_LPDC_MAGIC = b"LPDC"
_LPDC_VERSION = 1
_LPDC_DIM = 256


@dataclass(frozen=True)
class ClusterParams:
    """Knobs for elbow selection: D is the per-member distance ceiling."""

    D: float
    K_max: int = 25
    iters_max: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.D > 0.0:
            raise InvalidParams("D must be > 0")
        if self.K_max < 1:
            raise InvalidParams("K_max must be >= 1")
        if self.iters_max < 1:
            raise InvalidParams("iters_max must be >= 1")


@dataclass(frozen=True)
class Clustering:
    """A fixed K-partition: centers, per-entry assignment, final distortion.

    ``history`` holds the distortion after seeding and after every Lloyd
    iteration; it is non-increasing.
    """

    K: int
    centers: np.ndarray
    assignment: np.ndarray
    distortion: float
    history: tuple


@dataclass(frozen=True)
class ElbowResult:
    """Elbow selection output: the chosen clustering plus the D-constraint flag.

    ``constraint_ok`` is False when K hit K_max while some member still sat
    at distance >= D from its center (a flagged success, not an error).
    ``j_curve`` maps K (1-based position) to the best-of-restarts distortion.
    """

    K: int
    clustering: Clustering
    constraint_ok: bool
    j_curve: tuple


def _seed_centers(x: np.ndarray, k: int, rng) -> np.ndarray:
    """K-means++ seeding: first center uniform, the rest weighted by squared distance."""
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    taken = np.zeros(n, dtype=bool)
    taken[chosen[0]] = True
    for _ in range(1, k):
        total = float(d2.sum())
        if total > 0.0:
            j = int(rng.choice(n, p=d2 / total))
        else:
            j = int(np.flatnonzero(~taken)[0])
        chosen.append(j)
        taken[j] = True
        d2 = np.minimum(d2, ((x - x[j]) ** 2).sum(axis=1))
    return x[np.array(chosen, dtype=np.int64)].copy()


def kmeanspp(descriptors: np.ndarray, K: int, seed: int = 0,
             iters_max: int = 100) -> Clustering:
    """K-means++ seeding followed by Lloyd iterations until the assignment is fixed.

    An empty cluster is repaired by re-seeding its center at the point
    farthest from its own center (each repair consumes its point).  Raises
    InvalidK unless 1 <= K <= N.
    """
    x = np.ascontiguousarray(descriptors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInput("descriptor matrix must be (n, d) with n >= 1")
    n = x.shape[0]
    if not 1 <= K <= n:
        raise InvalidK(f"K={K} outside [1, {n}]")

    rng = np.random.default_rng(seed)
    centers = _seed_centers(x, K, rng)
    assign, d2 = kernels.kmeans_assign(x, centers)
    history = [float(d2.sum())]

    for _ in range(iters_max):
        new_centers = centers.copy()
        counts = np.bincount(assign, minlength=K)
        for k in range(K):
            if counts[k] > 0:
                new_centers[k] = x[assign == k].mean(axis=0)
        if (counts == 0).any():
            pool = d2.copy()
            for k in np.flatnonzero(counts == 0):
                j = int(np.argmax(pool))
                new_centers[k] = x[j]
                pool[j] = -1.0
        new_assign, new_d2 = kernels.kmeans_assign(x, new_centers)
        centers = new_centers
        history.append(float(new_d2.sum()))
        done = np.array_equal(new_assign, assign)
        assign, d2 = new_assign, new_d2
        if done:
            break

    return Clustering(K=K, centers=centers, assignment=assign,
                      distortion=history[-1], history=tuple(history))


def _best_of_restarts(x: np.ndarray, k: int, params: ClusterParams,
                      restarts: int = 3) -> Clustering:
    best = None
    for r in range(restarts):
        c = kmeanspp(x, k, seed=params.seed + 1000 * k + r, iters_max=params.iters_max)
        if best is None or c.distortion < best.distortion:
            best = c
    return best


def elbow_select(descriptors: np.ndarray, params: ClusterParams) -> ElbowResult:
    """Choose K by the Elbow method, then grow K until the D-constraint holds.

    Distortion J(K) is computed for K = 1..K_max (best of 3 seeded restarts
    each); the elbow is the K in [2, K_max-1] maximizing the discrete second
    difference J(K-1) - 2 J(K) + J(K+1), falling back to K=1 when that range
    is empty.  While any member's distance to its center is >= D and K < K_max,
    K is incremented.  Never raises on an unsatisfiable constraint; the result
    carries ``constraint_ok`` instead.
    """
    x = np.ascontiguousarray(descriptors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidParams("need at least 2 descriptors")
    n = x.shape[0]
    k_max = min(params.K_max, n)

    runs = {k: _best_of_restarts(x, k, params) for k in range(1, k_max + 1)}
    j_curve = tuple(runs[k].distortion for k in range(1, k_max + 1))

    if k_max >= 3:
        curv = [j_curve[k - 2] - 2.0 * j_curve[k - 1] + j_curve[k]
                for k in range(2, k_max)]
        k_star = 2 + int(np.argmax(np.asarray(curv)))
    else:
        k_star = 1

    def max_dist(c: Clustering) -> float:
        _, d2 = kernels.kmeans_assign(x, c.centers)
        return float(np.sqrt(d2.max()))

    k = k_star
    while max_dist(runs[k]) >= params.D and k < k_max:
        k += 1
    chosen = runs[k]
    return ElbowResult(K=k, clustering=chosen,
                       constraint_ok=max_dist(chosen) < params.D,
                       j_curve=j_curve)


class SuperKeyframes:
    """Per-cluster typical places and member KD-trees for coarse-to-fine matching."""

    def __init__(self, centers: np.ndarray, keyframes: np.ndarray, members: list,
                 descriptors: np.ndarray):
        self.centers = np.ascontiguousarray(centers, dtype=np.float64)
        self.keyframes = np.ascontiguousarray(keyframes, dtype=np.int64)
        self.members = [np.ascontiguousarray(m, dtype=np.int64) for m in members]
        self._desc = np.ascontiguousarray(descriptors, dtype=np.float64)
        self.keyframe_descriptors = self._desc[self.keyframes]
        self.trees = [kernels.kdtree_build(self._desc[m]) for m in self.members]

    @property
    def K(self) -> int:
        return len(self.members)

    def cluster_size(self, cluster_id: int) -> int:
        return self.members[cluster_id].shape[0]


def super_keyframes(pmap: PlaceMap, clustering: Clustering) -> SuperKeyframes:
    """Pick each cluster's keyframe (member nearest the center, ties to the
    lower entry index) and build the per-cluster descriptor KD-trees."""
    desc = pmap.descriptor_matrix().astype(np.float64)
    if desc.shape[0] != clustering.assignment.shape[0]:
        raise ShapeError(f"clustering covers {clustering.assignment.shape[0]} entries, "
                         f"map has {desc.shape[0]}")
    members = []
    keyframes = np.empty(clustering.K, dtype=np.int64)
    for k in range(clustering.K):
        m = np.flatnonzero(clustering.assignment == k).astype(np.int64)
        if m.shape[0] == 0:
            raise InvalidCluster(f"cluster {k} is empty")
        d2 = ((desc[m] - clustering.centers[k]) ** 2).sum(axis=1)
        keyframes[k] = m[int(np.argmin(d2))]
        members.append(m)
    return SuperKeyframes(clustering.centers, keyframes, members, desc)


def nearest_in_cluster(skf: SuperKeyframes, cluster_id: int, query_descriptor,
                       m: int) -> np.ndarray:
    """Entry indices of the m nearest members of one cluster (L2, ties by
    lower entry index); saturates at the cluster size."""
    if not 0 <= cluster_id < skf.K:
        raise InvalidCluster(f"cluster id {cluster_id} outside [0, {skf.K})")
    if m < 1:
        raise InvalidParams("m must be >= 1")
    q = np.asarray(query_descriptor, dtype=np.float64).reshape(1, -1)
    size = skf.cluster_size(cluster_id)
    local = kernels.kdtree_knn(skf.trees[cluster_id], q, min(m, size))[0]
    return skf.members[cluster_id][local]


def save_clusters(skf: SuperKeyframes, D: float, path) -> None:
    """Write the LPDC container.

    Layout (little-endian): magic "LPDC", u32 version=1, u32 K, f32 D; per
    cluster u32 keyframe entry index, u32 member count, member entry indices
    as u32; then centers as K x 256 f32.  KD-trees are rebuilt on load.
    """
    if skf.centers.shape[1] != _LPDC_DIM:
        raise FormatError(f"LPDC stores {_LPDC_DIM}-d centers, got {skf.centers.shape[1]}")
    try:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sIIf", _LPDC_MAGIC, _LPDC_VERSION, skf.K, D))
            for k in range(skf.K):
                mem = skf.members[k]
                fh.write(struct.pack("<II", int(skf.keyframes[k]), mem.shape[0]))
                fh.write(np.ascontiguousarray(mem, dtype="<u4").tobytes())
            fh.write(np.ascontiguousarray(skf.centers, dtype="<f4").tobytes())
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


def load_clusters(path, pmap: PlaceMap):
    """Read an LPDC file and rebuild SuperKeyframes against ``pmap``.

    Returns (skf, D).  Member indices must be in range, disjoint across
    clusters, and contain their keyframe; anything else raises FormatError.
    """
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

    magic, version, kk, d_thresh = struct.unpack("<4sIIf", take(16))
    if magic != _LPDC_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != _LPDC_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if kk < 1:
        raise FormatError(f"{path}: K must be >= 1")
    keyframes = np.empty(kk, dtype=np.int64)
    members = []
    seen = set()
    for k in range(kk):
        keyframe, count = struct.unpack("<II", take(8))
        if count == 0:
            raise FormatError(f"{path}: cluster {k} is empty")
        mem = np.frombuffer(take(4 * count), dtype="<u4").astype(np.int64)
        if mem.max() >= len(pmap):
            raise FormatError(f"{path}: member index {mem.max()} outside map of {len(pmap)}")
        if keyframe not in mem:
            raise FormatError(f"{path}: keyframe {keyframe} not a member of cluster {k}")
        overlap = seen.intersection(mem.tolist())
        if overlap:
            raise FormatError(f"{path}: entry {min(overlap)} in multiple clusters")
        seen.update(mem.tolist())
        keyframes[k] = keyframe
        members.append(mem)
    centers = np.frombuffer(take(4 * kk * _LPDC_DIM), dtype="<f4").reshape(kk, _LPDC_DIM)
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")
    desc = pmap.descriptor_matrix().astype(np.float64)
    if desc.shape[1] != _LPDC_DIM:
        raise FormatError(f"{path}: map dim {desc.shape[1]} != {_LPDC_DIM}")
    skf = SuperKeyframes(centers.astype(np.float64), keyframes, members, desc)
    return skf, float(d_thresh)
