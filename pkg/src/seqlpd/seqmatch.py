"""Coarse-to-fine loop detection: super-keyframe matching plus sequence search.

A query window (the last W descriptors of the live trajectory) is first
matched against the K super keyframes; members of the winning cluster expand
(+-W frames) into candidate reference runs; a velocity-bounded trajectory
search over each run's difference matrix yields the best (ref_end, velocity)
line, accepted by a best/second-best ratio test with an exclusion zone.

Trajectories are anchored at the newest query frame and projected backward
with slope v reference-frames-per-query-frame; all scores are mean L2
differences, so they live in [0, 2] for unit descriptors.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .cluster import SuperKeyframes
from .errors import (EmptyInput, EmptySuperKeyframes, InsufficientHistory,
                     InvalidParams, NoValidTrajectory, OutOfBounds, WindowTooLarge)
from .placemap import PlaceMap


@dataclass(frozen=True)
class MatchParams:
    """Window length, velocity grid, and acceptance threshold for sequence search.

    ``exclusion`` is the frame radius blanked around the best match when
    finding the second best; None means 2*W.
    """

    W: int = 10
    v_min: float = 0.8
    v_max: float = 1.2
    v_step: float = 0.1
    accept_ratio: float = 0.8
    exclusion: int = None
    mirror: bool = False

    def __post_init__(self):
        if self.W < 1:
            raise InvalidParams("W must be >= 1")
        if not 0.0 < self.v_min <= self.v_max:
            raise InvalidParams("need 0 < v_min <= v_max")
        if not self.v_step > 0.0:
            raise InvalidParams("v_step must be > 0")
        if not 0.0 < self.accept_ratio < 1.0:
            raise InvalidParams("accept_ratio must be in (0, 1)")
        if self.exclusion is not None and self.exclusion < 0:
            raise InvalidParams("exclusion must be >= 0")

    @property
    def exclusion_frames(self) -> int:
        return 2 * self.W if self.exclusion is None else self.exclusion

    def velocities(self) -> np.ndarray:
        n = int(math.floor((self.v_max - self.v_min) / self.v_step + 1e-9)) + 1
        return self.v_min + self.v_step * np.arange(n)


@dataclass(frozen=True)
class MatchResult:
    """Outcome of one loop-detection attempt at the newest query frame.

    ``ref_end`` is the map entry index matched to the newest query frame;
    ``accepted`` means the ratio test passed against ``second_best``.
    """

    ref_end: int
    velocity: float
    score: float
    accepted: bool
    cluster_id: int
    second_best: float


def difference_matrix(query_seq, ref_seq) -> np.ndarray:
    """Pairwise L2 distances, query frames as rows (oldest to newest)."""
    q = np.atleast_2d(np.asarray(query_seq, dtype=np.float64))
    r = np.atleast_2d(np.asarray(ref_seq, dtype=np.float64))
    if q.shape[0] == 0 or r.shape[0] == 0:
        raise EmptyInput("both sequences must be non-empty")
    return kernels.pairwise_l2(q, r)


def coarse_match(query, skf: SuperKeyframes) -> int:
    """Cluster whose super keyframe is nearest the query (ties to lower id)."""
    if skf.K < 1:
        raise EmptySuperKeyframes("no clusters")
    q = np.asarray(query, dtype=np.float64).ravel()
    d2 = ((skf.keyframe_descriptors - q) ** 2).sum(axis=1)
    return int(np.argmin(d2))


def _offset_grid(params: MatchParams) -> np.ndarray:
    vels = params.velocities()
    w = np.arange(params.W, dtype=np.float64)
    return np.floor(vels[:, None] * w[None, :] + 0.5).astype(np.int64)


def trajectory_score(m: np.ndarray, ref_end: int, v: float, w: int) -> float:
    """Mean difference along one trajectory line ending at ``ref_end``.

    Query row R-1-t pairs with reference column ref_end - round(v*t); any
    projected column outside the matrix raises OutOfBounds.
    """
    mat = np.asarray(m, dtype=np.float64)
    rows, cols = mat.shape
    if w > rows:
        raise WindowTooLarge(f"window {w} exceeds {rows} rows")
    if w < 1:
        raise InvalidParams("window must be >= 1")
    total = 0.0
    for t in range(w):
        col = ref_end - int(math.floor(v * t + 0.5))
        if not 0 <= col < cols:
            raise OutOfBounds(f"column {col} outside [0, {cols})")
        total += mat[rows - 1 - t, col]
    return total / w


def _grid_minima(mat: np.ndarray, params: MatchParams):
    """Best score and velocity index per reference end column (inf / -1 where
    no velocity stays in bounds)."""
    return kernels.trajectory_grid(mat, _offset_grid(params))


def sequence_search(m: np.ndarray, params: MatchParams):
    """Exhaustive minimum over all (ref_end, velocity) trajectory lines.

    Returns (ref_end, velocity, score, second_best_score); ties prefer the
    lower ref_end, then the lower velocity.  The second best is taken over
    columns outside the exclusion zone around the best (inf when none).
    """
    mat = np.ascontiguousarray(m, dtype=np.float64)
    if params.W > mat.shape[0]:
        raise WindowTooLarge(f"window {params.W} exceeds {mat.shape[0]} rows")
    scores, v_idx = _grid_minima(mat, params)
    if not np.isfinite(scores).any():
        raise NoValidTrajectory("no in-bounds trajectory")
    best = int(np.argmin(scores))
    vels = params.velocities()
    excl = params.exclusion_frames
    masked = scores.copy()
    masked[max(0, best - excl):best + excl + 1] = np.inf
    second = float(masked.min()) if np.isfinite(masked).any() else math.inf
    return best, float(vels[v_idx[best]]), float(scores[best]), second


def _candidate_runs(skf: SuperKeyframes, cluster_id: int, w: int):
    """Contiguous candidate frame runs: members expanded by +-W, clamped to
    the clustered (historical) portion of the map, split at gaps, and kept
    only when at least W long."""
    n_hist = 1 + max(int(m.max()) for m in skf.members)
    mask = np.zeros(n_hist, dtype=bool)
    for mi in skf.members[cluster_id]:
        mask[max(0, int(mi) - w):min(n_hist, int(mi) + w + 1)] = True
    cols = np.flatnonzero(mask)
    runs = []
    start = 0
    for i in range(1, cols.shape[0] + 1):
        if i == cols.shape[0] or cols[i] != cols[i - 1] + 1:
            run = cols[start:i]
            if run.shape[0] >= w:
                runs.append((int(run[0]), int(run[-1] + 1)))
            start = i
    return runs


def detect_loop(query_window, pmap: PlaceMap, skf: SuperKeyframes,
                params: MatchParams) -> MatchResult:
    """Coarse-to-fine loop detection for the newest query frame.

    The newest descriptor picks a cluster; sequence search runs over every
    candidate run of that cluster; the global best is accepted iff a second
    best exists outside the exclusion zone and best < accept_ratio * second.
    With ``params.mirror`` each run is also searched reversed, covering
    segments revisited in the opposite travel direction.
    """
    q = np.atleast_2d(np.asarray(query_window, dtype=np.float64))
    if q.shape[0] != params.W:
        raise InvalidParams(f"query window has {q.shape[0]} frames, expected {params.W}")
    cluster_id = coarse_match(q[-1], skf)
    runs = _candidate_runs(skf, cluster_id, params.W)
    if not runs:
        raise InsufficientHistory(f"no candidate run of length >= {params.W}")
    ref_desc = pmap.descriptor_matrix().astype(np.float64)

    all_cols = []
    all_scores = []
    all_vel = []
    for lo, hi in runs:
        sub = kernels.pairwise_l2(q, ref_desc[lo:hi])
        scores, v_idx = _grid_minima(sub, params)
        vels = params.velocities()
        vel = np.where(v_idx >= 0, vels[np.maximum(v_idx, 0)], np.nan)
        if params.mirror:
            r_scores, r_idx = _grid_minima(sub[:, ::-1], params)
            r_scores = r_scores[::-1]
            r_idx = r_idx[::-1]
            better = r_scores < scores
            scores = np.where(better, r_scores, scores)
            vel = np.where(better, np.where(r_idx >= 0, -vels[np.maximum(r_idx, 0)], np.nan), vel)
        all_cols.append(np.arange(lo, hi))
        all_scores.append(scores)
        all_vel.append(vel)
    cols = np.concatenate(all_cols)
    scores = np.concatenate(all_scores)
    vel = np.concatenate(all_vel)

    if not np.isfinite(scores).any():
        raise NoValidTrajectory("no in-bounds trajectory in any candidate run")
    best_i = int(np.argmin(scores))
    best_col = int(cols[best_i])
    best_score = float(scores[best_i])
    excl = params.exclusion_frames
    far = np.abs(cols - best_col) > excl
    second = float(scores[far].min()) if far.any() and np.isfinite(scores[far]).any() \
        else math.inf
    accepted = math.isfinite(second) and best_score < params.accept_ratio * second
    return MatchResult(ref_end=best_col, velocity=float(vel[best_i]), score=best_score,
                       accepted=bool(accepted), cluster_id=cluster_id, second_best=second)


def export_pgm(m: np.ndarray, path) -> None:
    """Plain-text PGM (P2) of a difference matrix, entries mapped linearly
    from [0, 2] to gray levels [255, 0]."""
    mat = np.clip(np.asarray(m, dtype=np.float64), 0.0, 2.0)
    pix = np.floor(255.0 * (2.0 - mat) / 2.0 + 0.5).astype(np.int64)
    rows, cols = pix.shape
    lines = ["P2", f"{cols} {rows}", "255"]
    lines.extend(" ".join(str(v) for v in row) for row in pix)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def export_csv(m: np.ndarray, path) -> None:
    """Difference matrix as comma-separated rows."""
    np.savetxt(path, np.asarray(m, dtype=np.float64), fmt="%.10g", delimiter=",")
