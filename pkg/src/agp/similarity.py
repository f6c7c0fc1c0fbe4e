"""Pair-counting set similarity between prototype clouds and the one-shot
classification rule built on it.

Two points "intersect" when they lie within ``radius`` of each other. Every
ordered pair ``(a, b)`` of the cross product is counted either as an
intersection or as a difference, so ``intersections + diff == |A| * |B|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_CELL_SLACK = 1.0 + 1e-9
_KEY_OFFSET = 1 << 30
_KEY_SHIFT = 1 << 31
_NEIGHBOURS = np.array([(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)], dtype=np.int64)


@dataclass(frozen=True)
class SimilarityParams:
    radius: float = 1.6
    beta: float = 1.4
    shift_px: float = 3.0
    rotations_deg: tuple = (15.0, -15.0, 25.0, -25.0)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")
        if not self.beta > 1:
            raise ValueError(f"beta must be > 1, got {self.beta}")
        object.__setattr__(self, "rotations_deg", tuple(float(r) for r in self.rotations_deg))


@dataclass(frozen=True)
class SimilarityScore:
    value: float
    intersections: int
    symmetric_diff: int
    probe: str = field(default="identity", compare=False)


def _as_cloud(pc) -> np.ndarray:
    pts = np.asarray(pc, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
        raise ValueError("point cloud must be a non-empty (n, 2) array")
    return pts


class PairCounter:
    """Uniform spatial hash over a fixed cloud ``B`` answering
    "how many pairs (a, b) lie within radius" for arbitrary query clouds."""

    def __init__(self, points, radius: float):
        if not radius > 0:
            raise ValueError(f"radius must be > 0, got {radius}")
        self.points = _as_cloud(points)
        self.radius = float(radius)
        self._cell = self.radius * _CELL_SLACK
        keys = self._keys(self._cells(self.points))
        order = np.argsort(keys, kind="stable")
        self._keys_sorted = keys[order]
        self._sorted_pts = self.points[order]

    def _cells(self, pts):
        return np.floor(pts / self._cell).astype(np.int64)

    @staticmethod
    def _keys(cells):
        return (cells[..., 0] + _KEY_OFFSET) * _KEY_SHIFT + (cells[..., 1] + _KEY_OFFSET)

    def count(self, query) -> int:
        q = _as_cloud(query)
        qcells = self._cells(q)
        keys = self._keys(qcells[None, :, :] + _NEIGHBOURS[:, None, :]).ravel()
        lo = np.searchsorted(self._keys_sorted, keys, side="left")
        hi = np.searchsorted(self._keys_sorted, keys, side="right")
        n_cand = hi - lo
        total = int(n_cand.sum())
        if total == 0:
            return 0
        owner = np.repeat(np.tile(np.arange(len(q)), len(_NEIGHBOURS)), n_cand)
        first = np.repeat(lo - (np.cumsum(n_cand) - n_cand), n_cand)
        cand = first + np.arange(total)
        d = q[owner] - self._sorted_pts[cand]
        dist = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1])
        return int(np.count_nonzero(dist <= self.radius))


def count_intersections(A, B, r: float) -> int:
    return PairCounter(B, r).count(A)


def symmetric_diff_count(A, B, r: float) -> int:
    A, B = _as_cloud(A), _as_cloud(B)
    return len(A) * len(B) - count_intersections(A, B, r)


def _make_score(inter, n_pairs, beta, probe="identity"):
    diff = n_pairs - inter
    return SimilarityScore(inter - beta * diff, inter, diff, probe)


def score(A, B, params: SimilarityParams = SimilarityParams()) -> SimilarityScore:
    A, B = _as_cloud(A), _as_cloud(B)
    # count from the smaller side; the pair count is symmetric
    if len(A) > len(B):
        A, B = B, A
    inter = PairCounter(B, params.radius).count(A)
    return _make_score(inter, len(A) * len(B), params.beta)


def rotate(points, degrees: float, center=None) -> np.ndarray:
    pts = _as_cloud(points)
    c = pts.mean(axis=0) if center is None else np.asarray(center, dtype=np.float64)
    th = math.radians(degrees)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    return (pts - c) @ rot.T + c


def alignment_probes(A, params: SimilarityParams):
    """Yield ``(label, moved_A)``: identity, four axis shifts, then rotations
    about A's centroid."""
    A = _as_cloud(A)
    s = params.shift_px
    yield "identity", A
    for label, delta in (("up", (0.0, -s)), ("down", (0.0, s)), ("left", (-s, 0.0)), ("right", (s, 0.0))):
        yield label, A + np.asarray(delta)
    for deg in params.rotations_deg:
        yield f"rot{deg:+g}", rotate(A, deg)


def best_aligned_score(A, B, params: SimilarityParams = SimilarityParams()) -> SimilarityScore:
    """Best score of B against the probe variants of A; the first maximizer
    in probe order wins ties."""
    counter = PairCounter(B, params.radius)
    n_pairs = len(_as_cloud(A)) * len(counter.points)
    best = None
    for label, moved in alignment_probes(A, params):
        cand = _make_score(counter.count(moved), n_pairs, params.beta, label)
        if best is None or cand.value > best.value:
            best = cand
    return best


def classify(query, supports, params: SimilarityParams = SimilarityParams()) -> int:
    """Index of the support whose points score highest against the query's.

    ``query``/``supports`` may be prototypes (anything with ``.points``) or
    raw clouds. Ties resolve to the lowest index.
    """
    if len(supports) == 0:
        raise ValueError("classify needs at least one support")
    q = getattr(query, "points", query)
    best_i, best_v = 0, -math.inf
    for i, sup in enumerate(supports):
        v = best_aligned_score(q, getattr(sup, "points", sup), params).value
        if v > best_v:
            best_i, best_v = i, v
    return best_i
