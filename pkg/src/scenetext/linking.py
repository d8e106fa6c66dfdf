"""Pairwise candidate features, the weighted distance and single-link clustering."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .descriptors import CharacterCandidate

FEATURE_NAMES = (
    "spatial_distance",
    "width_diff",
    "height_diff",
    "top_alignment",
    "bottom_alignment",
    "color_diff",
    "stroke_diff",
)
N_FEATURES = len(FEATURE_NAMES)


@dataclass(frozen=True)
class MetricParams:
    weights: tuple[float, ...]
    link_threshold: float

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.weights) != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} weights, got {len(self.weights)}")
        if not np.isfinite(self.link_threshold):
            raise ValueError("link threshold must be finite")

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([[-self.link_threshold], self.weights])

    @classmethod
    def from_theta(cls, theta) -> "MetricParams":
        theta = np.asarray(theta, dtype=np.float64)
        return cls(weights=tuple(theta[1:]), link_threshold=float(-theta[0]))


def _arrays(cands: Sequence[CharacterCandidate]):
    box = np.array([c.bbox for c in cands], dtype=np.float64).reshape(-1, 4)
    color = np.array([c.color for c in cands], dtype=np.float64).reshape(-1, 3)
    stroke = np.array([c.stroke_mean for c in cands], dtype=np.float64)
    return box, color, stroke


def _ratio(num, den):
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def pair_feature_matrix(cands: Sequence[CharacterCandidate]) -> np.ndarray:
    """All-pairs feature tensor of shape (n, n, 7), symmetric in its first two axes.

    The horizontal term is the gap between bounding-box centers normalized by
    the wider box. Alignment angles use the same gap; a zero gap with a
    nonzero vertical offset gives pi/2.
    """
    box, color, stroke = _arrays(cands)
    x, y, w, h = box.T
    cx = x + 0.5 * w
    gap = np.abs(cx[:, None] - cx[None, :])
    wmax = np.maximum(w[:, None], w[None, :])
    hmax = np.maximum(h[:, None], h[None, :])
    smax = np.maximum(stroke[:, None], stroke[None, :])
    feats = np.empty((len(cands), len(cands), N_FEATURES))
    feats[..., 0] = gap / wmax
    feats[..., 1] = np.abs(w[:, None] - w[None, :]) / wmax
    feats[..., 2] = np.abs(h[:, None] - h[None, :]) / hmax
    feats[..., 3] = np.arctan2(np.abs(y[:, None] - y[None, :]), gap)
    bottom = y + h
    feats[..., 4] = np.arctan2(np.abs(bottom[:, None] - bottom[None, :]), gap)
    feats[..., 5] = np.sqrt(((color[:, None, :] - color[None, :, :]) ** 2).sum(axis=2))
    feats[..., 6] = _ratio(np.abs(stroke[:, None] - stroke[None, :]), smax)
    return feats


def pair_features(u: CharacterCandidate, v: CharacterCandidate) -> np.ndarray:
    return pair_feature_matrix([u, v])[0, 1]


def distance(params: MetricParams, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != N_FEATURES:
        raise ValueError(f"feature dimension {x.shape[-1]} does not match {N_FEATURES} weights")
    return float(np.dot(params.weights, x))


def distance_matrix(params: MetricParams, feats: np.ndarray) -> np.ndarray:
    if feats.shape[-1] != N_FEATURES:
        raise ValueError("feature dimension mismatch")
    return feats @ np.asarray(params.weights)


@dataclass(frozen=True)
class Merge:
    left: tuple[int, ...]
    right: tuple[int, ...]
    distance: float


@dataclass
class TextCandidate:
    """A top-level single-link cluster.

    ``indices`` refer to the candidate list that was clustered; ``left`` and
    ``right`` are the two direct subclusters (empty for singletons).
    """

    members: list[CharacterCandidate]
    indices: tuple[int, ...]
    left: tuple[int, ...] = ()
    right: tuple[int, ...] = ()
    merge_distance: float = float("nan")
    score: float = 0.0
    merges: list[Merge] = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        return union_box([m.bbox for m in self.members])


def union_box(boxes) -> tuple[int, int, int, int]:
    b = np.asarray(boxes, dtype=np.int64).reshape(-1, 4)
    x0 = int(b[:, 0].min())
    y0 = int(b[:, 1].min())
    x1 = int((b[:, 0] + b[:, 2]).max())
    y1 = int((b[:, 1] + b[:, 3]).max())
    return x0, y0, x1 - x0, y1 - y0


def single_link(dist: np.ndarray, threshold: float) -> tuple[list[list[int]], list[Merge]]:
    """Agglomerative single-link clustering on a symmetric distance matrix.

    Clusters are identified by their smallest member index. Each step merges
    the pair with the smallest single-link distance, breaking ties by the
    lower pair of representative indices, and stops once that distance
    exceeds ``threshold``. Returns the top-level clusters (sorted by smallest
    member) and the merge sequence.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if dist.shape != (n, n):
        raise ValueError("distance matrix must be square")
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    merges: list[Merge] = []
    if n < 2:
        return [members[i] for i in range(n)], merges

    d = dist.copy()
    np.fill_diagonal(d, np.inf)
    active = np.ones(n, bool)
    nn = np.argmin(d, axis=1)
    nd = d[np.arange(n), nn]

    while True:
        rows = np.flatnonzero(active)
        if rows.size < 2:
            break
        best = nd[rows].min()
        if not best <= threshold:
            break
        tied = rows[nd[rows] == best]
        lo = np.minimum(tied, nn[tied])
        hi = np.maximum(tied, nn[tied])
        pick = np.lexsort((hi, lo))[0]
        a, b = int(lo[pick]), int(hi[pick])

        merges.append(Merge(tuple(members[a]), tuple(members[b]), float(best)))
        members[a] = sorted(members[a] + members.pop(b))

        row = np.minimum(d[a], d[b])
        row[a] = np.inf
        d[a, :] = row
        d[:, a] = row
        d[b, :] = np.inf
        d[:, b] = np.inf
        active[b] = False

        stale = active & ((nn == a) | (nn == b))
        stale[a] = True
        better = active & ~stale & ((row < nd) | ((row == nd) & (a < nn)))
        nn[better] = a
        nd[better] = row[better]
        for r in np.flatnonzero(stale):
            j = int(np.argmin(d[r]))
            nn[r] = j
            nd[r] = d[r, j]
        nd[~active] = np.inf
    tops = [members[i] for i in sorted(members)]
    return tops, merges


def build_text_candidates(cands: Sequence[CharacterCandidate], tops, merges) -> list[TextCandidate]:
    last: dict[frozenset, Merge] = {}
    for m in merges:
        last[frozenset(m.left + m.right)] = m
    by_cluster: dict[int, list[Merge]] = {}
    owner = {}
    for k, top in enumerate(tops):
        for i in top:
            owner[i] = k
    for m in merges:
        by_cluster.setdefault(owner[m.left[0]], []).append(m)
    out = []
    for k, top in enumerate(tops):
        final = last.get(frozenset(top))
        tc = TextCandidate(
            members=[cands[i] for i in top],
            indices=tuple(top),
            merges=by_cluster.get(k, []),
        )
        if final is not None:
            tc.left, tc.right = final.left, final.right
            tc.merge_distance = final.distance
        out.append(tc)
    return out


def single_link_cluster(cands: Sequence[CharacterCandidate], params: MetricParams,
                        feats: np.ndarray | None = None) -> list[TextCandidate]:
    """Cluster candidates into text candidates under the learned metric."""
    if len(cands) == 0:
        return []
    if feats is None:
        feats = pair_feature_matrix(cands)
    dist = distance_matrix(params, feats)
    tops, merges = single_link(dist, params.link_threshold)
    return build_text_candidates(cands, tops, merges)
