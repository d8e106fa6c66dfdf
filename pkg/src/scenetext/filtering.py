"""Character-level features, Bayesian text-candidate elimination and word partitioning."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .boosting import StumpEnsemble
from .descriptors import CharacterCandidate
from .linking import TextCandidate, union_box

CHAR_FEATURES = ("smoothness", "stroke_over_height", "stroke_var", "height", "width", "aspect")
TEXT_BASE = ("height", "width", "stroke_mean", "aspect", "color1", "color2", "color3")
TEXT_FEATURES = tuple(f"cv_{n}" for n in TEXT_BASE) + ("member_count",)
SPACING_FEATURES = ("gap_over_height", "width_diff", "member_count")

# glyphs too thin to vote for text; labeled negative when training the character classifier
THIN_CHARS = frozenset("ijlI1|!.,:;'")


def character_features(c: CharacterCandidate) -> np.ndarray:
    return np.array([c.smoothness, c.stroke_mean / c.h, c.stroke_var, c.h, c.w, c.aspect])


def character_feature_matrix(cands: Sequence[CharacterCandidate]) -> np.ndarray:
    return np.array([character_features(c) for c in cands]).reshape(-1, len(CHAR_FEATURES))


def _log_likelihoods(m: int, n: int, p: float) -> tuple[float, float]:
    if m < 2:
        raise ValueError(f"text candidates need at least two members, got m={m}")
    if not 0 <= n <= m:
        raise ValueError(f"need 0 <= n <= m, got n={n}, m={m}")
    if not 0 < p < 1:
        raise ValueError(f"precision must lie in (0, 1), got {p}")
    lp, lq = math.log(p), math.log1p(-p)
    return (m - n) * lp + n * lq, (m - n) * lq + n * lp


def posterior_nontext(m: int, n: int, p: float, prior_text: float) -> float:
    """P(non-text | n of m members voted non-character by a classifier of precision p)."""
    if not 0 <= prior_text <= 1:
        raise ValueError("prior must lie in [0, 1]")
    log_text, log_non = _log_likelihoods(m, n, p)
    if prior_text == 0:
        return 1.0
    if prior_text == 1:
        return 0.0
    a = log_text + math.log(prior_text)
    b = log_non + math.log1p(-prior_text)
    return math.exp(b - np.logaddexp(a, b))


def posterior_text(m: int, n: int, p: float, prior_text: float) -> float:
    if not 0 <= prior_text <= 1:
        raise ValueError("prior must lie in [0, 1]")
    log_text, log_non = _log_likelihoods(m, n, p)
    if prior_text == 0:
        return 0.0
    if prior_text == 1:
        return 1.0
    a = log_text + math.log(prior_text)
    b = log_non + math.log1p(-prior_text)
    return math.exp(a - np.logaddexp(a, b))


@dataclass
class SizePriorTable:
    """Per-size text priors ``N*_s / N_s``; unseen sizes use the largest observed size."""

    counts: dict[int, tuple[int, int]]

    def __post_init__(self):
        if not self.counts:
            raise ValueError("empty prior table")
        for s, (total, text) in self.counts.items():
            if total <= 0 or not 0 <= text <= total:
                raise ValueError(f"invalid counts for size {s}: {total}, {text}")

    def prior(self, size: int) -> float:
        total, text = self.counts.get(size, self.counts[max(self.counts)])
        return text / total

    @property
    def fallback(self) -> float:
        return self.prior(max(self.counts))

    def __getitem__(self, size: int) -> float:
        return self.prior(size)


def estimate_size_priors(samples: Iterable[tuple[int, bool]]) -> SizePriorTable:
    """Tally ``(size, is_text)`` observations into a prior table."""
    counts: dict[int, list[int]] = {}
    for size, is_text in samples:
        c = counts.setdefault(int(size), [0, 0])
        c[0] += 1
        c[1] += bool(is_text)
    if not counts:
        raise ValueError("no labeled text candidates")
    return SizePriorTable({s: (t, k) for s, (t, k) in sorted(counts.items())})


@dataclass(frozen=True)
class EliminationConfig:
    epsilon: float = 0.995
    precision: float | None = None

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.precision is not None and not 0 < self.precision < 1:
            raise ValueError("precision must lie in (0, 1)")


def count_noncharacters(t: TextCandidate, char_clf: StumpEnsemble) -> int:
    pred = char_clf.predict(character_feature_matrix(t.members))
    return int(np.sum(np.asarray(pred) < 0))


def nontext_posterior_of(t: TextCandidate, char_clf: StumpEnsemble, priors: SizePriorTable,
                         cfg: EliminationConfig = EliminationConfig()) -> float:
    p = cfg.precision if cfg.precision is not None else char_clf.validation_precision
    if p is None:
        raise ValueError("character classifier has no measured precision")
    return posterior_nontext(len(t), count_noncharacters(t, char_clf), p, priors.prior(len(t)))


def eliminate(cands: Sequence[TextCandidate], char_clf: StumpEnsemble, priors: SizePriorTable,
              cfg: EliminationConfig = EliminationConfig()) -> list[TextCandidate]:
    """Drop text candidates whose non-text posterior reaches ``cfg.epsilon``."""
    return [t for t in cands if nontext_posterior_of(t, char_clf, priors, cfg) < cfg.epsilon]


def _cv(values: np.ndarray) -> np.ndarray:
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    return np.divide(std, mean, out=np.zeros_like(std), where=mean > 0)


def text_features(t: TextCandidate) -> np.ndarray:
    """Coefficient of variation of member height, width, stroke, aspect and
    color channels, followed by the member count."""
    if len(t) < 2:
        raise ValueError("text features need at least two members")
    vals = np.array([[m.h, m.w, m.stroke_mean, m.aspect, *m.color] for m in t.members], dtype=np.float64)
    return np.concatenate([_cv(vals), [len(t)]])


def spacing_features(t: TextCandidate) -> tuple[np.ndarray, list[CharacterCandidate]]:
    """Features of each gap between horizontally adjacent members.

    Returns the (n_gaps, 3) matrix and the members sorted by center x.
    """
    members = sorted(t.members, key=lambda m: (m.cx, m.x, m.y))
    line_h = max(t.bbox[3], 1)
    rows = []
    for left, right in zip(members, members[1:]):
        gap = right.x - (left.x + left.w)
        rows.append((gap / line_h, abs(left.w - right.w) / max(left.w, right.w), len(members)))
    return np.array(rows, dtype=np.float64).reshape(-1, len(SPACING_FEATURES)), members


def partition_words(t: TextCandidate, spacing_clf: StumpEnsemble) -> list[tuple[int, int, int, int]]:
    """Split a text line at gaps the spacing classifier calls word spacing."""
    feats, members = spacing_features(t)
    if len(members) < 2:
        return [union_box([m.bbox for m in members])]
    is_word_gap = np.asarray(spacing_clf.predict(feats)) > 0
    words, current = [], [members[0]]
    for split, m in zip(is_word_gap, members[1:]):
        if split:
            words.append(current)
            current = []
        current.append(m)
    words.append(current)
    return [union_box([m.bbox for m in w]) for w in words]
