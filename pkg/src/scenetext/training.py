"""Fit all detector models from an annotated corpus (see ``fixtures``).

Candidates are extracted exactly as at detection time and labeled against
the character boxes of the annotation:

* a candidate is a *character* when it matches a ground-truth character
  (match score >= ``match``) in the image's text polarity; candidates of the
  other polarity never are;
* character classifier positives are characters other than thin glyphs;
* metric-learning clusters are the characters of each ground-truth line;
* a single-link text candidate is *text* when most of its members are
  characters; those labels feed the size priors and the text classifier;
* gaps between adjacent characters of a line are labeled word spacing when
  the neighbors belong to different ground-truth words.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boosting import TrainingError as BoostingError
from .boosting import train_with_validation
from .component_tree import to_grayscale
from .descriptors import CharacterCandidate
from .evaluation import match_matrix
from .filtering import (CHAR_FEATURES, SPACING_FEATURES, TEXT_FEATURES, THIN_CHARS,
                        character_feature_matrix, estimate_size_priors, spacing_features,
                        text_features)
from .fixtures import Annotation, load_corpus
from .linking import MetricParams, TextCandidate
from .metric_learning import ClusterImage, LabeledClusterSet, SelfTrainingMetricLearner
from .models_io import Models
from .pipeline import PipelineConfig, extract_candidates, load_image, text_lines

log = logging.getLogger(__name__)


@dataclass
class LabeledCandidates:
    """Candidates of one polarity of one image with their ground-truth links."""

    image: str
    polarity: str
    candidates: list[CharacterCandidate]
    char: list[str | None]          # matched ground-truth glyph, or None
    line: list[int]                 # ground-truth line index, -1 if none
    word: list[int]                 # global ground-truth word index, -1 if none
    ambiguous: list[bool]           # unmatched but mostly inside a ground-truth line


def label_candidates(cands: list[CharacterCandidate], ann: Annotation, polarity: str,
                     name: str = "", match: float = 0.7) -> LabeledCandidates:
    n = len(cands)
    chars: list[str | None] = [None] * n
    lines = [-1] * n
    words = [-1] * n
    ambiguous = [False] * n
    if polarity == ann.polarity and n:
        gt, gl, gw = [], [], []
        wi = 0
        for li, line in enumerate(ann.lines):
            for word in line.words:
                for c in word.chars:
                    gt.append(c)
                    gl.append(li)
                    gw.append(wi)
                wi += 1
        if gt:
            m = match_matrix([c.bbox for c in cands], [c.bbox for c in gt])
            best = m.argmax(axis=1)
            for i in range(n):
                j = int(best[i])
                if m[i, j] >= match:
                    chars[i], lines[i], words[i] = gt[j].char, gl[j], gw[j]
        for i, c in enumerate(cands):
            if chars[i] is None:
                ambiguous[i] = any(_inside_fraction(c.bbox, line.bbox) >= 0.5 for line in ann.lines)
    return LabeledCandidates(name, polarity, list(cands), chars, lines, words, ambiguous)


def _inside_fraction(box, container) -> float:
    x, y, w, h = box
    cx, cy, cw, ch = container
    ix = max(0, min(x + w, cx + cw) - max(x, cx))
    iy = max(0, min(y + h, cy + ch) - max(y, cy))
    return ix * iy / (w * h)


def extract_labeled(corpus_dir, config: PipelineConfig, match: float = 0.7) -> list[LabeledCandidates]:
    out = []
    for img_path, ann in load_corpus(corpus_dir):
        rgb, _ = load_image(img_path)
        gray = to_grayscale(rgb)
        for polarity in config.mser.polarities:
            cands, _ = extract_candidates(rgb, gray, polarity, config)
            out.append(label_candidates(cands, ann, polarity, ann.name, match))
    return out


def char_samples(data: list[LabeledCandidates]) -> tuple[np.ndarray, np.ndarray]:
    X, y = [], []
    for d in data:
        if not d.candidates:
            continue
        X.append(character_feature_matrix(d.candidates))
        y.extend(1 if c is not None and c not in THIN_CHARS else -1 for c in d.char)
    return np.vstack(X) if X else np.zeros((0, len(CHAR_FEATURES))), np.array(y, dtype=np.int64)


def metric_clusters(data: list[LabeledCandidates]) -> LabeledClusterSet:
    """Ground-truth line clusters. Ambiguous candidates (pieces or merges of
    glyphs inside a line) are left out so they do not act as cannot-link
    partners of their own line."""
    images = []
    for d in data:
        keep = [i for i in range(len(d.candidates)) if not d.ambiguous[i]]
        local = {i: k for k, i in enumerate(keep)}
        groups: dict[int, list[int]] = {}
        for i in keep:
            if d.line[i] >= 0:
                groups.setdefault(d.line[i], []).append(local[i])
        clusters = [g for _, g in sorted(groups.items()) if len(g) >= 2]
        if clusters:
            images.append(ClusterImage.from_candidates([d.candidates[i] for i in keep], clusters))
    return LabeledClusterSet(images)


def _is_text(t: TextCandidate, d: LabeledCandidates) -> bool:
    hits = sum(d.char[i] is not None for i in t.indices)
    return 2 * hits > len(t)


def text_samples(data: list[LabeledCandidates], metric: MetricParams):
    """Text features, labels and (size, is_text) observations of all clustered lines."""
    X, y, sizes = [], [], []
    for d in data:
        for t in text_lines(d.candidates, metric):
            label = _is_text(t, d)
            X.append(text_features(t))
            y.append(1 if label else -1)
            sizes.append((len(t), label))
    return np.array(X).reshape(-1, len(TEXT_FEATURES)), np.array(y, dtype=np.int64), sizes


def spacing_samples(data: list[LabeledCandidates]) -> tuple[np.ndarray, np.ndarray]:
    X, y = [], []
    for d in data:
        groups: dict[int, list[int]] = {}
        for i, li in enumerate(d.line):
            if li >= 0:
                groups.setdefault(li, []).append(i)
        for idx in groups.values():
            if len(idx) < 2:
                continue
            t = TextCandidate([d.candidates[i] for i in idx], tuple(idx))
            feats, members = spacing_features(t)
            word_of = {id(d.candidates[i]): d.word[i] for i in idx}
            for k, (left, right) in enumerate(zip(members, members[1:])):
                X.append(feats[k])
                y.append(1 if word_of[id(left)] != word_of[id(right)] else -1)
    return np.array(X).reshape(-1, len(SPACING_FEATURES)), np.array(y, dtype=np.int64)


@dataclass
class TrainingSummary:
    n_images: int = 0
    n_char_samples: tuple[int, int] = (0, 0)
    n_clusters: int = 0
    n_text_samples: tuple[int, int] = (0, 0)
    n_spacing_samples: tuple[int, int] = (0, 0)
    metric_report: str = ""
    notes: list[str] = field(default_factory=list)

    def format(self) -> str:
        lines = [
            f"images: {self.n_images}",
            f"character samples (+/-): {self.n_char_samples[0]}/{self.n_char_samples[1]}",
            f"labeled text clusters: {self.n_clusters}",
            f"text candidate samples (+/-): {self.n_text_samples[0]}/{self.n_text_samples[1]}",
            f"spacing samples (word/char): {self.n_spacing_samples[0]}/{self.n_spacing_samples[1]}",
            "metric learning:",
            self.metric_report,
        ]
        lines += self.notes
        return "\n".join(lines)


def _counts(y) -> tuple[int, int]:
    return int(np.sum(y > 0)), int(np.sum(y < 0))


def train_all(corpus_dir, config: PipelineConfig = PipelineConfig(), seed: int = 0,
              rounds: int = 100, restarts: int = 5, max_iters: int = 20) -> tuple[Models, TrainingSummary]:
    data = extract_labeled(corpus_dir, config)
    summary = TrainingSummary(n_images=len({d.image for d in data}))

    Xc, yc = char_samples(data)
    summary.n_char_samples = _counts(yc)
    char_clf = train_with_validation(Xc, yc, rounds, CHAR_FEATURES, seed=seed)

    clusters = metric_clusters(data)
    summary.n_clusters = clusters.n_clusters
    learner = SelfTrainingMetricLearner(max_iters=max_iters, restarts=restarts, seed=seed)
    metric = learner.fit(clusters)
    summary.metric_report = learner.report_.format()

    Xt, yt, sizes = text_samples(data, metric)
    summary.n_text_samples = _counts(yt)
    priors = estimate_size_priors(sizes)
    text_clf = train_with_validation(Xt, yt, rounds, TEXT_FEATURES, seed=seed)

    Xs, ys = spacing_samples(data)
    summary.n_spacing_samples = _counts(ys)
    spacing_clf = None
    if len(np.unique(ys)) == 2:
        try:
            spacing_clf = train_with_validation(Xs, ys, rounds, SPACING_FEATURES, seed=seed)
        except BoostingError as exc:
            summary.notes.append(f"spacing classifier skipped: {exc}")
    else:
        summary.notes.append("spacing classifier skipped: corpus has no multi-word lines")
    return Models(metric, char_clf, text_clf, priors, spacing_clf), summary


def save_training_summary(path, summary: TrainingSummary) -> None:
    Path(path).write_text(summary.format() + "\n", encoding="utf-8")


# sample files for the per-model training commands ---------------------------

def write_samples(path, X, y, names) -> None:
    """CSV with one column per feature plus ``label`` (+1/-1); floats in repr form."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, "label"])
        for row, label in zip(np.asarray(X), np.asarray(y)):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def read_samples(path, names) -> tuple[np.ndarray, np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty sample file")
    header = tuple(h.strip() for h in rows[0])
    if header != (*names, "label"):
        raise ValueError(f"{path}: columns {header} do not match {(*names, 'label')}")
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    data = data.reshape(-1, len(names) + 1)
    y = data[:, -1].astype(np.int64)
    if not set(np.unique(y)) <= {-1, 1}:
        raise ValueError(f"{path}: labels must be +1 or -1")
    return data[:, :-1], y


def _candidate_record(c: CharacterCandidate) -> dict:
    return {"bbox": list(c.bbox), "area": c.area, "stroke_mean": c.stroke_mean,
            "stroke_var": c.stroke_var, "smoothness": c.smoothness, "color": list(c.color)}


def write_cluster_file(path, data: list[LabeledCandidates]) -> None:
    """JSON cluster file: per image, the candidates and ground-truth line clusters."""
    images = []
    for d in data:
        keep = [i for i in range(len(d.candidates)) if not d.ambiguous[i]]
        local = {i: k for k, i in enumerate(keep)}
        groups: dict[int, list[int]] = {}
        for i in keep:
            if d.line[i] >= 0:
                groups.setdefault(d.line[i], []).append(local[i])
        clusters = [g for _, g in sorted(groups.items()) if len(g) >= 2]
        if clusters:
            images.append({"image": d.image, "polarity": d.polarity,
                           "candidates": [_candidate_record(d.candidates[i]) for i in keep],
                           "clusters": clusters})
    Path(path).write_text(json.dumps({"images": images}, indent=1), encoding="utf-8")


def read_cluster_file(path) -> LabeledClusterSet:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    images = []
    for k, im in enumerate(doc.get("images", [])):
        try:
            cands = [CharacterCandidate(bbox=tuple(int(v) for v in c["bbox"]), area=int(c.get("area", 0)),
                                        stroke_mean=float(c["stroke_mean"]),
                                        stroke_var=float(c.get("stroke_var", 0.0)),
                                        smoothness=float(c.get("smoothness", 0.0)),
                                        color=tuple(float(v) for v in c["color"]))
                     for c in im["candidates"]]
            clusters = [list(map(int, g)) for g in im["clusters"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: image record {k} is malformed ({exc})") from None
        for g in clusters:
            if any(not 0 <= i < len(cands) for i in g):
                raise ValueError(f"{path}: image record {k} has a cluster index out of range")
        images.append(ClusterImage.from_candidates(cands, clusters))
    return LabeledClusterSet(images)


def export_samples(corpus_dir, out_dir, config: PipelineConfig = PipelineConfig(),
                   metric: MetricParams | None = None) -> dict[str, Path]:
    """Write clusters.json, char.csv, words.csv and (given a metric) text.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = extract_labeled(corpus_dir, config)
    paths = {"clusters": out / "clusters.json", "char": out / "char.csv", "words": out / "words.csv"}
    write_cluster_file(paths["clusters"], data)
    write_samples(paths["char"], *char_samples(data), CHAR_FEATURES)
    write_samples(paths["words"], *spacing_samples(data), SPACING_FEATURES)
    if metric is not None:
        Xt, yt, _ = text_samples(data, metric)
        paths["text"] = out / "text.csv"
        write_samples(paths["text"], Xt, yt, TEXT_FEATURES)
    return paths


def priors_from_text_samples(X: np.ndarray, y: np.ndarray):
    """Size priors from text-classifier samples (member count is the last feature)."""
    return estimate_size_priors((int(round(n)), label > 0) for n, label in zip(X[:, -1], y))
