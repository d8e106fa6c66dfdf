"""End-to-end detection: regions -> character candidates -> text lines -> boxes."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw

from .component_tree import (MserParams, RegularizationParams, build_er_tree,
                             compute_variation, format_tree, select_msers, to_grayscale)
from .descriptors import CharacterCandidate, describe_regions
from .evaluation import (EvalResult, aggregate, dump_summary, evaluate, format_table,
                         match_matrix, read_rects, write_rects)
from .filtering import EliminationConfig, eliminate, partition_words, text_features
from .linking import MetricParams, TextCandidate, single_link_cluster
from .models_io import Models, load_models
from .pruning import FRAME_RATIO, extract_character_candidates

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".pgm", ".ppm")
DEFAULT_MIN_AREA = 20

Box = tuple[int, int, int, int]


class ImageLoadError(IOError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    """Detection settings. Model paths override the files of ``models_dir``."""

    mser: MserParams = MserParams(min_area=DEFAULT_MIN_AREA)
    regularization: RegularizationParams = RegularizationParams()
    elimination: EliminationConfig = EliminationConfig()
    models_dir: str | None = None
    metric_model: str | None = None
    char_model: str | None = None
    text_model: str | None = None
    words_model: str | None = None
    priors_model: str | None = None
    words: bool = False
    merge_overlap: float = 0.8
    frame_ratio: float = FRAME_RATIO
    dump_stages: str | None = None

    def load_models(self) -> Models:
        from . import models_io as mio

        models = load_models(self.models_dir)
        overrides = {}
        if self.metric_model:
            overrides["metric"] = mio.load_metric(self.metric_model)
        if self.char_model:
            overrides["char_clf"] = mio.load_ensemble(self.char_model, mio.CHAR_FEATURES)
        if self.text_model:
            overrides["text_clf"] = mio.load_ensemble(self.text_model, mio.TEXT_FEATURES)
        if self.words_model:
            overrides["spacing_clf"] = mio.load_ensemble(self.words_model, mio.SPACING_FEATURES)
        if self.priors_model:
            overrides["priors"] = mio.load_priors(self.priors_model)
        models = dataclasses.replace(models, **overrides)
        if self.words and models.spacing_clf is None:
            raise ValueError("word partitioning requested but no spacing model is available")
        return models


# flat ``key = value`` config files ------------------------------------------

_SECTIONS = {
    "mser": (MserParams, {"delta": int, "max_variation": float, "min_diversity": float,
                          "polarity": str, "min_area": int}),
    "regularization": (RegularizationParams, {"theta1": float, "theta2": float, "a_min": float,
                                              "a_max": float, "penalty_sign": float}),
    "elimination": (EliminationConfig, {"epsilon": float, "precision": float}),
}
_TOP = {"models_dir": str, "metric_model": str, "char_model": str, "text_model": str,
        "words_model": str, "priors_model": str, "words": "bool", "merge_overlap": float,
        "frame_ratio": float, "dump_stages": str}


def _parse_bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def config_from_mapping(values: dict[str, str], base: PipelineConfig = PipelineConfig()) -> PipelineConfig:
    """Apply ``key -> value`` strings; section keys are looked up by field name."""
    top = {}
    section_updates: dict[str, dict] = {name: {} for name in _SECTIONS}
    for key, raw in values.items():
        key = key.strip().replace("-", "_")
        if key in _TOP:
            kind = _TOP[key]
            top[key] = _parse_bool(raw) if kind == "bool" else kind(raw)
            continue
        for name, (_, fields) in _SECTIONS.items():
            if key in fields:
                section_updates[name][key] = fields[key](raw)
                break
        else:
            raise ValueError(f"unknown config key {key!r}")
    for name, upd in section_updates.items():
        if upd:
            top[name] = dataclasses.replace(getattr(base, name), **upd)
    return dataclasses.replace(base, **top)


def load_config(path, base: PipelineConfig = PipelineConfig()) -> PipelineConfig:
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        values[k.strip()] = v.strip()
    try:
        return config_from_mapping(values, base)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


# detection --------------------------------------------------------------------

@dataclass
class Detection:
    bbox: Box
    score: float
    polarity: str
    line: Box


@dataclass
class PolarityStages:
    """Intermediate products of one polarity, kept for stage dumps and training."""

    polarity: str
    mser_outline: str
    candidates: list[CharacterCandidate]
    text_candidates: list[TextCandidate]
    survivors: list[TextCandidate]
    accepted: list[TextCandidate]


@dataclass
class DetectionResult:
    name: str
    boxes: list[Box]
    detections: list[Detection]
    counts: dict[str, int]
    timings_ms: dict[str, float]
    shape: tuple[int, int]
    stages: list[PolarityStages] = field(default_factory=list, repr=False)

    def report(self) -> dict:
        return {
            "image": self.name,
            "size": {"width": self.shape[1], "height": self.shape[0]},
            "boxes": [list(b) for b in self.boxes],
            "detections": [{"bbox": list(d.bbox), "score": d.score, "polarity": d.polarity,
                            "line": list(d.line)} for d in self.detections],
            "counts": self.counts,
            "timings_ms": self.timings_ms,
        }


def load_image(image) -> tuple[np.ndarray, str]:
    """Return an RGB uint8 array and a display name for a path or array."""
    if isinstance(image, (str, Path)):
        path = Path(image)
        try:
            with Image.open(path) as im:
                arr = np.asarray(im.convert("RGB"))
        except Exception as exc:  # PIL raises a variety of errors on bad files
            raise ImageLoadError(f"{path}: cannot read image ({exc})") from exc
        return arr, path.stem
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] < 3:
        raise ImageLoadError("expected an HxW or HxWx3 image array")
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(arr[..., :3]), "image"


def extract_candidates(rgb: np.ndarray, gray: np.ndarray, polarity: str,
                       config: PipelineConfig, timings: dict | None = None,
                       counts: dict | None = None, outline: bool = False):
    """Character candidates of one polarity plus an optional MSER outline."""
    timings = {} if timings is None else timings
    counts = {} if counts is None else counts
    t0 = time.perf_counter()
    tree = build_er_tree(gray, polarity, rgb)
    tree = compute_variation(tree, config.mser.delta)
    t1 = time.perf_counter()
    mser = select_msers(tree, config.mser)
    t2 = time.perf_counter()
    ids = extract_character_candidates(mser, config.regularization, frame_ratio=config.frame_ratio)
    t3 = time.perf_counter()
    cands = describe_regions(mser.er, ids, gray)
    t4 = time.perf_counter()
    _add(timings, "component_tree", t1 - t0)
    _add(timings, "mser_selection", t2 - t1)
    _add(timings, "pruning", t3 - t2)
    _add(timings, "descriptors", t4 - t3)
    _add(counts, "extremal_regions", tree.n_nodes)
    _add(counts, "msers", len(mser))
    _add(counts, "character_candidates", len(cands))
    text = format_tree(mser.er, mser.ids, max_lines=2000) if outline else ""
    return cands, text


def _add(d: dict, key: str, value) -> None:
    d[key] = d.get(key, 0) + value


def text_lines(cands: Sequence[CharacterCandidate], metric: MetricParams) -> list[TextCandidate]:
    """Single-link text candidates with at least two members."""
    return [t for t in single_link_cluster(cands, metric) if len(t) >= 2]


def _suppress(dets: list[Detection], overlap: float) -> list[Detection]:
    """Greedy overlap suppression, highest score first; ties keep the earlier detection."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept: list[Detection] = []
    for i in order:
        d = dets[i]
        if kept and match_matrix([d.bbox], [k.bbox for k in kept]).max() > overlap:
            continue
        kept.append(d)
    return sorted(kept, key=lambda d: (d.bbox[1], d.bbox[0], d.bbox[2], d.bbox[3]))


def detect(image, config: PipelineConfig = PipelineConfig(), models: Models | None = None,
           keep_stages: bool = False) -> DetectionResult:
    """Detect text in ``image`` (path or array)."""
    if models is None:
        models = config.load_models()
    if config.words and models.spacing_clf is None:
        raise ValueError("word partitioning requested but no spacing model is available")
    dump = keep_stages or config.dump_stages is not None
    rgb, name = load_image(image)
    t_start = time.perf_counter()
    gray = to_grayscale(rgb)
    timings: dict[str, float] = {}
    counts: dict[str, int] = {}
    dets: list[Detection] = []
    stages = []
    for polarity in config.mser.polarities:
        cands, outline = extract_candidates(rgb, gray, polarity, config, timings, counts, outline=dump)
        t0 = time.perf_counter()
        lines = text_lines(cands, models.metric)
        t1 = time.perf_counter()
        survivors = eliminate(lines, models.char_clf, models.priors, config.elimination)
        t2 = time.perf_counter()
        accepted = []
        for t in survivors:
            t.score = float(models.text_clf.score(text_features(t)))
            if t.score >= 0:
                accepted.append(t)
        t3 = time.perf_counter()
        for t in accepted:
            boxes = partition_words(t, models.spacing_clf) if config.words else [t.bbox]
            dets.extend(Detection(b, t.score, polarity, t.bbox) for b in boxes)
        t4 = time.perf_counter()
        _add(timings, "clustering", t1 - t0)
        _add(timings, "elimination", t2 - t1)
        _add(timings, "text_classification", t3 - t2)
        _add(timings, "word_partition", t4 - t3)
        _add(counts, "text_candidates", len(lines))
        _add(counts, "after_elimination", len(survivors))
        _add(counts, "after_classification", len(accepted))
        if dump:
            stages.append(PolarityStages(polarity, outline, cands, lines, survivors, accepted))
    t0 = time.perf_counter()
    kept = _suppress(dets, config.merge_overlap)
    timings["polarity_merge"] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_start
    counts["boxes_before_merge"] = len(dets)
    counts["boxes"] = len(kept)
    result = DetectionResult(
        name=name,
        boxes=[d.bbox for d in kept],
        detections=kept,
        counts=counts,
        timings_ms={k: round(v * 1000.0, 3) for k, v in timings.items()},
        shape=gray.shape,
        stages=stages,
    )
    if config.dump_stages is not None:
        dump_stages(result, config.dump_stages)
    return result


def dump_stages(result: DetectionResult, directory) -> None:
    """Write per-stage boxes (JSON) and the MSER tree outline of each polarity."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    payload = result.report()
    payload["stages"] = {}
    for st in result.stages:
        payload["stages"][st.polarity] = {
            "character_candidates": [list(c.bbox) for c in st.candidates],
            "text_candidates": [list(t.bbox) for t in st.text_candidates],
            "after_elimination": [list(t.bbox) for t in st.survivors],
            "after_classification": [{"bbox": list(t.bbox), "score": t.score} for t in st.accepted],
        }
        (d / f"{result.name}.{st.polarity}.msers.txt").write_text(st.mser_outline + "\n", encoding="utf-8")
    (d / f"{result.name}.stages.json").write_text(json.dumps(payload, indent=1), encoding="utf-8")


def draw_overlay(image, boxes: Sequence[Box], path) -> None:
    rgb, _ = load_image(image)
    im = Image.fromarray(rgb)
    draw = ImageDraw.Draw(im)
    for x, y, w, h in boxes:
        draw.rectangle([x, y, x + w - 1, y + h - 1], outline=(255, 0, 0), width=2)
    im.save(path)


# batch ------------------------------------------------------------------------

@dataclass
class BatchReport:
    results: list[DetectionResult]
    errors: dict[str, str]
    scores: list[tuple[str, EvalResult]]
    total: EvalResult | None
    warnings: list[str]
    aggregation: str = "micro"

    def table(self) -> str:
        return format_table(self.scores, self.total) if self.scores else "no scored images"


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise NotADirectoryError(f"{d} is not a directory")
    return sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def detect_batch(image_dir, config: PipelineConfig = PipelineConfig(), gt_dir=None, out_dir=None,
                 workers: int = 4, models: Models | None = None, aggregation: str = "micro") -> BatchReport:
    """Run ``detect`` over a directory; failures are isolated per file.

    Results are ordered by file name regardless of ``workers``. When
    ``gt_dir`` is given, images with a ``<stem>.txt`` ground-truth file are
    scored and aggregated.
    """
    if models is None:
        models = config.load_models()
    paths = list_images(image_dir)

    def run(path: Path):
        try:
            return detect(path, config, models), None
        except Exception as exc:  # isolate any per-image failure
            log.warning("failed on %s: %s", path, exc)
            return None, f"{type(exc).__name__}: {exc}"

    if workers > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, paths))
    else:
        outcomes = [run(p) for p in paths]

    results, errors, warnings, scores = [], {}, [], []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for path, (res, err) in zip(paths, outcomes):
        if err is not None:
            errors[path.name] = err
            continue
        results.append(res)
        if out is not None:
            write_rects(out / f"{path.stem}.txt", res.boxes)
            (out / f"{path.stem}.json").write_text(json.dumps(res.report(), indent=1), encoding="utf-8")
        if gt_dir is not None:
            gt_path = Path(gt_dir) / f"{path.stem}.txt"
            if not gt_path.exists():
                warnings.append(f"no ground truth for {path.name}; not scored")
                continue
            scores.append((path.stem, evaluate(read_rects(gt_path), res.boxes)))
    total = aggregate([r for _, r in scores], aggregation) if gt_dir is not None else None
    report = BatchReport(results, errors, scores, total, warnings, aggregation)
    if out is not None and total is not None:
        dump_summary(out / "summary.json", scores, total, aggregation)
    return report
