"""Versioned plain-text model files.

Every file starts with ``scenetext-model <version> <kind>``, documents its
feature order in ``#`` comment lines, stores floats with ``repr`` (so values
round-trip bit-exactly) and ends with an ``end`` line; a file without that
marker is treated as truncated.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .boosting import Stump, StumpEnsemble
from .filtering import CHAR_FEATURES, SPACING_FEATURES, TEXT_FEATURES, SizePriorTable
from .linking import FEATURE_NAMES, MetricParams

FORMAT_VERSION = 1
MAGIC = "scenetext-model"

METRIC_FILE = "metric.txt"
CHAR_FILE = "char.txt"
TEXT_FILE = "text.txt"
WORDS_FILE = "words.txt"
PRIORS_FILE = "priors.txt"


class ModelLoadError(ValueError):
    def __init__(self, path, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason


def _write(path, kind: str, comments: list[str], body: list[str]) -> None:
    lines = [f"{MAGIC} {FORMAT_VERSION} {kind}"]
    lines += [f"# {c}" for c in comments]
    lines += body
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _read(path, kind: str) -> list[list[str]]:
    """Validate header/end marker and return the tokenized body lines."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelLoadError(path, f"cannot read file ({exc.strerror or exc})") from exc
    lines = [l.strip() for l in text.splitlines()]
    lines = [l for l in lines if l and not l.startswith("#")]
    if not lines:
        raise ModelLoadError(path, "empty file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != MAGIC:
        raise ModelLoadError(path, "missing model header")
    if head[1] != str(FORMAT_VERSION):
        raise ModelLoadError(path, f"version mismatch: file has {head[1]}, expected {FORMAT_VERSION}")
    if head[2] != kind:
        raise ModelLoadError(path, f"expected a {kind!r} model, found {head[2]!r}")
    if lines[-1] != "end":
        raise ModelLoadError(path, "truncated file (no end marker)")
    return [l.split() for l in lines[1:-1]]


def _fields(path, body: list[list[str]]) -> dict[str, list[list[str]]]:
    out: dict[str, list[list[str]]] = {}
    for toks in body:
        out.setdefault(toks[0], []).append(toks[1:])
    return out


def _one(path, fields, key: str) -> list[str]:
    rows = fields.get(key)
    if not rows or len(rows) != 1:
        raise ModelLoadError(path, f"expected exactly one {key!r} record")
    return rows[0]


def _float(path, tok: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ModelLoadError(path, f"bad number {tok!r}") from None


def _check_features(path, fields, expected) -> None:
    names = tuple(_one(path, fields, "features")[0].split(","))
    if names != tuple(expected):
        raise ModelLoadError(path, f"feature order {names} does not match {tuple(expected)}")


# -- metric -------------------------------------------------------------------

def save_metric(path, params: MetricParams) -> None:
    _write(path, "metric", [
        "weighted pair distance d(u, v) = sum_i weights[i] * x_i(u, v)",
        "candidates are linked while d <= epsilon",
        "feature order: " + ", ".join(FEATURE_NAMES),
    ], [
        "features " + ",".join(FEATURE_NAMES),
        "weights " + " ".join(repr(float(w)) for w in params.weights),
        f"epsilon {float(params.link_threshold)!r}",
    ])


def load_metric(path) -> MetricParams:
    f = _fields(path, _read(path, "metric"))
    _check_features(path, f, FEATURE_NAMES)
    weights = [_float(path, t) for t in _one(path, f, "weights")]
    if len(weights) != len(FEATURE_NAMES):
        raise ModelLoadError(path, f"expected {len(FEATURE_NAMES)} weights, got {len(weights)}")
    eps = _one(path, f, "epsilon")
    if len(eps) != 1:
        raise ModelLoadError(path, "bad epsilon record")
    return MetricParams(tuple(weights), _float(path, eps[0]))


# -- stump ensembles ----------------------------------------------------------

def save_ensemble(path, model: StumpEnsemble) -> None:
    names = model.feature_names or tuple(f"f{i}" for i in range(model.n_features))
    prec = "none" if model.validation_precision is None else repr(float(model.validation_precision))
    body = [
        "features " + ",".join(names),
        f"precision {prec}",
        f"rounds {model.rounds}",
    ]
    body += [f"stump {s.feature} {float(s.threshold)!r} {s.polarity} {float(s.alpha)!r}" for s in model.stumps]
    _write(path, "stumps", [
        "AdaBoost over decision stumps: score(x) = sum alpha * h(x), predict = +1 iff score >= 0",
        "h(x) = polarity if x[feature] > threshold else -polarity",
        "feature order: " + ", ".join(names),
        "precision: validation precision of the positive class",
    ], body)


def load_ensemble(path, expected_features=None) -> StumpEnsemble:
    f = _fields(path, _read(path, "stumps"))
    names = tuple(_one(path, f, "features")[0].split(","))
    if expected_features is not None and names != tuple(expected_features):
        raise ModelLoadError(path, f"feature order {names} does not match {tuple(expected_features)}")
    prec_tok = _one(path, f, "precision")[0]
    prec = None if prec_tok == "none" else _float(path, prec_tok)
    try:
        rounds = int(_one(path, f, "rounds")[0])
    except ValueError:
        raise ModelLoadError(path, "bad rounds record") from None
    rows = f.get("stump", [])
    if len(rows) != rounds:
        raise ModelLoadError(path, f"declares {rounds} stumps but holds {len(rows)} (truncated?)")
    stumps = []
    for r in rows:
        if len(r) != 4:
            raise ModelLoadError(path, "bad stump record")
        try:
            feat, pol = int(r[0]), int(r[2])
        except ValueError:
            raise ModelLoadError(path, "bad stump record") from None
        if not 0 <= feat < len(names) or pol not in (-1, 1):
            raise ModelLoadError(path, "stump references an invalid feature or polarity")
        stumps.append(Stump(feat, _float(path, r[1]), pol, _float(path, r[3])))
    return StumpEnsemble(tuple(stumps), len(names), names, prec, "loaded")


# -- size priors --------------------------------------------------------------

def save_priors(path, table: SizePriorTable) -> None:
    body = [f"size {s} {total} {text}" for s, (total, text) in sorted(table.counts.items())]
    _write(path, "priors", [
        "text prior per member count: size, candidates observed, of which text",
        "unseen sizes fall back to the largest listed size",
    ], body)


def load_priors(path) -> SizePriorTable:
    f = _fields(path, _read(path, "priors"))
    counts = {}
    for r in f.get("size", []):
        try:
            s, total, text = (int(v) for v in r)
        except ValueError:
            raise ModelLoadError(path, "bad size record") from None
        counts[s] = (total, text)
    try:
        return SizePriorTable(counts)
    except ValueError as exc:
        raise ModelLoadError(path, str(exc)) from None


# -- bundles ------------------------------------------------------------------

@dataclass(frozen=True)
class Models:
    metric: MetricParams
    char_clf: StumpEnsemble
    text_clf: StumpEnsemble
    priors: SizePriorTable
    spacing_clf: StumpEnsemble | None = None


def save_models(directory, models: Models) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_metric(d / METRIC_FILE, models.metric)
    save_ensemble(d / CHAR_FILE, models.char_clf)
    save_ensemble(d / TEXT_FILE, models.text_clf)
    save_priors(d / PRIORS_FILE, models.priors)
    if models.spacing_clf is not None:
        save_ensemble(d / WORDS_FILE, models.spacing_clf)


def load_models(directory=None) -> Models:
    """Load a model directory (the bundled fixture-trained models by default)."""
    d = Path(directory) if directory is not None else bundled_models_dir()
    if not d.is_dir():
        raise ModelLoadError(d, "model directory does not exist")
    char_clf = load_ensemble(d / CHAR_FILE, CHAR_FEATURES)
    if char_clf.validation_precision is None:
        raise ModelLoadError(d / CHAR_FILE, "character classifier has no measured precision")
    words = d / WORDS_FILE
    return Models(
        metric=load_metric(d / METRIC_FILE),
        char_clf=char_clf,
        text_clf=load_ensemble(d / TEXT_FILE, TEXT_FEATURES),
        priors=load_priors(d / PRIORS_FILE),
        spacing_clf=load_ensemble(words, SPACING_FEATURES) if words.exists() else None,
    )


def bundled_models_dir() -> Path:
    return Path(__file__).resolve().parent / "models"
