"""Old-scheme ICDAR scoring: best-match recall, precision and f measure.

Rectangle files hold one ``x,y,w,h[,text]`` record per line.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

Rect = tuple[int, int, int, int]


def _as_rects(rects) -> np.ndarray:
    arr = np.asarray(list(rects), dtype=np.float64).reshape(-1, 4)
    if np.any(arr[:, 2:] < 1):
        raise ValueError("rectangles need width and height >= 1")
    return arr


def match_matrix(a, b) -> np.ndarray:
    """``2 |A_i & B_j| / (|A_i| + |B_j|)`` for every pair."""
    a = _as_rects(a)
    b = _as_rects(b)
    ix = np.minimum(a[:, None, 0] + a[:, None, 2], b[None, :, 0] + b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 1] + a[:, None, 3], b[None, :, 1] + b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ix, 0, None) * np.clip(iy, 0, None)
    areas = a[:, None, 2] * a[:, None, 3] + b[None, :, 2] * b[None, :, 3]
    return 2.0 * inter / areas


def match_score(a: Rect, b: Rect) -> float:
    return float(match_matrix([a], [b])[0, 0])


@dataclass
class EvalResult:
    recall: float
    precision: float
    f: float
    n_gt: int
    n_det: int
    flags: list[str] = field(default_factory=list)
    match_g: list[float] = field(default_factory=list, repr=False)
    match_d: list[float] = field(default_factory=list, repr=False)


def f_measure(recall: float, precision: float) -> float:
    s = recall + precision
    return 0.0 if s == 0 else 2 * recall * precision / s


def evaluate(gt: Sequence[Rect], det: Sequence[Rect]) -> EvalResult:
    """Score detections against ground truth.

    An empty ground-truth set gives recall 1 and an empty detection set gives
    precision 1; both cases are flagged rather than raised.
    """
    gt = list(gt)
    det = list(det)
    flags = []
    if gt and det:
        m = match_matrix(gt, det)
        mg = m.max(axis=1)
        md = m.max(axis=0)
    else:
        mg = np.zeros(len(gt))
        md = np.zeros(len(det))
    if gt:
        recall = float(mg.mean())
    else:
        recall = 1.0
        flags.append("empty ground truth: recall set to 1")
    if det:
        precision = float(md.mean())
    else:
        precision = 1.0
        flags.append("no detections: precision set to 1")
    return EvalResult(recall, precision, f_measure(recall, precision), len(gt), len(det), flags,
                      [float(v) for v in mg], [float(v) for v in md])


def aggregate(results: Iterable[EvalResult], mode: str = "micro") -> EvalResult:
    """Corpus score: ``micro`` pools every rectangle, ``macro`` averages images."""
    results = list(results)
    if mode == "macro":
        if not results:
            return EvalResult(1.0, 1.0, 1.0, 0, 0, ["empty corpus"])
        r = float(np.mean([x.recall for x in results]))
        p = float(np.mean([x.precision for x in results]))
        return EvalResult(r, p, f_measure(r, p), sum(x.n_gt for x in results), sum(x.n_det for x in results))
    if mode != "micro":
        raise ValueError(f"unknown aggregation mode {mode!r}")
    mg = [v for x in results for v in x.match_g]
    md = [v for x in results for v in x.match_d]
    flags = []
    recall = float(np.mean(mg)) if mg else 1.0
    precision = float(np.mean(md)) if md else 1.0
    if not mg:
        flags.append("empty ground truth: recall set to 1")
    if not md:
        flags.append("no detections: precision set to 1")
    return EvalResult(recall, precision, f_measure(recall, precision), len(mg), len(md), flags, mg, md)


def read_rects(path) -> list[Rect]:
    rects = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",", 4)
        if len(parts) < 4:
            raise ValueError(f"{path}:{lineno}: expected x,y,w,h[,text]")
        rects.append(tuple(int(round(float(v))) for v in parts[:4]))
    return rects


def write_rects(path, rects: Sequence[Rect], texts: Sequence[str] | None = None) -> None:
    lines = []
    for i, (x, y, w, h) in enumerate(rects):
        rec = f"{int(x)},{int(y)},{int(w)},{int(h)}"
        if texts is not None:
            rec += f",{texts[i]}"
        lines.append(rec)
    Path(path).write_text("".join(l + "\n" for l in lines), encoding="utf-8", newline="\n")


def format_table(rows: Sequence[tuple[str, EvalResult]], total: EvalResult | None = None) -> str:
    name_w = max([len("image")] + [len(n) for n, _ in rows] + [len("TOTAL")])
    head = f"{'image':<{name_w}}  {'#gt':>5}  {'#det':>5}  {'recall':>7}  {'prec':>7}  {'f':>7}"
    lines = [head, "-" * len(head)]

    def row(name, r):
        return (f"{name:<{name_w}}  {r.n_gt:>5d}  {r.n_det:>5d}  {r.recall:>7.4f}  "
                f"{r.precision:>7.4f}  {r.f:>7.4f}")

    lines.extend(row(n, r) for n, r in rows)
    if total is not None:
        lines.append("-" * len(head))
        lines.append(row("TOTAL", total))
    return "\n".join(lines)


def summary_dict(rows: Sequence[tuple[str, EvalResult]], total: EvalResult, mode: str) -> dict:
    def strip(r: EvalResult):
        d = asdict(r)
        d.pop("match_g")
        d.pop("match_d")
        return d

    return {"aggregation": mode, "total": strip(total), "images": {n: strip(r) for n, r in rows}}


def dump_summary(path, rows, total, mode) -> None:
    Path(path).write_text(json.dumps(summary_dict(rows, total, mode), indent=2), encoding="utf-8")
