"""Command-line interface: ``scenetext <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import models_io
from .boosting import TrainingError as BoostingError
from .boosting import train_with_validation
from .component_tree import POLARITIES, BOTH
from .evaluation import aggregate, dump_summary, evaluate, format_table, read_rects
from .filtering import CHAR_FEATURES, SPACING_FEATURES, TEXT_FEATURES
from .metric_learning import SelfTrainingMetricLearner
from .metric_learning import TrainingError as MetricError
from .pipeline import (ImageLoadError, PipelineConfig, config_from_mapping, detect, detect_batch,
                       draw_overlay, load_config)

log = logging.getLogger("scenetext")


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    overrides = {}
    if getattr(args, "models", None):
        overrides["models_dir"] = args.models
    if getattr(args, "words", False):
        overrides["words"] = "true"
    if getattr(args, "epsilon", None) is not None:
        overrides["epsilon"] = str(args.epsilon)
    if getattr(args, "polarity", None):
        overrides["polarity"] = args.polarity
    if getattr(args, "dump_stages", None):
        overrides["dump_stages"] = args.dump_stages
    return config_from_mapping(overrides, cfg) if overrides else cfg


def _add_detect_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--models", help="model directory (default: bundled fixture-trained models)")
    p.add_argument("--words", action="store_true", help="split text lines into words")
    p.add_argument("--epsilon", type=float, help="non-text posterior rejection threshold")
    p.add_argument("--polarity", choices=POLARITIES + (BOTH,))


def cmd_detect(args) -> int:
    cfg = _config(args)
    try:
        res = detect(args.image, cfg)
    except ImageLoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    from .evaluation import write_rects

    if args.out:
        write_rects(args.out, res.boxes)
    else:
        for x, y, w, h in res.boxes:
            print(f"{x},{y},{w},{h}")
    if args.report:
        Path(args.report).write_text(json.dumps(res.report(), indent=1), encoding="utf-8")
    if args.overlay:
        draw_overlay(args.image, res.boxes, args.overlay)
    return 0


def cmd_batch(args) -> int:
    cfg = _config(args)
    mode = "macro" if args.macro else "micro"
    report = detect_batch(args.dir, cfg, gt_dir=args.gt, out_dir=args.out, workers=args.workers,
                          aggregation=mode)
    for name, err in report.errors.items():
        print(f"error: {name}: {err}", file=sys.stderr)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"processed {len(report.results)} image(s), {len(report.errors)} failed")
    if report.total is not None:
        print(report.table())
        for flag in report.total.flags:
            print(f"note: {flag}")
    return 0


def _fit_report(path, text: str) -> None:
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_train_metric(args) -> int:
    from .training import read_cluster_file

    data = read_cluster_file(args.clusters)
    learner = SelfTrainingMetricLearner(max_iters=args.max_iters, restarts=args.restarts, seed=args.seed)
    try:
        params = learner.fit(data)
    except MetricError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    models_io.save_metric(args.out, params)
    rep = learner.report_
    _fit_report(args.report, rep.format() + f"\nselected restart {rep.best_restart}, "
                f"validation pair error {rep.best_validation_error:.4f}")
    return 0


def _train_stumps(args, names, kind: str) -> int:
    from .training import priors_from_text_samples, read_samples

    X, y = read_samples(args.samples, names)
    try:
        model = train_with_validation(X, y, args.rounds, names, seed=args.seed)
    except (BoostingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    models_io.save_ensemble(args.out, model)
    print(f"{kind}: {model.rounds} stumps ({model.stop_reason}); "
          f"validation precision {model.validation_precision:.4f}")
    if kind == "text" and args.priors_out:
        models_io.save_priors(args.priors_out, priors_from_text_samples(X, y))
    return 0


def cmd_train_char(args) -> int:
    return _train_stumps(args, CHAR_FEATURES, "char")


def cmd_train_text(args) -> int:
    return _train_stumps(args, TEXT_FEATURES, "text")


def cmd_train_words(args) -> int:
    return _train_stumps(args, SPACING_FEATURES, "words")


def cmd_train_all(args) -> int:
    from .training import save_training_summary, train_all

    cfg = _config(args)
    models, summary = train_all(args.corpus, cfg, seed=args.seed, rounds=args.rounds,
                                restarts=args.restarts, max_iters=args.max_iters)
    models_io.save_models(args.out, models)
    save_training_summary(Path(args.out) / "training_report.txt", summary)
    print(summary.format())
    return 0


def cmd_samples(args) -> int:
    from .training import export_samples

    cfg = _config(args)
    metric = models_io.load_metric(args.metric) if args.metric else None
    for kind, path in export_samples(args.corpus, args.out, cfg, metric).items():
        print(f"{kind}: {path}")
    return 0


def _pairs(gt: Path, det: Path) -> list[tuple[str, Path, Path | None]]:
    if gt.is_file():
        return [(gt.stem, gt, det)]
    out = []
    for g in sorted(gt.glob("*.txt")):
        d = det / g.name
        out.append((g.stem, g, d if d.exists() else None))
    return out


def cmd_eval(args) -> int:
    gt, det = Path(args.gt), Path(args.det)
    rows = []
    for name, g, d in _pairs(gt, det):
        if d is None:
            print(f"warning: no detections file for {name}; treated as empty", file=sys.stderr)
        rows.append((name, evaluate(read_rects(g), read_rects(d) if d else [])))
    mode = "macro" if args.macro else "micro"
    total = aggregate([r for _, r in rows], mode)
    print(format_table(rows, total))
    for flag in total.flags:
        print(f"note: {flag}")
    if args.json:
        dump_summary(args.json, rows, total, mode)
    return 0


def cmd_fixtures(args) -> int:
    from .fixtures import generate_corpus

    names = generate_corpus(args.dir, n=args.n, seed=args.seed, width=args.width, height=args.height)
    print(f"wrote {len(names)} images to {args.dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scenetext", description="MSER-based scene text detection")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="detect text in one image")
    p.add_argument("image")
    _add_detect_options(p)
    p.add_argument("--dump-stages", metavar="DIR", help="write per-stage boxes and MSER outlines")
    p.add_argument("--out", help="rectangle file to write (default: stdout)")
    p.add_argument("--report", help="JSON report with stage counts and timings")
    p.add_argument("--overlay", help="PNG with the detected boxes drawn")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("batch", help="detect over a directory and optionally score it")
    p.add_argument("dir")
    _add_detect_options(p)
    p.add_argument("--gt", help="ground-truth directory with <stem>.txt files")
    p.add_argument("--out", help="directory for per-image rectangles and reports")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--macro", action="store_true", help="average per image instead of pooling")
    p.set_defaults(func=cmd_batch)

    def training_opts(p, rounds=True):
        p.add_argument("--seed", type=int, default=0)
        if rounds:
            p.add_argument("--rounds", type=int, default=100)

    p = sub.add_parser("train-metric", help="learn link weights and threshold from a cluster file")
    p.add_argument("clusters")
    p.add_argument("--out", default="metric.txt")
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--max-iters", type=int, default=20)
    p.add_argument("--report", help="write the per-iteration training report here")
    training_opts(p, rounds=False)
    p.set_defaults(func=cmd_train_metric)

    for name, func, default in (("train-char", cmd_train_char, "char.txt"),
                                ("train-text", cmd_train_text, "text.txt"),
                                ("train-words", cmd_train_words, "words.txt")):
        p = sub.add_parser(name, help=f"train a stump ensemble from a CSV sample file ({default})")
        p.add_argument("samples")
        p.add_argument("--out", default=default)
        if name == "train-text":
            p.add_argument("--priors-out", help="also write size priors derived from the samples")
        training_opts(p)
        p.set_defaults(func=func)

    p = sub.add_parser("train-all", help="train every model from an annotated corpus")
    p.add_argument("corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--max-iters", type=int, default=20)
    training_opts(p)
    p.set_defaults(func=cmd_train_all)

    p = sub.add_parser("samples", help="export training sample files from an annotated corpus")
    p.add_argument("corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--metric", help="metric model used to cluster text-candidate samples")
    p.set_defaults(func=cmd_samples)

    p = sub.add_parser("eval", help="score detections against ground truth (files or directories)")
    p.add_argument("gt")
    p.add_argument("det")
    p.add_argument("--macro", action="store_true")
    p.add_argument("--json", help="write a machine-readable summary")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fixtures", help="synthetic corpus tools")
    fsub = p.add_subparsers(dest="fixtures_command", required=True)
    g = fsub.add_parser("generate", help="render a synthetic corpus with ground truth")
    g.add_argument("dir")
    g.add_argument("--n", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--width", type=int, default=640)
    g.add_argument("--height", type=int, default=480)
    g.set_defaults(func=cmd_fixtures)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (BoostingError, MetricError) as exc:
        print(f"error: training failed: {exc}", file=sys.stderr)
        return 1
    except (models_io.ModelLoadError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
