"""Command-line entry point: ``foulscope <command> [flags]``.

Exit codes: 0 success, 2 usage error, 3 data or validation error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .core import InferenceConfig, predict_frame
from .errors import DataError, UsageError
from .fitting import FitConfig, LabeledEmbeddingSet, exemplars, fit_bank
from .formats import (EmbeddingContainer, ScoreRow, exemplars_to_list, read_bank_json,
                      read_labels_csv, read_scores_csv, write_bank_json, write_eval_json,
                      write_exemplars_json, write_heatmap_csv, write_pr_csv, write_report_json,
                      write_scores_csv, write_timeline_csv, canonical_json)
from .metrics import evaluate, slof_from_coverage
from .summarize import skmps
from .video import TimelineConfig, build_report, estimate_fps, sample_stride

log = logging.getLogger("foulscope")

EXIT_USAGE = 2
EXIT_DATA = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _fraction(text):
    v = float(text)
    if not 0 <= v <= 1:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def _write(path: Path, data):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.write_bytes(data)
    log.info("wrote %s (%d bytes)", path, len(data))


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None


def _open_container(path) -> EmbeddingContainer:
    try:
        return EmbeddingContainer(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None


def cmd_fit(args) -> int:
    labels = read_labels_csv(_read(args.labels))
    with _open_container(args.embeddings) as container:
        frames = [f for f in container if f.frame_id in labels]
    found = {f.frame_id for f in frames}
    missing = [k for k in labels if k not in found]
    if missing:
        raise DataError(f"{len(missing)} labelled ids have no embedding (first: {missing[0]!r})")
    data = LabeledEmbeddingSet(tuple(frames), tuple(labels[f.frame_id] for f in frames))
    cfg = FitConfig(prototypes_per_class=args.prototypes_per_class, components_per_image=args.components,
                    seeds=tuple(range(args.seed, args.seed + args.seeds)), refine_rounds=args.refine_rounds,
                    retain_min=args.retain_min, temperature=args.temperature,
                    positive_class=args.positive_class, negative_class=args.negative_class)
    bank, report = fit_bank(data, cfg, n_jobs=args.jobs)
    if args.exemplars:
        train, _ = data.train_validation()
        ex = exemplars(bank, train, n=args.exemplars, k=args.components)
        bank.metadata["exemplars"] = exemplars_to_list(ex)
    _write(args.out, write_bank_json(bank))
    print("seed  validation_ap")
    for seed, ap in report.seed_ap.items():
        mark = "  *" if seed == report.chosen_seed else ""
        print(f"{seed:>4}  {ap:.6f}{mark}")
    print(f"chosen seed {report.chosen_seed}; prototypes per class {cfg.prototypes_per_class}")
    return 0


def cmd_score(args) -> int:
    bank = read_bank_json(_read(args.bank))
    cfg = InferenceConfig(k=args.components, coverage_threshold=args.coverage_threshold)
    rows, heat = [], []
    with _open_container(args.embeddings) as container:
        for frame in container:
            pred = predict_frame(frame, bank, cfg)
            rows.append(ScoreRow(frame.frame_id, pred.fouling_confidence, pred.coverage,
                                 slof_from_coverage(pred.coverage)))
            if args.heatmap_out:
                scores = pred.map.patch_scores
                for i in range(frame.n_patches):
                    heat.append([frame.frame_id, i, i // frame.grid_w, i % frame.grid_w,
                                 int(pred.assignment.labels[i]), *(repr(float(v)) for v in scores[i])])
    _write(args.out, write_scores_csv(rows))
    if args.heatmap_out:
        _write(args.heatmap_out, write_heatmap_csv(heat, bank.class_names))
    print(f"scored {len(rows)} frames")
    return 0


def cmd_eval(args) -> int:
    scores = read_scores_csv(_read(args.scores))
    labels = read_labels_csv(_read(args.labels))
    if args.split:
        labels = {k: v for k, v in labels.items() if v.split == args.split}
        by_id = {r.image_id: r for r in scores}
        unmatched = [k for k in labels if k not in by_id]
        rows = [by_id[k] for k in labels if k in by_id]
    else:
        unmatched = [r.image_id for r in scores if r.image_id not in labels]
        unmatched += [k for k in labels if k not in {r.image_id for r in scores}]
        rows = scores
    if unmatched:
        raise DataError(f"{len(unmatched)} ids do not join across scores and labels (first: {unmatched[0]!r})")
    y = [int(labels[r.image_id].presence) for r in rows]
    report, curve = evaluate([r.fouling_conf for r in rows], y, args.target_recall)
    _write(args.out, write_eval_json(report))
    pr_out = args.pr_out or Path(args.out).with_suffix(".pr.csv")
    _write(pr_out, write_pr_csv(curve))
    print(f"average_precision {report.average_precision:.6f}")
    print(f"threshold {report.selected_threshold:.6f} precision {report.precision_at:.6f} "
          f"recall {report.recall_at:.6f} (target recall {report.target_recall})")
    return 0


def cmd_video(args) -> int:
    hull_bank = read_bank_json(_read(args.hull_bank))
    fouling_bank = read_bank_json(_read(args.fouling_bank))
    cfg = TimelineConfig(sample_fps=args.sample_fps, bandwidth_s=args.bandwidth, truncation=args.truncation,
                         hull_threshold=args.hull_threshold, fouling_threshold=args.fouling_threshold,
                         coverage_threshold=args.coverage_threshold, gap_s=args.gap,
                         components=args.components, per_group=args.per_group, seed=args.seed)
    with _open_container(args.embeddings) as container:
        native = args.native_fps or estimate_fps([m.timestamp_s for m in container.manifest])
        if native is None:
            native = cfg.sample_fps
        sample_stride(native, cfg.sample_fps)
        report = build_report(container, hull_bank, fouling_bank, cfg, native_fps=native, n_jobs=args.jobs)
    _write(args.out_report, write_report_json(report))
    _write(args.out_timeline, write_timeline_csv(report.hull_points))
    s = report.summary
    print(f"frames {s['n_frames']}  hull_present {s['n_hull_present']}  "
          f"fouled_fraction {s['fouled_fraction']:.4f}  peak_coverage {s['peak_smoothed_coverage']:.4f}")
    for i, seg in enumerate(s["segments"]):
        print(f"segment {i}: {seg['start_s']:.2f}-{seg['end_s']:.2f}s  points {seg['n_points']}  "
              f"fouled {seg['fouled_fraction']:.3f}")
    sel = report.selected_frames
    print(f"representative frames: {len(sel.fouling_present)} fouled, {len(sel.fouling_absent)} clean")
    return 0


def cmd_exemplars(args) -> int:
    bank = read_bank_json(_read(args.bank))
    with _open_container(args.embeddings) as container:
        frames = list(container)
    ex = exemplars(bank, frames, n=args.top, k=args.components)
    _write(args.out, write_exemplars_json(ex))
    print(f"{len(ex)} prototypes, up to {args.top} exemplars each")
    return 0


def cmd_summarize(args) -> int:
    with _open_container(args.embeddings) as container:
        frames = list(container)
    if not frames:
        raise DataError("container holds no frames")
    X = np.stack([f.global_embedding for f in frames])
    sel = skmps(X, [f.frame_id for f in frames], [f.timestamp_s for f in frames],
                min(args.clusters, len(frames)), args.seed)
    doc = {"schema_version": 1, "clusters": len(sel),
           "selected": [{"frame_id": s.frame_id, "timestamp_s": s.timestamp_s, "cluster": s.cluster}
                        for s in sel]}
    _write(args.out, canonical_json(doc))
    for s in sel:
        print(f"{s.timestamp_s:10.3f}  {s.frame_id}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    def global_flags(default):
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--seed", type=int, default=default(0), help="base RNG seed (default 0)")
        g.add_argument("--log-level", default=default("WARNING"),
                       choices=["DEBUG", "INFO", "WARNING", "ERROR"])
        return g

    # flags may appear before or after the subcommand; only the top level sets defaults
    parser = _Parser(prog="foulscope", description=__doc__.splitlines()[0],
                     parents=[global_flags(lambda v: v)])
    common = global_flags(lambda v: argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", parents=[common], help="fit a prototype bank from labelled embeddings")
    p.add_argument("--embeddings", required=True, type=Path)
    p.add_argument("--labels", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--prototypes-per-class", type=_positive_int, default=10)
    p.add_argument("--components", type=_positive_int, default=5)
    p.add_argument("--seeds", type=_positive_int, default=10, help="number of seeds, starting at --seed")
    p.add_argument("--refine-rounds", type=int, default=3)
    p.add_argument("--retain-min", type=_positive_int, default=1)
    p.add_argument("--temperature", type=_positive_float, default=0.1)
    p.add_argument("--positive-class", default="fouling")
    p.add_argument("--negative-class", default="no_fouling")
    p.add_argument("--exemplars", type=int, default=5, help="exemplars stored per prototype (0 = none)")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("score", parents=[common], help="score frames with a bank")
    p.add_argument("--bank", required=True, type=Path)
    p.add_argument("--embeddings", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--coverage-threshold", type=_fraction, default=0.5)
    p.add_argument("--components", type=_positive_int, default=5)
    p.add_argument("--heatmap-out", type=Path)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", parents=[common], help="average precision and threshold selection")
    p.add_argument("--scores", required=True, type=Path)
    p.add_argument("--labels", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--pr-out", type=Path, help="PR curve CSV (default: <out>.pr.csv)")
    p.add_argument("--target-recall", type=_fraction, default=0.9)
    p.add_argument("--split", choices=["train", "validation", "test"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("video", parents=[common], help="analyse a transect of embedded frames")
    p.add_argument("--hull-bank", required=True, type=Path)
    p.add_argument("--fouling-bank", required=True, type=Path)
    p.add_argument("--embeddings", required=True, type=Path)
    p.add_argument("--out-report", required=True, type=Path)
    p.add_argument("--out-timeline", required=True, type=Path)
    p.add_argument("--sample-fps", type=_positive_float, default=10.0)
    p.add_argument("--native-fps", type=_positive_float,
                   help="frame rate of the container (default: inferred from timestamps)")
    p.add_argument("--bandwidth", type=_positive_float, default=1.0)
    p.add_argument("--truncation", type=_positive_float, default=4.0)
    p.add_argument("--hull-threshold", type=_fraction, default=0.75)
    p.add_argument("--fouling-threshold", type=_fraction, default=0.25)
    p.add_argument("--coverage-threshold", type=_fraction, default=0.5)
    p.add_argument("--gap", type=_positive_float, default=2.0)
    p.add_argument("--per-group", type=_positive_int, default=8)
    p.add_argument("--components", type=_positive_int, default=5)
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.set_defaults(func=cmd_video)

    p = sub.add_parser("exemplars", parents=[common], help="top training components per prototype")
    p.add_argument("--bank", required=True, type=Path)
    p.add_argument("--embeddings", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--top", type=_positive_int, default=5)
    p.add_argument("--components", type=_positive_int, default=5)
    p.set_defaults(func=cmd_exemplars)

    p = sub.add_parser("summarize", parents=[common], help="representative frames of a container")
    p.add_argument("--embeddings", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--clusters", type=_positive_int, default=8)
    p.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help exits 0, bad flags exit 2
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format="level=%(levelname)s logger=%(name)s msg=%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"foulscope: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError, KeyError) as exc:
        print(f"foulscope: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # exit codes are limited to 0/2/3
        log.debug("unexpected failure", exc_info=True)
        print(f"foulscope: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
