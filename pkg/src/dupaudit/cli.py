"""Command-line entry point wiring all modules into subcommands.

Exit codes: 0 success, 1 usage error, 2 data error.  Every subcommand writes
a ``<output>.manifest.json`` recording input hashes and parameters.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import __version__
from .annotation import (
    DEFAULT_STOP_THRESHOLD,
    Session,
    parse_annotations,
    resume_session,
)
from .dataset_io import num_classes, read_class_names, read_split
from .errors import ContractViolationError, DataError
from .evalgap import (
    PredictionSet,
    cross_duplicate_indices,
    parse_predictions,
    render_gap_report,
    report_from_prediction_sets,
)
from .features import read_features
from .manifest import sha256_bytes, utc_now, write_manifest
from .mining import QueueProvenance, build_queue, mine_cross, mine_within, queue_csv, read_queue, write_queue
from .replacement import (
    ReplacementSession,
    apply_replacements,
    duplicate_test_indices,
    load_pool,
    parse_decisions,
)
from .stats import compute_stats, render_report


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; our contract reserves 2 for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dupaudit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"dupaudit {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("mine", help="mine nearest-neighbor duplicate candidates")
    p.add_argument("--train-features", required=True)
    p.add_argument("--test-features", required=True)
    p.add_argument("--out", required=True, help="queue output path (CSV written alongside)")
    p.add_argument("--within-test", action="store_true", help="also mine duplicates within the test set")
    p.add_argument("--threads", type=int, default=os.cpu_count(), help="worker threads")

    p = sub.add_parser("annotate", help="serve the annotation (and replacement) web session")
    p.add_argument("--queue", required=True)
    p.add_argument("--train", required=True, help="training split binary")
    p.add_argument("--test", required=True, help="test split binary")
    p.add_argument("--format", required=True, choices=["cifar10", "cifar100"])
    p.add_argument("--out", required=True, help="annotations JSONL (appended; resumed if present)")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--stop-threshold", type=int, default=DEFAULT_STOP_THRESHOLD)
    p.add_argument("--annotator", default="anonymous")
    p.add_argument("--class-names", help="sidecar class-name file")
    p.add_argument("--ui", help="directory with the static web UI")
    p.add_argument("--pool", help="replacement candidate pool directory")
    p.add_argument("--decisions", help="replacement decisions JSONL (with --pool)")
    p.add_argument("--train-features", help="FTRS file for the 3-NN check (with --pool)")
    p.add_argument("--test-features", help="FTRS file for the 3-NN check (with --pool)")

    p = sub.add_parser("stats", help="aggregate annotations into duplicate statistics")
    p.add_argument("--annotations", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--format", required=True, choices=["cifar10", "cifar100"])
    p.add_argument("--class-names")
    p.add_argument("--top-k", type=int, default=14)
    p.add_argument("--out-md", required=True)
    p.add_argument("--out-csv", required=True)

    p = sub.add_parser("purge", help="apply approved replacements and emit the purged test set")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--format", required=True, choices=["cifar10", "cifar100"])
    p.add_argument("--annotations", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--decisions", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evalgap", help="error-rate gap report from prediction files")
    p.add_argument("--labels-orig", required=True, help="original test split binary")
    p.add_argument("--labels-fair", required=True, help="purged test split binary")
    p.add_argument("--format", required=True, choices=["cifar10", "cifar100"])
    p.add_argument(
        "--pred",
        action="append",
        required=True,
        metavar="NAME=ORIG.txt,FAIR.txt",
        help="per-model prediction files (repeatable)",
    )
    p.add_argument("--annotations", help="annotation JSONL for the duplicate-subset errors")
    p.add_argument("--out-md", required=True)
    p.add_argument("--out-csv", required=True)

    p = sub.add_parser("validate", help="format checks for toolkit files")
    p.add_argument("--features", action="append", default=[])
    p.add_argument("--split", action="append", default=[])
    p.add_argument("--format", choices=["cifar10", "cifar100"], help="format of --split files")
    p.add_argument("--queue", action="append", default=[])
    p.add_argument("--annotations", action="append", default=[])
    p.add_argument("--decisions", action="append", default=[])

    return parser


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}")


def _write_text(path: str, text: str):
    Path(path).write_text(text)


def cmd_mine(args) -> int:
    started = utc_now()
    train_bytes = _read(args.train_features)
    test_bytes = _read(args.test_features)
    train = read_features(train_bytes)
    test = read_features(test_bytes)
    if not (train.normalized and test.normalized):
        raise ContractViolationError(
            "mining requires L2-normalized features (normalized flag unset)"
        )
    threads = args.threads
    cross = mine_cross(test, train, threads=threads)
    within = mine_within(test, threads=threads) if args.within_test else []
    provenance = QueueProvenance(
        test_features_sha256=sha256_bytes(test_bytes),
        train_features_sha256=sha256_bytes(train_bytes),
    )
    queue = build_queue(cross, within, provenance)
    Path(args.out).write_bytes(write_queue(queue))
    _write_text(args.out + ".csv", queue_csv(queue))
    write_manifest(
        args.out,
        "mine",
        {"train_features": args.train_features, "test_features": args.test_features},
        {"within_test": args.within_test, "threads": threads, "pairs": len(queue)},
        started,
    )
    print(f"mined {len(queue)} candidate pairs -> {args.out}")
    return 0


def _load_split(path: str, fmt: str, role: str, class_names_path: str | None = None):
    split = read_split(_read(path), fmt, role=role)
    if class_names_path:
        names = read_class_names(Path(class_names_path).read_text(), num_classes(fmt))
        split = split.with_class_names(names)
    return split


def cmd_annotate(args) -> int:
    from .server import AuditServer  # deferred: pulls in Pillow

    started = utc_now()
    queue = read_queue(_read(args.queue))
    train_split = _load_split(args.train, args.format, "train")
    test_split = _load_split(args.test, args.format, "test", args.class_names)

    out = Path(args.out)
    existing = []
    if out.exists():
        text = out.read_text()
        existing = parse_annotations(text, tolerate_torn_tail=True)
        non_blank = [line for line in text.splitlines() if line.strip()]
        if len(existing) < len(non_blank):
            # a torn tail write was dropped; rewrite so appends start on a clean line
            out.write_text("".join(r.to_json() + "\n" for r in existing))
            print(f"dropped a torn trailing line in {out} (crash recovery)", flush=True)
    sink = open(out, "a", encoding="utf-8")
    session = resume_session(
        existing, queue, stop_threshold=args.stop_threshold, annotator=args.annotator, sink=sink
    )

    replacement_factory = None
    if args.pool:
        for flag in ("decisions", "train_features", "test_features"):
            if not getattr(args, flag):
                raise DataError(f"--pool requires --{flag.replace('_', '-')}")
        pool = load_pool(args.pool, args.format)
        train_features = read_features(_read(args.train_features))
        test_features = read_features(_read(args.test_features))
        decisions_path = Path(args.decisions)

        def replacement_factory(completed_session: Session) -> ReplacementSession:
            targets = duplicate_test_indices(completed_session.records)
            replay = (
                parse_decisions(decisions_path.read_text()) if decisions_path.exists() else []
            )
            rs = ReplacementSession(
                pool=pool,
                test_split=test_split,
                train_features=train_features,
                test_features=test_features,
                targets=targets,
                decider=args.annotator,
            )
            rs.replay(replay)
            rs._sink = open(decisions_path, "a", encoding="utf-8")
            return rs

    server = AuditServer(
        session,
        train_split,
        test_split,
        replacement_factory=replacement_factory,
        ui_dir=args.ui,
        port=args.port,
    )
    inputs = {"queue": args.queue, "train": args.train, "test": args.test}
    if args.pool:
        inputs.update(train_features=args.train_features, test_features=args.test_features)
    write_manifest(
        args.out,
        "annotate",
        inputs,
        {
            "stop_threshold": args.stop_threshold,
            "annotator": args.annotator,
            "format": args.format,
            "port": server.port,
        },
        started,
    )
    print(f"annotation session on http://127.0.0.1:{server.port}/ ({len(queue)} pairs)", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def cmd_stats(args) -> int:
    started = utc_now()
    annotations = parse_annotations(Path(args.annotations).read_text())
    test_split = _load_split(args.test, args.format, "test", args.class_names)
    stats = compute_stats(annotations, test_split)
    md, csv_text = render_report(stats, test_split.class_names, top_k=args.top_k)
    _write_text(args.out_md, md)
    _write_text(args.out_csv, csv_text)
    write_manifest(
        args.out_md,
        "stats",
        {"annotations": args.annotations, "test": args.test},
        {"top_k": args.top_k, "format": args.format},
        started,
    )
    print(
        f"{stats.cross_duplicates} cross + {stats.within_duplicates} within duplicate pairs "
        f"({stats.fraction * 100:.2f}% of {stats.test_size})"
    )
    return 0


def cmd_purge(args) -> int:
    from .dataset_io import write_split

    started = utc_now()
    test_split = _load_split(args.test, args.format, "test")
    annotations = parse_annotations(Path(args.annotations).read_text())
    decisions = parse_decisions(Path(args.decisions).read_text())
    pool = load_pool(args.pool, args.format)
    duplicates = duplicate_test_indices(annotations)
    purged = apply_replacements(test_split, decisions, duplicates, pool)
    Path(args.out).write_bytes(write_split(purged, args.format))
    write_manifest(
        args.out,
        "purge",
        {
            "train": args.train,
            "test": args.test,
            "annotations": args.annotations,
            "decisions": args.decisions,
        },
        {"format": args.format, "replaced": len(duplicates)},
        started,
    )
    print(f"purged split written to {args.out} ({len(duplicates)} records replaced)")
    return 0


def cmd_evalgap(args) -> int:
    started = utc_now()
    labels_orig = [r.fine_label for r in _load_split(args.labels_orig, args.format, "test").records]
    labels_fair = [r.fine_label for r in _load_split(args.labels_fair, args.format, "test").records]
    pairs = []
    inputs = {"labels_orig": args.labels_orig, "labels_fair": args.labels_fair}
    for spec in args.pred:
        if "=" not in spec or "," not in spec.split("=", 1)[1]:
            raise DataError(f"--pred expects NAME=ORIG.txt,FAIR.txt, got {spec!r}")
        name, files = spec.split("=", 1)
        orig_path, fair_path = files.split(",", 1)
        orig = parse_predictions(Path(orig_path).read_text(), fallback_name=name)
        fair = parse_predictions(Path(fair_path).read_text(), fallback_name=name)
        # the explicit NAME on the flag wins over any header comment
        pairs.append(
            (
                PredictionSet(model=name, predictions=orig.predictions),
                PredictionSet(model=name, predictions=fair.predictions),
            )
        )
        inputs[f"pred_orig[{name}]"] = orig_path
        inputs[f"pred_fair[{name}]"] = fair_path
    dup_indices = None
    if args.annotations:
        annotations = parse_annotations(Path(args.annotations).read_text())
        dup_indices = cross_duplicate_indices(annotations)
        inputs["annotations"] = args.annotations
    report = report_from_prediction_sets(pairs, labels_orig, labels_fair, dup_indices)
    md, csv_text = render_gap_report(report)
    _write_text(args.out_md, md)
    _write_text(args.out_csv, csv_text)
    write_manifest(
        args.out_md,
        "evalgap",
        inputs,
        {"models": [p[0].model for p in pairs], "format": args.format},
        started,
    )
    mean_rel = "-" if report.mean_gap_rel is None else f"{report.mean_gap_rel * 100:.2f}%"
    print(f"mean gap {report.mean_gap_abs * 100:.2f} pp, mean relative gap {mean_rel}")
    return 0


def cmd_validate(args) -> int:
    checked = 0
    for path in args.features:
        read_features(_read(path))
        print(f"ok: feature file {path}")
        checked += 1
    for path in args.split:
        if not args.format:
            raise DataError("--split validation requires --format")
        split = read_split(_read(path), args.format)
        print(f"ok: {args.format} split {path} ({len(split)} records)")
        checked += 1
    for path in args.queue:
        queue = read_queue(_read(path))
        print(f"ok: candidate queue {path} ({len(queue)} pairs)")
        checked += 1
    for path in args.annotations:
        records = parse_annotations(Path(path).read_text())
        print(f"ok: annotations {path} ({len(records)} records)")
        checked += 1
    for path in args.decisions:
        decisions = parse_decisions(Path(path).read_text())
        print(f"ok: decisions {path} ({len(decisions)} records)")
        checked += 1
    if not checked:
        raise DataError("validate: no files given (use --features/--split/--queue/...)")
    return 0


_COMMANDS = {
    "mine": cmd_mine,
    "annotate": cmd_annotate,
    "stats": cmd_stats,
    "purge": cmd_purge,
    "evalgap": cmd_evalgap,
    "validate": cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.subcommand](args)
    except DataError as exc:
        print(f"dupaudit {args.subcommand}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"dupaudit {args.subcommand}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
