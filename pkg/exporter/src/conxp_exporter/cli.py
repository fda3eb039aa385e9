"""Command-line front end: build bundles from encoders, run the map checks."""
from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

from conxp import load_bundle

from .checks import sanity_checks
from .export import ExportConfig, export_bundle, read_dataset_dir


def _read_lines(path: str) -> list[str]:
    return [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]


def _read_true_labels(path: str) -> dict[str, int]:
    out: dict[str, int] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["image_id"]] = int(row["true_class"])
    return out


def cmd_bundle(args) -> int:
    config = ExportConfig(
        reference_encoder=args.reference,
        vision_encoder=args.vision,
        center=not args.no_center,
    )
    items = read_dataset_dir(args.dataset)
    true_labels = _read_true_labels(args.true_labels) if args.true_labels else None
    root = export_bundle(
        config,
        items,
        _read_lines(args.vocab),
        _read_lines(args.classes),
        args.out,
        true_labels=true_labels,
    )
    load_bundle(root)  # exported bundles must always validate
    print(f"bundle with {len(items)} images -> {root}")
    return 0


def cmd_check(args) -> int:
    bundle = load_bundle(args.bundle)
    rows = sanity_checks(bundle, beta=args.beta, gamma=args.gamma, eraser_kind=args.eraser)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["check", "subject", "n_images", "worst", "threshold", "passed"])
    for r in rows:
        writer.writerow([r.check, r.subject, r.n_images, repr(r.worst), repr(r.threshold), r.passed])
    Path(args.out).write_text(buf.getvalue())
    failed = [r for r in rows if not r.passed]
    print(f"{len(rows) - len(failed)}/{len(rows)} checks passed -> {args.out}")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conxp-export",
        description="Export embedding/concept bundles and validate linear maps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bundle", help="encode a dataset directory into a bundle")
    p.add_argument("--reference", required=True, help="encoder spec: toy:<seed>[:<dim>] or module:attr")
    p.add_argument("--vision", default=None, help="optional second encoder for paired samples")
    p.add_argument("--dataset", required=True)
    p.add_argument("--vocab", required=True, help="file with one concept name per line")
    p.add_argument("--classes", required=True, help="file with one class name per line")
    p.add_argument("--no-center", action="store_true")
    p.add_argument("--true-labels", default=None, help="CSV with image_id,true_class")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bundle)

    p = sub.add_parser("check", help="round-trip / erasure sanity checks for the maps")
    p.add_argument("--bundle", required=True)
    p.add_argument("--beta", type=float, default=0.65)
    p.add_argument("--gamma", type=float, default=0.39)
    p.add_argument("--eraser", default="ortho", choices=("ortho", "splice", "leace"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_check)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
