"""Command-line front end: explain, saturate, aggregate, metrics, vocab, monotest."""
from __future__ import annotations

import argparse
import csv
import io
import sys
import time
from pathlib import Path

import numpy as np

from .analytics import (
    BEHAVIOR_CAP,
    Behavior,
    BehaviorInstances,
    Selector,
    build_behavior,
    cumulative_coverage_at_length,
    gen_at_k,
    individual_coverage,
    max_cov_at_k,
    mixed_coverage,
    monotonicity_test,
    parsimony_stats,
    plausibility,
    vocab_alpha_test,
    vocab_order_by_strength,
    vocab_prune_similar,
    SignedExplanationKey,
)
from .bundle import (
    Bundle,
    ExplanationRecord,
    load_bundle,
    read_records,
    read_report,
    write_records,
    write_report,
)
from .core import concept_strengths
from .erasure import (
    ERASER_KINDS,
    LEACE_TRAIN_ROWS,
    SPLICE_EPS,
    SPLICE_LAMBDA,
    Eraser,
)
from .explain import (
    EnumBudget,
    InstanceContext,
    canon,
    naive_enum,
    xp_enum,
    xp_sat_enum,
)


def _parse_behavior(spec: str, class_names) -> Selector:
    parts = spec.split(":")

    def resolve(token: str) -> int:
        if token in class_names:
            return class_names.index(token)
        k = int(token)
        if not 0 <= k < len(class_names):
            raise ValueError(f"class index {k} outside [0, {len(class_names)})")
        return k

    if parts[0] == "correct" and len(parts) == 2:
        return Selector.correct(resolve(parts[1]))
    if parts[0] == "misclass" and len(parts) == 3:
        return Selector.misclass(resolve(parts[1]), resolve(parts[2]))
    raise ValueError(f"behavior must be correct:K or misclass:Ki:Kj, got {spec!r}")


def _build_eraser(kind: str, bundle: Bundle, flags: dict) -> Eraser:
    return Eraser(
        kind,
        bundle.bank,
        train=bundle.embeddings if kind == "leace" else None,
        train_labels=bundle.concept_labels if kind == "leace" else None,
        splice_lambda=flags["splice_lambda"],
        splice_eps=flags["splice_eps"],
        leace_train_rows=flags["leace_train"],
    )


def _eraser_flags(args) -> dict:
    return {
        "splice_lambda": args.splice_lambda,
        "splice_eps": args.splice_eps,
        "leace_train": args.leace_train,
    }


def _add_eraser_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eraser", choices=ERASER_KINDS, default="ortho")
    p.add_argument("--splice-lambda", type=float, default=SPLICE_LAMBDA)
    p.add_argument("--splice-eps", type=float, default=SPLICE_EPS)
    p.add_argument("--leace-train", type=int, default=LEACE_TRAIN_ROWS)


def _write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(header)
    for row in rows:
        out.writerow(row)
    path.write_text(buf.getvalue())


def _fmt(x: float) -> str:
    return repr(float(x))


def _records_by_kind(records) -> dict[str, dict[str, set]]:
    out: dict[str, dict[str, set]] = {"axp": {}, "cxp": {}}
    for r in records:
        out[r.kind].setdefault(r.image_id, set()).add(canon(r.concepts))
    return out


def _signed_histogram(records, kind: str) -> dict[SignedExplanationKey, int]:
    h: dict[SignedExplanationKey, int] = {}
    seen: set[tuple] = set()
    for r in records:
        if r.kind != kind:
            continue
        key = SignedExplanationKey(canon(r.concepts), tuple(r.signs))
        dedup = (r.image_id, key)
        if dedup in seen:
            continue
        seen.add(dedup)
        h[key] = h.get(key, 0) + 1
    return h


def _signed_per_image(records, kind: str) -> dict[str, frozenset[SignedExplanationKey]]:
    acc: dict[str, set[SignedExplanationKey]] = {}
    for r in records:
        if r.kind != kind:
            continue
        acc.setdefault(r.image_id, set()).add(
            SignedExplanationKey(canon(r.concepts), tuple(r.signs))
        )
    return {k: frozenset(v) for k, v in acc.items()}


def _behavior_from_report(report: dict, class_names) -> Behavior:
    name = report["behavior"]["name"]
    selector = _parse_behavior(name, class_names)
    return Behavior(name, selector, tuple(report["behavior"]["image_ids"]))


def _build_contexts(bundle: Bundle, eraser: Eraser, image_ids) -> dict[str, InstanceContext]:
    return {
        image_id: InstanceContext.build(
            image_id, bundle.embeddings.row(image_id), eraser, bundle.head
        )
        for image_id in image_ids
    }


def cmd_explain(args) -> int:
    bundle = load_bundle(args.bundle)
    if bundle.labels is None:
        raise SystemExit("bundle carries no labels file; explain needs one")
    if args.eraser == "leace" and args.enum == "xpenum":
        print(
            "warning: leace + xpenum rarely reuses fitted transforms and can be very slow",
            file=sys.stderr,
        )
    selector = _parse_behavior(args.behavior, bundle.head.class_names)
    eraser = _build_eraser(args.eraser, bundle, _eraser_flags(args))
    behavior, admission = build_behavior(
        bundle.embeddings,
        bundle.labels,
        selector,
        [eraser],
        bundle.head,
        cap=args.cap,
        seed=args.seed,
    )
    budget = EnumBudget(
        max_depth=args.depth,
        max_iterations=args.max_iters,
        timeout=args.timeout_secs,
    )
    clock = time.perf_counter_ns if args.clock == "wall" else (lambda: 0)

    records: list[ExplanationRecord] = []
    per_image_ns: dict[str, int] = {}
    truncated_images: list[str] = []
    counts = {"axp": 0, "cxp": 0}
    t_total = clock()
    for image_id in behavior.image_ids:
        z = bundle.embeddings.row(image_id)
        ctx = InstanceContext.build(image_id, z, eraser, bundle.head)
        strengths = concept_strengths(z, bundle.bank).values
        t_img = clock()
        found: dict[str, tuple] = {}
        if args.enum == "naive":
            for kind in ("axp", "cxp"):
                res = naive_enum(ctx, kind, budget)
                found[kind] = (res.explanations, res.truncated)
        else:
            res = xp_enum(ctx, budget)
            found["axp"] = (res.axps, not res.exhausted)
            found["cxp"] = (res.cxps, not res.exhausted)
        elapsed = clock() - t_img
        per_image_ns[image_id] = elapsed
        image_truncated = False
        for kind in ("axp", "cxp"):
            xs, truncated = found[kind]
            image_truncated = image_truncated or truncated
            counts[kind] += len(xs)
            for x in sorted(xs):
                records.append(
                    ExplanationRecord(
                        image_id=image_id,
                        kind=kind,
                        concepts=x,
                        signs=tuple(int(np.sign(strengths[c])) for c in x),
                        eraser=args.eraser,
                        enumerator=args.enum,
                        elapsed_ns=elapsed,
                        truncated=truncated,
                    )
                )
        if image_truncated:
            truncated_images.append(image_id)
    total_ns = clock() - t_total

    records.sort(key=lambda r: (r.image_id, r.kind, r.concepts))
    write_records(args.out, records)
    write_report(
        args.report,
        {
            "admission": {
                "selected": admission.selected,
                "inexplicable": admission.inexplicable,
                "rejected": admission.rejected,
                "admitted": admission.admitted,
                "capped": admission.capped,
            },
            "behavior": {"name": behavior.name, "image_ids": list(behavior.image_ids)},
            "counts": {
                "images": len(behavior),
                "axps": counts["axp"],
                "cxps": counts["cxp"],
            },
            "flags": {
                "behavior": args.behavior,
                "cap": args.cap,
                "clock": args.clock,
                "depth": args.depth,
                "enum": args.enum,
                "eraser": args.eraser,
                "leace_train": args.leace_train,
                "max_iters": args.max_iters,
                "seed": args.seed,
                "splice_eps": args.splice_eps,
                "splice_lambda": args.splice_lambda,
                "timeout_secs": args.timeout_secs,
            },
            "timing": {
                "total_elapsed_ns": max(total_ns, max(per_image_ns.values(), default=0)),
                "per_image_elapsed_ns": per_image_ns,
            },
            "truncated_images": truncated_images,
        },
    )
    print(
        f"{len(behavior)} images, {counts['axp']} axps, {counts['cxp']} cxps -> {args.out}"
    )
    return 0


def cmd_saturate(args) -> int:
    bundle = load_bundle(args.bundle)
    report = read_report(args.report)
    flags = report["flags"]
    eraser = _build_eraser(
        flags["eraser"],
        bundle,
        {
            "splice_lambda": flags["splice_lambda"],
            "splice_eps": flags["splice_eps"],
            "leace_train": flags["leace_train"],
        },
    )
    image_ids = report["behavior"]["image_ids"]
    ctxs = _build_contexts(bundle, eraser, image_ids)
    records = read_records(args.infile)
    by_kind = _records_by_kind(records)
    clock = time.perf_counter_ns if flags.get("clock") == "wall" else (lambda: 0)

    out_records: list[ExplanationRecord] = []
    skipped: set[str] = set()
    for kind in ("axp", "cxp"):
        t0 = clock()
        result = xp_sat_enum(ctxs.values(), by_kind[kind], kind)
        elapsed = clock() - t0
        skipped.update(result.skipped)
        for image_id, xs in sorted(result.per_image.items()):
            strengths = concept_strengths(bundle.embeddings.row(image_id), bundle.bank).values
            for x in sorted(xs):
                out_records.append(
                    ExplanationRecord(
                        image_id=image_id,
                        kind=kind,
                        concepts=x,
                        signs=tuple(int(np.sign(strengths[c])) for c in x),
                        eraser=flags["eraser"],
                        enumerator="xpsat",
                        elapsed_ns=elapsed,
                        truncated=False,
                    )
                )
    out_records.sort(key=lambda r: (r.image_id, r.kind, r.concepts))
    write_records(args.out, out_records)
    if skipped:
        print(f"warning: skipped images with eraser failures: {sorted(skipped)}", file=sys.stderr)
    print(f"{len(out_records)} saturated records -> {args.out}")
    return 0


def cmd_aggregate(args) -> int:
    records = read_records(args.infile)
    rows = []
    for kind in ("axp", "cxp"):
        h = _signed_histogram(records, kind)
        for key, count in sorted(h.items(), key=lambda kv: (-kv[1], kv[0].canonical())):
            rows.append([kind, key.canonical(), count])
    _write_csv(Path(args.out), ["kind", "key", "count"], rows)
    print(f"{len(rows)} histogram rows -> {args.out}")
    return 0


def cmd_metrics(args) -> int:
    bundle = load_bundle(args.bundle)
    report = read_report(args.report)
    behavior = _behavior_from_report(report, bundle.head.class_names)
    records = read_records(args.infile)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    for kind in ("axp", "cxp"):
        h = _signed_histogram(records, kind)
        per_image = _signed_per_image(records, kind)

        coverage = individual_coverage(h, behavior)
        _write_csv(
            out_dir / f"coverage_{kind}.csv",
            ["key", "length", "coverage"],
            [
                [key.canonical(), len(key), _fmt(cov)]
                for key, cov in sorted(coverage.items(), key=lambda kv: (-kv[1], kv[0].canonical()))
            ],
        )

        chosen, counts = max_cov_at_k(per_image, behavior, args.k)
        _write_csv(
            out_dir / f"maxcov_{kind}.csv",
            ["k", "key", "covered", "fraction"],
            [
                [i + 1, key.canonical(), count, _fmt(count / max(1, len(behavior)))]
                for i, (key, count) in enumerate(zip(chosen, counts))
            ],
        )

        _write_csv(
            out_dir / f"parsimony_{kind}.csv",
            ["length", "count", "cov_min", "cov_q1", "cov_median", "cov_q3", "cov_max"],
            [
                [
                    row.length,
                    row.count,
                    _fmt(row.cov_min),
                    _fmt(row.cov_q1),
                    _fmt(row.cov_median),
                    _fmt(row.cov_q3),
                    _fmt(row.cov_max),
                ]
                for row in parsimony_stats(h, behavior)
            ],
        )

        max_len = max((len(key) for key in h), default=0)
        _write_csv(
            out_dir / f"cumulative_{kind}.csv",
            ["k", "value"],
            [
                [k, _fmt(cumulative_coverage_at_length(h, behavior, k))]
                for k in range(1, max_len + 1)
            ],
        )

        if bundle.relevance and behavior.name in bundle.relevance:
            labels = bundle.relevance[behavior.name]
            _write_csv(
                out_dir / f"plausibility_{kind}.csv",
                ["key", "validity_ratio", "category"],
                [
                    [key.canonical(), _fmt(ratio), category]
                    for key in sorted(h, key=lambda x: x.canonical())
                    for ratio, category in [plausibility(key, labels)]
                ],
            )

    if args.train and args.test:
        train_records = read_records(args.train)
        test_records = read_records(args.test)
        rows = []
        for kind in ("axp", "cxp"):
            h_train = _signed_histogram(train_records, kind)
            h_test = _signed_histogram(test_records, kind)
            for k in range(1, args.k + 1):
                rows.append([kind, k, _fmt(gen_at_k(h_train, h_test, k))])
        _write_csv(out_dir / "gen.csv", ["kind", "k", "value"], rows)

    if args.mix_in:
        mix_reports = [read_report(p) for p in args.mix_report]
        behaviors = [behavior] + [
            _behavior_from_report(r, bundle.head.class_names) for r in mix_reports
        ]
        mix_records = records + [r for p in args.mix_in for r in read_records(p)]
        rows = []
        for kind in ("axp", "cxp"):
            per_image = _signed_per_image(mix_records, kind)
            mixed = mixed_coverage(behaviors, per_image)
            for key, cov in sorted(mixed.items(), key=lambda kv: (-kv[1], kv[0].canonical())):
                rows.append([kind, key.canonical(), _fmt(cov)])
        _write_csv(out_dir / "mixed.csv", ["kind", "key", "coverage"], rows)

    print(f"metric tables -> {out_dir}")
    return 0


def cmd_vocab(args) -> int:
    bundle = load_bundle(args.bundle)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.order:
        order = vocab_order_by_strength(bundle.embeddings, bundle.bank)
        strengths = np.vstack(
            [concept_strengths(z, bundle.bank).values for z in bundle.embeddings.data]
        )
        mean_abs = np.abs(strengths).mean(axis=0)
        _write_csv(
            out_dir / "order.csv",
            ["rank", "concept_index", "name", "mean_abs_strength"],
            [
                [rank, i, bundle.bank.names[i], _fmt(mean_abs[i])]
                for rank, i in enumerate(order)
            ],
        )

    if args.alpha:
        sizes = [int(s) for s in args.alpha.split(",")]
        flags = _eraser_flags(args)

        def factory(sub_bank):
            size = sub_bank.size
            labels = (
                bundle.concept_labels[:, :size]
                if bundle.concept_labels is not None
                else None
            )
            return Eraser(
                args.eraser,
                sub_bank,
                train=bundle.embeddings if args.eraser == "leace" else None,
                train_labels=labels if args.eraser == "leace" else None,
                splice_lambda=flags["splice_lambda"],
                splice_eps=flags["splice_eps"],
                leace_train_rows=flags["leace_train"],
            )

        alphas = vocab_alpha_test(
            bundle.embeddings, bundle.bank, bundle.head, sizes, factory
        )
        _write_csv(
            out_dir / "alpha.csv",
            ["size", "alpha"],
            [[size, _fmt(alphas[size])] for size in sizes],
        )

    if args.prune_threshold is not None:
        # manifest order stands in for corpus frequency: earlier = more frequent
        ranks = list(range(bundle.bank.size))
        _, kept = vocab_prune_similar(bundle.bank, ranks, args.prune_threshold)
        _write_csv(
            out_dir / "pruned.csv",
            ["kept_index", "name"],
            [[i, bundle.bank.names[i]] for i in kept],
        )

    print(f"vocabulary tables -> {out_dir}")
    return 0


def cmd_monotest(args) -> int:
    bundle = load_bundle(args.bundle)
    report = read_report(args.report)
    flags = report["flags"]
    eraser = _build_eraser(
        flags["eraser"],
        bundle,
        {
            "splice_lambda": flags["splice_lambda"],
            "splice_eps": flags["splice_eps"],
            "leace_train": flags["leace_train"],
        },
    )
    image_ids = report["behavior"]["image_ids"]
    ctxs = _build_contexts(bundle, eraser, image_ids)
    records = read_records(args.infile)
    by_kind = _records_by_kind(records)

    def top_unsigned(kind: str) -> list[tuple[int, ...]]:
        h = _signed_histogram(records, kind)
        ranked = sorted(h.items(), key=lambda kv: (-kv[1], kv[0].canonical()))
        seen: set[tuple[int, ...]] = set()
        out = []
        for key, _ in ranked:
            if key.concepts not in seen:
                seen.add(key.concepts)
                out.append(key.concepts)
        return out

    instances = BehaviorInstances(
        ctxs,
        {i: frozenset(xs) for i, xs in by_kind["axp"].items()},
        {i: frozenset(xs) for i, xs in by_kind["cxp"].items()},
    )
    result = monotonicity_test(
        instances,
        top_unsigned("axp"),
        top_unsigned("cxp"),
        n_top=args.top,
        n_images=args.images,
        n_added=args.added,
        seed=args.seed,
    )
    rows = [
        ["axp", "" if result.o_a is None else _fmt(result.o_a), len(result.skipped_axps)],
        ["cxp", "" if result.o_c is None else _fmt(result.o_c), len(result.skipped_cxps)],
    ]
    _write_csv(Path(args.out), ["kind", "o_percent", "skipped"], rows)
    print(f"monotonicity rates -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conxp",
        description="Concept-based abductive/contrastive explanations over embedding bundles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explain", help="enumerate per-image explanations for a behavior")
    p.add_argument("--bundle", required=True)
    p.add_argument("--behavior", required=True, help="correct:K or misclass:Ki:Kj")
    p.add_argument("--enum", choices=("naive", "xpenum"), default="naive")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--max-iters", type=int, default=250)
    p.add_argument("--timeout-secs", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cap", type=int, default=BEHAVIOR_CAP)
    p.add_argument("--clock", choices=("none", "wall"), default="none")
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    _add_eraser_args(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("saturate", help="cross-image saturation of found explanations")
    p.add_argument("--bundle", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_saturate)

    p = sub.add_parser("aggregate", help="signed histograms from a JSONL file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("metrics", help="coverage/parsimony/plausibility tables")
    p.add_argument("--bundle", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("--mix-in", action="append", default=[])
    p.add_argument("--mix-report", action="append", default=[])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("vocab", help="vocabulary ordering, alpha sizing, pruning")
    p.add_argument("--bundle", required=True)
    p.add_argument("--order", action="store_true")
    p.add_argument("--alpha", help="comma-separated prefix sizes")
    p.add_argument("--prune-threshold", type=float, default=None)
    p.add_argument("--out", required=True)
    _add_eraser_args(p)
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("monotest", help="empirical monotonicity rates")
    p.add_argument("--bundle", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--top", type=int, default=50)
    p.add_argument("--images", type=int, default=5)
    p.add_argument("--added", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_monotest)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "metrics" and len(args.mix_in) != len(args.mix_report):
        raise SystemExit("--mix-in and --mix-report must be given in pairs")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
