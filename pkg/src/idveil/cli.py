"""Command-line interface.

Verbs: protect (images -> protected images), edit (protected set -> edits),
purify (images -> purified images), evaluate (full plan -> records + report),
sweep (budget ablation), ablate (design grid), report (records -> tables).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from idveil.core import ArgumentError, read_png, write_png
from idveil.harness import (
    budget_sweep,
    bundle_from_config,
    design_ablation,
    emit_report,
    evaluate,
    load_config,
    make_report,
    plan_from_config,
    purify_spec_from_label,
    read_records,
    run_edits,
    run_protection,
)
from idveil.purification import purify


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, default=None, help="TOML config file")
    parser.add_argument("--backend", choices=("toy", "real"), default=None,
                        help="override backend kind")
    parser.add_argument("--seed", type=int, default=None, help="attack rng seed")
    parser.add_argument("--out", type=Path, default=Path("runs/out"),
                        help="output directory")
    parser.add_argument("--jobs", type=int, default=None, help="parallel edit jobs")


def _load(args):
    config = load_config(args.config) if args.config else {}
    bundle = bundle_from_config(config, kind_override=args.backend)
    return config, bundle


def _plan(args, config, dataset=None):
    return plan_from_config(
        config, dataset=dataset or getattr(args, "input", None),
        seed=args.seed, jobs=args.jobs,
    )


def _emit_all(report, out_dir: Path, stem: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    for fmt, ext in (("csv", "csv"), ("json", "json"), ("markdown", "md")):
        path = emit_report(report, fmt, out_dir / f"{stem}.{ext}")
        print(f"wrote {path}")


def cmd_protect(args) -> int:
    config, bundle = _load(args)
    plan = _plan(args, config)
    if args.attack:
        import dataclasses

        plan = dataclasses.replace(plan, methods=(args.attack,))
    results = run_protection(plan, bundle, args.out)
    for (image_id, method), sidecar in sorted(results.items()):
        print(f"protected {image_id} [{method}] linf={sidecar['linf']:.6f}")
    return 0


def cmd_edit(args) -> int:
    config, bundle = _load(args)
    plan = _plan(args, config)
    run_protection(plan, bundle, args.out)  # cached no-op when already done
    done = run_edits(plan, bundle, args.out)
    print(f"edited {len(done)} (image, method, purification, prompt, seed) tuples")
    return 0


def cmd_purify(args) -> int:
    spec = purify_spec_from_label(args.purification)
    src = Path(args.input)
    if not src.is_dir():
        raise ArgumentError(f"input is not a directory: {src}")
    out_dir = args.out / "purified" / spec.label
    out_dir.mkdir(parents=True, exist_ok=True)
    files = sorted(p for p in src.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not files:
        raise ArgumentError(f"no images in {src}")
    for f in files:
        write_png(out_dir / f"{f.stem}.png", purify(read_png(f), spec))
    print(f"purified {len(files)} images -> {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    config, bundle = _load(args)
    plan = _plan(args, config)
    run_protection(plan, bundle, args.out)
    run_edits(plan, bundle, args.out)
    records = evaluate(plan, bundle, args.out)
    print(f"wrote {args.out / 'records.jsonl'} ({len(records)} records)")
    _emit_all(make_report(records, group_by=("method",)), args.out, "report_method")
    if len(plan.purifications) > 1:
        _emit_all(
            make_report(records, group_by=("method", "purification")),
            args.out, "report_method_purification",
        )
    if len({p.category for p in plan.prompts}) > 1:
        _emit_all(
            make_report(records, group_by=("method", "prompt_category")),
            args.out, "report_method_category",
        )
    return 0


def cmd_sweep(args) -> int:
    config, bundle = _load(args)
    plan = _plan(args, config)
    budgets = tuple(float(b) for b in args.budgets.split(","))
    report = budget_sweep(plan, bundle, args.out, budgets=budgets, method=args.method)
    _emit_all(report, args.out, "report_budget")
    return 0


def cmd_ablate(args) -> int:
    config, bundle = _load(args)
    plan = _plan(args, config)
    designs = tuple(args.designs.split(","))
    report = design_ablation(plan, bundle, args.out, designs=designs)
    _emit_all(report, args.out, "report_design")
    return 0


def cmd_report(args) -> int:
    records = read_records(args.records)
    group_by = tuple(args.group_by.split(","))
    report = make_report(records, group_by=group_by)
    stem = "report_" + "_".join(group_by)
    if args.format:
        ext = {"csv": "csv", "json": "json", "markdown": "md"}[args.format]
        path = emit_report(report, args.format, args.out / f"{stem}.{ext}")
        print(f"wrote {path}")
    else:
        _emit_all(report, args.out, stem)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="idveil",
        description="Protect portrait images from instruction-guided editing "
                    "by erasing post-edit biometric identity; evaluate against "
                    "baselines and purification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("protect", help="generate protected images")
    _common(p)
    p.add_argument("--input", type=Path, required=True, help="image file or directory")
    p.add_argument("--attack", default=None, help="attack name (overrides config)")
    p.set_defaults(func=cmd_protect)

    p = sub.add_parser("edit", help="edit protected images across prompts/seeds")
    _common(p)
    p.add_argument("--input", type=Path, default=None, help="dataset directory")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("purify", help="apply one purification transform")
    _common(p)
    p.add_argument("--input", type=Path, required=True, help="image directory")
    p.add_argument("--purification", required=True,
                   help="none|blur|rotate|color_jitter|jpeg<quality>")
    p.set_defaults(func=cmd_purify)

    p = sub.add_parser("evaluate", help="run the full protect/edit/evaluate plan")
    _common(p)
    p.add_argument("--input", type=Path, default=None, help="dataset directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="perturbation budget sweep")
    _common(p)
    p.add_argument("--input", type=Path, default=None, help="dataset directory")
    p.add_argument("--budgets", default="0.01,0.02,0.03,0.04,0.05")
    p.add_argument("--method", default="facelock")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="design-ladder ablation grid")
    _common(p)
    p.add_argument("--input", type=Path, default=None, help="dataset directory")
    p.add_argument("--designs", default="cvl,cvl_d,cvl_dp,facelock")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="format tables from a records file")
    _common(p)
    p.add_argument("--records", type=Path, required=True, help="records.jsonl path")
    p.add_argument("--group-by", default="method",
                   help="comma-separated grouping keys")
    p.add_argument("--format", choices=("csv", "json", "markdown"), default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
