"""The full desk-scale experiment: protect, edit, evaluate, report.

Builds a tiny dataset of synthetic portraits, protects them with two
methods, edits originals and protected versions under shared seeds (so the
baseline and defense edits are paired draw for draw), scores all seven
metrics, and prints the method-level table. The no-defense row has no
psnr/ssim/lpips cells: those compare defense edits against it.
"""

from pathlib import Path

from idveil import AttackConfig, EditParams, RngState, make_toy_bundle, write_png
from idveil.harness import (
    DEFAULT_CATALOG,
    ExperimentPlan,
    emit_report,
    evaluate,
    make_report,
    run_edits,
    run_protection,
)

out = Path("runs/demo03")
data = out / "data"
data.mkdir(parents=True, exist_ok=True)
for i in range(3):
    gen = RngState(i, "demo-dataset").generator()
    write_png(data / f"portrait{i}.png", gen.uniform(0, 1, size=(32, 32, 3)))

bundle = make_toy_bundle(seed=0, image_size=32)
plan = ExperimentPlan(
    dataset=str(data),
    methods=("facelock", "untargeted_encoder"),
    prompts=DEFAULT_CATALOG.select(
        ["Let the person wear sunglasses", "Set the background in a library"]
    ),
    seeds=(0, 1, 2),
    edit_params=EditParams(image_size=32),
    attack=AttackConfig(steps=40, rng=RngState(0, "attack")),
)

run_protection(plan, bundle, out)
run_edits(plan, bundle, out)
records = evaluate(plan, bundle, out)
print(f"{len(records)} evaluation records "
      f"(3 images x 2 prompts x 3 methods-incl-baseline x 3 seeds)")

report = make_report(records)
emit_report(report, "markdown", out / "report_method.md")
print((out / "report_method.md").read_text())

by_category = make_report(records, group_by=("method", "prompt_category"))
emit_report(by_category, "csv", out / "report_method_category.csv")
print(f"per-category table written to {out/'report_method_category.csv'}")
