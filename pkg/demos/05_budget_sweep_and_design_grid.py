"""Two ablations: perturbation budget and optimization components.

The budget sweep reruns the pipeline at several L-infinity budgets (0 is the
no-op lower anchor: its FR equals the unprotected edit's by construction).
The design grid walks the method ladder: recognizer only, recognizer through
the codec, plus pixel penalty, plus feature disparity, with a checklist
column per component.
"""

from pathlib import Path

from idveil import AttackConfig, EditParams, RngState, make_toy_bundle, write_png
from idveil.harness import (
    DEFAULT_CATALOG,
    ExperimentPlan,
    budget_sweep,
    design_ablation,
    emit_report,
)

out = Path("runs/demo05")
data = out / "data"
data.mkdir(parents=True, exist_ok=True)
for i in range(2):
    gen = RngState(i, "demo-dataset").generator()
    write_png(data / f"portrait{i}.png", gen.uniform(0, 1, size=(32, 32, 3)))

bundle = make_toy_bundle(seed=0, image_size=32)
plan = ExperimentPlan(
    dataset=str(data),
    methods=("facelock",),
    prompts=DEFAULT_CATALOG.select(["Let the person wear a helmet"]),
    seeds=(0, 1),
    edit_params=EditParams(image_size=32),
    attack=AttackConfig(steps=30, rng=RngState(0, "attack")),
)

print("== budget sweep ==")
sweep = budget_sweep(plan, bundle, out / "sweep", budgets=(0.0, 0.01, 0.02, 0.05))
emit_report(sweep, "csv", out / "report_budget.csv")
for row in sweep.rows:
    print(f"  budget {row['keys']['budget']:<5} fr {row['metrics']['fr']['mean']:.4f}")

print("\n== design grid ==")
grid = design_ablation(plan, bundle, out / "ablate")
emit_report(grid, "markdown", out / "report_design.md")
print(f"{'design':10s} {'recognizer':>10s} {'codec':>6s} {'pixel':>6s} {'feature':>8s} "
      f"{'lpips':>8s} {'fr':>8s}")
for row in grid.rows:
    ex = row["extra"]
    print(f"{row['keys']['method']:10s} {ex['recognizer']:>10s} {ex['codec']:>6s} "
          f"{ex['pixel']:>6s} {ex['feature']:>8s} "
          f"{row['metrics']['lpips']['mean']:8.5f} {row['metrics']['fr']['mean']:8.4f}")
print(f"\nreports under {out}/")
