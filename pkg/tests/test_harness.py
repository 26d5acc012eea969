import json

import numpy as np
import pytest

from idveil.attacks import AttackConfig
from idveil.backends import EditParams, make_toy_bundle
from idveil.core import ArgumentError, RngState, write_png
from idveil.harness import (
    DEFAULT_CATALOG,
    EvaluationRecord,
    ExperimentPlan,
    PromptCatalog,
    PromptEntry,
    attack_config_from,
    budget_sweep,
    bundle_from_config,
    design_ablation,
    emit_report,
    evaluate,
    expected_record_count,
    load_dataset,
    make_report,
    plan_from_config,
    purify_spec_from_label,
    read_records,
    report_from_json,
    run_edits,
    run_protection,
    write_records,
)
from idveil.metrics import METRIC_ORDER
from idveil.purification import PurifySpec


def make_dataset(tmp_path, n=2, size=32, mixed_sizes=False):
    data = tmp_path / "data"
    data.mkdir(exist_ok=True)
    for i in range(n):
        gen = RngState(i, "dataset").generator()
        s = size + (8 * i if mixed_sizes else 0)
        write_png(data / f"img{i}.png", gen.uniform(0, 1, size=(s, s, 3)))
    return data


def tiny_plan(data, steps=6, **kw):
    kw.setdefault("methods", ("facelock",))
    kw.setdefault("prompts", DEFAULT_CATALOG.select(["Let it be snowy"]))
    kw.setdefault("seeds", (0,))
    kw.setdefault("edit_params", EditParams(image_size=32))
    kw.setdefault("attack", AttackConfig(steps=steps, rng=RngState(0, "attack")))
    return ExperimentPlan(dataset=str(data), **kw)


# --- prompt catalog ------------------------------------------------------------


def test_default_catalog_shape():
    assert len(DEFAULT_CATALOG) == 25
    assert len(DEFAULT_CATALOG.by_category("facial_feature")) == 10
    assert len(DEFAULT_CATALOG.by_category("accessory")) == 8
    assert len(DEFAULT_CATALOG.by_category("background")) == 7
    texts = {e.text for e in DEFAULT_CATALOG}
    assert "Let the person wear a police suit" in texts
    assert "Turn the person's hair pink" in texts
    assert "Set the background in a library" in texts


def test_catalog_csv_roundtrip(tmp_path):
    path = tmp_path / "prompts.csv"
    DEFAULT_CATALOG.to_csv(path)
    back = PromptCatalog.from_csv(path)
    assert [e.text for e in back] == [e.text for e in DEFAULT_CATALOG]
    assert [e.category for e in back] == [e.category for e in DEFAULT_CATALOG]


def test_catalog_descriptions_are_data(tmp_path):
    path = tmp_path / "prompts.csv"
    path.write_text(
        "text,category,description\n"
        "Let it be snowy,background,a person in falling snow\n",
        encoding="utf-8",
    )
    cat = PromptCatalog.from_csv(path)
    assert cat.entries[0].description == "a person in falling snow"


def test_catalog_validation():
    with pytest.raises(ArgumentError):
        PromptEntry("hi", "weird_category")
    dup = PromptEntry("same text", "accessory")
    with pytest.raises(ArgumentError):
        PromptCatalog((dup, dup))
    with pytest.raises(ArgumentError):
        DEFAULT_CATALOG.select(["not a real prompt"])


# --- dataset ---------------------------------------------------------------------


def test_load_dataset_sorted_and_sized(tmp_path):
    data = make_dataset(tmp_path, n=3, mixed_sizes=True)
    out = load_dataset(data, 32)
    assert [i for i, _ in out] == ["img0", "img1", "img2"]
    for _, arr in out:
        assert arr.shape == (32, 32, 3)
        assert 0.0 <= arr.min() and arr.max() <= 1.0


def test_load_dataset_empty_dir(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(ArgumentError):
        load_dataset(empty, 32)


def test_load_dataset_skips_unreadable(tmp_path, caplog):
    data = make_dataset(tmp_path, n=2)
    (data / "broken.png").write_bytes(b"not a png at all")
    with caplog.at_level("WARNING"):
        out = load_dataset(data, 32)
    assert len(out) == 2
    assert any("broken" in r.message for r in caplog.records)


# --- plan validation ----------------------------------------------------------------


def test_plan_rejects_unknown_method(tmp_path):
    data = make_dataset(tmp_path)
    with pytest.raises(ArgumentError):
        tiny_plan(data, methods=("fgsm",))
    with pytest.raises(ArgumentError):
        tiny_plan(data, methods=("none",))
    with pytest.raises(ArgumentError):
        tiny_plan(
            data,
            purifications=(PurifySpec(kind="blur"), PurifySpec(kind="blur")),
        )


# --- protection stage ------------------------------------------------------------------


def test_run_protection_artifacts_and_rerun_identical(tmp_path, toy32):
    data = make_dataset(tmp_path)
    plan = tiny_plan(data)
    out = tmp_path / "out"
    run_protection(plan, toy32, out)
    png = out / "protected" / "facelock" / "img0.png"
    sidecar_path = out / "protected" / "facelock" / "img0.json"
    assert png.exists() and sidecar_path.exists()
    sidecar = json.loads(sidecar_path.read_text())
    assert sidecar["linf"] <= plan.attack.epsilon
    assert sidecar["steps"] == plan.attack.steps
    first = sidecar_path.read_bytes()
    out2 = tmp_path / "out2"
    run_protection(plan, toy32, out2)
    assert (out2 / "protected" / "facelock" / "img0.json").read_bytes() == first
    assert (out2 / "protected" / "facelock" / "img0.png").read_bytes() == png.read_bytes()


def test_run_protection_cache_reuse(tmp_path, toy32):
    data = make_dataset(tmp_path)
    plan = tiny_plan(data)
    out = tmp_path / "out"
    run_protection(plan, toy32, out)
    png = out / "protected" / "facelock" / "img0.png"
    stamp = png.stat().st_mtime_ns
    run_protection(plan, toy32, out)  # same config: artifacts untouched
    assert png.stat().st_mtime_ns == stamp


def test_protection_cardinality(tmp_path, toy32):
    data = make_dataset(tmp_path, n=2)
    plan = tiny_plan(data, methods=("facelock", "untargeted_encoder"))
    results = run_protection(plan, toy32, tmp_path / "out")
    assert len(results) == 4  # 2 images x 2 methods


# --- edit stage -----------------------------------------------------------------------


def test_run_edits_requires_protection(tmp_path, toy32):
    data = make_dataset(tmp_path)
    plan = tiny_plan(data)
    with pytest.raises(ArgumentError, match="protection first"):
        run_edits(plan, toy32, tmp_path / "nowhere")


def test_run_edits_deterministic_and_seed_paired(tmp_path, toy32):
    data = make_dataset(tmp_path)
    plan = tiny_plan(data, seeds=(0, 1), methods=("facelock",))
    out = tmp_path / "out"
    run_protection(plan, toy32, out)
    done = run_edits(plan, toy32, out)
    # (1 baseline + 1 method) x 1 purification x 1 prompt x 2 seeds x 2 images
    assert len(done) == 8
    prompt_id = plan.prompts.entries[0].prompt_id
    name = f"img0__{prompt_id}__s0.png"
    base = (out / "edits" / "none" / "none" / name).read_bytes()
    run_edits(plan, toy32, out)  # rerun reuses identical artifacts
    assert (out / "edits" / "none" / "none" / name).read_bytes() == base
    # editor stream labels exclude the method: paired baseline/defense draws
    sidecars = {job: sc for job, sc in done.items()}
    streams = {
        (job[0], job[3].prompt_id, job[4], job[1]): sc["editor_stream"]
        for job, sc in sidecars.items()
    }
    for (img, pid, seed, method), stream in streams.items():
        assert streams[(img, pid, seed, "none")] == stream


def test_five_seeds_give_five_outputs_per_tuple(tmp_path, toy32):
    data = make_dataset(tmp_path, n=1)
    plan = tiny_plan(data, seeds=(0, 1, 2, 3, 4), steps=3)
    out = tmp_path / "out"
    run_protection(plan, toy32, out)
    run_edits(plan, toy32, out)
    prompt_id = plan.prompts.entries[0].prompt_id
    for method in ("none", "facelock"):
        edits = list((out / "edits" / method / "none").glob("*.png"))
        assert len(edits) == 5
        assert {p.name for p in edits} == {
            f"img0__{prompt_id}__s{s}.png" for s in range(5)
        }


def test_jobs_parallel_matches_sequential(tmp_path, toy32):
    data = make_dataset(tmp_path)
    seq_plan = tiny_plan(data, seeds=(0, 1))
    par_plan = tiny_plan(data, seeds=(0, 1), jobs=4)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    run_protection(seq_plan, toy32, out_a)
    run_protection(par_plan, toy32, out_b)
    run_edits(seq_plan, toy32, out_a)
    run_edits(par_plan, toy32, out_b)
    rec_a = evaluate(seq_plan, toy32, out_a)
    rec_b = evaluate(par_plan, toy32, out_b)
    assert (out_a / "records.jsonl").read_bytes() == (out_b / "records.jsonl").read_bytes()
    assert len(rec_a) == len(rec_b)


# --- evaluate stage -------------------------------------------------------------------


def run_tiny_pipeline(tmp_path, toy32, **plan_kw):
    data = make_dataset(tmp_path)
    plan = tiny_plan(data, **plan_kw)
    out = tmp_path / "out"
    run_protection(plan, toy32, out)
    run_edits(plan, toy32, out)
    return plan, out, evaluate(plan, toy32, out)


def test_evaluate_cardinality_and_nulls(tmp_path, toy32):
    plan, out, records = run_tiny_pipeline(
        tmp_path, toy32,
        methods=("facelock", "photoguard"),
        prompts=DEFAULT_CATALOG.select(
            ["Let it be snowy", "Let the person wear a bowtie"]
        ),
        seeds=(0, 1),
        purifications=(PurifySpec(kind="none"), PurifySpec(kind="jpeg", jpeg_quality=75)),
    )
    assert len(records) == expected_record_count(plan, 2) == 48
    for r in records:
        assert set(r.metrics) == set(METRIC_ORDER)
        if r.method == "none":
            assert r.metrics["psnr"] is None
            assert r.metrics["ssim"] is None
            assert r.metrics["lpips"] is None
            assert r.metrics["fr"] is not None
        else:
            assert r.metrics["psnr"] is not None


def test_evaluate_seed_pairing_streams(tmp_path, toy32):
    _, _, records = run_tiny_pipeline(tmp_path, toy32, methods=("facelock",), seeds=(0, 1))
    by_key = {}
    for r in records:
        by_key.setdefault((r.image_id, r.prompt_id, r.seed, r.purification), {})[
            r.method
        ] = r.editor_stream
    for streams in by_key.values():
        assert len(set(streams.values())) == 1


def test_records_roundtrip(tmp_path, toy32):
    _, out, records = run_tiny_pipeline(tmp_path, toy32)
    back = read_records(out / "records.jsonl")
    assert back == records


def test_record_row_roundtrip():
    rec = EvaluationRecord(
        record_id="a|b|m|s0|none", image_id="a", prompt_id="b",
        prompt_category="accessory", method="m", seed=0, purification="none",
        metrics={"fr": 0.5}, flags=("x",), editor_stream="edit/a/b",
    )
    assert EvaluationRecord.from_row(rec.to_row()) == rec


# --- reports --------------------------------------------------------------------------


def test_report_schema_and_formats(tmp_path, toy32):
    _, out, records = run_tiny_pipeline(tmp_path, toy32, methods=("facelock",))
    report = make_report(records)
    csv_path = emit_report(report, "csv", tmp_path / "r.csv")
    header = csv_path.read_text().splitlines()[0]
    assert header.startswith("method,clip_s_mean,clip_s_std,psnr_mean,")
    expected_cols = 1 + 2 * len(METRIC_ORDER)
    rows = [line.split(",") for line in csv_path.read_text().splitlines()]
    assert all(len(r) == expected_cols for r in rows)
    # baseline row first, with empty psnr/ssim/lpips cells
    assert rows[1][0] == "none"
    psnr_idx = rows[0].index("psnr_mean")
    assert rows[1][psnr_idx] == ""

    json_path = emit_report(report, "json", tmp_path / "r.json")
    assert report_from_json(json_path) == report

    md_path = emit_report(report, "markdown", tmp_path / "r.md")
    md_lines = md_path.read_text().splitlines()
    md_cells = sum(len(line.split("|")) - 2 for line in md_lines if line != md_lines[1])
    csv_cells = sum(len(r) for r in rows)
    assert md_cells == csv_cells


def test_report_attribution_integrity(tmp_path, toy32):
    _, out, records = run_tiny_pipeline(
        tmp_path, toy32, methods=("facelock",), seeds=(0, 1)
    )
    report = make_report(records)
    by_id = {r.record_id: r for r in records}
    for row in report.rows:
        for name in METRIC_ORDER:
            cell = row["metrics"][name]
            if cell["mean"] is None:
                continue
            vals = [by_id[rid].metrics[name] for rid in cell["record_ids"]]
            assert abs(np.mean(vals) - cell["mean"]) <= 1e-9
            assert abs(np.std(vals) - cell["std"]) <= 1e-9


def test_report_grouping_by_category_and_purification(tmp_path, toy32):
    plan, out, records = run_tiny_pipeline(
        tmp_path, toy32,
        prompts=DEFAULT_CATALOG.select(
            ["Let it be snowy", "Let the person wear a bowtie"]
        ),
        purifications=(PurifySpec(kind="none"), PurifySpec(kind="blur")),
    )
    by_cat = make_report(records, group_by=("method", "prompt_category"))
    assert len(by_cat.rows) == 2 * 2  # (none, facelock) x (accessory, background)
    by_pur = make_report(records, group_by=("method", "purification"))
    assert len(by_pur.rows) == 2 * 2


def test_budget_sweep_rows_and_zero_budget_degeneracy(tmp_path, toy32):
    data = make_dataset(tmp_path)
    plan = tiny_plan(data, steps=5)
    report = budget_sweep(plan, toy32, tmp_path / "sweep", budgets=(0.0, 0.02))
    assert [row["keys"]["budget"] for row in report.rows] == [0.0, 0.02]
    recs0 = read_records(tmp_path / "sweep" / "budget_0.0" / "records.jsonl")
    fr_none = np.mean([r.metrics["fr"] for r in recs0 if r.method == "none"])
    assert abs(report.rows[0]["metrics"]["fr"]["mean"] - fr_none) <= 1e-6


def test_design_ablation_grid(tmp_path, toy32):
    data = make_dataset(tmp_path, n=1)
    plan = tiny_plan(data, steps=4)
    report = design_ablation(plan, toy32, tmp_path / "ablate")
    assert [row["keys"]["method"] for row in report.rows] == [
        "cvl", "cvl_d", "cvl_dp", "facelock",
    ]
    assert report.extra_columns == ("recognizer", "codec", "pixel", "feature")
    cvl_row = report.row_for(method="cvl")
    assert cvl_row["extra"]["codec"] == "no"
    facelock_row = report.row_for(method="facelock")
    assert facelock_row["extra"]["feature"] == "yes"
    for row in report.rows:
        assert row["metrics"]["lpips"]["mean"] is not None
        assert row["metrics"]["fr"]["mean"] is not None


# --- config ----------------------------------------------------------------------------


CONFIG = """
[backend]
kind = "toy"
seed = 3
image_size = 32

[attack]
name = "untargeted_encoder"
epsilon = 0.03
steps = 7

[edit]
image_size = 32
inference_steps = 50

[purify]
kinds = ["none", "jpeg60"]

[[purify.spec]]
kind = "blur"
blur_kernel = 3
blur_sigma = 1.0

[plan]
methods = ["untargeted_encoder", "facelock"]
seeds = [0, 1]
prompts = ["Let it be snowy"]
"""


def test_config_parsing(tmp_path):
    cfg_path = tmp_path / "cfg.toml"
    cfg_path.write_text(CONFIG, encoding="utf-8")
    from idveil.harness import load_config

    config = load_config(cfg_path)
    bundle = bundle_from_config(config)
    assert bundle.kind == "toy"
    attack = attack_config_from(config, seed=9)
    assert attack.epsilon == 0.03 and attack.steps == 7
    assert attack.rng == RngState(9, "attack")
    data = make_dataset(tmp_path)
    plan = plan_from_config(config, dataset=str(data))
    assert plan.methods == ("untargeted_encoder", "facelock")
    assert plan.seeds == (0, 1)
    assert len(plan.prompts) == 1
    labels = [p.label for p in plan.purifications]
    assert labels == ["blur", "none", "jpeg60"]
    assert plan.edit_params.image_size == 32


def test_purify_spec_from_label():
    assert purify_spec_from_label("jpeg90").jpeg_quality == 90
    assert purify_spec_from_label("blur").kind == "blur"
    with pytest.raises(ArgumentError):
        purify_spec_from_label("melt")


def test_default_seeds_are_five(tmp_path):
    data = make_dataset(tmp_path)
    plan = plan_from_config({"edit": {"image_size": 32}}, dataset=str(data))
    assert plan.seeds == (0, 1, 2, 3, 4)
