"""Acceptance gate: one test per criterion, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Everything runs on the deterministic toy backend at desk scale; the
full-scale recipe with production models is criterion 10, documented in
demos/full_scale_recipe.md rather than executed here.
"""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from idveil import autodiff as ad
from idveil import metrics as M
from idveil.attacks import (
    ASCENT_METHODS,
    ATTACKS,
    AttackConfig,
    _codec_objective,
    cvl_d_attack,
    cvl_dp_attack,
    cw_l2_attack,
    encoder_attack_untargeted,
    eot_encoder_attack,
    facelock_protect,
)
from idveil.backends import EditParams, make_toy_bundle
from idveil.core import RngState, project_perturbation, write_png
from idveil.harness import (
    DEFAULT_CATALOG,
    ExperimentPlan,
    budget_sweep,
    emit_report,
    evaluate,
    make_report,
    read_records,
    run_edits,
    run_protection,
)
from idveil.metrics import METRIC_ORDER, METRICS
from idveil.purification import PurifySpec


def _pass(n: int, msg: str):
    print(f"\nPASS criterion {n}: {msg}")


def probe_image(seed: int, size: int) -> np.ndarray:
    return RngState(seed, "probe-image").generator().uniform(0.0, 1.0, size=(size, size, 3))


def default_cfg(seed=0, **kw):
    kw.setdefault("rng", RngState(seed, "attack"))
    return AttackConfig(**kw)


def test_criterion_1_budget_invariants(toy32):
    started = time.monotonic()
    checked = 0
    for name in sorted(ATTACKS):
        for probe in range(3):
            x = probe_image(1000 + probe, 32)
            res = ATTACKS[name](toy32, x, default_cfg(seed=probe))
            assert np.abs(res.protected - x).max() <= 0.02, name
            assert res.protected.min() >= 0.0 and res.protected.max() <= 1.0, name
            checked += 1
    elapsed = time.monotonic() - started
    assert elapsed < 120.0, f"budget suite took {elapsed:.1f}s"
    _pass(1, f"{checked} attack runs (9 attacks x 3 images, defaults) kept "
             f"linf <= 0.02 exactly and pixels in [0,1] in {elapsed:.1f}s")


def test_criterion_2_reduction_identities(toy32):
    x = probe_image(2000, 32)
    cfg = default_cfg(seed=7)

    a = cvl_d_attack(toy32, x, cfg)
    b = facelock_protect(toy32, x, replace(cfg, loss_toggles=frozenset({"fr"}),
                                            lambda_latent=0.0))
    assert np.array_equal(a.protected, b.protected)
    assert np.array_equal(a.perturbation.delta, b.perturbation.delta)
    assert [e["fr"] for e in a.loss_trace] == [e["fr"] for e in b.loss_trace]

    c = eot_encoder_attack(toy32, x, replace(cfg, eot_beta=0.0),
                           transform_set=(PurifySpec(kind="none"),))
    d = encoder_attack_untargeted(toy32, x, cfg)
    assert np.array_equal(c.protected, d.protected)
    assert np.array_equal(c.perturbation.delta, d.perturbation.delta)

    e = cvl_dp_attack(toy32, x, cfg, mask=np.zeros((32, 32, 1)))
    assert np.array_equal(e.protected, a.protected)
    assert np.array_equal(e.perturbation.delta, a.perturbation.delta)
    _pass(2, "cvl_d == facelock({fr}, lambda_latent=0), eot({identity}, beta=0) == "
             "untargeted encoder, cvl_dp(zero mask) == cvl_d, all bit-exact")


def test_criterion_3_gradient_oracle(toy32):
    x = probe_image(3000, 32)
    cfg = default_cfg(seed=3)
    start, _ = project_perturbation(
        x, RngState(30, "gd").generator().standard_normal(x.shape) * 0.005, cfg.epsilon
    )
    build = _codec_objective(toy32, x, cfg, None)

    def total_at(v):
        node = ad.leaf(v)
        return float(build(node, ad.sub(node, x))[0].value)

    node = ad.leaf(start)
    g = ad.grad(build(node, ad.sub(node, x))[0], node)
    gen = RngState(31, "pixels").generator()
    h = 1e-4
    worst = 0.0
    for _ in range(5):
        idx = tuple(int(gen.integers(0, s)) for s in x.shape)
        xp = start.copy()
        xm = start.copy()
        xp[idx] += h
        xm[idx] -= h
        fd = (total_at(xp) - total_at(xm)) / (2 * h)
        rel = abs(g[idx] - fd) / max(abs(fd), 1e-12)
        worst = max(worst, rel)
        assert rel <= 1e-3
    _pass(3, f"assembled objective gradient matches central differences "
             f"(h=1e-4) at 5 pixels, worst relative error {worst:.2e}")


def _endpoint_objective(entry: dict, method: str) -> float:
    # the flagship's improvement is judged on the fr+fe disruption terms;
    # the latent term is a stabilizing regularizer
    if method == "facelock":
        return entry["fr"] + entry["fe"]
    return entry["total"]


def test_criterion_4_objective_endpoints(toy16):
    outcomes = {}
    for name in sorted(ATTACKS):
        deltas = []
        for probe in range(10):
            x = probe_image(4000 + probe, 16)
            cfg = default_cfg(seed=probe)
            kw = {}
            if name == "eot_encoder":
                # deterministic transform so the per-step objective is
                # comparable across steps
                kw["transform_set"] = (PurifySpec(kind="blur"),)
            res = ATTACKS[name](toy16, x, cfg, **kw)
            deltas.append(
                _endpoint_objective(res.loss_trace[-1], name)
                - _endpoint_objective(res.loss_trace[0], name)
            )
        if name in ASCENT_METHODS:
            ok = all(d >= 0 for d in deltas)
        else:
            ok = all(d <= 0 for d in deltas)
        outcomes[name] = (ok, min(deltas), max(deltas))
        assert ok, f"{name}: endpoint deltas {deltas}"
    _pass(4, "10/10 probes improved in the right direction for every attack "
             "(ascent up, descent down) at reference defaults")


def test_criterion_5_metric_identities(toy32):
    structural_similarity = pytest.importorskip("skimage.metrics").structural_similarity
    for s in range(20):
        x = probe_image(5000 + s, 32)
        assert M.psnr(x, x) == 100.0
        assert M.ssim(x, x) == pytest.approx(1.0, abs=1e-6)
        assert M.lpips(toy32, x, x) == 0.0
        assert M.clip_i(toy32, x, x) == pytest.approx(1.0, abs=1e-5)
        assert M.fr_score(toy32, x, x) == pytest.approx(1.0, abs=1e-5)
    worst = 0.0
    for s in range(10):
        a = probe_image(5100 + s, 32)
        b = probe_image(5200 + s, 32)
        ref = structural_similarity(
            a, b, channel_axis=2, gaussian_weights=True, sigma=1.5,
            use_sample_covariance=False, data_range=1.0,
        )
        worst = max(worst, abs(M.ssim(a, b) - ref))
        assert M.ssim(a, b) == pytest.approx(ref, abs=1e-4)
    _pass(5, f"self-comparison identities hold on 20 images; own SSIM matches "
             f"the reference implementation within {worst:.2e} on 10 pairs")


def test_criterion_6_cw_reparametrization(toy32):
    x = probe_image(6000, 32)
    seen = []
    res = cw_l2_attack(
        toy32, x, default_cfg(seed=6, steps=40),
        on_step=lambda step, xp, entry: seen.append((float(xp.min()), float(xp.max()))),
    )
    assert seen[0] == (0.5, 0.5)  # w=0 puts x' at exactly one half
    assert all(lo > 0.0 and hi < 1.0 for lo, hi in seen)
    assert np.abs(res.perturbation.delta).max() <= 0.02
    assert np.abs(res.protected - x).max() <= 0.02
    _pass(6, "w=0 gives x'=0.5 exactly, every iterate stays inside (0,1), "
             "final perturbation respects the budget")


def _toy_plan(tmp_path, **kw):
    data = tmp_path / "data"
    data.mkdir(exist_ok=True)
    for i in range(2):
        gen = RngState(i, "acceptance-ds").generator()
        write_png(data / f"img{i}.png", gen.uniform(0, 1, size=(32, 32, 3)))
    kw.setdefault("methods", ("facelock", "photoguard"))
    kw.setdefault(
        "prompts",
        DEFAULT_CATALOG.select(["Let the person wear a bowtie", "Let it be snowy"]),
    )
    kw.setdefault("seeds", (0, 1))
    kw.setdefault("purifications", (PurifySpec(kind="none"),
                                    PurifySpec(kind="jpeg", jpeg_quality=75)))
    kw.setdefault("edit_params", EditParams(image_size=32))
    kw.setdefault("attack", default_cfg(seed=0))
    return ExperimentPlan(dataset=str(data), **kw)


def test_criterion_7_zero_budget_degeneracy(tmp_path, toy32):
    plan = _toy_plan(
        tmp_path,
        methods=("facelock",),
        prompts=DEFAULT_CATALOG.select(["Let it be snowy"]),
        seeds=(0,),
        purifications=(PurifySpec(kind="none"),),
        attack=default_cfg(seed=0, steps=25),
    )
    report = budget_sweep(plan, toy32, tmp_path / "sweep", budgets=(0.0, 0.02))
    recs = read_records(tmp_path / "sweep" / "budget_0.0" / "records.jsonl")
    fr_unprotected = float(np.mean([r.metrics["fr"] for r in recs if r.method == "none"]))
    fr_zero = report.rows[0]["metrics"]["fr"]["mean"]
    assert abs(fr_zero - fr_unprotected) <= 1e-6
    _pass(7, f"budget 0 FR ({fr_zero:.6f}) equals the unprotected edit's FR "
             f"({fr_unprotected:.6f}) within 1e-6")


def test_criterion_8_pipeline_determinism(tmp_path, toy32):
    plan = _toy_plan(tmp_path)
    artifacts = {}
    for run in ("a", "b"):
        out = tmp_path / run
        run_protection(plan, toy32, out)
        run_edits(plan, toy32, out)
        records = evaluate(plan, toy32, out)
        assert len(records) == 2 * 2 * (2 + 1) * 2 * 2 == 48
        report = make_report(records)
        emit_report(report, "csv", out / "report.csv")
        artifacts[run] = (
            (out / "records.jsonl").read_bytes(),
            (out / "report.csv").read_bytes(),
        )
    assert artifacts["a"][0] == artifacts["b"][0]
    assert artifacts["a"][1] == artifacts["b"][1]
    _pass(8, "two full runs of the 48-record toy plan produced byte-identical "
             "records and CSV reports")


def test_criterion_9_report_schema(tmp_path, toy32):
    plan = _toy_plan(
        tmp_path,
        methods=("facelock",),
        seeds=(0,),
        purifications=(PurifySpec(kind="none"),),
        attack=default_cfg(seed=0, steps=10),
    )
    out = tmp_path / "out"
    run_protection(plan, toy32, out)
    run_edits(plan, toy32, out)
    records = evaluate(plan, toy32, out)
    report = make_report(records)
    csv_lines = emit_report(report, "csv", out / "report.csv").read_text().splitlines()
    header = csv_lines[0].split(",")
    metric_cols = [c[: -len("_mean")] for c in header if c.endswith("_mean")]
    assert metric_cols == list(METRIC_ORDER)
    assert len(metric_cols) == 7

    directions = {name: METRICS[name].direction for name in METRIC_ORDER}
    assert directions["lpips"] == M.HIGHER
    for name in ("clip_s", "psnr", "ssim", "clip_sd", "clip_i", "fr"):
        assert directions[name] == M.LOWER

    baseline = next(row for row in csv_lines[1:] if row.startswith("none,"))
    cells = baseline.split(",")
    for name in ("psnr", "ssim", "lpips"):
        assert cells[header.index(f"{name}_mean")] == ""
        assert cells[header.index(f"{name}_std")] == ""
    fr_cell = cells[header.index("fr_mean")]
    assert fr_cell != ""
    _pass(9, "report carries exactly the seven metrics with the documented "
             "defense directions, and the no-defense row nulls psnr/ssim/lpips")


def test_criterion_10_full_scale_recipe_documented():
    recipe = Path(__file__).resolve().parent.parent / "demos" / "full_scale_recipe.md"
    assert recipe.exists(), "full-scale recipe document missing"
    text = recipe.read_text(encoding="utf-8")
    for needle in ("real", "seeds", "budget"):
        assert needle in text.lower()
    _pass(10, "full-scale recipe (real backends, qualitative orderings, "
              "budget monotonicity) is documented, not CI-executed")
