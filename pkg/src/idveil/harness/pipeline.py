"""Protect -> (purify) -> edit -> evaluate pipelines with on-disk artifacts.

Every stage writes canonical 8-bit PNGs plus JSON sidecars carrying the
content/config hash, so stages can resume from disk and a full rerun of the
same plan is byte-identical. The unprotected baseline ("none") flows through
the same purify/edit path as every defense, with editor rng streams labeled
by (image, prompt, seed) only, so the baseline and defense edits are paired
draw for draw and differences are attributable to the protection alone.

Artifact layout under an output directory:
    inputs/<image>.png
    protected/<method>/<image>.png (+ .json sidecar)
    edits/<method>/<purification>/<image>__<prompt>__s<seed>.png (+ .json)
    records.jsonl
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from idveil.attacks import ATTACKS, AttackConfig
from idveil.backends.base import BackendBundle, EditParams
from idveil.core import ArgumentError, RngState, read_png, write_png
from idveil.harness.dataset import load_dataset
from idveil.harness.prompts import DEFAULT_CATALOG, PromptCatalog
from idveil.metrics import compute_metric_set
from idveil.purification import PurifySpec, purify

log = logging.getLogger(__name__)

BASELINE_METHOD = "none"


@dataclass(frozen=True)
class ExperimentPlan:
    """One experiment: which images, methods, prompts, seeds, purifications."""

    dataset: str
    methods: tuple = ("facelock",)
    prompts: PromptCatalog = field(default_factory=lambda: DEFAULT_CATALOG)
    seeds: tuple = (0, 1, 2, 3, 4)
    purifications: tuple = (PurifySpec(kind="none"),)
    edit_params: EditParams = field(default_factory=EditParams)
    attack: AttackConfig = field(default_factory=AttackConfig)
    jobs: int = 1

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in ATTACKS]
        if unknown:
            raise ArgumentError(f"unknown methods: {unknown}; known: {sorted(ATTACKS)}")
        if BASELINE_METHOD in self.methods:
            raise ArgumentError("the unprotected baseline is implicit; do not list 'none'")
        if not self.seeds:
            raise ArgumentError("at least one seed required")
        labels = [p.label for p in self.purifications]
        if len(set(labels)) != len(labels):
            raise ArgumentError(f"duplicate purification labels: {labels}")


@dataclass(frozen=True)
class EvaluationRecord:
    """One (image, prompt, method, seed, purification) row with all metrics."""

    record_id: str
    image_id: str
    prompt_id: str
    prompt_category: str
    method: str
    seed: int
    purification: str
    metrics: dict
    flags: tuple = ()
    editor_stream: str = ""

    def to_row(self) -> dict:
        return {
            "record_id": self.record_id,
            "image_id": self.image_id,
            "prompt_id": self.prompt_id,
            "prompt_category": self.prompt_category,
            "method": self.method,
            "seed": self.seed,
            "purification": self.purification,
            "metrics": dict(self.metrics),
            "flags": list(self.flags),
            "editor_stream": self.editor_stream,
        }

    @staticmethod
    def from_row(row: dict) -> "EvaluationRecord":
        return EvaluationRecord(
            record_id=row["record_id"],
            image_id=row["image_id"],
            prompt_id=row["prompt_id"],
            prompt_category=row["prompt_category"],
            method=row["method"],
            seed=int(row["seed"]),
            purification=row["purification"],
            metrics=dict(row["metrics"]),
            flags=tuple(row["flags"]),
            editor_stream=row["editor_stream"],
        )


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _hash(payload: str | bytes) -> str:
    data = payload.encode("utf-8") if isinstance(payload, str) else payload
    return hashlib.sha256(data).hexdigest()[:16]


def _attack_config_dict(cfg: AttackConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["loss_toggles"] = sorted(cfg.loss_toggles)
    d["rng"] = [cfg.rng.seed, cfg.rng.label]
    return d


def _purify_spec_dict(spec: PurifySpec) -> dict:
    d = dataclasses.asdict(spec)
    d["rng"] = [spec.rng.seed, spec.rng.label]
    d["rotate_range"] = list(spec.rotate_range)
    return d


def _flags_from_warnings(caught) -> list:
    flags = []
    for w in caught:
        msg = str(w.message)
        if "no face" in msg:
            flags.append("no_face_fallback")
        elif "external purifier" in msg:
            flags.append("purify_external_fallback")
        else:
            flags.append("warning")
    return sorted(set(flags))


def _write_sidecar(path: Path, payload: dict) -> None:
    path.write_text(_canonical_json(payload) + "\n", encoding="utf-8")


def _edit_name(image_id: str, prompt_id: str, seed: int) -> str:
    return f"{image_id}__{prompt_id}__s{seed}"


def run_protection(plan: ExperimentPlan, bundle: BackendBundle, out_dir: str | Path) -> dict:
    """Protect every dataset image with every plan method.

    Writes the size-normalized inputs, one protected PNG per (image, method),
    and a JSON sidecar with the config hash, the achieved perturbation norm,
    and a loss-trace summary. Existing artifacts with a matching hash are
    reused. Returns {(image_id, method): sidecar dict}.
    """
    out = Path(out_dir)
    (out / "inputs").mkdir(parents=True, exist_ok=True)
    images = load_dataset(plan.dataset, plan.edit_params.image_size)
    results = {}
    for image_id, x in images:
        write_png(out / "inputs" / f"{image_id}.png", x)
    for method in plan.methods:
        mdir = out / "protected" / method
        mdir.mkdir(parents=True, exist_ok=True)
        cfg_hash = _hash(
            _canonical_json({"attack": _attack_config_dict(plan.attack), "method": method,
                             "backend": bundle.kind, "image_size": plan.edit_params.image_size})
        )
        for image_id, _ in images:
            png_path = mdir / f"{image_id}.png"
            sidecar_path = mdir / f"{image_id}.json"
            if png_path.exists() and sidecar_path.exists():
                sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
                if sidecar.get("config_hash") == cfg_hash:
                    results[(image_id, method)] = sidecar
                    continue
            x = read_png(out / "inputs" / f"{image_id}.png")
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                res = ATTACKS[method](bundle, x, plan.attack)
            write_png(png_path, res.protected)
            sidecar = {
                "image_id": image_id,
                "method": method,
                "config_hash": cfg_hash,
                "linf": res.perturbation.linf,
                "epsilon": plan.attack.epsilon,
                "steps": len(res.loss_trace),
                "flags": _flags_from_warnings(caught),
                "trace_first": res.loss_trace[0] if res.loss_trace else None,
                "trace_last": res.loss_trace[-1] if res.loss_trace else None,
            }
            _write_sidecar(sidecar_path, sidecar)
            results[(image_id, method)] = sidecar
    return results


def _edit_jobs(plan: ExperimentPlan, out: Path) -> list:
    jobs = []
    image_ids = sorted(p.stem for p in (out / "inputs").glob("*.png"))
    if not image_ids:
        raise ArgumentError(f"no inputs under {out}; run protection first")
    for image_id in image_ids:
        for method in (BASELINE_METHOD,) + tuple(plan.methods):
            for spec in plan.purifications:
                for prompt in plan.prompts:
                    for seed in plan.seeds:
                        jobs.append((image_id, method, spec, prompt, seed))
    return jobs


def _run_one_edit(plan: ExperimentPlan, bundle: BackendBundle, out: Path, job) -> tuple:
    image_id, method, spec, prompt, seed = job
    edir = out / "edits" / method / spec.label
    edir.mkdir(parents=True, exist_ok=True)
    name = _edit_name(image_id, prompt.prompt_id, seed)
    png_path = edir / f"{name}.png"
    sidecar_path = edir / f"{name}.json"

    if method == BASELINE_METHOD:
        src_path = out / "inputs" / f"{image_id}.png"
    else:
        src_path = out / "protected" / method / f"{image_id}.png"
    if not src_path.exists():
        raise ArgumentError(f"missing protection artifact {src_path}; run protection first")

    src_bytes = src_path.read_bytes()
    # purification rng excludes the method so every method sees the same draw
    purify_rng = RngState(seed, f"purify/{image_id}/{prompt.prompt_id}/{spec.label}")
    editor_rng = RngState(seed, f"edit/{image_id}/{prompt.prompt_id}")
    key_hash = _hash(
        _canonical_json(
            {
                "src": _hash(src_bytes),
                "purify": _purify_spec_dict(dataclasses.replace(spec, rng=purify_rng)),
                "prompt": prompt.text,
                "seed": seed,
                "edit": dataclasses.asdict(plan.edit_params),
            }
        )
    )
    if png_path.exists() and sidecar_path.exists():
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
        if sidecar.get("key_hash") == key_hash:
            return (job, sidecar)

    x = read_png(src_path)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        purified = purify(x, dataclasses.replace(spec, rng=purify_rng))
        edited = bundle.editor.edit(purified, prompt.text, plan.edit_params, editor_rng)
    write_png(png_path, edited)
    sidecar = {
        "image_id": image_id,
        "method": method,
        "prompt_id": prompt.prompt_id,
        "seed": seed,
        "purification": spec.label,
        "key_hash": key_hash,
        "editor_stream": editor_rng.label,
        "flags": _flags_from_warnings(caught),
    }
    _write_sidecar(sidecar_path, sidecar)
    return (job, sidecar)


def run_edits(plan: ExperimentPlan, bundle: BackendBundle, out_dir: str | Path) -> dict:
    """Edit every (image, method+baseline, purification, prompt, seed) tuple.

    Purification is applied before editing, to the unprotected baseline as
    well, so each defense row has a reference differing only in the
    protection. Returns {job tuple -> sidecar dict}.
    """
    out = Path(out_dir)
    jobs = _edit_jobs(plan, out)
    if plan.jobs > 1:
        with ThreadPoolExecutor(max_workers=plan.jobs) as pool:
            done = list(pool.map(lambda j: _run_one_edit(plan, bundle, out, j), jobs))
    else:
        done = [_run_one_edit(plan, bundle, out, j) for j in jobs]
    return {job: sidecar for job, sidecar in done}


def evaluate(plan: ExperimentPlan, bundle: BackendBundle, out_dir: str | Path) -> list:
    """Score every edit against its paired no-defense reference.

    The pixel/perceptual comparisons (psnr, ssim, lpips) pair the defense
    edit with the baseline edit of the same (image, prompt, seed,
    purification); baseline rows carry nulls for those three. Writes
    records.jsonl and returns the records sorted by id.
    """
    out = Path(out_dir)
    records = []
    prompt_by_id = {p.prompt_id: p for p in plan.prompts}
    jobs = _edit_jobs(plan, out)
    for image_id, method, spec, prompt, seed in jobs:
        name = _edit_name(image_id, prompt.prompt_id, seed)
        edit_path = out / "edits" / method / spec.label / f"{name}.png"
        sidecar_path = edit_path.with_suffix(".json")
        if not edit_path.exists():
            raise ArgumentError(f"missing edit artifact {edit_path}; run edits first")
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
        src = read_png(out / "inputs" / f"{image_id}.png")
        edited = read_png(edit_path)
        flags = list(sidecar.get("flags", []))
        if method == BASELINE_METHOD:
            reference = None
        else:
            ref_path = out / "edits" / BASELINE_METHOD / spec.label / f"{name}.png"
            if not ref_path.exists():
                raise ArgumentError(f"missing baseline edit {ref_path}")
            reference = read_png(ref_path)
            prot_sidecar = out / "protected" / method / f"{image_id}.json"
            if prot_sidecar.exists():
                flags += json.loads(prot_sidecar.read_text(encoding="utf-8")).get("flags", [])
        entry = prompt_by_id[prompt.prompt_id]
        values, metric_flags = compute_metric_set(
            bundle, src, edited,
            reference_edit=reference,
            prompt=entry.text,
            description=entry.description,
        )
        record = EvaluationRecord(
            record_id=f"{image_id}|{prompt.prompt_id}|{method}|s{seed}|{spec.label}",
            image_id=image_id,
            prompt_id=prompt.prompt_id,
            prompt_category=entry.category,
            method=method,
            seed=seed,
            purification=spec.label,
            metrics=values,
            flags=tuple(sorted(set(flags + metric_flags))),
            editor_stream=sidecar["editor_stream"],
        )
        records.append(record)
    records.sort(key=lambda r: r.record_id)
    write_records(records, out / "records.jsonl")
    return records


def expected_record_count(plan: ExperimentPlan, n_images: int) -> int:
    """|images| x |prompts| x (|methods| + baseline) x |seeds| x |purifications|."""
    return (
        n_images
        * len(plan.prompts)
        * (len(plan.methods) + 1)
        * len(plan.seeds)
        * len(plan.purifications)
    )


def write_records(records, path: str | Path) -> None:
    lines = [_canonical_json(r.to_row()) for r in sorted(records, key=lambda r: r.record_id)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_records(path: str | Path) -> list:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(EvaluationRecord.from_row(json.loads(line)))
    return records
