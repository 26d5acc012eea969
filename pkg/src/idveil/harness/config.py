"""TOML config file handling for the harness and CLI.

Sections: [backend] (kind plus component identifiers), [attack] (name and
optimization hyperparameters), [edit] (editing hyperparameters), [purify]
(list of transforms), [plan] (dataset, methods, prompts, seeds, budgets).
"""

from __future__ import annotations

import re
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from idveil.attacks import AttackConfig
from idveil.backends import EditParams, make_toy_bundle, real_bundle
from idveil.core import ArgumentError, RngState
from idveil.harness.pipeline import ExperimentPlan
from idveil.harness.prompts import DEFAULT_CATALOG, PromptCatalog
from idveil.purification import PurifySpec


def load_config(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def bundle_from_config(config: dict, kind_override: str | None = None):
    backend = dict(config.get("backend", {}))
    kind = kind_override or backend.get("kind", "toy")
    if kind == "toy":
        return make_toy_bundle(
            seed=int(backend.get("seed", 0)),
            image_size=int(backend.get("image_size", 32)),
        )
    if kind == "real":
        return real_bundle(backend)
    raise ArgumentError(f"backend kind must be 'toy' or 'real', got {kind!r}")


def attack_config_from(config: dict, seed: int | None = None) -> AttackConfig:
    attack = dict(config.get("attack", {}))
    attack.pop("name", None)
    kwargs = {}
    for key in ("epsilon", "alpha", "lambda_latent", "lambda_aux", "cw_c", "eot_beta"):
        if key in attack:
            kwargs[key] = float(attack[key])
    for key in ("steps", "eot_samples"):
        if key in attack:
            kwargs[key] = int(attack[key])
    if "loss_toggles" in attack:
        kwargs["loss_toggles"] = frozenset(attack["loss_toggles"])
    rng_seed = seed if seed is not None else int(attack.get("seed", 0))
    kwargs["rng"] = RngState(rng_seed, "attack")
    return AttackConfig(**kwargs)


def edit_params_from(config: dict) -> EditParams:
    edit = dict(config.get("edit", {}))
    return EditParams(
        image_size=int(edit.get("image_size", 512)),
        inference_steps=int(edit.get("inference_steps", 50)),
        image_guidance=float(edit.get("image_guidance", 1.5)),
        text_guidance=float(edit.get("text_guidance", 7.5)),
    )


def purify_spec_from_label(label: str) -> PurifySpec:
    """Shorthand labels: none, blur, rotate, color_jitter, jpeg<quality>."""
    m = re.fullmatch(r"jpeg(\d+)", label)
    if m:
        return PurifySpec(kind="jpeg", jpeg_quality=int(m.group(1)))
    return PurifySpec(kind=label)


def purify_specs_from(config: dict) -> tuple:
    section = config.get("purify", {})
    specs = []
    for entry in section.get("spec", []):
        kwargs = dict(entry)
        if "rotate_range" in kwargs:
            kwargs["rotate_range"] = tuple(kwargs["rotate_range"])
        for tup in ("jitter_brightness", "jitter_contrast", "jitter_saturation"):
            if tup in kwargs:
                kwargs[tup] = tuple(kwargs[tup])
        specs.append(PurifySpec(**kwargs))
    for label in section.get("kinds", []):
        specs.append(purify_spec_from_label(label))
    if not specs:
        specs = [PurifySpec(kind="none")]
    return tuple(specs)


def prompts_from(config: dict) -> PromptCatalog:
    plan = config.get("plan", {})
    catalog = (
        PromptCatalog.from_csv(plan["prompts_file"])
        if plan.get("prompts_file")
        else DEFAULT_CATALOG
    )
    if plan.get("prompts"):
        catalog = catalog.select(plan["prompts"])
    return catalog


def plan_from_config(
    config: dict,
    dataset: str | None = None,
    seed: int | None = None,
    jobs: int | None = None,
) -> ExperimentPlan:
    plan_cfg = dict(config.get("plan", {}))
    ds = dataset or plan_cfg.get("dataset")
    if not ds:
        raise ArgumentError("no dataset configured ([plan].dataset or --input)")
    methods = tuple(plan_cfg.get("methods", [config.get("attack", {}).get("name", "facelock")]))
    seeds = tuple(int(s) for s in plan_cfg.get("seeds", (0, 1, 2, 3, 4)))
    return ExperimentPlan(
        dataset=str(ds),
        methods=methods,
        prompts=prompts_from(config),
        seeds=seeds,
        purifications=purify_specs_from(config),
        edit_params=edit_params_from(config),
        attack=attack_config_from(config, seed=seed),
        jobs=int(jobs if jobs is not None else plan_cfg.get("jobs", 1)),
    )
