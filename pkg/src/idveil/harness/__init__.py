from idveil.harness.config import (
    attack_config_from,
    bundle_from_config,
    load_config,
    plan_from_config,
    purify_spec_from_label,
)
from idveil.harness.dataset import load_dataset
from idveil.harness.pipeline import (
    EvaluationRecord,
    ExperimentPlan,
    evaluate,
    expected_record_count,
    read_records,
    run_edits,
    run_protection,
    write_records,
)
from idveil.harness.prompts import DEFAULT_CATALOG, PromptCatalog, PromptEntry
from idveil.harness.reports import (
    Report,
    budget_sweep,
    design_ablation,
    emit_report,
    make_report,
    report_from_json,
)

__all__ = [
    "DEFAULT_CATALOG",
    "EvaluationRecord",
    "ExperimentPlan",
    "PromptCatalog",
    "PromptEntry",
    "Report",
    "attack_config_from",
    "budget_sweep",
    "bundle_from_config",
    "design_ablation",
    "emit_report",
    "evaluate",
    "expected_record_count",
    "load_config",
    "load_dataset",
    "make_report",
    "plan_from_config",
    "purify_spec_from_label",
    "read_records",
    "report_from_json",
    "run_edits",
    "run_protection",
    "write_records",
]
