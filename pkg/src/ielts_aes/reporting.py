"""Report emission: the main-results markdown table, the cost-accuracy CSV,
per-essay case-study markdown, a flat JSON record, and rendered figures.

Every emitted byte is a pure function of the run's results; wall-clock
timestamps and cache diagnostics go to the run log instead so reruns stay
byte-identical.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bands import HALF_STEP_COUNT
from .metrics import DEFAULT_ACCURACY_TOLERANCE, markdown_row
from .runner import EvaluationReport, StrategyRun

log = logging.getLogger(__name__)

EXCERPT_CHARS = 80

MAIN_RESULTS_HEADER = (
    "| Strategy | Accuracy | F1 | RMSE | MAE | Acc@0.0 | Acc@1.0 | Parse Failures | N |\n"
    "|---|---|---|---|---|---|---|---|---|"
)


def _excerpt(text: str, limit: int = EXCERPT_CHARS) -> str:
    flat = " ".join(text.split())
    return flat if len(flat) <= limit else flat[: limit - 3] + "..."


def render_main_results(report: EvaluationReport) -> str:
    lines = ["# Main Results", "", MAIN_RESULTS_HEADER.split("\n")[0], MAIN_RESULTS_HEADER.split("\n")[1]]
    for run in report.runs:
        lines.append(markdown_row(run.config.name, run.metrics))
    lines.append("")
    lines.append(
        f"Accuracy column uses tolerance {DEFAULT_ACCURACY_TOLERANCE} bands; "
        "Acc@0.0 and Acc@1.0 are co-reported."
    )
    lines.append(f"Config hash: `{report.config_hash}`; templates: `{report.template_versions}`.")
    return "\n".join(lines) + "\n"


def render_cost_accuracy_rows(report: EvaluationReport) -> list[dict]:
    rows = []
    for run in report.runs:
        rows.append(
            {
                "approach": run.config.name,
                "accuracy": f"{run.metrics.accuracy.get(DEFAULT_ACCURACY_TOLERANCE, 0.0):.4f}",
                "cost-hours": f"{run.cost_hours:.4f}",
                "gpu-count": str(run.config.gpu_count),
            }
        )
    return rows


def render_case_study(report: EvaluationReport) -> str:
    """Per-essay comparison table: prompt excerpt, gold, then each strategy's
    predicted band and feedback."""
    by_strategy: dict[str, dict[str, object]] = {
        run.config.name: {r.essay_id: r for r in run.results} for run in report.runs
    }
    lines = [
        "# Case Study",
        "",
        "| Topic / Prompt | Gold | Strategy | Predicted Band | Feedback (excerpt) |",
        "|---|---|---|---|---|",
    ]
    for essay in report.test_essays:
        gold = str(essay.overall) if essay.overall else "-"
        prompt_cell = _excerpt(essay.prompt_text)
        for run in report.runs:
            result = by_strategy[run.config.name].get(essay.id)
            if result is None:
                continue
            predicted = str(result.overall) if result.overall else "parse-failed"
            feedback = result.feedback.replace("\n", "<br>") if result.feedback else ""
            lines.append(f"| {prompt_cell} | {gold} | {run.config.name} | {predicted} | {feedback} |")
            prompt_cell = '"'  # ditto mark for subsequent strategies of the same essay
    return "\n".join(lines) + "\n"


def report_json_dict(report: EvaluationReport) -> dict:
    return {
        "config_hash": report.config_hash,
        "template_versions": report.template_versions,
        "n_test": len(report.test_essays),
        "strategies": [
            {
                "name": run.config.name,
                "kind": run.config.kind,
                "k_shots": run.config.k_shots,
                "metrics": run.metrics.to_json_dict(),
                "cost": {
                    "prompt_tokens": run.cost.prompt_tokens,
                    "output_tokens": run.cost.output_tokens,
                    "amount": run.cost.amount,
                    "wall_clock_s": run.cost.wall_clock_s,
                    "cost_hours": run.cost_hours,
                    "gpu_count": run.config.gpu_count,
                },
                "failures": [
                    {"essay_id": r.essay_id, "failure": r.failure}
                    for r in run.results
                    if r.parse_failed
                ],
            }
            for run in report.runs
        ],
    }


def _band_tick_labels() -> list[str]:
    return [f"{hs / 2:.1f}" for hs in range(HALF_STEP_COUNT)]


def render_confusion_figure(run: StrategyRun, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7.5, 6.5))
    matrix = run.metrics.confusion
    image = ax.imshow(matrix, cmap="Blues")
    ax.set_xticks(range(HALF_STEP_COUNT), _band_tick_labels(), rotation=90, fontsize=7)
    ax.set_yticks(range(HALF_STEP_COUNT), _band_tick_labels(), fontsize=7)
    ax.set_xlabel("Predicted band")
    ax.set_ylabel("Gold band")
    ax.set_title(f"Confusion: {run.config.name}")
    fig.colorbar(image, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_cost_accuracy_figure(report: EvaluationReport, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 5))
    for run in report.runs:
        acc = run.metrics.accuracy.get(DEFAULT_ACCURACY_TOLERANCE, 0.0)
        hours = run.cost_hours
        ax.scatter(hours, acc, s=60)
        ax.annotate(run.config.name, (hours, acc), textcoords="offset points", xytext=(6, 4), fontsize=8)
    ax.set_xlabel("Cost (hours)")
    ax.set_ylabel(f"Accuracy (tol {DEFAULT_ACCURACY_TOLERANCE})")
    ax.set_title("Cost vs accuracy")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_band_distribution_figure(report: EvaluationReport, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 5))
    golds = [e.overall.half_steps for e in report.test_essays if e.overall is not None]
    counts = np.bincount(golds, minlength=HALF_STEP_COUNT)
    ax.bar(range(HALF_STEP_COUNT), counts, color="#4878a8")
    ax.set_xticks(range(HALF_STEP_COUNT), _band_tick_labels(), rotation=90, fontsize=7)
    ax.set_xlabel("Gold overall band")
    ax.set_ylabel("Essays")
    ax.set_title("Test-split band distribution")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def emit_report(report: EvaluationReport, output_dir: str | Path, figures: bool = True) -> list[Path]:
    """Write every report artifact; returns the file paths written."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    path = output_dir / "report.json"
    path.write_text(
        json.dumps(report_json_dict(report), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    written.append(path)

    path = output_dir / "main_results.md"
    path.write_text(render_main_results(report), encoding="utf-8")
    written.append(path)

    path = output_dir / "cost_accuracy.csv"
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(
            handle, fieldnames=["approach", "accuracy", "cost-hours", "gpu-count"]
        )
        writer.writeheader()
        for row in render_cost_accuracy_rows(report):
            writer.writerow(row)
    written.append(path)

    path = output_dir / "case_study.md"
    path.write_text(render_case_study(report), encoding="utf-8")
    written.append(path)

    if figures:
        figures_dir = output_dir / "figures"
        figures_dir.mkdir(exist_ok=True)
        for run in report.runs:
            fig_path = figures_dir / f"confusion_{run.config.name}.png"
            render_confusion_figure(run, fig_path)
            written.append(fig_path)
        fig_path = figures_dir / "cost_accuracy.png"
        render_cost_accuracy_figure(report, fig_path)
        written.append(fig_path)
        fig_path = figures_dir / "band_distribution.png"
        render_band_distribution_figure(report, fig_path)
        written.append(fig_path)

    log.info("report written to %s (%d files)", output_dir, len(written))
    return written


def write_run_log(report: EvaluationReport, output_dir: str | Path) -> Path:
    """Diagnostics excluded from the deterministic report surface."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    path = output_dir / "run.log"
    lines = [
        f"started_at={report.started_at:.3f}",
        f"finished_at={report.finished_at:.3f}",
        f"duration_s={report.finished_at - report.started_at:.3f}",
    ]
    for run in report.runs:
        lines.append(
            f"strategy={run.config.name} essays={len(run.results)} "
            f"backend_calls={run.backend_calls} cache_hits={run.cache_hits} "
            f"failures={run.metrics.n_excluded}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
