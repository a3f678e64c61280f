import csv
import io
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ValidationError

from src.apconv.accounting import count_macs
from src.harness.experiment import ExperimentConfig
from src.harness.metrics import SUMMARY_FILE, RunSummary
from src.heap.network import HeAPNetwork
from src.heap.spec import full_exchange_param_count, heap_param_count
from src.surgery.plan import account
from src.utils.exceptions import EvaluationException
from src.utils.logger import get_logger

logger = get_logger(__name__)

COLUMNS = ("name", "variant", "seeds", "params", "inference_params", "macs", "top1_mean", "top1_std",
           "top5_mean", "top5_std")


class ReportRow(BaseModel):
    name: str
    variant: str
    seeds: int
    params: int
    inference_params: int
    macs: int
    top1_mean: float
    top1_std: float
    top5_mean: float
    top5_std: float


def collect_runs(run_dirs: Sequence[str | Path]) -> List[RunSummary]:
    """Every run summary found at or below the given directories."""
    summaries = []
    for run_dir in run_dirs:
        for path in sorted(Path(run_dir).rglob(SUMMARY_FILE)):
            try:
                summaries.append(RunSummary.model_validate_json(path.read_text(encoding="utf-8")))
            except (OSError, ValidationError) as e:
                logger.warning(f"Skipping unreadable run summary {path}: {e}")
    if not summaries:
        raise EvaluationException("No completed runs found", details={"runs": [str(d) for d in run_dirs]})
    logger.info(f"Collected {len(summaries)} run(s) from {len(run_dirs)} location(s)")
    return summaries


def _spread(values: List[float]) -> Tuple[float, float]:
    # sample standard deviation across seeds; a single run has zero spread
    array = np.asarray(values, dtype=np.float64)
    return float(array.mean()), float(array.std(ddof=1)) if len(array) > 1 else 0.0


def build_report(summaries: Sequence[RunSummary]) -> List[ReportRow]:
    groups: Dict[Tuple[str, str], List[RunSummary]] = defaultdict(list)
    for summary in summaries:
        groups[(summary.name, summary.variant)].append(summary)

    rows = []
    for (name, variant), runs in groups.items():
        params = {r.inference_params for r in runs}
        if len(params) > 1:
            logger.warning(f"Runs of {name}/{variant} disagree on parameter count: {sorted(params)}")
        top1_mean, top1_std = _spread([r.top1 for r in runs])
        top5_mean, top5_std = _spread([r.top5 for r in runs])
        rows.append(ReportRow(
            name=name, variant=variant, seeds=len(runs), params=runs[0].params,
            inference_params=runs[0].inference_params, macs=runs[0].macs,
            top1_mean=top1_mean, top1_std=top1_std, top5_mean=top5_mean, top5_std=top5_std,
        ))
    return rows


def format_table(rows: Sequence[ReportRow]) -> str:
    header = ["Model", "Variant", "Seeds", "#Params", "MACs", "Top-1", "Top-5"]
    body = [[
        row.name, row.variant, str(row.seeds), f"{row.inference_params / 1e6:.3f}M", f"{row.macs / 1e9:.3f}G",
        f"{row.top1_mean:.2f} ± {row.top1_std:.2f}", f"{row.top5_mean:.2f} ± {row.top5_std:.2f}",
    ] for row in rows]
    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip() for line in [header] + body]
    lines.insert(1, "  ".join("-" * width for width in widths))
    return "\n".join(lines)


def to_csv(rows: Sequence[ReportRow]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=COLUMNS)
    writer.writeheader()
    for row in rows:
        writer.writerow(row.model_dump())
    return buffer.getvalue()


def report(run_dirs: Sequence[str | Path], csv_path: str | Path | None = None) -> str:
    rows = build_report(collect_runs(run_dirs))
    if csv_path is not None:
        Path(csv_path).write_text(to_csv(rows), encoding="utf-8")
        logger.info(f"Report CSV written to {csv_path}")
    return format_table(rows)


class AccountingReport(BaseModel):
    name: str
    order: int
    params: int
    inference_params: int
    baseline_params: int
    macs: int
    baseline_macs: int | None = None

    def format(self) -> str:
        ratio = self.inference_params / self.baseline_params
        lines = [
            f"{self.name} (order {self.order})",
            f"  params (all heads): {self.params:,}",
            f"  params (inference): {self.inference_params:,}",
            f"  baseline params:    {self.baseline_params:,}  (ratio {ratio:.4f})",
            f"  MACs (inference):   {self.macs:,}",
        ]
        if self.baseline_macs is not None:
            lines.append(f"  baseline MACs:      {self.baseline_macs:,}")
        return "\n".join(lines)


def account_experiment(cfg: ExperimentConfig, num_classes: int | None = None) -> AccountingReport:
    """Parameters and MACs of the configured network without training it."""
    num_classes = num_classes or cfg.dataset.num_classes
    size = cfg.eval.crop
    if cfg.heap is not None:
        spec = cfg.heap_spec(num_classes)
        net = HeAPNetwork(spec).eval()
        macs = count_macs(net, lambda: net(torch.zeros(1, spec.in_channels, size, size)))
        # compare like with like: the baseline also keeps only the main head at inference
        extra_heads = sum(p.width * num_classes + num_classes for p in spec.pathways[1:])
        return AccountingReport(name=cfg.name, order=spec.k, params=heap_param_count(spec),
                                inference_params=net.inference_parameter_count(),
                                baseline_params=full_exchange_param_count(spec) - extra_heads, macs=macs)
    plan = cfg.network_plan(num_classes)
    accounting = account(plan, (size, size))
    return AccountingReport(name=cfg.name, order=plan.k, params=accounting.total_params,
                            inference_params=accounting.inference_params,
                            baseline_params=accounting.baseline_params,
                            macs=accounting.macs, baseline_macs=accounting.baseline_macs)
