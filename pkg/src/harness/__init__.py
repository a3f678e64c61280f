from src.harness.data import DatasetSplits, Split, SyntheticShapes, ingest
from src.harness.evaluator import evaluate, evaluate_model
from src.harness.experiment import ExperimentConfig, build_network, load_experiment, parse_experiment
from src.harness.metrics import MetricsRecord, RunSummary, StepRecord
from src.harness.report import AccountingReport, account_experiment, build_report, collect_runs, format_table, report
from src.harness.trainer import RunResult, Trainer, train, train_all

__all__ = [
    "AccountingReport",
    "DatasetSplits",
    "ExperimentConfig",
    "MetricsRecord",
    "RunResult",
    "RunSummary",
    "Split",
    "StepRecord",
    "SyntheticShapes",
    "Trainer",
    "account_experiment",
    "build_network",
    "build_report",
    "collect_runs",
    "evaluate",
    "evaluate_model",
    "format_table",
    "ingest",
    "load_experiment",
    "parse_experiment",
    "report",
    "train",
    "train_all",
]
