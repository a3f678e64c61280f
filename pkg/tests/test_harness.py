import shutil
from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image
from pydantic import ValidationError

import cli
from src.harness import (
    MetricsRecord,
    RunSummary,
    SyntheticShapes,
    Trainer,
    account_experiment,
    build_report,
    collect_runs,
    evaluate,
    evaluate_model,
    format_table,
    ingest,
    load_experiment,
    report,
)
from src.augment.policies import PolicyChain
from src.harness.data import subsample_per_class
from src.harness.experiment import DatasetConfig, EvalProtocol
from src.harness.metrics import METRICS_FILE, STEPS_FILE, SUMMARY_FILE, StepRecord, read_jsonl
from src.heap import HeAPNetwork
from src.surgery import surgerize
from src.utils.helper import resolve_data_path
from src.utils.exceptions import ConfigurationException, DataIngestionException, EvaluationException, TrainingException
from tests.conftest import synthetic_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
CPU = torch.device("cpu")


class TestSubsample:
    """Per-class scarcity cap on the training split."""

    labels = np.repeat(np.arange(3), 500)

    def test_exact_counts_in_source_order(self):
        keep = subsample_per_class(self.labels, 3, cap=100, seed=0)
        assert np.bincount(self.labels[keep]).tolist() == [100, 100, 100]
        assert np.all(np.diff(keep) > 0)

    def test_same_seed_same_selection(self):
        first = subsample_per_class(self.labels, 3, cap=100, seed=4)
        second = subsample_per_class(self.labels, 3, cap=100, seed=4)
        assert np.array_equal(first, second)

    def test_different_seeds_overlap_like_independent_draws(self):
        first = subsample_per_class(self.labels, 3, cap=100, seed=0)
        second = subsample_per_class(self.labels, 3, cap=100, seed=1)
        for c in range(3):
            shared = np.intersect1d(first[self.labels[first] == c], second[self.labels[second] == c])
            # expected overlap is 100 * 100 / 500 = 20 per class
            assert 5 <= len(shared) <= 40

    def test_cap_above_availability_keeps_everything(self):
        labels = np.array([0, 1, 1, 0, 1])
        assert subsample_per_class(labels, 2, cap=10, seed=0).tolist() == [0, 1, 2, 3, 4]
        assert subsample_per_class(labels, 2, cap=None, seed=0).tolist() == [0, 1, 2, 3, 4]

    def test_empty_class_is_rejected(self):
        with pytest.raises(DataIngestionException):
            subsample_per_class(np.array([0, 0, 2]), 3, cap=1, seed=0)


class TestIngest:
    """Dataset readers and the synthetic generator."""

    def test_synthetic_counts(self):
        cfg = DatasetConfig(format="synthetic", num_classes=4, train_per_class=8, val_per_class=4, image_size=16, cap=5)
        splits = ingest(cfg, seed=0)
        assert splits.train.per_class_counts() == [5, 5, 5, 5]
        assert splits.val.per_class_counts() == [4, 4, 4, 4]
        assert splits.train.images.shape == (20, 3, 16, 16)
        assert 0.0 <= splits.train.images.min() and splits.train.images.max() <= 1.0

    def test_synthetic_generator_is_deterministic(self):
        generator = SyntheticShapes(3, 12)
        a_images, a_labels = generator.generate(2, seed=5)
        b_images, b_labels = generator.generate(2, seed=5)
        assert np.array_equal(a_images, b_images) and np.array_equal(a_labels, b_labels)
        assert generator.classes == ["square_0", "disk_0", "hstripes_0"]

    def test_synthetic_class_range(self):
        with pytest.raises(DataIngestionException):
            SyntheticShapes(11, 8)

    def _write_tree(self, root: Path, classes, per_class: int):
        rng = np.random.default_rng(0)
        for name in classes:
            folder = root / name
            folder.mkdir(parents=True)
            for index in range(per_class):
                pixels = rng.integers(0, 256, size=(10, 14, 3), dtype=np.uint8)
                Image.fromarray(pixels).save(folder / f"{index}.png")

    def test_image_folder_skips_unreadable_files(self, tmp_path):
        self._write_tree(tmp_path / "train", ["cat", "dog"], 3)
        self._write_tree(tmp_path / "val", ["cat", "dog"], 2)
        (tmp_path / "train" / "dog" / "broken.png").write_text("not an image")
        splits = ingest(DatasetConfig(format="image_folder", path=str(tmp_path), image_size=8), seed=0)
        assert splits.train.classes == ["cat", "dog"]
        assert splits.train.per_class_counts() == [3, 3]
        assert splits.val.images.shape == (4, 3, 8, 8)

    def test_image_folder_class_mismatch(self, tmp_path):
        self._write_tree(tmp_path / "train", ["cat", "dog"], 1)
        self._write_tree(tmp_path / "val", ["cat", "owl"], 1)
        with pytest.raises(DataIngestionException):
            ingest(DatasetConfig(format="image_folder", path=str(tmp_path), image_size=8), seed=0)

    def test_missing_cifar_batches(self, tmp_path):
        with pytest.raises(DataIngestionException):
            ingest(DatasetConfig(format="cifar_batches", path=str(tmp_path / "nowhere")), seed=0)


class TestExperimentConfig:
    """YAML experiment files and their validation."""

    @pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
    def test_repository_configs_load(self, path):
        cfg = load_experiment(path)
        assert cfg.order >= 1
        assert [p.level for p in cfg.graded] == list(range(1, len(cfg.graded) + 1))

    def test_graded_policies_are_sorted(self):
        cfg = synthetic_config(graded=[{"kind": "GridShuffle", "params": {"g": 2}}, {"kind": "Identity"}])
        assert [str(p) for p in cfg.graded] == ["Identity", "GridShuffle(g=2)"]

    def test_baseline_trains_on_the_light_level_only(self):
        cfg = synthetic_config(variant="baseline")
        assert cfg.order == 1
        assert len(cfg.training_policies()) == 1
        assert cfg.network_plan(4).k == 1

    @pytest.mark.parametrize("overrides", [
        {"heap": {"pathways": [{"scale": 1.0, "width": 8}]}},
        {"graded": [{"kind": "Identity"}]},
        {"graded": [{"kind": "Gray"}, {"kind": "Blur"}]},
        {"graded": [{"kind": "Identity"}, {"kind": "Blur", "params": {"k": 4}}]},
        {"graded": [{"kind": "Gray", "params": {"alpha": 0.5}}, {"kind": "Gray", "params": {"alpha": 1.0}}]},
        {"grading": "as_listed", "graded": [{"kind": "Gray"}, {"kind": "Identity"}]},
        {"learning_rate": 0.1},
        {"epochs": 0},
        {"eval": {"resize": 16, "crop": 32}},
        {"dataset": {"format": "cifar_batches"}},
    ])
    def test_invalid_configs(self, overrides):
        with pytest.raises(ConfigurationException):
            synthetic_config(**overrides)

    def test_chain_entries_are_parsed(self):
        cfg = synthetic_config(graded=[
            {"kind": "Identity"},
            {"policies": [{"kind": "Gray", "params": {"alpha": 1.0}}, {"kind": "Blur", "params": {"k": 3}}],
             "shuffle": True},
        ])
        heavy = cfg.graded[1]
        assert isinstance(heavy, PolicyChain)
        assert heavy.shuffle
        assert heavy.level == 2
        assert [p.kind.value for p in heavy.policies] == ["Gray", "Blur"]

    def test_as_listed_grading_keeps_order_and_repeats(self):
        cfg = synthetic_config(
            grading="as_listed",
            plan={"backbone": "small_resnet", "widths": [8, 16], "blocks": 1, "k": 3, "split": [1.0, 0.75, 0.5]},
            graded=[{"kind": "Identity"}, {"kind": "GridShuffle", "params": {"g": 2}},
                    {"kind": "GridShuffle", "params": {"g": 2}}],
        )
        assert [p.level for p in cfg.graded] == [1, 2, 3]
        assert str(cfg.graded[1]) == str(cfg.graded[2]) == "GridShuffle(g=2)"
        with pytest.raises(ConfigurationException):
            synthetic_config(
                plan={"backbone": "small_resnet", "widths": [8, 16], "blocks": 1, "k": 3, "split": [1.0, 0.75, 0.5]},
                graded=[{"kind": "Identity"}, {"kind": "GridShuffle", "params": {"g": 2}},
                        {"kind": "GridShuffle", "params": {"g": 2}}],
            )

    def test_isolated_pathways_reach_the_plan(self):
        cfg = synthetic_config(plan={"backbone": "small_resnet", "widths": [8, 16], "blocks": 1, "k": 2,
                                     "cross_pathway": False})
        plan = cfg.network_plan(4)
        assert not plan.cross_pathway
        assert all(not layer.spec.cross_pathway for _, layer in surgerize(plan).ap_layers())

    def test_heap_requires_the_pathway_variant(self):
        with pytest.raises(ConfigurationException):
            synthetic_config(variant="baseline_heavy", plan=None, heap={"pathways": [{"scale": 1.0, "width": 8}]})

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigurationException):
            load_experiment(tmp_path / "missing.yaml")
        broken = tmp_path / "broken.yaml"
        broken.write_text("name: [unclosed")
        with pytest.raises(ConfigurationException):
            load_experiment(broken)


class TestMetrics:
    """Per-epoch records and evaluation."""

    def test_top1_cannot_exceed_top5(self):
        with pytest.raises(ValidationError):
            MetricsRecord(epoch=0, head_losses=[1.0], similarity=0.0, weighted_similarity=0.0,
                          top1=60.0, top5=50.0, wall_time=1.0, lr=0.1)

    def test_malformed_jsonl(self, tmp_path):
        path = tmp_path / STEPS_FILE
        path.write_text('{"epoch": 0}\n')
        with pytest.raises(EvaluationException):
            read_jsonl(path, StepRecord)

    def test_top5_is_complete_with_few_classes(self, tiny_config):
        splits = ingest(tiny_config.dataset, seed=0)
        model = surgerize(tiny_config.network_plan(4))
        top1, top5 = evaluate_model(model, splits.val, tiny_config.eval)
        assert top5 == 100.0
        assert 0.0 <= top1 <= 100.0

    def test_class_count_mismatch(self, tiny_config):
        splits = ingest(tiny_config.dataset, seed=0)
        model = surgerize(tiny_config.network_plan(5))
        with pytest.raises(EvaluationException):
            evaluate_model(model, splits.val, tiny_config.eval)

    def test_protocol_center_crop(self, tiny_config):
        splits = ingest(tiny_config.dataset, seed=0)
        model = surgerize(tiny_config.network_plan(4))
        top1, _ = evaluate_model(model, splits.val, EvalProtocol(resize=20, crop=16), batch_size=5)
        assert 0.0 <= top1 <= 100.0


class TestTrainer:
    """End-to-end training runs on generated data (CPU)."""

    def test_fit_writes_every_artifact(self, tiny_config, tmp_path):
        result = Trainer(tiny_config, 0, tmp_path, device=CPU).fit()
        for name in (STEPS_FILE, METRICS_FILE, SUMMARY_FILE):
            assert (tmp_path / name).exists()
        assert result.last_checkpoint.exists() and result.best_checkpoint.exists()
        steps = read_jsonl(tmp_path / STEPS_FILE, StepRecord)
        assert len(steps) == 2 * 4
        assert all(len(step.head_losses) == 2 for step in steps)
        assert [m.epoch for m in result.metrics] == [0, 1]
        assert result.summary.params > result.summary.inference_params
        assert all(np.isfinite(loss) for loss in result.step_losses)

    def test_same_seed_same_trace(self, tiny_config, tmp_path):
        first = Trainer(tiny_config, 3, tmp_path / "a", device=CPU).fit()
        second = Trainer(tiny_config, 3, tmp_path / "b", device=CPU).fit()
        assert first.step_losses == second.step_losses
        seeds_a = [s.batch_seed for s in read_jsonl(tmp_path / "a" / STEPS_FILE, StepRecord)]
        seeds_b = [s.batch_seed for s in read_jsonl(tmp_path / "b" / STEPS_FILE, StepRecord)]
        assert seeds_a == seeds_b

    def test_resume_continues_the_trace(self, tiny_config, tmp_path):
        run_dir = tmp_path / "run"
        original = Trainer(tiny_config, 1, run_dir, device=CPU)
        original.run_epoch(0)
        shutil.copy(run_dir / "last.apnet", tmp_path / "epoch0.apnet")
        original.run_epoch(1)
        continued = original.step_losses[4:]

        resumed = Trainer(tiny_config, 1, run_dir, device=CPU).resume(tmp_path / "epoch0.apnet")
        assert resumed.start_epoch == 1 and resumed.step == 4
        result = resumed.fit()
        torch.testing.assert_close(torch.tensor(result.step_losses, dtype=torch.float64),
                                   torch.tensor(continued, dtype=torch.float64), rtol=1e-6, atol=0)
        assert [m.epoch for m in read_jsonl(run_dir / METRICS_FILE, MetricsRecord)] == [0, 1]
        assert len(read_jsonl(run_dir / STEPS_FILE, StepRecord)) == 8

    def test_resume_rejects_another_seed(self, tiny_config, tmp_path):
        trainer = Trainer(tiny_config, 0, tmp_path, device=CPU)
        trainer.run_epoch(0)
        with pytest.raises(TrainingException):
            Trainer(tiny_config, 1, tmp_path / "other", device=CPU).resume(tmp_path / "last.apnet")

    def test_order_one_pathways_equal_baseline(self, tmp_path):
        identity = [{"kind": "Identity"}]
        plain = synthetic_config(graded=identity, objective={"lambda_ratio": 0.0},
                                 plan={"backbone": "small_resnet", "widths": [8, 16], "blocks": 1, "k": 1})
        baseline = synthetic_config(variant="baseline", graded=identity)
        first = Trainer(plain, 2, tmp_path / "plain", device=CPU).fit()
        second = Trainer(baseline, 2, tmp_path / "baseline", device=CPU).fit()
        assert first.step_losses == second.step_losses

    def test_baseline_heavy_sees_every_view(self, tmp_path):
        cfg = synthetic_config(variant="baseline_heavy", plan={"backbone": "small_resnet", "widths": [8, 16],
                                                               "blocks": 1, "k": 1}, epochs=1)
        Trainer(cfg, 0, tmp_path, device=CPU).fit()
        steps = read_jsonl(tmp_path / STEPS_FILE, StepRecord)
        assert all(len(step.head_losses) == 2 and step.similarity == 0.0 for step in steps)

    def test_heap_run(self, tmp_path):
        cfg = synthetic_config(plan=None, epochs=1,
                               heap={"pathways": [{"scale": 1.0, "width": 8}, {"scale": 2.0, "width": 4}]})
        result = Trainer(cfg, 0, tmp_path, device=CPU).fit()
        assert result.summary.order == 2
        assert result.summary.macs > 0
        spec = cfg.heap_spec(4)
        assert result.summary.inference_params == HeAPNetwork(spec).inference_parameter_count()

    def test_evaluate_checkpoint_reproduces_last_epoch(self, tiny_config, tmp_path):
        result = Trainer(tiny_config, 0, tmp_path, device=CPU).fit()
        top1, top5 = evaluate(result.last_checkpoint)
        assert top1 == pytest.approx(result.metrics[-1].top1)
        assert top5 == pytest.approx(result.metrics[-1].top5)
        assert evaluate(result.last_checkpoint) == (top1, top5)

    @pytest.mark.slow
    def test_accuracy_rises_above_chance(self, tmp_path):
        cfg = synthetic_config(dataset={"format": "synthetic", "num_classes": 4, "train_per_class": 64,
                                        "val_per_class": 16, "image_size": 16}, epochs=10, batch_size=32)
        result = Trainer(cfg, 0, tmp_path, device=CPU).fit()
        assert result.summary.best_top1 > 50.0

    @pytest.mark.slow
    def test_pathways_keep_accuracy_with_fewer_inference_parameters(self, tmp_path):
        runs = {}
        for name in ("cifar10_ap_randaugment", "cifar10_baseline_heavy"):
            cfg = load_experiment(CONFIGS / f"{name}.yaml")
            if not resolve_data_path(cfg.dataset.path).is_dir():
                # synthetic 32x32 stand-in when the CIFAR-10 batches are not installed
                cfg = cfg.model_copy(update={
                    "dataset": DatasetConfig(format="synthetic", num_classes=4, train_per_class=64,
                                             val_per_class=32, image_size=32),
                    "epochs": 8,
                    "batch_size": 32,
                })
            runs[cfg.variant] = [Trainer(cfg, seed, tmp_path / name / f"seed_{seed}", device=CPU).fit().summary
                                 for seed in (0, 1, 2)]
        pathways, baseline = runs["pathways"], runs["baseline_heavy"]
        assert np.mean([s.top1 for s in pathways]) >= np.mean([s.top1 for s in baseline]) - 0.5
        assert pathways[0].inference_params < baseline[0].inference_params


class TestReport:
    """Aggregation over seeds and static accounting."""

    def _write(self, root: Path, seed: int, top1: float, name: str = "tiny", variant: str = "pathways"):
        run = root / f"seed_{seed}"
        run.mkdir(parents=True)
        summary = RunSummary(name=name, variant=variant, seed=seed, order=2, params=1200, inference_params=1000,
                             macs=2_000_000, epochs=1, top1=top1, top5=top1 + 10, best_top1=top1)
        (run / SUMMARY_FILE).write_text(summary.model_dump_json())

    def test_mean_and_sample_deviation(self, tmp_path):
        self._write(tmp_path, 0, 40.0)
        self._write(tmp_path, 1, 50.0)
        rows = build_report(collect_runs([tmp_path]))
        assert len(rows) == 1
        assert rows[0].seeds == 2
        assert rows[0].top1_mean == pytest.approx(45.0)
        assert rows[0].top1_std == pytest.approx(np.std([40.0, 50.0], ddof=1))
        assert "45.00 ± 7.07" in format_table(rows)

    def test_groups_by_name_and_variant(self, tmp_path):
        self._write(tmp_path / "a", 0, 40.0)
        self._write(tmp_path / "b", 0, 30.0, variant="baseline")
        rows = build_report(collect_runs([tmp_path]))
        assert sorted(row.variant for row in rows) == ["baseline", "pathways"]
        assert all(row.top1_std == 0.0 for row in rows)

    def test_csv_output(self, tmp_path):
        self._write(tmp_path, 0, 40.0)
        csv_path = tmp_path / "report.csv"
        report([tmp_path], csv_path=csv_path)
        header = csv_path.read_text().splitlines()[0]
        assert header.startswith("name,variant,seeds,params")

    def test_skips_unreadable_summaries(self, tmp_path):
        self._write(tmp_path, 0, 40.0)
        broken = tmp_path / "seed_9"
        broken.mkdir()
        (broken / SUMMARY_FILE).write_text("{")
        assert len(collect_runs([tmp_path])) == 1

    def test_no_runs(self, tmp_path):
        with pytest.raises(EvaluationException):
            collect_runs([tmp_path])

    def test_account_matches_built_network(self, tiny_config):
        accounting = account_experiment(tiny_config)
        assert accounting.inference_params == surgerize(tiny_config.network_plan(4)).inference_parameter_count()
        assert accounting.baseline_params > accounting.inference_params
        assert "ratio" in accounting.format()

    def test_account_heap_config(self):
        cfg = load_experiment(CONFIGS / "heap3_synthetic.yaml")
        accounting = account_experiment(cfg)
        assert accounting.inference_params == HeAPNetwork(cfg.heap_spec(6)).inference_parameter_count()
        assert accounting.baseline_params > accounting.inference_params
        assert accounting.macs > 0

    def test_account_resnet50_config(self):
        accounting = account_experiment(load_experiment(CONFIGS / "resnet50_accounting.yaml"))
        assert accounting.inference_params == 21_821_480
        assert accounting.baseline_params == 25_557_032


class TestCli:
    """Exit codes of the command-line entry point."""

    def test_account(self, capsys):
        assert cli.main(["account", "--config", str(CONFIGS / "synthetic_smoke.yaml")]) == 0
        assert "params (inference)" in capsys.readouterr().out

    def test_train_then_report(self, tmp_path, capsys):
        config = str(CONFIGS / "synthetic_smoke.yaml")
        assert cli.main(["train", "--config", config, "--seed", "0", "--out", str(tmp_path / "run")]) == 0
        assert cli.main(["report", "--runs", str(tmp_path)]) == 0
        assert "synthetic_ap2" in capsys.readouterr().out

    def test_missing_checkpoint(self, tmp_path):
        assert cli.main(["eval", "--checkpoint", str(tmp_path / "missing.apnet")]) == 1

    def test_resume_needs_a_seed(self, tmp_path):
        config = str(CONFIGS / "synthetic_smoke.yaml")
        assert cli.main(["train", "--config", config, "--out", str(tmp_path), "--resume", "x.apnet"]) == 1

    def test_report_without_runs(self, tmp_path):
        assert cli.main(["report", "--runs", str(tmp_path)]) == 1
