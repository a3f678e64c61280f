import os

os.environ.setdefault("LOG_LEVEL", "WARNING")
os.environ.setdefault("LOG_FILE", os.path.join(os.path.dirname(__file__), "..", "apnet-tests.log"))

import pytest
import torch

from src.harness.experiment import ExperimentConfig, parse_experiment
from src.surgery.plan import NetworkPlan, small_resnet_backbone


def pytest_collection_modifyitems(config, items):
    if os.getenv("APNET_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set APNET_RUN_SLOW=1 to run long training checks")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def float64():
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)


@pytest.fixture
def tiny_plan() -> NetworkPlan:
    return NetworkPlan(backbone=small_resnet_backbone(num_classes=5, widths=(8, 16), blocks=1), k=2)


@pytest.fixture
def tiny_plan_k3() -> NetworkPlan:
    return NetworkPlan(backbone=small_resnet_backbone(num_classes=5, widths=(8, 16), blocks=1), k=3,
                       split=[1.0, 2 / 3, 1 / 3])


def synthetic_config(**overrides) -> ExperimentConfig:
    raw = {
        "name": "tiny",
        "variant": "pathways",
        "dataset": {"format": "synthetic", "num_classes": 4, "train_per_class": 8, "val_per_class": 4,
                    "image_size": 16},
        "plan": {"backbone": "small_resnet", "widths": [8, 16], "blocks": 1, "k": 2},
        "light": [{"kind": "Flip"}],
        "graded": [{"kind": "Identity"}, {"kind": "GridShuffle", "params": {"g": 2}}],
        "optimizer": {"lr": 0.05},
        "epochs": 2,
        "batch_size": 8,
        "seeds": [0],
        "eval": {"resize": 16, "crop": 16},
    }
    raw.update(overrides)
    return parse_experiment(raw)


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    return synthetic_config()
