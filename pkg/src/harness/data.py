from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Tuple

import numpy as np
import torch
import torchvision.transforms.functional as TF
from PIL import Image, ImageOps, UnidentifiedImageError
from torch.utils.data import DataLoader, TensorDataset
from torchvision.datasets import CIFAR10, ImageFolder

from src.config import Config
from src.harness.experiment import DatasetConfig, EvalProtocol
from src.utils.exceptions import DataIngestionException
from src.utils.helper import resolve_data_path
from src.utils.logger import get_logger

logger = get_logger(__name__)

# stream id of the per-class subsample, kept apart from augmentation and data-order streams
SUBSAMPLE_STREAM = 0x5CA


@dataclass
class Split:
    images: torch.Tensor  # (N, C, H, W) float in [0, 1]
    labels: torch.Tensor  # (N,) long
    classes: List[str]
    indices: np.ndarray  # positions in the source split, ascending

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def per_class_counts(self) -> List[int]:
        return torch.bincount(self.labels, minlength=self.num_classes).tolist()


@dataclass
class DatasetSplits:
    train: Split
    val: Split


def subsample_per_class(labels: np.ndarray, num_classes: int, cap: int | None, seed: int) -> np.ndarray:
    """Exactly min(cap, available) indices per class, seeded, returned in ascending source order."""
    for c in range(num_classes):
        if not np.any(labels == c):
            raise DataIngestionException("Class has no training images", details={"class": c})
    if cap is None:
        return np.arange(len(labels))
    rng = np.random.default_rng([seed, SUBSAMPLE_STREAM])
    selected = []
    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        take = min(cap, len(members))
        selected.append(rng.choice(members, size=take, replace=False))
    return np.sort(np.concatenate(selected))


def _to_split(images: np.ndarray, labels: np.ndarray, classes: List[str], indices: np.ndarray) -> Split:
    # images arrive as (N, H, W, C) uint8
    tensor = torch.from_numpy(np.ascontiguousarray(images[indices])).permute(0, 3, 1, 2).float().div(255.0)
    return Split(images=tensor.contiguous(), labels=torch.as_tensor(labels[indices], dtype=torch.long),
                 classes=classes, indices=indices)


class DatasetIngestor:
    """Loads a labeled train/val pair and applies the per-class scarcity cap to the training split only."""

    def __init__(self, cfg: DatasetConfig, seed: int):
        self.cfg = cfg
        self.seed = seed

    def ingest(self) -> DatasetSplits:
        logger.info(f"Ingesting {self.cfg.format} dataset (cap={self.cfg.cap or 'unlimited'}, seed={self.seed})")
        if self.cfg.format == "cifar_batches":
            train, val, classes = self._load_cifar()
        elif self.cfg.format == "image_folder":
            train, val, classes = self._load_image_folder()
        else:
            train, val, classes = self._load_synthetic()

        train_images, train_labels = train
        val_images, val_labels = val
        keep = subsample_per_class(train_labels, len(classes), self.cfg.cap, self.seed)
        splits = DatasetSplits(
            train=_to_split(train_images, train_labels, classes, keep),
            val=_to_split(val_images, val_labels, classes, np.arange(len(val_labels))),
        )
        logger.info(f"Ingested {len(splits.train)} training and {len(splits.val)} validation images "
                    f"over {len(classes)} classes")
        return splits

    def _load_cifar(self) -> Tuple[Tuple[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray], List[str]]:
        root = resolve_data_path(self.cfg.path)
        try:
            train = CIFAR10(str(root), train=True, download=False)
            val = CIFAR10(str(root), train=False, download=False)
        except RuntimeError as e:
            logger.error(f"CIFAR batches not found under {root}: {e}")
            raise DataIngestionException(f"Cannot read packed batches: {e}", details={"path": str(root)})
        return ((train.data, np.asarray(train.targets, dtype=np.int64)),
                (val.data, np.asarray(val.targets, dtype=np.int64)),
                list(train.classes))

    def _decode(self, path: str) -> np.ndarray | None:
        size = self.cfg.image_size
        try:
            with Image.open(path) as img:
                fitted = ImageOps.fit(img.convert("RGB"), (size, size), method=Image.BILINEAR)
                return np.asarray(fitted, dtype=np.uint8)
        except (OSError, UnidentifiedImageError) as e:
            logger.warning(f"Skipping unreadable image {path}: {e}")
            return None

    def _read_tree(self, root: Path, classes: List[str] | None) -> Tuple[np.ndarray, np.ndarray, List[str]]:
        try:
            folder = ImageFolder(str(root))
        except (FileNotFoundError, RuntimeError) as e:
            raise DataIngestionException(f"Cannot read image tree: {e}", details={"path": str(root)})
        if classes is not None and folder.classes != classes:
            raise DataIngestionException("Train and val class directories differ",
                                         details={"train": classes, "val": folder.classes})
        images, labels = [], []
        for path, label in folder.samples:
            decoded = self._decode(path)
            if decoded is not None:
                images.append(decoded)
                labels.append(label)
        if not images:
            raise DataIngestionException("No decodable images found", details={"path": str(root)})
        return np.stack(images), np.asarray(labels, dtype=np.int64), folder.classes

    def _load_image_folder(self) -> Tuple[Tuple[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray], List[str]]:
        root = resolve_data_path(self.cfg.path)
        train_images, train_labels, classes = self._read_tree(root / "train", None)
        val_images, val_labels, _ = self._read_tree(root / "val", classes)
        return (train_images, train_labels), (val_images, val_labels), classes

    def _load_synthetic(self) -> Tuple[Tuple[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray], List[str]]:
        generator = SyntheticShapes(self.cfg.num_classes, self.cfg.image_size)
        train = generator.generate(self.cfg.train_per_class, seed=0)
        val = generator.generate(self.cfg.val_per_class, seed=1)
        return train, val, generator.classes


class SyntheticShapes:
    """Deterministic shape-classification images: class c draws shape c % 5 in color family c // 5."""

    SHAPES = ("square", "disk", "hstripes", "vstripes", "cross")
    COLORS = ((0.9, 0.3, 0.2), (0.2, 0.4, 0.9))

    def __init__(self, num_classes: int, image_size: int):
        if not 2 <= num_classes <= len(self.SHAPES) * len(self.COLORS):
            raise DataIngestionException("Synthetic shapes support 2..10 classes", details={"num_classes": num_classes})
        self.num_classes = num_classes
        self.size = image_size

    @property
    def classes(self) -> List[str]:
        return [f"{self.SHAPES[c % 5]}_{c // 5}" for c in range(self.num_classes)]

    def _mask(self, shape: str, rng: np.random.Generator) -> np.ndarray:
        s = self.size
        yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
        radius = rng.uniform(0.2, 0.35) * s
        cy, cx = rng.uniform(radius, s - radius, size=2)
        if shape == "square":
            return (np.abs(yy - cy) <= radius * 0.8) & (np.abs(xx - cx) <= radius * 0.8)
        if shape == "disk":
            return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
        period = max(2.0, s / rng.uniform(3, 5))
        if shape == "hstripes":
            return (yy % period) < period / 2
        if shape == "vstripes":
            return (xx % period) < period / 2
        bar = radius * 0.35
        return ((np.abs(yy - cy) <= bar) & (np.abs(xx - cx) <= radius)) | \
            ((np.abs(xx - cx) <= bar) & (np.abs(yy - cy) <= radius))

    def generate(self, per_class: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng([seed, self.num_classes, self.size])
        images, labels = [], []
        for index in range(per_class * self.num_classes):
            label = index % self.num_classes
            mask = self._mask(self.SHAPES[label % 5], rng)
            color = np.asarray(self.COLORS[label // 5]) + rng.normal(0, 0.05, size=3)
            background = rng.uniform(0.0, 0.4, size=3)
            img = np.where(mask[..., None], color, background) + rng.normal(0, 0.05, size=(self.size, self.size, 3))
            images.append(np.clip(img * 255.0, 0, 255).astype(np.uint8))
            labels.append(label)
        return np.stack(images), np.asarray(labels, dtype=np.int64)


def ingest(cfg: DatasetConfig, seed: int) -> DatasetSplits:
    return DatasetIngestor(cfg, seed).ingest()


def batches(split: Split, batch_size: int, generator: torch.Generator | None = None,
            shuffle: bool = False) -> Iterator[Tuple[torch.Tensor, torch.Tensor]]:
    loader = DataLoader(TensorDataset(split.images, split.labels), batch_size=batch_size, shuffle=shuffle,
                        generator=generator, num_workers=Config.NUM_WORKERS)
    yield from loader


def apply_protocol(images: torch.Tensor, protocol: EvalProtocol) -> torch.Tensor:
    """Single central crop: short side resized to `protocol.resize`, then a `protocol.crop` square."""
    resized = TF.resize(images, protocol.resize, antialias=True)
    return TF.center_crop(resized, [protocol.crop, protocol.crop])
