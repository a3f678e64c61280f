from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import torch

from src.augment.grading import Gradable, is_light
from src.augment.policies import PolicyChain, PolicySpec, apply_chain
from src.utils.exceptions import AugmentationException
from src.utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class ViewBatch:
    """Aligned per-level views of one labeled batch; views[0] is level 1 (lightest)."""

    views: List[torch.Tensor]
    labels: torch.Tensor
    seed: int

    @property
    def num_levels(self) -> int:
        return len(self.views)

    @property
    def batch_size(self) -> int:
        return int(self.labels.shape[0])

    def level(self, level: int) -> torch.Tensor:
        return self.views[level - 1]

    def to(self, device: torch.device) -> "ViewBatch":
        return ViewBatch([v.to(device) for v in self.views], self.labels.to(device), self.seed)


def image_rng(seed: int, index: int, level: int) -> np.random.Generator:
    # one independent stream per (batch seed, image, level); level 0 is the light stage
    return np.random.default_rng([seed, index, level])


def make_view_batch(
        images: torch.Tensor | Sequence[torch.Tensor],
        labels: torch.Tensor | Sequence[int],
        graded: Sequence[Gradable],
        light: PolicyChain | Sequence[PolicySpec],
        rng: np.random.Generator | int,
) -> ViewBatch:
    """Build K aligned views: views[j] = graded_j(light(image)), independently per image.

    `rng` may be a generator (a batch seed is drawn from it) or the recorded seed of an
    earlier batch, which replays that batch exactly.
    """
    images = list(images)
    labels = torch.as_tensor(labels, dtype=torch.long)
    if not images:
        raise AugmentationException("Cannot build a view batch from an empty batch")
    if len(images) != labels.shape[0]:
        raise AugmentationException("Images and labels differ in length",
                                    details={"images": len(images), "labels": int(labels.shape[0])})

    levels = [policy.level for policy in graded]
    if not graded or levels != list(range(1, len(graded) + 1)):
        raise AugmentationException("Graded policies must carry levels 1..K in order", details={"levels": levels})
    if not is_light(graded[0]):
        raise AugmentationException("Level-1 views may only use light policies (Identity, Crop, Flip)",
                                    details={"level_1": str(graded[0])})

    seed = int(rng.integers(0, 2 ** 63)) if isinstance(rng, np.random.Generator) else int(rng)
    chains = [PolicyChain.of(policy) for policy in graded]

    per_level: List[List[torch.Tensor]] = [[] for _ in chains]
    for index, image in enumerate(images):
        base = apply_chain(image, light, image_rng(seed, index, 0))
        for level, chain in enumerate(chains, start=1):
            per_level[level - 1].append(apply_chain(base, chain, image_rng(seed, index, level)))

    views = [torch.stack(level_images) for level_images in per_level]
    logger.debug(f"Built view batch: {len(chains)} levels x {len(images)} images, seed={seed}")
    return ViewBatch(views=views, labels=labels, seed=seed)
