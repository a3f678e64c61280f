"""Cross Pathways Regularization.

Pathway outputs of one layer generally differ in channel count, so their similarity is
measured as a cross-channel Gram penalty: the mean spatial-batch dot product of every
(channel of U, channel of V) pair, squared and summed. It is zero exactly when every
cross-pathway channel pair is orthogonal, and it is an L2-type quantity like weight decay.
"""
from itertools import combinations
from typing import Dict, List, Sequence

import torch

from src.utils.exceptions import ObjectiveException


def gram_penalty(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """G(U, V) = sum_{u,v} (<u, v> / (B*H*W))^2 for (B, C, H, W) maps of equal batch and spatial size."""
    if u.dim() != 4 or v.dim() != 4:
        raise ObjectiveException("Pathway outputs must be (B, C, H, W) maps",
                                 details={"u": tuple(u.shape), "v": tuple(v.shape)})
    if u.shape[0] != v.shape[0] or u.shape[2:] != v.shape[2:]:
        raise ObjectiveException("Pathway outputs of one layer differ in batch or spatial size",
                                 details={"u": tuple(u.shape), "v": tuple(v.shape)})
    positions = u.shape[0] * u.shape[2] * u.shape[3]
    flat_u = u.transpose(0, 1).reshape(u.shape[1], -1)
    flat_v = v.transpose(0, 1).reshape(v.shape[1], -1)
    correlation = flat_u @ flat_v.transpose(0, 1) / positions
    return correlation.pow(2).sum()


def cross_pathway_similarity(features: Sequence[Dict[int, List[torch.Tensor]]]) -> torch.Tensor:
    """S summed over layers, over view levels, and over every pair of pathways active on that level.

    `features[t][j]` holds the pre-activation outputs of pathways j..k of layer t on view j.
    Terms over three or more pathways expand into the sum of their pairwise terms.
    """
    total = None
    for layer in features:
        for outputs in layer.values():
            for first, second in combinations(outputs, 2):
                term = gram_penalty(first, second)
                total = term if total is None else total + term
    if total is None:
        return torch.zeros(())
    return total
