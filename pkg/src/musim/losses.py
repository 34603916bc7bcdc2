"""Triplet hinge loss, masked conditional distances and the combined
category + track objective.

All functions are pure and accept torch tensors or numpy arrays (numpy is
converted; gradients flow when tensors come in). Vectors may be single
(D,) embeddings or (N, D) batches; distances reduce over the last axis.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .config import LossConfig
from .model import DimensionMask


class LossError(ValueError):
    pass


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x))


def _mask_tensor(mask) -> torch.Tensor:
    if isinstance(mask, DimensionMask):
        mask = mask.bits
    return _as_tensor(mask)


def distance(e1, e2) -> torch.Tensor:
    """Euclidean distance between embeddings."""
    e1, e2 = _as_tensor(e1), _as_tensor(e2)
    if e1.shape[-1] != e2.shape[-1]:
        raise LossError(f"embedding lengths differ: {e1.shape[-1]} vs {e2.shape[-1]}")
    return torch.linalg.vector_norm(e1 - e2, dim=-1)


def masked_distance(e1, e2, mask) -> torch.Tensor:
    """Euclidean distance after the Hadamard product with the mask."""
    e1, e2 = _as_tensor(e1), _as_tensor(e2)
    m = _mask_tensor(mask).to(e1.dtype)
    if m.shape[-1] != e1.shape[-1]:
        raise LossError(f"mask length {m.shape[-1]} != embedding length {e1.shape[-1]}")
    return distance(e1 * m, e2 * m)


def triplet_loss(d_ap, d_an, margin: float) -> torch.Tensor:
    """max(0, d_ap - d_an + margin)."""
    return F.relu(_as_tensor(d_ap) - _as_tensor(d_an) + margin)


def conditional_loss(anchor, positive, negative, mask, margin: float) -> torch.Tensor:
    """Triplet loss computed inside one similarity subspace."""
    d_ap = masked_distance(anchor, positive, mask)
    d_an = masked_distance(anchor, negative, mask)
    return triplet_loss(d_ap, d_an, margin)


def _batch_mean(anchor, positive, negative, mask, margin: float) -> torch.Tensor:
    losses = conditional_loss(anchor, positive, negative, mask, margin)
    return losses.mean()


def combined_loss(category, track, cfg: LossConfig) -> torch.Tensor:
    """Mean subspace loss over category triplets plus track_weight times
    the mean full-space loss over track triplets.

    category: (anchor, positive, negative, masks) with (N, D) embeddings
    and broadcastable masks, or None / empty.
    track: (anchor, positive, negative) with (M, D) embeddings, or None /
    empty. Track triplets always use the full embedding (all-ones mask).
    """

    def empty(part) -> bool:
        return part is None or _as_tensor(part[0]).numel() == 0

    if empty(category) and empty(track):
        raise LossError("combined_loss needs at least one non-empty batch")
    total = None
    if not empty(category):
        a, p, n, masks = category
        total = _batch_mean(a, p, n, masks, cfg.margin)
    if not empty(track):
        a, p, n = track
        a = _as_tensor(a)
        ones = torch.ones(a.shape[-1], dtype=a.dtype)
        track_term = cfg.track_weight * _batch_mean(a, p, n, ones, cfg.margin)
        total = track_term if total is None else total + track_term
    return total
