"""The embedding network and its fixed disjoint dimension masks.

The encoder maps a standardized 129x128 log-mel patch to an L2-normalized
embedding whose four equal contiguous slices are the genre, mood,
instrument and tempo subspaces. Masks are fixed binary vectors: the four
semantic masks partition the embedding, and the "all" mask (used by
track-based triplets) passes everything through.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .arrayio import load_arrays, save_arrays
from .config import ArchConfig, arch_preset
from .corpus import CONDITIONS, TRACK_CONDITION
from .features import SpectrogramPatch

ALL_DIMENSIONS = "all"


class ModelError(ValueError):
    """Bad model input or checkpoint."""


@dataclass(frozen=True)
class DimensionMask:
    """Binary selector over embedding coordinates for one similarity
    dimension ("all" selects every coordinate)."""

    dimension: str
    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits, dtype=np.float32)
        if bits.ndim != 1 or not np.all((bits == 0) | (bits == 1)):
            raise ModelError("mask bits must be a binary vector")
        object.__setattr__(self, "bits", bits)

    @property
    def size(self) -> int:
        return int(self.bits.sum())


def make_masks(embedding_dim: int = 256) -> dict[str, DimensionMask]:
    """Four disjoint equal subspace masks plus the all-ones mask.

    Layout: genre [0, d), mood [d, 2d), instruments [2d, 3d),
    tempo [3d, 4d) with d = embedding_dim / 4.
    """
    if embedding_dim % 4 != 0:
        raise ModelError("embedding_dim must be divisible by 4")
    sub = embedding_dim // 4
    masks = {}
    for i, condition in enumerate(CONDITIONS):
        bits = np.zeros(embedding_dim, dtype=np.float32)
        bits[i * sub : (i + 1) * sub] = 1.0
        masks[condition] = DimensionMask(condition, bits)
    masks[ALL_DIMENSIONS] = DimensionMask(ALL_DIMENSIONS, np.ones(embedding_dim, dtype=np.float32))
    return masks


def mask_for_condition(masks: dict[str, DimensionMask], condition: str) -> DimensionMask:
    """Track triplets use the all-ones mask; semantic conditions their own."""
    if condition == TRACK_CONDITION:
        return masks[ALL_DIMENSIONS]
    if condition not in masks:
        raise ModelError(f"unknown condition {condition!r}")
    return masks[condition]


class ConvBnRelu(nn.Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, kernel, stride=stride, padding=kernel // 2, bias=False)
        self.bn = nn.BatchNorm2d(c_out)

    def forward(self, x):
        return F.relu(self.bn(self.conv(x)))


class NaiveInceptionModule(nn.Module):
    """Parallel 1x1 / 3x3 / 5x5 convolutions plus a projected max-pool
    branch, without reduction layers. Output channels split equally."""

    def __init__(self, c_in: int, c_out: int, stride: int):
        super().__init__()
        branch = c_out // 4
        self.b1 = ConvBnRelu(c_in, branch, 1, stride)
        self.b3 = ConvBnRelu(c_in, branch, 3, stride)
        self.b5 = ConvBnRelu(c_in, branch, 5, stride)
        self.pool = nn.MaxPool2d(3, stride=stride, padding=1)
        self.pool_proj = ConvBnRelu(c_in, branch, 1)

    def forward(self, x):
        return torch.cat(
            [self.b1(x), self.b3(x), self.b5(x), self.pool_proj(self.pool(x))], dim=1
        )


class StandardInceptionModule(nn.Module):
    """Inception module with 1x1 reductions ahead of the 3x3 and 5x5
    branches; stride 1."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        branch = c_out // 4
        reduce = max(branch // 2, 4)
        self.b1 = ConvBnRelu(c_in, branch, 1)
        self.b3_reduce = ConvBnRelu(c_in, reduce, 1)
        self.b3 = ConvBnRelu(reduce, branch, 3)
        self.b5_reduce = ConvBnRelu(c_in, reduce, 1)
        self.b5 = ConvBnRelu(reduce, branch, 5)
        self.pool = nn.MaxPool2d(3, stride=1, padding=1)
        self.pool_proj = ConvBnRelu(c_in, branch, 1)

    def forward(self, x):
        return torch.cat(
            [
                self.b1(x),
                self.b3(self.b3_reduce(x)),
                self.b5(self.b5_reduce(x)),
                self.pool_proj(self.pool(x)),
            ],
            dim=1,
        )


class InceptionBlock(nn.Module):
    """A stride-2 naive module followed by a standard module."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.naive = NaiveInceptionModule(c_in, c_out, stride=2)
        self.standard = StandardInceptionModule(c_out, c_out)

    def forward(self, x):
        return self.standard(self.naive(x))


class SimilarityEncoder(nn.Module):
    """Stem conv + strided max-pool, a stack of inception blocks, global
    average pooling and a linear projection to the embedding."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.arch = arch
        self.stem = ConvBnRelu(1, arch.stem_filters, arch.stem_kernel, arch.stem_stride)
        self.stem_pool = nn.MaxPool2d(2, stride=2)
        blocks = []
        c_in = arch.stem_filters
        for c_out in arch.block_channels:
            blocks.append(InceptionBlock(c_in, c_out))
            c_in = c_out
        self.blocks = nn.Sequential(*blocks)
        self.proj = nn.Linear(c_in, arch.embedding_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ModelError(f"expected input (batch, 1, frames, mel), got {tuple(x.shape)}")
        h = self.stem_pool(self.stem(x))
        h = self.blocks(h)
        h = h.mean(dim=(2, 3))
        h = self.proj(h)
        return F.normalize(h, dim=1, eps=1e-12)


def init_params(seed: int, arch: ArchConfig | str = "full") -> SimilarityEncoder:
    """Build and deterministically initialize an encoder.

    Conv/linear weights get He-normal values from a generator seeded with
    `seed`; biases start at zero, batch-norm at identity. Same seed, same
    bits.
    """
    if isinstance(arch, str):
        arch = arch_preset(arch)
    model = SimilarityEncoder(arch)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if p.ndim >= 2:  # conv and linear weights
                fan_in = int(np.prod(p.shape[1:]))
                std = float(np.sqrt(2.0 / fan_in))
                p.copy_(torch.randn(p.shape, generator=gen) * std)
            elif name.endswith(".bias"):
                p.zero_()
            else:  # batch-norm scale
                p.fill_(1.0)
    model.seed = int(seed)
    return model


def patch_tensor(patch: SpectrogramPatch, patch_frames: int = 129, mel_bands: int = 128) -> torch.Tensor:
    """Validated (1, frames, mel) float32 tensor from a standardized patch."""
    if not patch.standardized:
        raise ModelError("patch must be standardized before embedding")
    if patch.values.shape != (patch_frames, mel_bands):
        raise ModelError(
            f"patch shape {patch.values.shape} != expected ({patch_frames}, {mel_bands})"
        )
    values = np.ascontiguousarray(patch.values, dtype=np.float32)
    return torch.from_numpy(values).unsqueeze(0)


def embed_batch(model: SimilarityEncoder, patches, train: bool = False) -> torch.Tensor:
    """Forward a batch of standardized patches; returns (N, D) embeddings.

    Eval mode (the default) uses frozen batch-norm statistics and is
    read-only over the parameters; training mode updates the running
    statistics, so concurrent training-mode callers must serialize.
    """
    stack = torch.stack([patch_tensor(p) for p in patches])
    was_training = model.training
    model.train(train)
    try:
        if train:
            return model(stack)
        with torch.no_grad():
            return model(stack)
    finally:
        model.train(was_training)


def embed(model: SimilarityEncoder, patch: SpectrogramPatch, train: bool = False) -> np.ndarray:
    """Embed one patch to a unit-norm vector."""
    return embed_batch(model, [patch], train=train)[0].detach().numpy()


def masked_embed(model: SimilarityEncoder, patch: SpectrogramPatch, mask: DimensionMask) -> np.ndarray:
    """embed() followed by the Hadamard product with the mask bits."""
    vec = embed(model, patch)
    if mask.bits.shape[0] != vec.shape[0]:
        raise ModelError(f"mask length {mask.bits.shape[0]} != embedding dim {vec.shape[0]}")
    return vec * mask.bits


# -- checkpoints -----------------------------------------------------------

_INT_CAST_PREFIX = "i64:"


def save_checkpoint(
    path: str | Path,
    model: SimilarityEncoder,
    seed: int,
    step: int = 0,
    config_hash: str = "",
    train_state: dict | None = None,
    extra_arrays: dict[str, np.ndarray] | None = None,
) -> None:
    """Write model weights (little-endian float32) plus a JSON header."""
    arrays: dict[str, np.ndarray] = {}
    int_keys = []
    for key, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        if arr.dtype == np.int64:
            int_keys.append(key)
            arr = arr.astype(np.float32)
        arrays[f"model/{key}"] = np.asarray(arr, dtype=np.float32)
    for key, arr in (extra_arrays or {}).items():
        arrays[key] = np.asarray(arr, dtype=np.float32)
    meta = {
        "kind": "checkpoint",
        "preset": model.arch.preset,
        "arch": {
            "preset": model.arch.preset,
            "stem_filters": model.arch.stem_filters,
            "stem_kernel": model.arch.stem_kernel,
            "stem_stride": model.arch.stem_stride,
            "block_channels": list(model.arch.block_channels),
            "embedding_dim": model.arch.embedding_dim,
        },
        "seed": int(seed),
        "step": int(step),
        "config_hash": config_hash,
        "int64_keys": int_keys,
    }
    if train_state is not None:
        meta["train_state"] = train_state
    save_arrays(path, arrays, meta)


def load_checkpoint(path: str | Path) -> tuple[SimilarityEncoder, dict, dict[str, np.ndarray]]:
    """Rebuild the encoder from a checkpoint.

    Returns (model, meta, extra_arrays) where extra_arrays holds anything
    saved outside the model/ namespace (optimizer state, for resume).
    """
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "checkpoint":
        raise ModelError(f"{path} is not a model checkpoint")
    arch = ArchConfig(
        preset=meta["arch"]["preset"],
        stem_filters=meta["arch"]["stem_filters"],
        stem_kernel=meta["arch"]["stem_kernel"],
        stem_stride=meta["arch"]["stem_stride"],
        block_channels=tuple(meta["arch"]["block_channels"]),
        embedding_dim=meta["arch"]["embedding_dim"],
    )
    model = SimilarityEncoder(arch)
    int_keys = set(meta.get("int64_keys", []))
    state = {}
    extra = {}
    for key, arr in arrays.items():
        if key.startswith("model/"):
            name = key[len("model/") :]
            if name in int_keys:
                state[name] = torch.from_numpy(arr.astype(np.int64))
            else:
                state[name] = torch.from_numpy(arr)
        else:
            extra[key] = arr
    model.load_state_dict(state)
    model.seed = meta.get("seed", 0)
    model.eval()
    return model, meta, extra
