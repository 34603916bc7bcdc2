"""Configuration dataclasses and TOML/JSON config file loading.

Precedence everywhere is: CLI flag > config file > built-in default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


@dataclass(frozen=True)
class FeatureConfig:
    """Log-mel / MFCC front-end parameters.

    The 512/256 window and hop give a 23.2 ms window with 50% overlap at
    22050 Hz. Mel output is compressed as log10(1 + compression_scale * S)
    and standardized with the fixed mean/std below.
    """

    sample_rate: int = 22050
    window_samples: int = 512
    hop_samples: int = 256
    mel_bands: int = 128
    patch_frames: int = 129
    compression_scale: float = 10.0
    standardize_mean: float = 0.2
    standardize_std: float = 0.25
    mfcc_coefficients: int = 13
    delta_window: int = 9

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.window_samples <= 0 or self.hop_samples <= 0:
            raise ValueError("window/hop must be positive")
        if self.delta_window < 3 or self.delta_window % 2 == 0:
            raise ValueError("delta_window must be an odd integer >= 3")


@dataclass(frozen=True)
class ArchConfig:
    """Encoder architecture preset.

    block_channels lists the output width of each inception block; the last
    entry is also the input width of the final projection to embedding_dim.
    """

    preset: str = "full"
    stem_filters: int = 64
    stem_kernel: int = 5
    stem_stride: int = 1
    block_channels: tuple[int, ...] = (64, 96, 128, 160, 192, 256)
    embedding_dim: int = 256

    def __post_init__(self) -> None:
        if self.embedding_dim % 4 != 0:
            raise ValueError("embedding_dim must split into four equal subspaces")
        for c in self.block_channels:
            if c % 4 != 0:
                raise ValueError("block widths must be divisible by 4 (four branches)")

    @property
    def subspace_dim(self) -> int:
        return self.embedding_dim // 4


# The tiny preset exists for tests and the desk-scale experiment: 2 blocks,
# width 32, 32-d embedding with four 8-d subspaces. The stride-2 stem keeps
# it cheap on CPU; input shape stays 129x128.
ARCH_PRESETS: dict[str, ArchConfig] = {
    "full": ArchConfig(),
    "tiny": ArchConfig(
        preset="tiny",
        stem_filters=32,
        stem_stride=2,
        block_channels=(32, 32),
        embedding_dim=32,
    ),
}


def arch_preset(name: str) -> ArchConfig:
    try:
        return ARCH_PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown architecture preset {name!r}; choose from {sorted(ARCH_PRESETS)}") from None


@dataclass(frozen=True)
class LossConfig:
    """Triplet margin and track-regularization weight (the paper-default
    margin is 0.1 and the track weight 0.5)."""

    margin: float = 0.1
    track_weight: float = 0.5

    def __post_init__(self) -> None:
        if self.margin <= 0:
            raise ValueError("margin must be > 0")
        if self.track_weight < 0:
            raise ValueError("track_weight must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 0.01
    lr_factor: float = 0.2
    patience_epochs: int = 4
    max_reductions: int = 5
    min_improvement: float = 1e-6
    category_batch: int = 16
    track_batch: int = 8
    triplets_per_epoch: int | None = None  # default: 10x train-track count
    max_epochs: int = 100
    seed: int = 0
    preset: str = "full"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    val_category_triplets: int = 64
    val_track_triplets: int = 32

    def __post_init__(self) -> None:
        if not 0 < self.lr_factor < 1:
            raise ValueError("lr_factor must be in (0, 1)")
        if self.patience_epochs < 1:
            raise ValueError("patience_epochs must be >= 1")
        if self.max_reductions < 0:
            raise ValueError("max_reductions must be >= 0")
        if self.category_batch % 4 != 0:
            raise ValueError("category_batch must be divisible by the four conditions")


def load_config_file(path: str | Path) -> dict:
    """Load a .toml or .json config file into a plain dict."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return json.loads(path.read_text())
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _from_mapping(cls, mapping: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(mapping) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = dict(mapping)
    if "block_channels" in kwargs:
        kwargs["block_channels"] = tuple(kwargs["block_channels"])
    return cls(**kwargs)


def feature_config_from(mapping: dict | None) -> FeatureConfig:
    return _from_mapping(FeatureConfig, mapping or {})


def loss_config_from(mapping: dict | None) -> LossConfig:
    return _from_mapping(LossConfig, mapping or {})


def train_config_from(mapping: dict | None) -> TrainConfig:
    return _from_mapping(TrainConfig, mapping or {})


def config_hash(*objs) -> str:
    """Short stable fingerprint of dataclass/dict config values."""
    payload = []
    for obj in objs:
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            payload.append(dataclasses.asdict(obj))
        else:
            payload.append(obj)
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
