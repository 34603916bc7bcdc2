"""Optimization loop: Adam, plateau-based LR reduction, early stopping.

The schedule follows the rule the embedding model trains under: start the
learning rate at 0.01, divide by 5 whenever the validation loss has not
improved for 4 consecutive epochs, and stop after the 5th reduction once a
further plateau occurs. "Improved" means the best-so-far loss dropped by at
least min_improvement (1e-6).

Each epoch draws its triplets from a sampler seeded as a pure function of
(config seed, epoch), so an interrupted run resumed from the last
checkpoint retraces the uninterrupted run exactly.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .arrayio import atomic_write_text
from .config import LossConfig, TrainConfig, config_hash
from .corpus import CONDITIONS, Corpus, Triplet, TripletSampler
from .features import FeatureStore
from .losses import combined_loss
from .model import (
    SimilarityEncoder,
    init_params,
    load_checkpoint,
    make_masks,
    patch_tensor,
    save_checkpoint,
)


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    """Raised when the loss stops being finite; a diagnostic checkpoint is
    written before this propagates."""


class PlateauSchedule:
    """Reduce-on-plateau with a hard reduction budget.

    observe() returns one of "improved", "plateau", "reduced", "stop".
    The learning rate is always initial_lr * factor**reductions, computed
    fresh so the trace is exact.
    """

    def __init__(
        self,
        initial_lr: float,
        factor: float,
        patience: int,
        max_reductions: int,
        min_improvement: float = 1e-6,
    ):
        self.initial_lr = initial_lr
        self.factor = factor
        self.patience = patience
        self.max_reductions = max_reductions
        self.min_improvement = min_improvement
        self.best: float | None = None
        self.bad_epochs = 0
        self.reductions = 0
        self.stopped = False

    @property
    def lr(self) -> float:
        return self.initial_lr * self.factor**self.reductions

    def observe(self, val_loss: float) -> str:
        if self.stopped:
            raise TrainingError("schedule already stopped")
        if self.best is None or self.best - val_loss >= self.min_improvement:
            self.best = val_loss if self.best is None else min(self.best, val_loss)
            self.bad_epochs = 0
            return "improved"
        self.bad_epochs += 1
        if self.bad_epochs < self.patience:
            return "plateau"
        if self.reductions < self.max_reductions:
            self.reductions += 1
            self.bad_epochs = 0
            return "reduced"
        self.stopped = True
        return "stop"

    def state(self) -> dict:
        return {
            "best": self.best,
            "bad_epochs": self.bad_epochs,
            "reductions": self.reductions,
            "stopped": self.stopped,
        }

    def load_state(self, state: dict) -> None:
        self.best = state["best"]
        self.bad_epochs = state["bad_epochs"]
        self.reductions = state["reductions"]
        self.stopped = state["stopped"]


def _wall_seconds(start: float) -> float:
    # Frozen under SOURCE_DATE_EPOCH so artifact bytes are reproducible.
    if os.environ.get("SOURCE_DATE_EPOCH"):
        return 0.0
    return time.time() - start


def _triplet_tensors(triplets: list[Triplet], store: FeatureStore) -> torch.Tensor:
    """Stack the anchor/positive/negative patches of a triplet list."""
    patches = []
    for t in triplets:
        for ref in (t.anchor, t.positive, t.negative):
            patches.append(store.patch(ref.track_id, ref.start_frame))
    return torch.stack([patch_tensor(p) for p in patches])


def _forward_triplets(
    model: SimilarityEncoder,
    category: list[Triplet],
    track: list[Triplet],
    store: FeatureStore,
    masks,
    cfg: LossConfig,
    train: bool,
) -> torch.Tensor:
    """Embed all patches of both batches in one forward pass and reduce to
    the combined loss."""
    flat = _triplet_tensors(category + track, store)
    model.train(train)
    if train:
        emb = model(flat)
    else:
        with torch.no_grad():
            emb = model(flat)
    emb = emb.reshape(len(category) + len(track), 3, -1)
    cat_part = None
    if category:
        mask_rows = torch.stack(
            [torch.from_numpy(masks[t.condition].bits) for t in category]
        ).to(emb.dtype)
        cat = emb[: len(category)]
        cat_part = (cat[:, 0], cat[:, 1], cat[:, 2], mask_rows)
    trk_part = None
    if track:
        trk = emb[len(category) :]
        trk_part = (trk[:, 0], trk[:, 1], trk[:, 2])
    return combined_loss(cat_part, trk_part, cfg)


def validate(
    model: SimilarityEncoder,
    category: list[Triplet],
    track: list[Triplet],
    store: FeatureStore,
    masks,
    cfg: LossConfig,
) -> float:
    """Mean combined loss over a frozen triplet set, eval mode."""
    if not category and not track:
        raise TrainingError("validation triplet set is empty")
    model.eval()
    loss = _forward_triplets(model, category, track, store, masks, cfg, train=False)
    return float(loss.item())


def _sample_epoch_triplets(
    sampler: TripletSampler, n_category: int, n_track: int
) -> tuple[list[Triplet], list[Triplet]]:
    per_condition = n_category // len(CONDITIONS)
    category = []
    for _ in range(per_condition):
        for condition in CONDITIONS:  # round-robin over conditions
            category.append(sampler.sample_category_triplet(condition))
    track = [sampler.sample_track_triplet() for _ in range(n_track)]
    return category, track


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    reductions: int
    seconds: float

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "lr": self.lr,
            "reductions": self.reductions,
            "seconds": self.seconds,
        }


def _save_history(history: list[EpochRecord], path: Path) -> None:
    atomic_write_text(path, "".join(json.dumps(r.to_json()) + "\n" for r in history))


def _optimizer_arrays(optimizer: torch.optim.Adam) -> tuple[dict[str, np.ndarray], list[float]]:
    arrays = {}
    steps = []
    state = optimizer.state_dict()["state"]
    for idx in sorted(state):
        entry = state[idx]
        steps.append(float(entry["step"]))
        arrays[f"opt/{idx}/exp_avg"] = entry["exp_avg"].numpy()
        arrays[f"opt/{idx}/exp_avg_sq"] = entry["exp_avg_sq"].numpy()
    return arrays, steps


def _restore_optimizer(
    optimizer: torch.optim.Adam, arrays: dict[str, np.ndarray], steps: list[float]
) -> None:
    sd = optimizer.state_dict()
    state = {}
    for idx, step in enumerate(steps):
        state[idx] = {
            "step": torch.tensor(step),
            "exp_avg": torch.from_numpy(arrays[f"opt/{idx}/exp_avg"].copy()),
            "exp_avg_sq": torch.from_numpy(arrays[f"opt/{idx}/exp_avg_sq"].copy()),
        }
    sd["state"] = state
    optimizer.load_state_dict(sd)


def train(
    corpus: Corpus,
    model: SimilarityEncoder | None,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    store: FeatureStore,
    out_dir: str | Path | None = None,
    resume: bool = False,
    log=None,
) -> tuple[SimilarityEncoder, list[EpochRecord]]:
    """Run the full schedule and return the best-validation model.

    With out_dir set, writes last.ckpt (resumable), best.ckpt and
    history.jsonl after every epoch. With resume=True and an existing
    last.ckpt the run continues where it stopped and reproduces the
    uninterrupted history.
    """
    out_dir = Path(out_dir) if out_dir is not None else None
    torch.manual_seed(train_cfg.seed)
    if model is None:
        model = init_params(train_cfg.seed, train_cfg.preset)

    masks = make_masks(model.arch.embedding_dim)
    fingerprint = config_hash(loss_cfg, train_cfg)

    train_tracks = corpus.split_tracks("train")
    if not train_tracks or not corpus.split_tracks("valid"):
        raise TrainingError("corpus needs non-empty train and valid splits")

    triplets_per_epoch = train_cfg.triplets_per_epoch or 10 * len(train_tracks)
    steps_per_epoch = max(
        1, round(triplets_per_epoch / (train_cfg.category_batch + train_cfg.track_batch))
    )

    # Frozen validation set, sampled once per run seed.
    val_sampler = TripletSampler(
        corpus,
        store.frame_count,
        split="valid",
        rng=np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 101])),
    )
    val_category, val_track = _sample_epoch_triplets(
        val_sampler, train_cfg.val_category_triplets, train_cfg.val_track_triplets
    )

    schedule = PlateauSchedule(
        train_cfg.initial_lr,
        train_cfg.lr_factor,
        train_cfg.patience_epochs,
        train_cfg.max_reductions,
        train_cfg.min_improvement,
    )

    history: list[EpochRecord] = []
    best_val = math.inf
    best_state: dict | None = None
    best_epoch = -1
    start_epoch = 0
    resume_state = None

    if resume:
        if out_dir is None or not (out_dir / "last.ckpt").exists():
            raise TrainingError("resume requested but no last.ckpt found")
        model, meta, resume_state = load_checkpoint(out_dir / "last.ckpt")
        ts = meta["train_state"]
        schedule.load_state(ts["schedule"])
        history = [EpochRecord(**r) for r in ts["history"]]
        best_val = ts["best_val"]
        best_epoch = ts["best_epoch"]
        start_epoch = ts["epoch"] + 1
        if (out_dir / "best.ckpt").exists():
            best_ckpt, _, _ = load_checkpoint(out_dir / "best.ckpt")
            best_state = {k: v.clone() for k, v in best_ckpt.state_dict().items()}
        resume_state = (resume_state, ts["adam_steps"])

    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=train_cfg.initial_lr,
        betas=(train_cfg.adam_beta1, train_cfg.adam_beta2),
        eps=train_cfg.adam_eps,
    )
    if resume_state is not None:
        _restore_optimizer(optimizer, *resume_state)

    def _checkpoint(epoch: int) -> None:
        if out_dir is None:
            return
        opt_arrays, adam_steps = _optimizer_arrays(optimizer)
        train_state = {
            "epoch": epoch,
            "schedule": schedule.state(),
            "adam_steps": adam_steps,
            "history": [r.to_json() for r in history],
            "best_val": best_val,
            "best_epoch": best_epoch,
        }
        save_checkpoint(
            out_dir / "last.ckpt",
            model,
            seed=train_cfg.seed,
            step=(epoch + 1) * steps_per_epoch,
            config_hash=fingerprint,
            train_state=train_state,
            extra_arrays=opt_arrays,
        )
        _save_history(history, out_dir / "history.jsonl")

    for epoch in range(start_epoch, train_cfg.max_epochs):
        started = time.time()
        epoch_lr = schedule.lr
        for group in optimizer.param_groups:
            group["lr"] = epoch_lr
        epoch_sampler = TripletSampler(
            corpus,
            store.frame_count,
            split="train",
            rng=np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 1000 + epoch])),
        )
        losses = []
        model.train()
        for _ in range(steps_per_epoch):
            category, track = _sample_epoch_triplets(
                epoch_sampler, train_cfg.category_batch, train_cfg.track_batch
            )
            optimizer.zero_grad()
            loss = _forward_triplets(model, category, track, store, masks, loss_cfg, train=True)
            value = float(loss.item())
            if not math.isfinite(value):
                if out_dir is not None:
                    save_checkpoint(
                        out_dir / "diagnostic.ckpt",
                        model,
                        seed=train_cfg.seed,
                        step=epoch * steps_per_epoch,
                        config_hash=fingerprint,
                        train_state={"epoch": epoch, "nonfinite_loss": True},
                    )
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}")
            loss.backward()
            optimizer.step()
            losses.append(value)

        val_loss = validate(model, val_category, val_track, store, masks, loss_cfg)
        outcome = schedule.observe(val_loss)
        if val_loss < best_val or best_state is None:
            best_val = val_loss
            best_epoch = epoch
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
            if out_dir is not None:
                best = SimilarityEncoder(model.arch)
                best.load_state_dict(best_state)
                save_checkpoint(
                    out_dir / "best.ckpt",
                    best,
                    seed=train_cfg.seed,
                    step=(epoch + 1) * steps_per_epoch,
                    config_hash=fingerprint,
                )

        record = EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            val_loss=val_loss,
            lr=epoch_lr,
            reductions=schedule.reductions,
            seconds=round(_wall_seconds(started), 3),
        )
        history.append(record)
        _checkpoint(epoch)
        if log is not None:
            log(
                f"epoch {epoch}: train {record.train_loss:.4f} val {val_loss:.4f} "
                f"lr {record.lr:.5f} reductions {record.reductions}"
            )
        if outcome == "stop":
            break

    best_model = SimilarityEncoder(model.arch)
    best_model.load_state_dict(best_state if best_state is not None else model.state_dict())
    best_model.eval()
    best_model.seed = getattr(model, "seed", train_cfg.seed)
    return best_model, history
