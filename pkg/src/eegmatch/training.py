"""Training protocol: Adam, plateau learning-rate drops, early stopping.

Improvement means strictly higher validation accuracy than the best seen so
far.  After ``lr_patience`` consecutive non-improving epochs the learning
rate is multiplied by ``lr_factor``; after ``stop_patience`` the run halts.
The checkpoint returned is always the best-validation-accuracy snapshot.
Everything is deterministic given the config seed on a single-threaded run:
weight init and dropout derive from torch's seed, epoch shuffles from
numpy seeds ``[seed, epoch]``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np
import torch
from torch import nn

from .core import Checkpoint, ConfigError, DataError, TrialSample, config_hash
from .modelzoo import MatchModel, build_model, model_from_checkpoint

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    lr_patience: int = 5
    lr_factor: float = 0.1
    stop_patience: int = 10
    max_epochs: int = 200
    seed: int = 0
    mode: str = "balanced"

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_patience < 1 or self.stop_patience < 1:
            raise ConfigError("patience values must be positive")
        if not (0 < self.lr_factor < 1):
            raise ConfigError(f"lr_factor must be in (0,1), got {self.lr_factor}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.mode not in ("balanced", "imbalanced"):
            raise ConfigError(f"mode must be balanced or imbalanced, got {self.mode!r}")


class PlateauController:
    """Tracks best validation accuracy and derives drop-lr / stop signals.

    The stop counter resets only on improvement; the lr counter resets on
    improvement and after each drop, so repeated drops are spaced at least
    lr_patience epochs apart.  When stopping is due, the drop is suppressed.
    """

    def __init__(self, lr_patience: int, stop_patience: int):
        self.lr_patience = lr_patience
        self.stop_patience = stop_patience
        self.best = -math.inf
        self._since_improve = 0
        self._since_drop = 0

    def update(self, value: float) -> tuple[bool, bool, bool]:
        """Returns (improved, drop_lr, stop) for one epoch's validation value."""
        if value > self.best:
            self.best = value
            self._since_improve = 0
            self._since_drop = 0
            return True, False, False
        self._since_improve += 1
        self._since_drop += 1
        if self._since_improve >= self.stop_patience:
            return False, False, True
        if self._since_drop >= self.lr_patience:
            self._since_drop = 0
            return False, True, False
        return False, False, False


def iter_batches(
    samples: Sequence[TrialSample],
    batch_size: int,
    order: np.ndarray | None = None,
) -> Iterator[tuple[torch.Tensor, torch.Tensor, torch.Tensor | None, torch.Tensor]]:
    """Yields (eeg, video_a, video_b|None, labels) float32 batches."""
    n = len(samples)
    idx = np.arange(n) if order is None else order
    one_way = samples[0].video_b is None
    for lo in range(0, n, batch_size):
        chunk = [samples[i] for i in idx[lo : lo + batch_size]]
        eeg = torch.from_numpy(np.stack([s.eeg_segment for s in chunk]).astype(np.float32, copy=False))
        va = torch.from_numpy(np.stack([s.video_a for s in chunk]).astype(np.float32, copy=False))
        vb = None
        if not one_way:
            vb = torch.from_numpy(np.stack([s.video_b for s in chunk]).astype(np.float32, copy=False))
        labels = torch.tensor([float(s.label) for s in chunk], dtype=torch.float32)
        yield eeg, va, vb, labels


def _logits(model: MatchModel, samples: Sequence[TrialSample], batch_size: int = 256) -> np.ndarray:
    model.eval()
    out = []
    with torch.no_grad():
        for eeg, va, vb, _ in iter_batches(samples, batch_size):
            out.append(model(eeg, va) if vb is None else model(eeg, va, vb))
    return torch.cat(out).numpy()


def predict_proba(model: MatchModel, samples: Sequence[TrialSample], batch_size: int = 256) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-_logits(model, samples, batch_size)))


def accuracy_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction correct under the strict tie rule: p == 0.5 is never correct."""
    labels = np.asarray(labels)
    correct = ((logits > 0) & (labels == 1)) | ((logits < 0) & (labels == 0))
    return float(np.mean(correct))


def evaluate_accuracy(
    model_or_checkpoint: MatchModel | Checkpoint,
    samples: Sequence[TrialSample],
    batch_size: int = 256,
) -> float:
    if not samples:
        raise DataError("cannot evaluate on an empty dataset")
    model = model_or_checkpoint
    if isinstance(model, Checkpoint):
        model = model_from_checkpoint(model)
    labels = np.array([s.label for s in samples])
    return accuracy_from_logits(_logits(model, samples, batch_size), labels)


def train(
    model_spec: str,
    datasets: Mapping[str, Sequence[TrialSample]],
    cfg: TrainConfig,
) -> tuple[Checkpoint, list[dict]]:
    """Train a model spec on ``datasets['train']``/``datasets['val']``.

    Returns the best-validation checkpoint and the per-epoch history
    (epoch, loss, val_acc, lr).
    """
    train_set = datasets.get("train")
    val_set = datasets.get("val")
    if not train_set or not val_set:
        raise DataError("need non-empty 'train' and 'val' datasets")

    torch.manual_seed(cfg.seed)
    model = build_model(model_spec)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    criterion = nn.BCEWithLogitsLoss()
    controller = PlateauController(cfg.lr_patience, cfg.stop_patience)

    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    best_epoch = 0
    history: list[dict] = []

    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_set))
        lr_now = optimizer.param_groups[0]["lr"]
        total, count = 0.0, 0
        for eeg, va, vb, labels in iter_batches(train_set, cfg.batch_size, order):
            optimizer.zero_grad()
            logits = model(eeg, va) if vb is None else model(eeg, va, vb)
            loss = criterion(logits, labels)
            loss.backward()
            optimizer.step()
            total += loss.detach().item() * len(labels)
            count += len(labels)
        epoch_loss = total / count
        if not math.isfinite(epoch_loss):
            raise RuntimeError(f"training diverged: non-finite loss at epoch {epoch}")

        val_acc = evaluate_accuracy(model, val_set, batch_size=max(cfg.batch_size, 256))
        history.append({"epoch": epoch, "loss": epoch_loss, "val_acc": val_acc, "lr": lr_now})
        improved, drop_lr, stop = controller.update(val_acc)
        logger.info(
            "epoch %d: loss %.4f val_acc %.4f lr %.2e%s",
            epoch, epoch_loss, val_acc, lr_now, " *" if improved else "",
        )
        if improved:
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            best_epoch = epoch
        if stop:
            logger.info("early stop after %d non-improving epochs", cfg.stop_patience)
            break
        if drop_lr:
            for group in optimizer.param_groups:
                group["lr"] *= cfg.lr_factor
            logger.info("plateau: lr -> %.2e", optimizer.param_groups[0]["lr"])

    checkpoint = Checkpoint(
        model_spec=model.spec.spec_string,
        state=best_state,
        epoch=best_epoch,
        best_val_accuracy=controller.best,
        rng_seed=cfg.seed,
        config_hash=config_hash(cfg),
    )
    return checkpoint, history
