"""Utterance-at-a-time SGD with gradient accumulation and early stopping."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import TrainingError
from .layers import sgd_step
from .metrics import ConfusionMatrix, confusion, unweighted_accuracy, weighted_accuracy
from .model import Model, frozen_names

log = logging.getLogger(__name__)

Example = tuple[np.ndarray, int]  # (spectrogram grid [bins, frames], label)


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    accumulate: int = 16
    patience: int = 10
    seed: int = 0
    freeze_through: str | None = None
    freeze_attention: bool = False  # keep W, b, u at their initial values
    target_train_wa: float | None = None  # stop once training WA reaches this


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_wa: float = math.nan
    val_ua: float = math.nan
    train_wa: float = math.nan


@dataclass
class TrainResult:
    model: Model
    history: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    steps: int = 0


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("AFCN_THREADS", "1")))
    except ValueError:
        return 1


def predict_all(model: Model, grids: Sequence[np.ndarray]) -> np.ndarray:
    """Whole-utterance argmax predictions, in input order."""
    def one(g):
        return int(np.argmax(model.forward(g).logits))

    n = worker_count()
    if n == 1 or len(grids) < 2:
        return np.array([one(g) for g in grids], dtype=np.int64)
    with ThreadPoolExecutor(max_workers=n) as pool:
        return np.array(list(pool.map(one, grids)), dtype=np.int64)


def evaluate(model: Model, examples: Sequence[Example]) -> ConfusionMatrix:
    preds = predict_all(model, [g for g, _ in examples])
    return confusion(preds, [y for _, y in examples], model.config.num_classes)


def train(model: Model, train_set: Sequence[Example], val_set: Sequence[Example] | None = None,
          cfg: TrainConfig = TrainConfig(),
          on_epoch: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Train ``model`` in place; returns the best model (by validation UA when
    a validation set is given, otherwise the final one)."""
    if not train_set:
        raise TrainingError("empty training set")
    frozen = frozen_names(model, cfg.freeze_through)
    if cfg.freeze_attention:
        frozen |= {n for n in model.params if n.startswith("attention.")}
    velocity: dict[str, np.ndarray] = {}
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(model)
    best_ua, best_params, waited = -1.0, None, 0
    step = 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        acc = {k: np.zeros_like(v) for k, v in model.params.items()}
        pending, total_loss = 0, 0.0
        for pos, idx in enumerate(order):
            grid, label = train_set[idx]
            loss, _, grads = model.loss_and_grads(grid, label)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at step {step} (epoch {epoch})")
            total_loss += loss
            for k, g in grads.items():
                acc[k] += g
            pending += 1
            if pending == cfg.accumulate or pos == len(order) - 1:
                for g in acc.values():
                    g /= pending
                sgd_step(model.params, acc, velocity, cfg.lr, cfg.momentum,
                         cfg.weight_decay, frozen)
                step += 1
                model.assert_finite(step)
                for g in acc.values():
                    g.fill(0)
                pending = 0

        entry = EpochLog(epoch, total_loss / len(train_set))
        if cfg.target_train_wa is not None:
            entry.train_wa = weighted_accuracy(evaluate(model, train_set))
        stop = False
        if val_set:
            m = evaluate(model, val_set)
            entry.val_wa, entry.val_ua = weighted_accuracy(m), unweighted_accuracy(m)
            if entry.val_ua > best_ua:
                best_ua, waited, result.best_epoch = entry.val_ua, 0, epoch
                best_params = {k: v.copy() for k, v in model.params.items()}
            else:
                waited += 1
                stop = waited > cfg.patience
        else:
            result.best_epoch = epoch
        result.history.append(entry)
        log.info("epoch %d loss %.4f train_wa %.3f val_wa %.3f val_ua %.3f", epoch,
                 entry.train_loss, entry.train_wa, entry.val_wa, entry.val_ua)
        if on_epoch:
            on_epoch(entry)
        if cfg.target_train_wa is not None and entry.train_wa >= cfg.target_train_wa:
            stop = True
        if stop:
            break

    result.steps = step
    if best_params is not None:
        result.model = Model(model.config, best_params)
    return result
