"""Shared epoch loop with the worse-than-last-epoch early-stopping rule."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable

from .errors import ConfigError, DataError
from .nn import ParamStore, clip_by_global_norm
from .optim import OptimizerState, optimizer_step
from .rng import Rng


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    weight_decay: float = 1e-10
    max_grad_norm: float = 10.0
    minibatch_size: int = 32
    max_epochs: int = 20
    early_stopping: bool = True
    seed: int = 0
    dropout_embedding: float = 0.0
    dropout_rnn: float = 0.0
    dropout_image: float = 0.0
    dropout_post_image: float = 0.0

    def __post_init__(self):
        if not (10 <= self.minibatch_size <= 300):
            raise ConfigError(f"minibatch size {self.minibatch_size} outside [10, 300]")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        for name in ("dropout_embedding", "dropout_rnn", "dropout_image", "dropout_post_image"):
            rate = getattr(self, name)
            if not (0.0 <= rate <= 0.5):
                raise ConfigError(f"{name} {rate} outside [0.0, 0.5]")

    def optimizer_state(self) -> OptimizerState:
        return OptimizerState(self.optimizer, self.learning_rate,
                              self.weight_decay, self.max_grad_norm)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class TrainHistory:
    val_perplexities: list[float] = field(default_factory=list)
    train_losses: list[float] = field(default_factory=list)
    wall_seconds: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    selected_index: int | None = None


def write_history_csv(history: TrainHistory, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_perplexity", "wall_seconds"])
        for i, ppl in enumerate(history.val_perplexities):
            writer.writerow([i + 1, repr(history.train_losses[i]), repr(ppl),
                             f"{history.wall_seconds[i]:.3f}"])


def run_training(examples: list, store: ParamStore, config: TrainConfig,
                 batch_loss_fn: Callable, val_metric_fn: Callable[[], float],
                 ) -> TrainHistory:
    """Epoch loop: shuffle, batch, backprop, clip, step; early-stop when the
    validation metric worsens versus the previous epoch and restore that
    epoch's weights.

    batch_loss_fn(batch, rng, epoch) must return a scalar loss Tensor built
    against `store`. val_metric_fn() is evaluated after each epoch.
    """
    if not examples:
        raise DataError("cannot train on an empty corpus/dataset")
    history = TrainHistory()
    if config.max_epochs == 0:
        return history

    state = config.optimizer_state()
    state.initialize(store)
    rng = Rng(config.seed)
    shuffle_rng = rng.split("shuffle")
    dropout_rng = rng.split("dropout")

    prev_metric: float | None = None
    prev_snapshot: dict | None = None
    for epoch in range(1, config.max_epochs + 1):
        tic = time.perf_counter()
        order = list(range(len(examples)))
        shuffle_rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), config.minibatch_size):
            batch = [examples[i] for i in order[start:start + config.minibatch_size]]
            store.zero_grads()
            loss = batch_loss_fn(batch, dropout_rng, epoch)
            loss.backward()
            names = [name for name, _ in store.trainable_items()]
            grads = [t.grad for _, t in store.trainable_items()]
            clipped = clip_by_global_norm(grads, config.max_grad_norm)
            for name, g in zip(names, clipped):
                store[name].grad = g
            optimizer_step(store, state)
            epoch_loss += loss.item()

        metric = val_metric_fn()
        history.train_losses.append(epoch_loss)
        history.val_perplexities.append(metric)
        history.wall_seconds.append(time.perf_counter() - tic)
        history.stopped_epoch = epoch

        if config.early_stopping and prev_metric is not None and metric > prev_metric:
            store.load_state_dict(prev_snapshot)
            history.selected_index = epoch - 2
            return history
        prev_metric = metric
        prev_snapshot = store.state_dict()

    history.selected_index = len(history.val_perplexities) - 1
    return history
