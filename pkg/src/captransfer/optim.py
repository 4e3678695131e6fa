"""Adam / RMSProp / AdaDelta with L2 weight decay folded into the gradient."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, OptimizerStateError
from .nn import ParamStore

OPTIMIZER_KINDS = ("adam", "rmsprop", "adadelta")

# conventional defaults; the paper tunes only the learning rate
ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8
RMSPROP_DECAY, RMSPROP_EPS = 0.9, 1e-8
ADADELTA_RHO, ADADELTA_EPS = 0.95, 1e-6


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    weight_decay: float = 1e-10
    max_grad_norm: float = 1000.0
    step: int = 0
    slots: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if not (1e-5 <= self.learning_rate <= 1.0):
            raise ConfigError(f"learning rate {self.learning_rate} outside [1e-5, 1.0]")
        if not (1e-10 <= self.weight_decay <= 0.1):
            raise ConfigError(f"weight decay {self.weight_decay} outside [1e-10, 0.1]")
        if not (1.0 <= self.max_grad_norm <= 1000.0):
            raise ConfigError(f"max grad norm {self.max_grad_norm} outside [1.0, 1000.0]")

    def initialize(self, store: ParamStore) -> None:
        self.slots = {}
        for name, t in store.trainable_items():
            zeros = lambda: np.zeros_like(t.data)
            if self.kind == "adam":
                self.slots[name] = {"m": zeros(), "v": zeros()}
            elif self.kind == "rmsprop":
                self.slots[name] = {"sq": zeros()}
            else:
                self.slots[name] = {"sq": zeros(), "dx": zeros()}
        self.step = 0


def optimizer_step(store: ParamStore, state: OptimizerState) -> None:
    """Apply one update to every trainable parameter from its .grad.

    Weight decay is added as decay*w to the gradient first. Non-trainable
    entries are left bit-identical.
    """
    if not state.slots and store.trainable_items():
        raise OptimizerStateError("optimizer state not initialized for this store")
    state.step += 1
    t_step = state.step
    for name, t in store.trainable_items():
        if name not in state.slots:
            raise OptimizerStateError(f"no slots for parameter {name!r}")
        g = t.grad + np.asarray(state.weight_decay, dtype=t.data.dtype) * t.data
        slot = state.slots[name]
        lr = state.learning_rate
        if state.kind == "adam":
            slot["m"] = ADAM_BETA1 * slot["m"] + (1 - ADAM_BETA1) * g
            slot["v"] = ADAM_BETA2 * slot["v"] + (1 - ADAM_BETA2) * g * g
            m_hat = slot["m"] / (1 - ADAM_BETA1 ** t_step)
            v_hat = slot["v"] / (1 - ADAM_BETA2 ** t_step)
            update = lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        elif state.kind == "rmsprop":
            slot["sq"] = RMSPROP_DECAY * slot["sq"] + (1 - RMSPROP_DECAY) * g * g
            update = lr * g / (np.sqrt(slot["sq"]) + RMSPROP_EPS)
        else:  # adadelta
            slot["sq"] = ADADELTA_RHO * slot["sq"] + (1 - ADADELTA_RHO) * g * g
            dx = np.sqrt(slot["dx"] + ADADELTA_EPS) / np.sqrt(slot["sq"] + ADADELTA_EPS) * g
            slot["dx"] = ADADELTA_RHO * slot["dx"] + (1 - ADADELTA_RHO) * dx * dx
            update = lr * dx
        t.data = t.data - update.astype(t.data.dtype)
