"""Parameter store, initializers, and the layers used by both models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .rng import Rng, derive_seed
from .tensor import Tensor

INIT_METHODS = ("normal", "xavier-normal")


@dataclass(frozen=True)
class InitSpec:
    method: str = "xavier-normal"
    max_abs: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.method not in INIT_METHODS:
            raise ConfigError(f"unknown init method {self.method!r}")
        if not (1e-5 <= self.max_abs <= 1.0):
            raise ConfigError(f"max_abs {self.max_abs} outside [1e-5, 1.0]")

    def for_param(self, name: str) -> "InitSpec":
        """Same spec with a per-parameter child seed."""
        return InitSpec(self.method, self.max_abs, derive_seed(self.seed, name))


def init_tensor(shape, spec: InitSpec, dtype=np.float32) -> np.ndarray:
    """Draw weights from the spec's distribution, clipped to [-max_abs, +max_abs].

    Pure in (shape, spec): same inputs give bit-identical output.
    xavier-normal uses variance 2/(fan_in+fan_out); plain normal is unit
    variance. fan_in/fan_out are the first/last dimension (equal for 1-D).
    """
    shape = tuple(int(d) for d in shape)
    if not shape or any(d <= 0 for d in shape):
        raise ShapeError(f"invalid shape {shape}")
    if spec.method == "xavier-normal":
        fan_in, fan_out = shape[0], shape[-1]
        std = np.sqrt(2.0 / (fan_in + fan_out))
    else:
        std = 1.0
    rng = Rng(spec.seed)
    values = rng.normals(int(np.prod(shape))) * std
    np.clip(values, -spec.max_abs, spec.max_abs, out=values)
    return values.reshape(shape).astype(dtype)


class ParamStore:
    """Named parameters with gradient accumulators and a trainable flag."""

    def __init__(self):
        self._entries: dict[str, tuple[Tensor, bool]] = {}

    def add(self, name: str, data: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._entries:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data), requires_grad=True)
        t.ensure_grad()
        self._entries[name] = (t, trainable)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name][0]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def names(self) -> list[str]:
        return list(self._entries)

    def is_trainable(self, name: str) -> bool:
        return self._entries[name][1]

    def set_trainable(self, name: str, trainable: bool) -> None:
        t, _ = self._entries[name]
        self._entries[name] = (t, trainable)

    def items(self):
        return [(name, t, tr) for name, (t, tr) in self._entries.items()]

    def trainable_items(self):
        return [(name, t) for name, (t, tr) in self._entries.items() if tr]

    def zero_grads(self) -> None:
        for t, _ in self._entries.values():
            t.grad = np.zeros_like(t.data)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, (t, _) in self._entries.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, arr in state.items():
            t = self._entries[name][0]
            if t.data.shape != arr.shape:
                raise ShapeError(f"shape mismatch restoring {name!r}")
            t.data = arr.astype(t.data.dtype, copy=True)


def make_gru_params(store: ParamStore, prefix: str, input_size: int,
                    state_size: int, spec: InitSpec, dtype=np.float32) -> None:
    """Add the nine GRU tensors under `prefix.`; biases start at zero."""
    for gate in ("z", "r", "c"):
        store.add(f"{prefix}.W_{gate}",
                  init_tensor([input_size, state_size], spec.for_param(f"{prefix}.W_{gate}"), dtype))
        store.add(f"{prefix}.U_{gate}",
                  init_tensor([state_size, state_size], spec.for_param(f"{prefix}.U_{gate}"), dtype))
        store.add(f"{prefix}.b_{gate}", np.zeros(state_size, dtype=dtype))


def gru_step(x: Tensor, h_prev: Tensor, params: dict[str, Tensor]) -> Tensor:
    """One GRU step: z/r gates, candidate c, h' = (1-z)*h + z*c.

    x: [E] or [B,E]; h_prev: [H] or [B,H]; params holds W_*, U_*, b_*.
    """
    if x.data.shape[-1] != params["W_z"].data.shape[0]:
        raise ShapeError(f"gru input width {x.data.shape[-1]} != {params['W_z'].data.shape[0]}")
    if h_prev.data.shape[-1] != params["U_z"].data.shape[0]:
        raise ShapeError(f"gru state width {h_prev.data.shape[-1]} != {params['U_z'].data.shape[0]}")
    z = T.sigmoid(T.add(T.add(T.matmul(x, params["W_z"]), T.matmul(h_prev, params["U_z"])), params["b_z"]))
    r = T.sigmoid(T.add(T.add(T.matmul(x, params["W_r"]), T.matmul(h_prev, params["U_r"])), params["b_r"]))
    c = T.tanh(T.add(T.add(T.matmul(x, params["W_c"]), T.matmul(T.mul(r, h_prev), params["U_c"])), params["b_c"]))
    return T.add(T.mul(T.rsub(1.0, z), h_prev), T.mul(z, c))


def gru_params_view(store: ParamStore, prefix: str) -> dict[str, Tensor]:
    return {key: store[f"{prefix}.{key}"]
            for key in ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_c", "U_c", "b_c")}


def embedding_lookup(indices, table: Tensor) -> Tensor:
    """Rows of `table` at `indices`; backward scatters onto the rows used."""
    return T.rows(table, indices)


def dense(x: Tensor, W: Tensor, b: Tensor, activation: str = "none") -> Tensor:
    if activation not in ("none", "relu"):
        raise ConfigError(f"unknown activation {activation!r}")
    out = T.add(T.matmul(x, W), b)
    return T.relu(out) if activation == "relu" else out


def dropout(x: Tensor, rate: float, rng: Rng, training: bool) -> Tensor:
    """Inverted dropout: zero with prob `rate`, survivors scaled by 1/(1-rate)."""
    if not (0.0 <= rate <= 0.5):
        raise ConfigError(f"dropout rate {rate} outside [0.0, 0.5]")
    if not training or rate == 0.0:
        return x
    keep = rng.uniforms(x.data.size).reshape(x.data.shape) >= rate
    mask = keep.astype(x.data.dtype) / np.asarray(1.0 - rate, dtype=x.data.dtype)
    return T.mul(x, Tensor(mask))


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    """Scale all grads by max_norm/g when the global L2 norm g exceeds max_norm."""
    total = 0.0
    for g in grads:
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        grads = [(g * np.asarray(scale, dtype=g.dtype)) for g in grads]
    return grads


def finite_diff_check(forward_fn: Callable[[], Tensor], store: ParamStore,
                      epsilon: float = 1e-4, floor_ratio: float = 1e-4) -> float:
    """Max relative error between analytic grads and central differences.

    forward_fn rebuilds the loss from the store's current values on every
    call. Only trainable entries are probed; keep dims small. Per-coordinate
    denominators are floored at floor_ratio * ||grad||_inf: central
    differences cannot resolve coordinates orders of magnitude below the
    dominant gradient scale, so those are held to the absolute scale instead.
    """
    store.zero_grads()
    loss = forward_fn()
    loss.backward()
    analytic = {name: t.grad.copy() for name, t in store.trainable_items()}
    gmax = max((float(np.max(np.abs(g))) for g in analytic.values() if g.size),
               default=0.0)
    floor = max(floor_ratio * gmax, 1e-12)

    worst = 0.0
    with T.no_grad():
        for name, t in store.trainable_items():
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                f_plus = float(forward_fn().data)
                flat[i] = orig - epsilon
                f_minus = float(forward_fn().data)
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * epsilon)
                a = float(analytic[name].reshape(-1)[i])
                rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                worst = max(worst, rel)
    return worst
