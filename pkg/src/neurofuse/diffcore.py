"""Minimal deterministic differentiable core over 2-D float64 arrays.

A small reverse-mode tape: each operation records its parents and a
backward closure; `Tensor2.backward()` walks the tape in reverse
topological order. Every primitive checks its output for NaN/Inf and
raises NumericError immediately, so bad numerics surface at the op that
produced them instead of at the loss.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, NumericError, ValidationError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape recording (forward values only) inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    g = grad
    if shape[0] == 1 and g.shape[0] > 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] > 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _accumulate(tensor: "Tensor2", grad: np.ndarray) -> None:
    if tensor.requires_grad:
        tensor.grad = grad if tensor.grad is None else tensor.grad + grad


class Tensor2:
    """A 2-D float64 array on the autodiff tape."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ValidationError(f"Tensor2 requires a 2-D array, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericError("Tensor2 initialized with non-finite values")
        self.values = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor2, ...] = ()
        self._backward = None

    # -- construction helpers -------------------------------------------

    @staticmethod
    def _wrap(other) -> "Tensor2":
        if isinstance(other, Tensor2):
            return other
        return Tensor2(other)

    @staticmethod
    def _make(values: np.ndarray, parents: tuple["Tensor2", ...], backward, op: str) -> "Tensor2":
        if not np.isfinite(values).all():
            raise NumericError(f"non-finite values produced by {op}")
        out = Tensor2.__new__(Tensor2)
        out.values = values
        out.grad = None
        needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        out._parents = parents if needs else ()
        out._backward = backward if needs else None
        return out

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def item(self) -> float:
        if self.values.shape != (1, 1):
            raise ValidationError(f"item() requires shape (1, 1), got {self.shape}")
        return float(self.values[0, 0])

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        return f"Tensor2(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic primitives ------------------------------------------

    def __add__(self, other) -> "Tensor2":
        a, b = self, Tensor2._wrap(other)
        out_values = a.values + b.values

        def backward(g):
            _accumulate(a, _unbroadcast(g, a.values.shape))
            _accumulate(b, _unbroadcast(g, b.values.shape))

        return Tensor2._make(out_values, (a, b), backward, "add")

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor2":
        a, b = self, Tensor2._wrap(other)
        out_values = a.values - b.values

        def backward(g):
            _accumulate(a, _unbroadcast(g, a.values.shape))
            _accumulate(b, _unbroadcast(-g, b.values.shape))

        return Tensor2._make(out_values, (a, b), backward, "sub")

    def __rsub__(self, other) -> "Tensor2":
        return Tensor2._wrap(other) - self

    def __mul__(self, other) -> "Tensor2":
        a, b = self, Tensor2._wrap(other)
        out_values = a.values * b.values

        def backward(g):
            _accumulate(a, _unbroadcast(g * b.values, a.values.shape))
            _accumulate(b, _unbroadcast(g * a.values, b.values.shape))

        return Tensor2._make(out_values, (a, b), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor2":
        a, b = self, Tensor2._wrap(other)
        out_values = a.values / b.values

        def backward(g):
            _accumulate(a, _unbroadcast(g / b.values, a.values.shape))
            _accumulate(b, _unbroadcast(-g * a.values / (b.values * b.values),
                                        b.values.shape))

        return Tensor2._make(out_values, (a, b), backward, "div")

    def __neg__(self) -> "Tensor2":
        return self * -1.0

    def __matmul__(self, other) -> "Tensor2":
        a, b = self, Tensor2._wrap(other)
        out_values = a.values @ b.values

        def backward(g):
            _accumulate(a, g @ b.values.T)
            _accumulate(b, a.values.T @ g)

        return Tensor2._make(out_values, (a, b), backward, "matmul")

    def transpose(self) -> "Tensor2":
        a = self

        def backward(g):
            _accumulate(a, g.T)

        return Tensor2._make(a.values.T, (a,), backward, "transpose")

    def sqrt(self) -> "Tensor2":
        a = self
        out_values = np.sqrt(a.values)

        def backward(g):
            _accumulate(a, g * (0.5 / out_values))

        return Tensor2._make(out_values, (a,), backward, "sqrt")

    # -- reductions -------------------------------------------------------

    def mean(self, axis: int | None = None) -> "Tensor2":
        a = self
        out_values = a.values.mean(axis=axis, keepdims=True)
        n = a.values.size if axis is None else a.values.shape[axis]

        def backward(g):
            _accumulate(a, np.broadcast_to(g, a.values.shape) * (1.0 / n))

        return Tensor2._make(out_values, (a,), backward, "mean")

    def sum(self, axis: int | None = None) -> "Tensor2":
        a = self
        out_values = a.values.sum(axis=axis, keepdims=True)

        def backward(g):
            _accumulate(a, np.broadcast_to(g, a.values.shape).copy())

        return Tensor2._make(out_values, (a,), backward, "sum")

    # -- structural primitives --------------------------------------------

    def gather_rows(self, indices: np.ndarray) -> "Tensor2":
        a = self
        idx = np.asarray(indices, dtype=np.int64)
        if idx.ndim != 1:
            raise ValidationError("gather_rows expects a 1-D index array")
        if idx.size and (idx.min() < 0 or idx.max() >= a.values.shape[0]):
            raise ValidationError("gather_rows index out of range")
        out_values = a.values[idx]

        def backward(g):
            acc = np.zeros_like(a.values)
            np.add.at(acc, idx, g)
            _accumulate(a, acc)

        return Tensor2._make(out_values, (a,), backward, "gather_rows")

    def slice_cols(self, start: int, stop: int) -> "Tensor2":
        a = self
        if not (0 <= start < stop <= a.values.shape[1]):
            raise ValidationError(f"invalid column slice [{start}, {stop})")
        out_values = a.values[:, start:stop].copy()

        def backward(g):
            acc = np.zeros_like(a.values)
            acc[:, start:stop] = g
            _accumulate(a, acc)

        return Tensor2._make(out_values, (a,), backward, "slice_cols")

    @staticmethod
    def concat_cols(tensors: list["Tensor2"]) -> "Tensor2":
        if not tensors:
            raise ValidationError("concat_cols of an empty list")
        parents = tuple(tensors)
        widths = [t.values.shape[1] for t in parents]
        out_values = np.concatenate([t.values for t in parents], axis=1)

        def backward(g):
            offset = 0
            for t, w in zip(parents, widths):
                _accumulate(t, g[:, offset:offset + w])
                offset += w

        return Tensor2._make(out_values, parents, backward, "concat_cols")

    # -- attention primitives ----------------------------------------------

    def softmax_rows(self) -> "Tensor2":
        a = self
        shifted = a.values - a.values.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        out_values = e / e.sum(axis=1, keepdims=True)

        def backward(g):
            inner = (g * out_values).sum(axis=1, keepdims=True)
            _accumulate(a, out_values * (g - inner))

        return Tensor2._make(out_values, (a,), backward, "softmax_rows")

    def segment_softmax(self, segment_ids: np.ndarray, num_segments: int) -> "Tensor2":
        """Softmax of an (M, 1) logit column within each segment."""
        a = self
        if a.values.shape[1] != 1:
            raise ValidationError("segment_softmax expects an (M, 1) tensor")
        ids = _checked_segment_ids(segment_ids, a.values.shape[0], num_segments)
        v = a.values[:, 0]
        seg_max = np.full(num_segments, -np.inf)
        np.maximum.at(seg_max, ids, v)
        e = np.exp(v - seg_max[ids])
        denom = np.zeros(num_segments)
        np.add.at(denom, ids, e)
        alpha = (e / denom[ids]).reshape(-1, 1)

        def backward(g):
            ga = g[:, 0] * alpha[:, 0]
            seg_inner = np.zeros(num_segments)
            np.add.at(seg_inner, ids, ga)
            _accumulate(a, (ga - alpha[:, 0] * seg_inner[ids]).reshape(-1, 1))

        return Tensor2._make(alpha, (a,), backward, "segment_softmax")

    def segment_sum(self, segment_ids: np.ndarray, num_segments: int) -> "Tensor2":
        """Sum the rows of an (M, h) tensor into their segments -> (num_segments, h)."""
        a = self
        ids = _checked_segment_ids(segment_ids, a.values.shape[0], num_segments)
        out_values = np.zeros((num_segments, a.values.shape[1]))
        np.add.at(out_values, ids, a.values)

        def backward(g):
            _accumulate(a, g[ids])

        return Tensor2._make(out_values, (a,), backward, "segment_sum")

    # -- reverse pass -------------------------------------------------------

    def backward(self) -> None:
        """Populate .grad on every tensor reachable through requires_grad parents."""
        if self.values.shape != (1, 1):
            raise ValidationError("backward() requires a (1, 1) loss tensor")
        if not self.requires_grad:
            raise ValidationError("backward() on a tensor with no differentiable parents")
        pending: dict[int, int] = {}
        nodes: dict[int, Tensor2] = {id(self): self}
        stack = [self]
        while stack:
            node = stack.pop()
            for p in node._parents:
                if not p.requires_grad:
                    continue
                pending[id(p)] = pending.get(id(p), 0) + 1
                if id(p) not in nodes:
                    nodes[id(p)] = p
                    stack.append(p)
        self.grad = np.ones((1, 1))
        ready = [self]
        while ready:
            node = ready.pop()
            if node._backward is not None:
                node._backward(node.grad)
            for p in node._parents:
                if not p.requires_grad:
                    continue
                pending[id(p)] -= 1
                if pending[id(p)] == 0:
                    ready.append(p)


def _checked_segment_ids(segment_ids, length: int, num_segments: int) -> np.ndarray:
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.shape != (length,):
        raise ValidationError(f"segment ids shape {ids.shape}, expected ({length},)")
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise ValidationError("segment id out of range")
    return ids


# -- plain vector utilities (non-tape reference forms) ----------------------

def softmax(v) -> np.ndarray:
    """Numerically stable softmax of a 1-D vector."""
    arr = np.asarray(v, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValidationError("softmax of an empty vector")
    if not np.isfinite(arr).all():
        raise NumericError("softmax input contains non-finite entries")
    e = np.exp(arr - arr.max())
    return e / e.sum()


def layer_norm(x, gain, bias, eps: float = 1e-5) -> np.ndarray:
    """Normalize a 1-D vector to zero mean, unit variance (1/n), then affine."""
    xv = np.asarray(x, dtype=np.float64).reshape(-1)
    gv = np.asarray(gain, dtype=np.float64).reshape(-1)
    bv = np.asarray(bias, dtype=np.float64).reshape(-1)
    if not (xv.size == gv.size == bv.size):
        raise ValidationError(
            f"layer_norm length mismatch: x {xv.size}, gain {gv.size}, bias {bv.size}"
        )
    mean = xv.mean()
    var = ((xv - mean) ** 2).mean()
    return (xv - mean) / np.sqrt(var + eps) * gv + bv


def dropout(x: Tensor2, rate: float, rng: np.random.Generator | None,
            training: bool) -> Tensor2:
    """Inverted dropout: zero entries with probability `rate` and rescale
    survivors by 1/(1-rate) at training time; identity at evaluation."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigurationError("training-mode dropout requires a random generator")
    mask = (rng.random(x.values.shape) >= rate) / (1.0 - rate)
    return x * Tensor2(mask)


# -- parameters and optimizer -----------------------------------------------

class ParamStore:
    """Named trainable tensors with deterministic (sorted) iteration order."""

    def __init__(self) -> None:
        self._tensors: dict[str, Tensor2] = {}

    def add(self, name: str, values) -> Tensor2:
        if name in self._tensors:
            raise ConfigurationError(f"parameter {name!r} already registered")
        tensor = Tensor2(values, requires_grad=True)
        self._tensors[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor2:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def items(self) -> list[tuple[str, Tensor2]]:
        return [(name, self._tensors[name]) for name in self.names()]

    def zero_grads(self) -> None:
        for tensor in self._tensors.values():
            tensor.grad = None

    def grads(self) -> dict[str, np.ndarray | None]:
        return {name: self._tensors[name].grad for name in self.names()}

    def entry_count(self) -> int:
        return sum(t.values.size for t in self._tensors.values())

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self.items()}

    def load_values(self, mapping: dict[str, np.ndarray]) -> None:
        for name in self.names():
            if name not in mapping:
                raise ValidationError(f"missing values for parameter {name!r}")
            arr = np.asarray(mapping[name], dtype=np.float64)
            if arr.shape != self._tensors[name].values.shape:
                raise ValidationError(
                    f"shape mismatch for {name!r}: {arr.shape} vs "
                    f"{self._tensors[name].values.shape}"
                )
            self._tensors[name].values[...] = arr


def glorot_uniform(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    fan_in, fan_out = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators plus hyperparameters."""

    alpha: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.alpha}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigurationError("beta coefficients must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigurationError(f"eps must be positive, got {self.eps}")

    @classmethod
    def for_params(cls, params: ParamStore, alpha: float = 1e-4, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        state = cls(alpha=alpha, beta1=beta1, beta2=beta2, eps=eps)
        for name, tensor in params.items():
            state.m[name] = np.zeros_like(tensor.values)
            state.v[name] = np.zeros_like(tensor.values)
        return state


def adam_step(params: ParamStore, state: AdamState) -> tuple[ParamStore, AdamState]:
    """One bias-corrected Adam update, applied in sorted-name order."""
    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t
    for name, tensor in params.items():
        grad = tensor.grad
        if grad is None:
            raise ValidationError(f"missing gradient for parameter {name!r}")
        if name not in state.m:
            raise ConfigurationError(f"optimizer state missing parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        tensor.values -= state.alpha * m_hat / (np.sqrt(v_hat) + state.eps)
        if not np.isfinite(tensor.values).all():
            raise NumericError(f"non-finite parameter values after Adam step on {name!r}")
    return params, state


def finite_difference_check(loss_fn, params: ParamStore, delta: float = 1e-5) -> float:
    """Compare analytic gradients against central differences.

    The caller must have populated params' gradients (forward + backward)
    before calling. `loss_fn` takes the ParamStore and returns a scalar; it
    is probed with each parameter entry nudged by +/- delta in turn.

    Returns
    -------
    float
        max over entries of |analytic - numeric| / max(1, |numeric|).
    """
    if delta <= 0:
        raise ConfigurationError(f"delta must be positive, got {delta}")
    analytic: dict[str, np.ndarray] = {}
    for name, tensor in params.items():
        if tensor.grad is None:
            raise ValidationError(
                f"missing analytic gradient for {name!r}; run backward() first"
            )
        analytic[name] = np.array(tensor.grad, copy=True)

    max_rel = 0.0
    with no_grad():
        for name, tensor in params.items():
            flat = tensor.values.reshape(-1)
            flat_grad = analytic[name].reshape(-1)
            for idx in range(flat.size):
                original = flat[idx]
                flat[idx] = original + delta
                loss_plus = float(loss_fn(params))
                flat[idx] = original - delta
                loss_minus = float(loss_fn(params))
                flat[idx] = original
                if not (np.isfinite(loss_plus) and np.isfinite(loss_minus)):
                    raise NumericError(
                        f"non-finite loss while probing parameter {name!r}"
                    )
                numeric = (loss_plus - loss_minus) / (2.0 * delta)
                rel = abs(flat_grad[idx] - numeric) / max(1.0, abs(numeric))
                if rel > max_rel:
                    max_rel = rel
    return max_rel


# -- checkpoint serialization -------------------------------------------------

CHECKPOINT_FORMAT = "neurofuse-checkpoint-v1"


def save_checkpoint(path: str | Path, params: ParamStore,
                    adam: AdamState | None = None, config_hash: str = "",
                    meta: dict | None = None) -> None:
    """Write parameters (shape + row-major values), optimizer state, and
    a config hash as canonical JSON."""
    def pack(arr: np.ndarray) -> dict:
        return {"shape": list(arr.shape),
                "values": [float(x) for x in arr.reshape(-1)]}

    payload = {
        "format": CHECKPOINT_FORMAT,
        "config_hash": config_hash,
        "parameters": {name: pack(t.values) for name, t in params.items()},
        "optimizer": None,
        "meta": meta or {},
    }
    if adam is not None:
        payload["optimizer"] = {
            "alpha": adam.alpha, "beta1": adam.beta1, "beta2": adam.beta2,
            "eps": adam.eps, "t": adam.t,
            "m": {name: pack(adam.m[name]) for name in sorted(adam.m)},
            "v": {name: pack(adam.v[name]) for name in sorted(adam.v)},
        }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_checkpoint(path: str | Path) -> dict:
    """Read a checkpoint; returns {params, adam, config_hash, meta}."""
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed checkpoint file: {exc}") from exc
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"unrecognized checkpoint format in {path}")

    def unpack(entry: dict) -> np.ndarray:
        return np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])

    params = ParamStore()
    for name in sorted(payload["parameters"]):
        params.add(name, unpack(payload["parameters"][name]))
    adam = None
    opt = payload.get("optimizer")
    if opt is not None:
        adam = AdamState(alpha=opt["alpha"], beta1=opt["beta1"], beta2=opt["beta2"],
                         eps=opt["eps"], t=opt["t"])
        adam.m = {name: unpack(entry) for name, entry in opt["m"].items()}
        adam.v = {name: unpack(entry) for name, entry in opt["v"].items()}
    return {
        "params": params,
        "adam": adam,
        "config_hash": payload.get("config_hash", ""),
        "meta": payload.get("meta", {}),
    }
