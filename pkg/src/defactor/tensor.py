"""Dense real tensors with a reverse-mode gradient tape.

Values live in numpy arrays (float32 by default; float64 is available for
numerical checking). Operations execute eagerly and, while a ``Tape`` is
active, append a backward rule so that ``tape.backward(loss)`` fills the
``grad`` buffer of every reachable tensor by the chain rule. The module
also carries the named parameter store, the Adam update, and the binary
checkpoint codec.
"""

from __future__ import annotations

import math
import struct
from typing import Callable, Iterable, Sequence

import numpy as np


class TensorError(Exception):
    """Base class for tensor-engine failures."""


class ShapeMismatch(TensorError):
    pass


class NotScalar(TensorError):
    pass


class BadMagic(TensorError):
    pass


class UnsupportedVersion(TensorError):
    pass


class TruncatedFile(TensorError):
    pass


class BadCheckpoint(TensorError):
    pass


class Tensor:
    """A dense array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = arr
        out.grad = None
        out.requires_grad = requires_grad
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


_ACTIVE_TAPE: "Tape | None" = None

BackwardRule = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of operations for one backward pass.

    Entered as a context manager; operations record themselves only while a
    tape is active and only when some input requires gradients, so
    inference costs nothing extra.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], BackwardRule]] = []
        self._outer: Tape | None = None

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        self._outer = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._outer
        self._outer = None

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(tensor) into ``grad`` for every recorded input."""
        if loss.data.size != 1:
            raise NotScalar(f"loss must be scalar, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, inputs, rule in reversed(self._records):
            if out.grad is None:
                continue
            grads = rule(out.grad)
            for tensor, grad in zip(inputs, grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor.grad is None:
                    tensor.grad = np.zeros_like(tensor.data)
                tensor.grad += grad


def _record(out: Tensor, inputs: tuple[Tensor, ...], rule: BackwardRule) -> Tensor:
    if _ACTIVE_TAPE is not None and out.requires_grad:
        _ACTIVE_TAPE._records.append((out, inputs, rule))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def constant(data, dtype=np.float32) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def _value(x) -> np.ndarray | float:
    return x.data if isinstance(x, Tensor) else x


def _needs(x) -> bool:
    return isinstance(x, Tensor) and x.requires_grad


# -- elementwise and structural ops ----------------------------------------


def add(a, b) -> Tensor:
    out = Tensor._wrap(_value(a) + _value(b), _needs(a) or _needs(b))
    if not out.requires_grad:
        return out
    inputs = tuple(x for x in (a, b) if isinstance(x, Tensor))

    def rule(g):
        grads = []
        for x in (a, b):
            if isinstance(x, Tensor):
                grads.append(_unbroadcast(g, x.shape) if x.requires_grad else None)
        return grads

    return _record(out, inputs, rule)


def sub(a, b) -> Tensor:
    out = Tensor._wrap(_value(a) - _value(b), _needs(a) or _needs(b))
    if not out.requires_grad:
        return out
    inputs = tuple(x for x in (a, b) if isinstance(x, Tensor))

    def rule(g):
        grads = []
        if isinstance(a, Tensor):
            grads.append(_unbroadcast(g, a.shape) if a.requires_grad else None)
        if isinstance(b, Tensor):
            grads.append(_unbroadcast(-g, b.shape) if b.requires_grad else None)
        return grads

    return _record(out, inputs, rule)


def mul(a, b) -> Tensor:
    av, bv = _value(a), _value(b)
    out = Tensor._wrap(av * bv, _needs(a) or _needs(b))
    if not out.requires_grad:
        return out
    inputs = tuple(x for x in (a, b) if isinstance(x, Tensor))

    def rule(g):
        grads = []
        if isinstance(a, Tensor):
            grads.append(_unbroadcast(g * bv, a.shape) if a.requires_grad else None)
        if isinstance(b, Tensor):
            grads.append(_unbroadcast(g * av, b.shape) if b.requires_grad else None)
        return grads

    return _record(out, inputs, rule)


def neg(a: Tensor) -> Tensor:
    out = Tensor._wrap(-a.data, a.requires_grad)
    return _record(out, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul shapes incompatible: {a.shape} vs {b.shape}")
    out = Tensor._wrap(a.data @ b.data, a.requires_grad or b.requires_grad)

    def rule(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return (ga, gb)

    return _record(out, (a, b), rule)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatch(f"transpose expects a matrix, got {a.shape}")
    out = Tensor._wrap(a.data.T.copy(), a.requires_grad)
    return _record(out, (a,), lambda g: (g.T,))


def concat(parts: Iterable[Tensor], axis: int) -> Tensor:
    parts = tuple(parts)
    out = Tensor._wrap(
        np.concatenate([p.data for p in parts], axis=axis),
        any(p.requires_grad for p in parts),
    )
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def rule(g):
        grads = []
        for k, p in enumerate(parts):
            if not p.requires_grad:
                grads.append(None)
                continue
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(int(offsets[k]), int(offsets[k + 1]))
            grads.append(g[tuple(sl)])
        return grads

    return _record(out, parts, rule)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, stop)
    out = Tensor._wrap(a.data[tuple(sl)].copy(), a.requires_grad)

    def rule(g):
        full = np.zeros_like(a.data)
        full[tuple(sl)] = g
        return (full,)

    return _record(out, (a,), rule)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor._wrap(y, a.requires_grad)
    return _record(out, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor._wrap(y, a.requires_grad)
    return _record(out, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = Tensor._wrap(np.where(mask, a.data, 0.0), a.requires_grad)
    return _record(out, (a,), lambda g: (g * mask,))


def softmax_rows(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatch(f"softmax_rows expects a matrix, got {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    y = ex / ex.sum(axis=1, keepdims=True)
    out = Tensor._wrap(y, a.requires_grad)

    def rule(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (a,), rule)


def log(a: Tensor) -> Tensor:
    out = Tensor._wrap(np.log(a.data), a.requires_grad)
    return _record(out, (a,), lambda g: (g / a.data,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes through only strictly inside the range."""
    mask = (a.data > lo) & (a.data < hi)
    out = Tensor._wrap(np.clip(a.data, lo, hi), a.requires_grad)
    return _record(out, (a,), lambda g: (g * mask,))


def rsqrt_safe(a: Tensor, eps: float = 1e-12) -> Tensor:
    """x^(-1/2) where x > eps, exactly 0 elsewhere (zero-degree convention)."""
    mask = a.data > eps
    y = np.zeros_like(a.data)
    y[mask] = 1.0 / np.sqrt(a.data[mask])
    out = Tensor._wrap(y, a.requires_grad)

    def rule(g):
        grad = np.zeros_like(a.data)
        grad[mask] = -0.5 * g[mask] * y[mask] / a.data[mask]
        return (grad,)

    return _record(out, (a,), rule)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor._wrap(np.asarray(a.data.sum(), dtype=a.data.dtype), a.requires_grad)
    return _record(out, (a,), lambda g: (np.ones_like(a.data) * g,))


def mean_all(a: Tensor) -> Tensor:
    size = a.data.size
    out = Tensor._wrap(np.asarray(a.data.mean(), dtype=a.data.dtype), a.requires_grad)
    return _record(out, (a,), lambda g: (np.ones_like(a.data) * (g / size),))


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight + bias, with the bias row broadcast over x's rows."""
    return add(matmul(x, weight), bias)


# -- initializers -----------------------------------------------------------


def xavier_uniform(rng: np.random.Generator, shape: tuple[int, ...], dtype=np.float32) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def zeros_init(rng: np.random.Generator, shape: tuple[int, ...], dtype=np.float32) -> np.ndarray:
    return np.zeros(shape, dtype=dtype)


# -- parameter store and optimizer ------------------------------------------


class ParameterStore:
    """Named parameters plus per-parameter Adam moments.

    Fresh stores create parameters on demand through :meth:`parameter`;
    stores reconstructed from a checkpoint are created with
    ``require_existing=True`` and refuse unknown names, which is how shape
    and completeness errors surface as :class:`BadCheckpoint`.
    """

    def __init__(self, seed: int | None = None, require_existing: bool = False, dtype=np.float32):
        self.tensors: dict[str, Tensor] = {}
        self.moments: dict[str, tuple[np.ndarray, np.ndarray, int]] = {}
        self.rng = np.random.default_rng(seed)
        self.require_existing = require_existing
        self.dtype = dtype

    def parameter(self, name: str, shape: tuple[int, ...], init=xavier_uniform) -> Tensor:
        if name in self.tensors:
            t = self.tensors[name]
            if t.shape != tuple(shape):
                raise BadCheckpoint(f"parameter {name!r} has shape {t.shape}, expected {tuple(shape)}")
            return t
        if self.require_existing:
            raise BadCheckpoint(f"parameter {name!r} missing from checkpoint")
        t = Tensor(init(self.rng, tuple(shape), self.dtype), requires_grad=True, dtype=self.dtype)
        self.tensors[name] = t
        return t

    def put(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True, dtype=self.dtype)
        self.tensors[name] = t
        return t

    def names(self, prefix: str | None = None) -> list[str]:
        keys = sorted(self.tensors)
        if prefix is None:
            return keys
        return [k for k in keys if k.startswith(prefix)]

    def parameter_count(self, prefix: str | None = None) -> int:
        return sum(self.tensors[k].data.size for k in self.names(prefix))

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = np.zeros_like(t.data)

    def snapshot(self, prefix: str | None = None) -> dict[str, np.ndarray]:
        return {k: self.tensors[k].data.copy() for k in self.names(prefix)}

    def adam_step(
        self,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        names: Iterable[str] | None = None,
    ) -> None:
        """Standard Adam with bias correction over the named parameters.

        Parameters outside ``names`` keep their values and moments; each
        updated parameter advances its own step counter.
        """
        selected = self.names() if names is None else sorted(set(names))
        for name in selected:
            t = self.tensors[name]
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            m, v, step = self.moments.get(name, (np.zeros_like(t.data), np.zeros_like(t.data), 0))
            step += 1
            m = beta1 * m + (1.0 - beta1) * g
            v = beta2 * v + (1.0 - beta2) * (g * g)
            m_hat = m / (1.0 - beta1**step)
            v_hat = v / (1.0 - beta2**step)
            t.data = (t.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(t.data.dtype)
            self.moments[name] = (m.astype(t.data.dtype), v.astype(t.data.dtype), step)


# -- checkpoint codec --------------------------------------------------------

CHECKPOINT_MAGIC = b"DEFA"
CHECKPOINT_VERSION = 1
CHECKPOINT_EXTENSION = ".defa"

_MOMENT_M = "_adam.m."
_MOMENT_V = "_adam.v."
_MOMENT_STEP = "_adam.step."


def _pack_entry(name: str, arr: np.ndarray) -> bytes:
    name_bytes = name.encode("utf-8")
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    head = struct.pack("<I", len(name_bytes)) + name_bytes
    head += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + payload


def save_state(store: ParameterStore) -> bytes:
    """Serialize every parameter (and any touched Adam moments) to bytes."""
    entries: list[tuple[str, np.ndarray]] = []
    for name in store.names():
        entries.append((name, store.tensors[name].data))
    for name in sorted(store.moments):
        m, v, step = store.moments[name]
        entries.append((_MOMENT_M + name, m))
        entries.append((_MOMENT_V + name, v))
        entries.append((_MOMENT_STEP + name, np.asarray([float(step)], dtype=np.float32)))
    blob = CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION) + struct.pack("<I", len(entries))
    return blob + b"".join(_pack_entry(name, arr) for name, arr in entries)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.blob):
            raise TruncatedFile(
                f"needed {count} bytes at offset {self.pos}, file has {len(self.blob)}"
            )
        chunk = self.blob[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_state(blob: bytes) -> ParameterStore:
    """Rebuild a store from bytes; the result refuses unknown parameter names."""
    reader = _Reader(blob)
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise BadMagic("not a checkpoint file (bad magic)")
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersion(f"checkpoint version {version}, supported: {CHECKPOINT_VERSION}")
    count = reader.u32()
    raw: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u32()
        shape = tuple(reader.u32() for _ in range(rank))
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape).copy()
        raw[name] = arr
    if reader.pos != len(blob):
        raise BadCheckpoint(f"{len(blob) - reader.pos} trailing bytes after last entry")

    store = ParameterStore(require_existing=True)
    pending_m: dict[str, np.ndarray] = {}
    pending_v: dict[str, np.ndarray] = {}
    pending_step: dict[str, int] = {}
    for name, arr in raw.items():
        if name.startswith(_MOMENT_M):
            pending_m[name[len(_MOMENT_M):]] = arr
        elif name.startswith(_MOMENT_V):
            pending_v[name[len(_MOMENT_V):]] = arr
        elif name.startswith(_MOMENT_STEP):
            pending_step[name[len(_MOMENT_STEP):]] = int(arr.reshape(-1)[0])
        else:
            store.put(name, arr)
    for name in pending_m:
        if name not in pending_v or name not in pending_step or name not in store.tensors:
            raise BadCheckpoint(f"incomplete optimizer state for {name!r}")
        store.moments[name] = (pending_m[name], pending_v[name], pending_step[name])
    return store


def write_checkpoint(store: ParameterStore, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save_state(store))


def read_checkpoint(path) -> ParameterStore:
    with open(path, "rb") as fh:
        return load_state(fh.read())
