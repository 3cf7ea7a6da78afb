"""Reverse-mode automatic differentiation on float64 numpy buffers.

Operations record a backward closure on the active Tape; backward(loss)
replays the closures in exact reverse execution order and accumulates
gradients into Tensor.grad.  Everything is deterministic: same seed and
inputs give bit-identical values and gradients.

All arrays are 2-D matrices or scalars unless an op says otherwise;
sequence data is [length, dim] row-major.
"""

from __future__ import annotations

import struct
import threading

import numpy as np


class ShapeMismatch(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    """A float64 buffer with an optional gradient of the same shape."""

    __slots__ = ("data", "requires_grad", "grad", "_tape", "_index")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: "Tape | None" = None
        self._index: int = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


_local = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_local, "tape", None)


class Tape:
    """Recorded operations, replayed in reverse by backward()."""

    def __init__(self):
        self.records: list[tuple[Tensor, object]] = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise TapeError("a tape is already active on this thread")
        _local.tape = self
        return self

    def __exit__(self, *exc):
        _local.tape = None
        return False


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        out._index = len(tape.records)
        tape.records.append((out, backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into .grad for every tensor that
    requires gradients and contributed to the scalar loss."""
    if loss.data.ndim != 0:
        raise ShapeMismatch(f"backward expects a scalar, got shape {loss.shape}")
    tape = loss._tape
    if tape is None or tape is not _active_tape():
        raise TapeError("backward called on a value not produced on the active tape")
    loss.accumulate(np.ones_like(loss.data))
    for out, backward_fn in reversed(tape.records[: loss._index + 1]):
        if out.grad is None:
            continue
        backward_fn(out.grad)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to the shape it was broadcast from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _check_same_or_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(
            f"{op}: shapes {a.shape} and {b.shape} are not compatible"
        ) from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_or_broadcast(a, b, "add")
    out = Tensor(a.data + b.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return _record(out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_or_broadcast(a, b, "mul")
    out = Tensor(a.data * b.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return _record(out, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * c)

    return _record(out, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: shapes {a.shape} and {b.shape} do not chain")
    out = Tensor(a.data @ b.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return _record(out, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatch(f"transpose expects a matrix, got shape {a.shape}")
    out = Tensor(a.data.T)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g.T)

    return _record(out, (a,), bw)


def concat(tensors: list[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    if not tensors:
        raise ShapeMismatch("concat of an empty list")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=-1))
    widths = [t.shape[-1] for t in tensors]

    def bw(g):
        start = 0
        for t, w in zip(tensors, widths):
            if t.requires_grad:
                t.accumulate(g[..., start : start + w])
            start += w

    return _record(out, tuple(tensors), bw)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(a.data[idx])

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            a.accumulate(full)

    return _record(out, (a,), bw)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of a [V, d] table; also used to gather encoder states."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeMismatch(f"embedding ids must be 1-D, got shape {ids.shape}")
    if table.data.ndim != 2:
        raise ShapeMismatch(f"embedding table must be 2-D, got shape {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            f"embedding id out of range [0, {table.shape[0]}): "
            f"{int(ids.min())}..{int(ids.max())}"
        )
    out = Tensor(table.data[ids])

    def bw(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, g)

    return _record(out, (table,), bw)


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))

    def bw(g):
        if a.requires_grad:
            a.accumulate(g / a.data)

    return _record(out, (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = Tensor(a.data * mask)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * mask)

    return _record(out, (a,), bw)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max subtraction."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)

    def bw(g):
        if a.requires_grad:
            inner = (g * s).sum(axis=-1, keepdims=True)
            a.accumulate((g - inner) * s)

    return _record(out, (a,), bw)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatch(
            f"layer_norm: params {gain.shape}/{bias.shape} do not match last axis {d}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Tensor(xhat * gain.data + bias.data)

    def bw(g):
        if gain.requires_grad:
            gain.accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias.accumulate(g.reshape(-1, d).sum(axis=0))
        if a.requires_grad:
            gx = g * gain.data
            a.accumulate(
                inv
                * (
                    gx
                    - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
                )
            )

    return _record(out, (a, gain, bias), bw)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Sum of negative log-likelihoods.

    logits is [T, V] (or [V] for a single prediction); targets is a
    sequence of T class ids.
    """
    data = logits.data
    squeeze = data.ndim == 1
    if squeeze:
        data = data[None, :]
        targets = [int(targets)] if np.ndim(targets) == 0 else targets
    ids = np.asarray(targets, dtype=np.int64)
    if data.ndim != 2 or ids.shape != (data.shape[0],):
        raise ShapeMismatch(
            f"cross_entropy: logits {logits.shape} vs targets {ids.shape}"
        )
    v = data.shape[1]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        raise IndexError(f"cross_entropy target out of range [0, {v})")
    shifted = data - data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1)) + data.max(axis=-1)
    rows = np.arange(data.shape[0])
    out = Tensor((lse - data[rows, ids]).sum())

    def bw(g):
        if logits.requires_grad:
            p = np.exp(shifted)
            p /= p.sum(axis=-1, keepdims=True)
            p[rows, ids] -= 1.0
            logits.accumulate(float(g) * (p[0] if squeeze else p))

    return _record(out, (logits,), bw)


def reduce_sum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())

    def bw(g):
        if a.requires_grad:
            a.accumulate(np.full_like(a.data, float(g)))

    return _record(out, (a,), bw)


def row_gather(a: Tensor, idx: np.ndarray) -> Tensor:
    """out[i, j] = a[i, idx[i, j]] for a [M, K] tensor and [M, N] ids."""
    idx = np.asarray(idx, dtype=np.int64)
    if a.data.ndim != 2 or idx.ndim != 2 or idx.shape[0] != a.shape[0]:
        raise ShapeMismatch(f"row_gather: tensor {a.shape} vs ids {idx.shape}")
    rows = np.arange(a.shape[0])[:, None]
    out = Tensor(a.data[rows, idx])

    def bw(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            np.add.at(a.grad, (np.broadcast_to(rows, idx.shape), idx), g)

    return _record(out, (a,), bw)


def row_scatter_add(a: Tensor, idx: np.ndarray, size: int) -> Tensor:
    """out[i, k] = sum of a[i, j] over j with idx[i, j] == k (adjoint of
    row_gather)."""
    idx = np.asarray(idx, dtype=np.int64)
    if a.data.ndim != 2 or idx.shape != a.shape:
        raise ShapeMismatch(f"row_scatter_add: tensor {a.shape} vs ids {idx.shape}")
    rows = np.arange(a.shape[0])[:, None]
    buf = np.zeros((a.shape[0], size))
    np.add.at(buf, (np.broadcast_to(rows, idx.shape), idx), a.data)
    out = Tensor(buf)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g[np.broadcast_to(rows, idx.shape), idx])

    return _record(out, (a,), bw)


def adam_step(data, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on data/m/v."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    data -= lr * mhat / (np.sqrt(vhat) + eps)


class Adam:
    """Adam over a dict of named parameter tensors."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            adam_step(p.data, grad, self.m[name], self.v[name], self.t,
                      self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


class Rng:
    """Splittable counter-based random stream (Philox under the hood)."""

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = _key
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=_key)
        self.gen = np.random.Generator(np.random.Philox(seq))

    def split(self, index: int) -> "Rng":
        return Rng(self.seed, self.key + (int(index),))

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self.gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=None):
        return self.gen.integers(low, high, size=shape)

    def choice_index(self, n: int) -> int:
        return int(self.gen.integers(0, n))


def init_param(rng: Rng, shape: tuple[int, ...], fan_in: int | None = None) -> Tensor:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
    if fan_in is None:
        fan_in = shape[0]
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


def zeros_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


CHECKPOINT_MAGIC = b"DMRC"
CHECKPOINT_VERSION = 1


def save_params(params: dict[str, Tensor], path: str) -> None:
    """Flat binary checkpoint: header, then per-tensor name/dims/payload."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(params)))
        for name, tensor in params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            dims = tensor.data.shape
            fh.write(struct.pack("<I", len(dims)))
            for d in dims:
                fh.write(struct.pack("<Q", d))
            fh.write(tensor.data.astype("<f8").tobytes())


def load_params(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        version, count = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
            n = 1
            for d in dims:
                n *= d
            payload = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(dims)
            out[name] = payload.astype(np.float64)
        return out


def load_into(params: dict[str, Tensor], path: str) -> None:
    loaded = load_params(path)
    missing = set(params) - set(loaded)
    extra = set(loaded) - set(params)
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, "
                         f"unexpected {sorted(extra)}")
    for name, tensor in params.items():
        if loaded[name].shape != tensor.data.shape:
            raise ShapeMismatch(
                f"checkpoint {name}: shape {loaded[name].shape} vs "
                f"{tensor.data.shape}"
            )
        tensor.data[...] = loaded[name]


def finite_difference_check(f, params: list[Tensor], h: float = 1e-5) -> float:
    """Max relative error between analytic grads already stored in
    params and central finite differences of the scalar function f().

    f must rebuild the forward pass from the current parameter values
    and return a python float.
    """
    worst = 0.0
    for p in params:
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f()
            flat[i] = orig - h
            down = f()
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            rel = abs(gflat[i] - fd) / (abs(fd) + 1e-8)
            if rel > worst:
                worst = rel
    return worst
