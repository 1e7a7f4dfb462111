"""Reverse-mode automatic differentiation on dense numpy tensors.

Every model equation in this package is expressed through the primitives
defined here. The engine is deliberately small: a dynamic tape (each result
tensor records its parents and a backward closure), scalar-seeded backward,
and an Adam optimizer with warmup and global-norm clipping.

Training runs in float32; gradient-check oracles run the same code in
float64 by constructing float64 leaves.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, GradientError

DEFAULT_DTYPE = np.float32

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables tape recording (thread-local)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """A dense array plus optional gradient buffer and tape linkage.

    Leaves created with requires_grad=True carry a zero-initialized grad
    buffer from the start, so "never touched by backward" and "zero
    gradient" are the same observable state.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad) and _grad_enabled()
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: tuple = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self):
        """Backpropagate from a scalar, populating grads of reachable leaves."""
        if self.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad[...] = 1.0
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    needs = _grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out.grad = None
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# -- elementwise primitives -------------------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    data = a.data - b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def div(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    data = a.data / b.data

    def backward(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(data, (a, b), backward)


def log(x: Tensor) -> Tensor:
    data = np.log(x.data)

    def backward(g):
        _accum(x, g / x.data)

    return _make(data, (x,), backward)


def exp(x: Tensor) -> Tensor:
    data = np.exp(x.data)

    def backward(g):
        _accum(x, g * data)

    return _make(data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    # Branch on sign to avoid exp overflow on large-magnitude inputs.
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out[~pos] = ez / (1.0 + ez)

    def backward(g):
        _accum(x, g * out * (1.0 - out))

    return _make(out, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        _accum(x, g * (1.0 - out * out))

    return _make(out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def backward(g):
        _accum(x, g * (x.data > 0))

    return _make(out, (x,), backward)


def clip_min(x: Tensor, lo: float) -> Tensor:
    """max(x, lo); gradient passes only where x > lo. Used to clamp logs."""
    out = np.maximum(x.data, lo)

    def backward(g):
        _accum(x, g * (x.data > lo))

    return _make(out, (x,), backward)


# -- reductions and normalizations -------------------------------------------


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accum(x, np.broadcast_to(g, x.shape).copy() if np.ndim(g) else np.full(x.shape, g, dtype=x.data.dtype))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(gg, x.shape).copy())

    return _make(data, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax; rows of the reduced axis sum to 1."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accum(x, out * (g - dot))

    return _make(out, (x,), backward)


def logsumexp(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    data = np.log(s) + m
    soft = e / s
    if not keepdims:
        data = data.squeeze(axis=axis) if axis is not None else data.reshape(())

    def backward(g):
        if axis is None:
            _accum(x, soft * g)
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(x, soft * gg)

    return _make(data, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale-shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    n = x.shape[-1]

    def backward(g):
        dxhat = g * gain.data
        term = dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accum(x, term * inv)
        axes = tuple(range(g.ndim - 1))
        _accum(gain, (g * xhat).sum(axis=axes))
        _accum(bias, g.sum(axis=axes))

    return _make(out, (x, gain, bias), backward)


# -- shape and indexing primitives --------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(data, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    data = x.data.T

    def backward(g):
        _accum(x, g.T)

    return _make(data, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    data = x.data.reshape(shape)

    def backward(g):
        _accum(x, g.reshape(x.shape))

    return _make(data, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def backward(g):
        offset = 0
        for t, s in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + s)
            _accum(t, g[tuple(idx)])
            offset += s

    return _make(data, tuple(tensors), backward)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors of equal length into a 2-D matrix."""
    return concat([reshape(r, (1, r.size)) for r in rows], axis=0)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = x.data[idx]

    def backward(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[idx] += g

    return _make(data, (x,), backward)


def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows of a 2-D tensor; duplicate indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.int64)
    if x.ndim != 2:
        raise DimensionError(f"gather_rows expects a 2-D tensor, got shape {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ContractError(f"row index out of range for table with {x.shape[0]} rows")
    data = x.data[idx]

    def backward(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            np.add.at(x.grad, idx, g)

    return _make(data, (x,), backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup into an embedding table (alias of gather_rows with id check)."""
    return gather_rows(table, ids)


def take(x: Tensor, flat_indices) -> Tensor:
    """Pick elements by flat index, as a 1-D tensor."""
    idx = np.asarray(flat_indices, dtype=np.int64)
    flat = x.data.reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= flat.size):
        raise ContractError(f"flat index out of range for size {flat.size}")
    data = flat[idx]

    def backward(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            np.add.at(x.grad.reshape(-1), idx, g)

    return _make(data, (x,), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only in training paths (rate 0 is identity)."""
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return mul(x, Tensor(keep, dtype=x.data.dtype))


# -- validation oracle --------------------------------------------------------


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-4) -> float:
    """Compare backward grads of f(x) against central differences.

    Returns max over coordinates of |analytic - numeric| / max(|a|, |n|, 1e-8).
    Run with float64 leaves; float32 rounding drowns the signal.
    """
    x.zero_grad()
    out = f(x)
    out.backward()
    analytic = x.grad.copy()
    numeric = np.zeros_like(analytic)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(x).item()
            flat[i] = orig - eps
            lo = f(x).item()
            flat[i] = orig
            nflat[i] = (hi - lo) / (2.0 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


# -- optimizer ----------------------------------------------------------------


class Adam:
    """Adam with linear warmup and global-norm gradient clipping.

    Effective lr at a step is base_lr * min(1, (step+1)/warmup_steps); after
    warmup the rate stays constant by default ("inv_sqrt" decay is available
    behind a flag since the post-warmup schedule is a free choice).
    """

    def __init__(self, params: Iterable[tuple[str, Tensor]], base_lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.998, epsilon: float = 1e-9,
                 warmup_steps: int = 1000, clip_norm: float = 2.0,
                 decay: str = "constant"):
        self.params = list(params)
        self.base_lr = base_lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.warmup_steps = max(1, int(warmup_steps))
        self.clip_norm = clip_norm
        self.decay = decay
        self.step_count = 0
        self.m = [np.zeros_like(t.data) for _, t in self.params]
        self.v = [np.zeros_like(t.data) for _, t in self.params]

    def effective_lr(self) -> float:
        warm = min(1.0, (self.step_count + 1) / self.warmup_steps)
        lr = self.base_lr * warm
        if self.decay == "inv_sqrt" and self.step_count + 1 > self.warmup_steps:
            lr = self.base_lr * (self.warmup_steps / (self.step_count + 1)) ** 0.5
        return lr

    def clip_gradients(self) -> float:
        """Scale all grads so the global norm is at most clip_norm; returns the pre-clip norm."""
        total = 0.0
        for name, t in self.params:
            if t.grad is None:
                continue
            if not np.all(np.isfinite(t.grad)):
                raise GradientError(f"non-finite gradient in parameter '{name}'")
            total += float((t.grad.astype(np.float64) ** 2).sum())
        norm = float(np.sqrt(total))
        if self.clip_norm and norm > self.clip_norm:
            scale = self.clip_norm / norm
            for _, t in self.params:
                if t.grad is not None:
                    t.grad *= scale
        return norm

    def step(self):
        self.clip_gradients()
        lr = self.effective_lr()
        t = self.step_count + 1
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for i, (_, p) in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[i] / bc1
            vhat = self.v[i] / bc2
            p.data -= (lr * mhat / (np.sqrt(vhat) + self.epsilon)).astype(p.data.dtype)
        self.step_count = t

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()


# -- seeded initialization -----------------------------------------------------


def seeded_rng(seed: int, name: str) -> np.random.Generator:
    """Independent generator per component so creation order of one
    component never shifts another's draws."""
    import zlib

    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode("utf-8"))]))


def uniform_init(rng: np.random.Generator, shape, scale: float = 0.1, dtype=None) -> Tensor:
    data = rng.uniform(-scale, scale, size=shape)
    return Tensor(data.astype(dtype if dtype is not None else DEFAULT_DTYPE), requires_grad=True, dtype=dtype)


def xavier_init(rng: np.random.Generator, shape, dtype=None) -> Tensor:
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    data = rng.uniform(-limit, limit, size=shape)
    return Tensor(data.astype(dtype if dtype is not None else DEFAULT_DTYPE), requires_grad=True, dtype=dtype)


def zeros_init(shape, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype if dtype is not None else DEFAULT_DTYPE), requires_grad=True, dtype=dtype)


def ones_init(shape, dtype=None) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype if dtype is not None else DEFAULT_DTYPE), requires_grad=True, dtype=dtype)
