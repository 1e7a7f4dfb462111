"""Neural building blocks: attention, transformer blocks, BiLSTM, embeddings.

All blocks are plain classes holding named parameter tensors; `parameters()`
returns (name, tensor) pairs in a deterministic order so the optimizer and
the checkpoint writer see the same flat list.

Convention for attention masks: an additive float matrix with 0.0 at
positions a query may attend to and -1e9 elsewhere. After the max-shifted
softmax the -1e9 entries underflow to exactly zero weight.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError

MASK_VALUE = -1e9


class Drop:
    """Bundles a dropout rate with its RNG; None stands for inference."""

    def __init__(self, rate: float, rng: np.random.Generator):
        self.rate = float(rate)
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        return ad.dropout(x, self.rate, self.rng)


def _d(drop: Drop | None, x: Tensor) -> Tensor:
    return drop(x) if drop is not None else x


class Linear:
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True, name: str = "linear", dtype=None):
        self.name = name
        self.w = ad.xavier_init(rng, (d_in, d_out), dtype=dtype)
        self.b = ad.zeros_init((d_out,), dtype=dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ad.matmul(x, self.w)
        if self.b is not None:
            out = ad.add(out, self.b)
        return out

    def parameters(self):
        ps = [(self.name + ".w", self.w)]
        if self.b is not None:
            ps.append((self.name + ".b", self.b))
        return ps


class LayerNorm:
    def __init__(self, d: int, name: str = "ln", dtype=None):
        self.name = name
        self.gain = ad.ones_init((d,), dtype=dtype)
        self.bias = ad.zeros_init((d,), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias)

    def parameters(self):
        return [(self.name + ".gain", self.gain), (self.name + ".bias", self.bias)]


class FeedForward:
    """Position-wise two-layer net, inner width 4x the model width."""

    def __init__(self, rng, d_model: int, name: str = "ffn", dtype=None):
        self.inner = Linear(rng, d_model, 4 * d_model, name=name + ".inner", dtype=dtype)
        self.outer = Linear(rng, 4 * d_model, d_model, name=name + ".outer", dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(ad.relu(self.inner(x)))

    def parameters(self):
        return self.inner.parameters() + self.outer.parameters()


class MultiHeadAttention:
    """Scaled dot-product attention with per-head projections.

    The four projections are bias-free matrices. Returns the output and the
    attention weights averaged over heads (kept on the tape because the copy
    mechanism differentiates through them).
    """

    def __init__(self, rng, d_model: int, n_heads: int, name: str = "mha", dtype=None):
        if d_model % n_heads != 0:
            raise DimensionError(f"model width {d_model} not divisible by {n_heads} heads")
        self.name = name
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = ad.xavier_init(rng, (d_model, d_model), dtype=dtype)
        self.wk = ad.xavier_init(rng, (d_model, d_model), dtype=dtype)
        self.wv = ad.xavier_init(rng, (d_model, d_model), dtype=dtype)
        self.wo = ad.xavier_init(rng, (d_model, d_model), dtype=dtype)

    def __call__(self, query: Tensor, key: Tensor, value: Tensor, mask: np.ndarray | None = None):
        q = ad.matmul(query, self.wq)
        k = ad.matmul(key, self.wk)
        v = ad.matmul(value, self.wv)
        scale = 1.0 / np.sqrt(self.d_head)
        mask_t = Tensor(mask, dtype=q.data.dtype) if mask is not None else None
        heads = []
        attn_sum = None
        for h in range(self.n_heads):
            lo = h * self.d_head
            qh = ad.narrow(q, 1, lo, self.d_head)
            kh = ad.narrow(k, 1, lo, self.d_head)
            vh = ad.narrow(v, 1, lo, self.d_head)
            scores = ad.mul(ad.matmul(qh, ad.transpose(kh)), scale)
            if mask_t is not None:
                scores = ad.add(scores, mask_t)
            attn = ad.softmax(scores, axis=-1)
            heads.append(ad.matmul(attn, vh))
            attn_sum = attn if attn_sum is None else ad.add(attn_sum, attn)
        out = ad.matmul(ad.concat(heads, axis=1), self.wo)
        return out, ad.mul(attn_sum, 1.0 / self.n_heads)

    def parameters(self):
        return [(self.name + ".wq", self.wq), (self.name + ".wk", self.wk),
                (self.name + ".wv", self.wv), (self.name + ".wo", self.wo)]


class EncoderBlock:
    """Self-attention then feed-forward, post-norm residuals."""

    def __init__(self, rng, d_model: int, n_heads: int, name: str = "enc", dtype=None):
        self.attn = MultiHeadAttention(rng, d_model, n_heads, name=name + ".attn", dtype=dtype)
        self.ln1 = LayerNorm(d_model, name=name + ".ln1", dtype=dtype)
        self.ffn = FeedForward(rng, d_model, name=name + ".ffn", dtype=dtype)
        self.ln2 = LayerNorm(d_model, name=name + ".ln2", dtype=dtype)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None, drop: Drop | None = None) -> Tensor:
        a, _ = self.attn(x, x, x, mask)
        x = self.ln1(ad.add(x, _d(drop, a)))
        f = self.ffn(x)
        return self.ln2(ad.add(x, _d(drop, f)))

    def parameters(self):
        return self.attn.parameters() + self.ln1.parameters() + self.ffn.parameters() + self.ln2.parameters()


class DecoderBlock:
    """Causal self-attention, cross-attention over memory, feed-forward.

    Returns the updated states and the cross-attention weights (head mean),
    which the last layer exposes for copying.
    """

    def __init__(self, rng, d_model: int, n_heads: int, name: str = "dec", dtype=None):
        self.self_attn = MultiHeadAttention(rng, d_model, n_heads, name=name + ".self", dtype=dtype)
        self.ln1 = LayerNorm(d_model, name=name + ".ln1", dtype=dtype)
        self.cross_attn = MultiHeadAttention(rng, d_model, n_heads, name=name + ".cross", dtype=dtype)
        self.ln2 = LayerNorm(d_model, name=name + ".ln2", dtype=dtype)
        self.ffn = FeedForward(rng, d_model, name=name + ".ffn", dtype=dtype)
        self.ln3 = LayerNorm(d_model, name=name + ".ln3", dtype=dtype)

    def __call__(self, y: Tensor, memory: Tensor, self_mask: np.ndarray | None = None,
                 drop: Drop | None = None):
        a, _ = self.self_attn(y, y, y, self_mask)
        y = self.ln1(ad.add(y, _d(drop, a)))
        c, cross = self.cross_attn(y, memory, memory, None)
        y = self.ln2(ad.add(y, _d(drop, c)))
        f = self.ffn(y)
        return self.ln3(ad.add(y, _d(drop, f))), cross

    def parameters(self):
        return (self.self_attn.parameters() + self.ln1.parameters()
                + self.cross_attn.parameters() + self.ln2.parameters()
                + self.ffn.parameters() + self.ln3.parameters())


class _LSTMScan:
    """One direction of an LSTM over a [n, d_in] sequence.

    Gate layout along the 4h axis: input, forget, candidate, output.
    """

    def __init__(self, rng, d_in: int, hidden: int, name: str, dtype=None):
        self.name = name
        self.hidden = hidden
        self.wx = ad.xavier_init(rng, (d_in, 4 * hidden), dtype=dtype)
        self.wh = ad.xavier_init(rng, (hidden, 4 * hidden), dtype=dtype)
        self.b = ad.zeros_init((4 * hidden,), dtype=dtype)

    def __call__(self, x: Tensor, reverse: bool = False) -> Tensor:
        n = x.shape[0]
        h = self.hidden
        xz = ad.add(ad.matmul(x, self.wx), self.b)  # [n, 4h], input part precomputed
        hp = Tensor(np.zeros((1, h), dtype=x.data.dtype))
        cp = Tensor(np.zeros((1, h), dtype=x.data.dtype))
        order = range(n - 1, -1, -1) if reverse else range(n)
        outs: list[Tensor | None] = [None] * n
        for t in order:
            z = ad.add(ad.narrow(xz, 0, t, 1), ad.matmul(hp, self.wh))
            i = ad.sigmoid(ad.narrow(z, 1, 0, h))
            f = ad.sigmoid(ad.narrow(z, 1, h, h))
            g = ad.tanh(ad.narrow(z, 1, 2 * h, h))
            o = ad.sigmoid(ad.narrow(z, 1, 3 * h, h))
            cp = ad.add(ad.mul(f, cp), ad.mul(i, g))
            hp = ad.mul(o, ad.tanh(cp))
            outs[t] = hp
        return ad.concat(outs, axis=0)

    def parameters(self):
        return [(self.name + ".wx", self.wx), (self.name + ".wh", self.wh), (self.name + ".b", self.b)]


class BiLSTM:
    """Forward and backward LSTM scans concatenated to [n, 2*hidden]."""

    def __init__(self, rng, d_in: int, hidden: int, name: str = "bilstm", dtype=None):
        self.fw = _LSTMScan(rng, d_in, hidden, name + ".fw", dtype=dtype)
        self.bw = _LSTMScan(rng, d_in, hidden, name + ".bw", dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.concat([self.fw(x), self.bw(x, reverse=True)], axis=1)

    def parameters(self):
        return self.fw.parameters() + self.bw.parameters()


class Embedding:
    """Token id -> row lookup, initialized uniform in [-0.1, 0.1]."""

    def __init__(self, rng, vocab: int, d: int, name: str = "emb", dtype=None):
        self.name = name
        self.table = ad.uniform_init(rng, (vocab, d), scale=0.1, dtype=dtype)

    def __call__(self, ids) -> Tensor:
        return ad.embedding(self.table, ids)

    def parameters(self):
        return [(self.name + ".table", self.table)]


def sinusoidal_positions(n: int, d: int, dtype=np.float32) -> np.ndarray:
    """Fixed sin/cos position signal: even columns sine, odd columns cosine."""
    if d % 2 != 0:
        raise DimensionError(f"position encoding width must be even, got {d}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    idx = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * idx / d)
    pe = np.zeros((n, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe.astype(dtype)


def causal_mask(n: int, dtype=np.float32) -> np.ndarray:
    """Additive mask letting position i attend to positions <= i."""
    m = np.full((n, n), MASK_VALUE, dtype=dtype)
    return np.triu(m, k=1)
