"""Absent-keyphrase generation: fused Transformer with a copy mechanism.

The generator encodes the source over its own word-level vocabulary, then
(optionally) refines that encoding by attending into the frozen shared
encoder's states and merging the two views through an elementwise sigmoid
gate. A causal Transformer decoder produces, at each step, a distribution
over the extended vocabulary (generator vocabulary plus this document's
out-of-vocabulary source tokens) mixing softmax generation with copying
source positions weighted by the last decoder layer's cross-attention.
Candidates come from width-bounded beam search ranked by length-normalized
log-probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .corpus import CLS_ID, EOS_ID, PAD_ID, SEP_ID, SOS_ID, UNK_ID, Vocabulary
from .errors import ContractError

# ids the beam never emits as phrase content
NON_CONTENT_IDS = frozenset({PAD_ID, UNK_ID, SOS_ID, CLS_ID, SEP_ID})


class ExtendedVocabMap:
    """Per-document extension of the generator vocabulary with the source's
    out-of-vocabulary tokens, so they become copyable targets.

    In-vocabulary source positions keep their base ids; each distinct OOV
    token gets one id at base_size + k in first-appearance order.
    """

    def __init__(self, source_tokens: list[str], vocab: Vocabulary):
        self.base_size = len(vocab)
        self.oov_tokens: list[str] = []
        self.src_ext_ids: list[int] = []
        index: dict[str, int] = {}
        for tok in source_tokens:
            tid = vocab.token_to_id.get(tok)
            if tid is None:
                if tok not in index:
                    index[tok] = self.base_size + len(self.oov_tokens)
                    self.oov_tokens.append(tok)
                tid = index[tok]
            self.src_ext_ids.append(tid)
        self._oov_index = index
        self.vocab = vocab

    @property
    def ext_size(self) -> int:
        return self.base_size + len(self.oov_tokens)

    def source_base_ids(self) -> list[int]:
        """Source ids clamped into the base vocabulary (OOV -> unk)."""
        return [i if i < self.base_size else UNK_ID for i in self.src_ext_ids]

    def scatter_matrix(self, dtype) -> np.ndarray:
        """[n, ext_size] indicator mapping source positions to extended ids;
        multiplying attention by it aggregates copy mass per token identity."""
        m = np.zeros((len(self.src_ext_ids), self.ext_size), dtype=dtype)
        for pos, tid in enumerate(self.src_ext_ids):
            m[pos, tid] = 1.0
        return m

    def encode_target(self, tokens) -> list[int]:
        """Gold phrase tokens to extended ids: base id, else copyable OOV id,
        else unk."""
        out = []
        for tok in tokens:
            tid = self.vocab.token_to_id.get(tok)
            if tid is None:
                tid = self._oov_index.get(tok, UNK_ID)
            out.append(tid)
        return out

    def surface(self, ext_id: int) -> str:
        if ext_id < self.base_size:
            return self.vocab.id_to_token[ext_id]
        return self.oov_tokens[ext_id - self.base_size]


class FusionBlock:
    """Cross-attention into the shared encoder states followed by a
    feed-forward net, composed directly (no residual path)."""

    def __init__(self, rng, d_model: int, n_heads: int, name: str, dtype=None):
        self.attn = nn.MultiHeadAttention(rng, d_model, n_heads, name=name + ".attn", dtype=dtype)
        self.ffn = nn.FeedForward(rng, d_model, name=name + ".ffn", dtype=dtype)

    def __call__(self, u: Tensor, h: Tensor, drop: nn.Drop | None = None) -> Tensor:
        a, _ = self.attn(u, h, h)
        return self.ffn(nn._d(drop, a))

    def parameters(self):
        return self.attn.parameters() + self.ffn.parameters()


def gated_merge(u: Tensor, u_hat: Tensor, gate_w: Tensor) -> Tensor:
    """V = g*U + (1-g)*Uhat with g = sigmoid([U;Uhat] W_u), elementwise."""
    if u.shape != u_hat.shape:
        raise ContractError(f"gate inputs disagree: {u.shape} vs {u_hat.shape}")
    gate = ad.sigmoid(ad.matmul(ad.concat([u, u_hat], axis=1), gate_w))
    return ad.add(ad.mul(gate, u), ad.mul(ad.sub(1.0, gate), u_hat))


class AkgModel:
    """Generator encoder/decoder with optional fusion into shared states.

    With fusion disabled the fusion blocks, gate, and input projection are
    never allocated, and the remaining components draw from their own seeded
    streams, so the no-fusion build is parameter-identical to a plain
    pointer-generator Transformer at the same seed.
    """

    def __init__(self, vocab_size: int, d_model: int = 64, d_enc: int | None = None,
                 n_layers: int = 2, n_heads: int = 4, fusion_enabled: bool = True,
                 seed: int = 13, dtype=None):
        d_enc = d_model if d_enc is None else d_enc
        self.hyper = dict(vocab_size=vocab_size, d_model=d_model, d_enc=d_enc,
                          n_layers=n_layers, n_heads=n_heads,
                          fusion_enabled=fusion_enabled, seed=seed)
        self.vocab_size = vocab_size
        self.d_model = d_model
        self.fusion_enabled = fusion_enabled
        self.dtype = dtype if dtype is not None else ad.DEFAULT_DTYPE

        def rng(name):
            return ad.seeded_rng(seed, name)

        self.emb = nn.Embedding(rng("akg.emb"), vocab_size, d_model, name="akg.emb", dtype=dtype)
        self.enc_blocks = [nn.EncoderBlock(rng(f"akg.enc{i}"), d_model, n_heads,
                                           name=f"akg.enc{i}", dtype=dtype)
                           for i in range(n_layers)]
        if fusion_enabled:
            self.h_proj = (nn.Linear(rng("akg.hproj"), d_enc, d_model, bias=False,
                                     name="akg.hproj", dtype=dtype)
                           if d_enc != d_model else None)
            self.fusion_blocks = [FusionBlock(rng(f"akg.fuse{i}"), d_model, n_heads,
                                              name=f"akg.fuse{i}", dtype=dtype)
                                  for i in range(n_layers)]
            self.gate_w = ad.xavier_init(rng("akg.gate"), (2 * d_model, d_model), dtype=dtype)
        else:
            self.h_proj = None
            self.fusion_blocks = []
            self.gate_w = None
        self.dec_blocks = [nn.DecoderBlock(rng(f"akg.dec{i}"), d_model, n_heads,
                                           name=f"akg.dec{i}", dtype=dtype)
                           for i in range(n_layers)]
        self.out = nn.Linear(rng("akg.out"), d_model, vocab_size, name="akg.out", dtype=dtype)
        self.copy_w = ad.xavier_init(rng("akg.copy"), (d_model, 1), dtype=dtype)
        self.copy_b = ad.zeros_init((1,), dtype=dtype)

    def _positions(self, n: int) -> Tensor:
        return Tensor(nn.sinusoidal_positions(n, self.d_model, dtype=self.dtype))

    def encode_source(self, src_base_ids: list[int], drop: nn.Drop | None = None) -> Tensor:
        u = nn._d(drop, ad.add(self.emb(src_base_ids), self._positions(len(src_base_ids))))
        for blk in self.enc_blocks:
            u = blk(u, drop=drop)
        return u

    def fuse(self, u: Tensor, h: Tensor, detach_h: bool = True, drop: nn.Drop | None = None) -> Tensor:
        """Fusion attention into the shared states then the sigmoid gate.
        detach_h severs the gradient into the shared encoder (the default
        fixed-encoder workflow)."""
        if not self.fusion_enabled:
            return u
        if detach_h:
            h = h.detach()
        if self.h_proj is not None:
            h = self.h_proj(h)
        u_hat = u
        for blk in self.fusion_blocks:
            u_hat = blk(u_hat, h, drop=drop)
        return gated_merge(u, u_hat, self.gate_w)

    def decode(self, input_base_ids: list[int], memory: Tensor, drop: nn.Drop | None = None):
        """Causal decoder over a teacher-forced input; returns states for
        every position and the last block's cross-attention rows."""
        t = len(input_base_ids)
        y = nn._d(drop, ad.add(self.emb(input_base_ids), self._positions(t)))
        mask = nn.causal_mask(t, dtype=self.dtype)
        cross = None
        for blk in self.dec_blocks:
            y, cross = blk(y, memory, self_mask=mask, drop=drop)
        return y, cross

    def parameters(self):
        ps = self.emb.parameters()
        for blk in self.enc_blocks:
            ps += blk.parameters()
        if self.fusion_enabled:
            if self.h_proj is not None:
                ps += self.h_proj.parameters()
            for blk in self.fusion_blocks:
                ps += blk.parameters()
            ps.append(("akg.gate.w", self.gate_w))
        for blk in self.dec_blocks:
            ps += blk.parameters()
        ps += self.out.parameters()
        ps += [("akg.copy.w", self.copy_w), ("akg.copy.b", self.copy_b)]
        return ps


def fuse_with_shared_encoder(model: AkgModel, u: Tensor, h: Tensor,
                             detach_h: bool = True, drop: nn.Drop | None = None) -> Tensor:
    return model.fuse(u, h, detach_h=detach_h, drop=drop)


def decode_step(model: AkgModel, prefix_ext_ids: list[int], memory: Tensor,
                ext_map: ExtendedVocabMap, max_prefix: int | None = None):
    """One inference step: run the decoder over the prefix and return the
    final position's state (d_t) and head-averaged cross-attention (a_t)."""
    if not prefix_ext_ids or prefix_ext_ids[0] != SOS_ID:
        raise ContractError("decoder prefix must begin with the start-of-sequence id")
    if max_prefix is not None and len(prefix_ext_ids) > max_prefix:
        raise ContractError(f"prefix length {len(prefix_ext_ids)} exceeds limit {max_prefix}")
    base_ids = [i if i < ext_map.base_size else UNK_ID for i in prefix_ext_ids]
    states, cross = model.decode(base_ids, memory)
    t = len(base_ids)
    d_t = ad.narrow(states, 0, t - 1, 1)
    a_t = ad.reshape(ad.narrow(cross, 0, t - 1, 1), (cross.shape[1],))
    return d_t, a_t


def _mixture(model: AkgModel, states: Tensor, cross: Tensor, ext_map: ExtendedVocabMap) -> Tensor:
    """Rows of generate/copy mixture over the extended vocabulary, one per
    decoder position; each row sums to 1."""
    p_vocab = ad.softmax(model.out(states), axis=-1)
    n_oov = ext_map.ext_size - ext_map.base_size
    if n_oov:
        pad = Tensor(np.zeros((states.shape[0], n_oov), dtype=p_vocab.data.dtype))
        p_vocab = ad.concat([p_vocab, pad], axis=1)
    p_gen = ad.sigmoid(ad.add(ad.matmul(states, model.copy_w), model.copy_b))
    scatter = Tensor(ext_map.scatter_matrix(cross.data.dtype))
    p_copy = ad.matmul(cross, scatter)
    return ad.add(ad.mul(p_gen, p_vocab), ad.mul(ad.sub(1.0, p_gen), p_copy))


def copy_mixture(p_gen: float, p_vocab: np.ndarray, a_t: np.ndarray,
                 src_ext_ids, ext_size: int) -> np.ndarray:
    """Plain-array form of the generate/copy mixture, independent of any
    model state: P(w) = p_gen * P_vocab(w) + (1 - p_gen) * sum of attention
    over source positions holding w."""
    out = np.zeros(ext_size, dtype=np.float64)
    out[:len(p_vocab)] = p_gen * np.asarray(p_vocab, dtype=np.float64)
    for pos, tid in enumerate(src_ext_ids):
        out[tid] += (1.0 - p_gen) * float(a_t[pos])
    return out


def copy_distribution(model: AkgModel, d_t: Tensor, a_t: Tensor, ext_map: ExtendedVocabMap) -> Tensor:
    """P(w) = p_gen * P_vocab(w) + (1 - p_gen) * sum of a_t over source
    positions holding w; returns the extended-vocabulary row (sums to 1)."""
    a_row = ad.reshape(a_t, (1, a_t.size))
    p = _mixture(model, d_t, a_row, ext_map)
    return ad.reshape(p, (p.shape[1],))


def akg_nll(model: AkgModel, gold_ext_ids: list[int], memory: Tensor,
            ext_map: ExtendedVocabMap, drop: nn.Drop | None = None) -> Tensor:
    """Teacher-forced negative log-likelihood of one phrase (ending in the
    end-of-sequence id) under the generate/copy mixture."""
    if not gold_ext_ids or gold_ext_ids[-1] != EOS_ID:
        raise ContractError("gold phrase ids must end with the end-of-sequence id")
    inp = [SOS_ID] + [i if i < ext_map.base_size else UNK_ID for i in gold_ext_ids[:-1]]
    states, cross = model.decode(inp, memory, drop)
    p = _mixture(model, states, cross, ext_map)
    idx = [t * ext_map.ext_size + g for t, g in enumerate(gold_ext_ids)]
    picked = ad.take(p, idx)
    return ad.mul(ad.sum_(ad.log(ad.clip_min(picked, 1e-12))), -1.0)


@dataclass
class BeamHypothesis:
    ids: tuple          # generated extended ids, start id excluded
    logp: float         # accumulated log-probability (includes the EOS step if any)
    finished: bool

    def content_len(self) -> int:
        return len(self.ids) - (1 if self.ids and self.ids[-1] == EOS_ID else 0)


def beam_search(model: AkgModel, memory: Tensor, ext_map: ExtendedVocabMap,
                width: int = 200, depth: int = 6) -> list[tuple[tuple[int, ...], float]]:
    """Width-bounded search up to `depth` content tokens.

    A hypothesis finishes by emitting end-of-sequence (that step's
    log-probability counts) or by reaching full depth (no terminator term).
    Results are ranked by log-probability divided by content length,
    deduplicated by surface, ties broken by token ids; at most `width`
    phrases are returned.
    """
    if width < 1 or depth < 1:
        raise ContractError(f"beam needs width/depth >= 1, got {width}/{depth}")
    live = [BeamHypothesis((), 0.0, False)]
    finished: list[BeamHypothesis] = []
    with ad.no_grad():
        for _step in range(depth):
            expansions: list[BeamHypothesis] = []
            for hyp in live:
                d_t, a_t = decode_step(model, [SOS_ID] + list(hyp.ids), memory, ext_map,
                                       max_prefix=depth + 1)
                p = copy_distribution(model, d_t, a_t, ext_map).data.astype(np.float64)
                logs = np.log(np.maximum(p, 1e-300))
                if hyp.ids:
                    finished.append(BeamHypothesis(hyp.ids + (EOS_ID,),
                                                   hyp.logp + float(logs[EOS_ID]), True))
                for cand in range(ext_map.ext_size):
                    if cand == EOS_ID or cand in NON_CONTENT_IDS:
                        continue
                    new = BeamHypothesis(hyp.ids + (cand,), hyp.logp + float(logs[cand]),
                                         len(hyp.ids) + 1 == depth)
                    (finished if new.finished else expansions).append(new)
            expansions.sort(key=lambda h: (-h.logp, h.ids))
            live = expansions[:width]
            if not live:
                break
    best: dict[tuple, float] = {}
    for hyp in finished:
        content = hyp.ids[:-1] if hyp.ids[-1] == EOS_ID else hyp.ids
        score = hyp.logp / hyp.content_len()
        if content not in best or score > best[content]:
            best[content] = score
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:width]


def build_ext_map(tokens: list[str], gen_vocab: Vocabulary) -> ExtendedVocabMap:
    return ExtendedVocabMap(tokens, gen_vocab)


def akg_predict(model: AkgModel, ex, shared_encoder, enc_vocab: Vocabulary,
                gen_vocab: Vocabulary, width: int = 16, depth: int = 6,
                filter_present: bool = False) -> list[tuple[tuple[str, ...], float]]:
    """Full generation path for one document: frozen shared states, source
    encoding, fusion, beam search; returns (phrase tokens, score) ranked."""
    from .pke import encode_with_cls

    with ad.no_grad():
        ext_map = build_ext_map(ex.tokens, gen_vocab)
        u = model.encode_source(ext_map.source_base_ids())
        if model.fusion_enabled:
            if shared_encoder is None:
                raise ContractError("fusion needs shared encoder states; none provided")
            enc = encode_with_cls(shared_encoder, ex, enc_vocab)
            v = model.fuse(u, enc.h, detach_h=True)
        else:
            v = u
        ranked = beam_search(model, v, ext_map, width=width, depth=depth)
    out = []
    for ids, score in ranked:
        phrase = tuple(ext_map.surface(i) for i in ids)
        if filter_present and _occurs(ex.tokens, phrase):
            continue
        out.append((phrase, score))
    return out


def _occurs(tokens: list[str], phrase: tuple[str, ...]) -> bool:
    m = len(phrase)
    if m == 0:
        return True
    return any(tuple(tokens[i:i + m]) == phrase for i in range(len(tokens) - m + 1))
