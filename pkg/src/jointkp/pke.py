"""Present-keyphrase extraction: shared encoder, sentence filter, CRF tagger.

Pipeline: the document is re-serialized with a <cls> before and a <sep>
after every sentence and run through a trainable Transformer encoder. The
<cls> states feed a two-block sentence filter that scores each sentence;
the top-K survivors' token states feed a BiLSTM whose projected emissions
are decoded by a linear-chain CRF. Training sums the filter's binary
cross-entropy over all sentences with the CRF negative log-likelihood over
the gold-positive sentences only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .corpus import CLS_ID, SEP_ID, UNK_ID, Example, Vocabulary
from .errors import ContractError

TAGS = ("O", "B", "I")
TAG_TO_ID = {t: i for i, t in enumerate(TAGS)}
NUM_TAGS = 3
FORBIDDEN = -10000.0  # transition score for entering start / leaving stop


class SharedEncoder:
    """Transformer encoder with token, learned position, and alternating
    segment embeddings. Its states serve both subtasks."""

    def __init__(self, seed: int, vocab_size: int, d_enc: int = 64, n_blocks: int = 2,
                 n_heads: int = 4, max_len: int = 512, name: str = "shared", dtype=None):
        self.d_enc = d_enc
        self.max_len = max_len
        self.tok = nn.Embedding(ad.seeded_rng(seed, name + ".tok"), vocab_size, d_enc, name=name + ".tok", dtype=dtype)
        self.pos = nn.Embedding(ad.seeded_rng(seed, name + ".pos"), max_len, d_enc, name=name + ".pos", dtype=dtype)
        self.seg = nn.Embedding(ad.seeded_rng(seed, name + ".seg"), 2, d_enc, name=name + ".seg", dtype=dtype)
        self.blocks = [nn.EncoderBlock(ad.seeded_rng(seed, f"{name}.block{i}"), d_enc, n_heads,
                                       name=f"{name}.block{i}", dtype=dtype)
                       for i in range(n_blocks)]

    def __call__(self, ids: list[int], seg_ids: list[int], drop: nn.Drop | None = None) -> Tensor:
        n = len(ids)
        x = ad.add(ad.add(self.tok(ids), self.pos(list(range(n)))), self.seg(seg_ids))
        x = nn._d(drop, x)
        for blk in self.blocks:
            x = blk(x, drop=drop)
        return x

    def parameters(self):
        ps = self.tok.parameters() + self.pos.parameters() + self.seg.parameters()
        for blk in self.blocks:
            ps += blk.parameters()
        return ps


@dataclass
class EncodedDocument:
    h: Tensor                       # [n', d_enc] states over the marked sequence
    cls_rows: Tensor                # [L_s_kept, d_enc]
    alignment: dict                 # original token index -> marked position
    kept_spans: list                # sentence spans that fit within max_len
    marked_ids: list                # the marked id sequence (for inspection)


def encode_with_cls(encoder: SharedEncoder, ex: Example, vocab: Vocabulary,
                    drop: nn.Drop | None = None) -> EncodedDocument:
    """Insert sentence markers, realign token indices, and encode.

    Trailing sentences that would push the marked length past max_len are
    dropped; a single oversized sentence is tail-truncated so at least one
    sentence always survives.
    """
    if not ex.sentence_spans:
        raise ContractError(f"document {ex.doc_id} has no sentences")
    marked: list[int] = []
    seg_ids: list[int] = []
    alignment: dict[int, int] = {}
    cls_positions: list[int] = []
    kept_spans = []
    for si, (s, e) in enumerate(ex.sentence_spans):
        length = e - s
        if len(marked) + length + 2 > encoder.max_len:
            if not kept_spans:
                length = encoder.max_len - 2
                e = s + length
            else:
                break
        cls_positions.append(len(marked))
        marked.append(CLS_ID)
        seg_ids.append(si % 2)
        for i in range(s, e):
            alignment[i] = len(marked)
            marked.append(vocab.token_to_id.get(ex.tokens[i], UNK_ID))
            seg_ids.append(si % 2)
        marked.append(SEP_ID)
        seg_ids.append(si % 2)
        kept_spans.append((s, e))
    h = encoder(marked, seg_ids, drop)
    cls_rows = ad.gather_rows(h, cls_positions)
    return EncodedDocument(h=h, cls_rows=cls_rows, alignment=alignment,
                           kept_spans=kept_spans, marked_ids=marked)


class SentenceFilter:
    """Two Transformer blocks over sentence vectors plus a scoring vector."""

    N_BLOCKS = 2

    def __init__(self, seed: int, d_enc: int, n_heads: int = 4, name: str = "filter", dtype=None):
        self.blocks = [nn.EncoderBlock(ad.seeded_rng(seed, f"{name}.block{i}"), d_enc, n_heads,
                                       name=f"{name}.block{i}", dtype=dtype)
                       for i in range(self.N_BLOCKS)]
        self.w = ad.uniform_init(ad.seeded_rng(seed, name + ".w"), (d_enc, 1), scale=0.1, dtype=dtype)
        self.name = name

    def __call__(self, cls_rows: Tensor, drop: nn.Drop | None = None) -> Tensor:
        g = cls_rows
        for blk in self.blocks:
            g = blk(g, drop=drop)
        return ad.sigmoid(ad.reshape(ad.matmul(g, self.w), (g.shape[0],)))

    def parameters(self):
        ps = []
        for blk in self.blocks:
            ps += blk.parameters()
        ps.append((self.name + ".w", self.w))
        return ps


def score_sentences(cls_rows: Tensor, filt: SentenceFilter, drop: nn.Drop | None = None) -> Tensor:
    return filt(cls_rows, drop)


def filter_loss(scores: Tensor, sentence_labels, strict: bool = False) -> Tensor:
    """Mean binary cross-entropy over sentences, logs clamped at 1e-12.

    strict=True keeps only the positive-label term (the one-sided variant,
    exposed for fidelity experiments; it is degenerate as a training loss).
    """
    n = len(sentence_labels)
    y = Tensor(np.asarray(sentence_labels, dtype=scores.data.dtype))
    log_s = ad.log(ad.clip_min(scores, 1e-12))
    if strict:
        return ad.mul(ad.sum_(ad.mul(y, log_s)), -1.0 / n)
    log_not = ad.log(ad.clip_min(ad.sub(1.0, scores), 1e-12))
    ll = ad.add(ad.mul(y, log_s), ad.mul(ad.sub(1.0, y), log_not))
    return ad.mul(ad.sum_(ll), -1.0 / n)


def select_top_k(scores: np.ndarray, k: int) -> list[int]:
    """Indices of the K best scores, ties to the earlier sentence,
    returned in document order."""
    if k < 1:
        raise ContractError(f"top-k selection needs k >= 1, got {k}")
    order = np.argsort(-np.asarray(scores), kind="stable")[:k]
    return sorted(int(i) for i in order)


class CrfTagger:
    """BiLSTM emissions over encoder states plus a learned transition table.

    Tag ids: O=0, B=1, I=2; two virtual states start=3, stop=4 live only in
    the transition table. Entries into start and out of stop are pinned at
    a large negative score and are never indexed, so they never train.
    """

    def __init__(self, seed: int, d_in: int, hidden: int = 32, name: str = "tagger",
                 dtype=None, use_crf: bool = True):
        self.name = name
        self.use_crf = use_crf
        self.bilstm = nn.BiLSTM(ad.seeded_rng(seed, name + ".bilstm"), d_in, hidden,
                                name=name + ".bilstm", dtype=dtype)
        self.proj = nn.Linear(ad.seeded_rng(seed, name + ".proj"), 2 * hidden, NUM_TAGS,
                              name=name + ".proj", dtype=dtype)
        side = NUM_TAGS + 2
        rng = ad.seeded_rng(seed, name + ".trans")
        a = rng.uniform(-0.1, 0.1, size=(side, side))
        a[:, NUM_TAGS] = FORBIDDEN       # nothing transitions into start
        a[NUM_TAGS + 1, :] = FORBIDDEN   # nothing leaves stop
        self.transitions = Tensor(a.astype(dtype if dtype is not None else ad.DEFAULT_DTYPE),
                                  requires_grad=True, dtype=dtype)

    def emissions(self, token_states: Tensor, drop: nn.Drop | None = None) -> Tensor:
        return self.proj(nn._d(drop, self.bilstm(token_states)))

    def parameters(self):
        return self.bilstm.parameters() + self.proj.parameters() + [(self.name + ".trans", self.transitions)]


def crf_nll(emissions: Tensor, transitions: Tensor, gold_tags: list[int]) -> Tensor:
    """Negative log-probability of the gold path under the linear-chain CRF.

    Path score sums start->first, adjacent, and last->stop transitions plus
    per-step emissions; the partition function runs the forward algorithm in
    log space over the same quantities.
    """
    n, t_count = emissions.shape
    if n < 1 or len(gold_tags) != n:
        raise ContractError(f"gold tag length {len(gold_tags)} does not match {n} emissions")
    side = transitions.shape[0]
    start, stop = t_count, t_count + 1
    flat = [start * side + gold_tags[0]]
    flat += [gold_tags[i] * side + gold_tags[i + 1] for i in range(n - 1)]
    flat.append(gold_tags[n - 1] * side + stop)
    gold_score = ad.add(ad.sum_(ad.take(transitions, flat)),
                        ad.sum_(ad.take(emissions, [i * t_count + t for i, t in enumerate(gold_tags)])))

    a_main = ad.narrow(ad.narrow(transitions, 0, 0, t_count), 1, 0, t_count)
    a_start = ad.reshape(ad.narrow(ad.narrow(transitions, 0, start, 1), 1, 0, t_count), (t_count,))
    a_stop = ad.reshape(ad.narrow(ad.narrow(transitions, 0, 0, t_count), 1, stop, 1), (t_count,))

    alpha = ad.add(ad.reshape(ad.narrow(emissions, 0, 0, 1), (t_count,)), a_start)
    for i in range(1, n):
        paths = ad.add(ad.reshape(alpha, (t_count, 1)), a_main)
        alpha = ad.add(ad.logsumexp(paths, axis=0), ad.reshape(ad.narrow(emissions, 0, i, 1), (t_count,)))
    log_z = ad.logsumexp(ad.add(alpha, a_stop))
    return ad.sub(log_z, gold_score)


def viterbi_decode(emissions: np.ndarray, transitions: np.ndarray) -> tuple[list[int], float]:
    """Best-scoring tag path; ties resolve toward the lower tag index."""
    p = np.asarray(emissions, dtype=np.float64)
    a = np.asarray(transitions, dtype=np.float64)
    n, t_count = p.shape
    start, stop = t_count, t_count + 1
    delta = p[0] + a[start, :t_count]
    back = np.zeros((n, t_count), dtype=np.int64)
    for i in range(1, n):
        cand = delta[:, None] + a[:t_count, :t_count]
        back[i] = cand.argmax(axis=0)  # first max wins -> lower previous tag
        delta = cand.max(axis=0) + p[i]
    final = delta + a[:t_count, stop]
    last = int(final.argmax())
    path = [last]
    for i in range(n - 1, 0, -1):
        path.append(int(back[i, path[-1]]))
    path.reverse()
    return path, float(final[last])


def linear_decode(emissions: np.ndarray) -> list[int]:
    """Per-token argmax, the CRF ablation; ties to the lower tag index."""
    return [int(i) for i in np.asarray(emissions).argmax(axis=1)]


def extract_spans(tags: list[str], tokens: list[str]) -> list[tuple[tuple[str, ...], int]]:
    """Maximal B(I)* runs as (phrase tokens, start). An I with no open span
    is repaired as B. Duplicate phrases keep their first position."""
    spans = []
    start = None
    for i, tag in enumerate(tags):
        if tag == "B" or (tag == "I" and start is None):
            if start is not None:
                spans.append((start, i))
            start = i
        elif tag == "O":
            if start is not None:
                spans.append((start, i))
                start = None
    if start is not None:
        spans.append((start, len(tags)))
    out = []
    seen = set()
    for s, e in spans:
        phrase = tuple(tokens[s:e])
        if phrase not in seen:
            seen.add(phrase)
            out.append((phrase, s))
    return out


class PkeModel:
    """Bundle of shared encoder, sentence filter, and tagger with the
    ablation switches (filter on/off, CRF vs per-token argmax)."""

    def __init__(self, vocab_size: int, d_enc: int = 64, enc_blocks: int = 2, enc_heads: int = 4,
                 bilstm_hidden: int = 32, max_len: int = 512, k: int = 7,
                 filter_enabled: bool = True, use_crf: bool = True, seed: int = 13, dtype=None):
        self.hyper = dict(vocab_size=vocab_size, d_enc=d_enc, enc_blocks=enc_blocks,
                          enc_heads=enc_heads, bilstm_hidden=bilstm_hidden, max_len=max_len,
                          k=k, filter_enabled=filter_enabled, use_crf=use_crf, seed=seed)
        self.k = k
        self.filter_enabled = filter_enabled
        self.encoder = SharedEncoder(seed, vocab_size, d_enc, enc_blocks, enc_heads, max_len, dtype=dtype)
        self.filter = SentenceFilter(seed, d_enc, enc_heads, dtype=dtype)
        self.tagger = CrfTagger(seed, d_enc, bilstm_hidden, dtype=dtype, use_crf=use_crf)

    def parameters(self):
        return self.encoder.parameters() + self.filter.parameters() + self.tagger.parameters()


def _tagging_loss(model: PkeModel, ex: Example, enc: EncodedDocument,
                  drop: nn.Drop | None) -> Tensor | None:
    """CRF (or token-level CE) loss over the gold-positive kept sentences,
    concatenated into one sequence per document."""
    positions = []
    gold = []
    for (s, e), label in zip(enc.kept_spans, ex.sentence_labels):
        if label != 1:
            continue
        for i in range(s, e):
            positions.append(enc.alignment[i])
            gold.append(TAG_TO_ID[ex.iob_tags[i]])
    if not positions:
        return None
    states = ad.gather_rows(enc.h, positions)
    em = model.tagger.emissions(states, drop)
    if model.tagger.use_crf:
        return crf_nll(em, model.tagger.transitions, gold)
    lse = ad.logsumexp(em, axis=1, keepdims=True)
    logp = ad.sub(em, lse)
    picked = ad.take(logp, [i * NUM_TAGS + t for i, t in enumerate(gold)])
    return ad.mul(ad.sum_(picked), -1.0)


def pke_loss(model: PkeModel, ex: Example, vocab: Vocabulary,
             drop: nn.Drop | None = None, strict_filter: bool = False) -> Tensor:
    """Filter loss over all kept sentences plus tagging loss over the
    positive ones; a document with no positive sentence contributes only
    the filter term."""
    enc = encode_with_cls(model.encoder, ex, vocab, drop)
    labels = ex.sentence_labels[:len(enc.kept_spans)]
    total = filter_loss(model.filter(enc.cls_rows, drop), labels, strict=strict_filter)
    lc = _tagging_loss(model, ex, enc, drop)
    if lc is not None:
        total = ad.add(total, lc)
    return total


def pke_train_step(model: PkeModel, examples: list[Example], vocab: Vocabulary,
                   optimizer: ad.Adam, drop: nn.Drop | None = None,
                   strict_filter: bool = False) -> float:
    """One optimization step over a batch; returns the mean loss."""
    optimizer.zero_grad()
    total = None
    for ex in examples:
        loss = pke_loss(model, ex, vocab, drop, strict_filter)
        total = loss if total is None else ad.add(total, loss)
    total = ad.mul(total, 1.0 / len(examples))
    total.backward()
    optimizer.step()
    return total.item()


@dataclass
class PkePrediction:
    selected: list              # kept-sentence indices that passed the filter
    tags: dict                  # sentence index -> tag strings
    phrases: list               # (phrase tokens, document position), document order


def pke_predict(model: PkeModel, ex: Example, vocab: Vocabulary, k: int | None = None) -> PkePrediction:
    """Filter, tag each selected sentence independently, and extract spans.

    Every returned phrase is a verbatim contiguous slice of a selected
    sentence; duplicates keep the earliest document position.
    """
    with ad.no_grad():
        enc = encode_with_cls(model.encoder, ex, vocab)
        n_kept = len(enc.kept_spans)
        if model.filter_enabled:
            scores = model.filter(enc.cls_rows).data
            selected = select_top_k(scores, k if k is not None else model.k)
        else:
            selected = list(range(n_kept))
        tags_by_sentence = {}
        collected = []
        for si in selected:
            s, e = enc.kept_spans[si]
            states = ad.gather_rows(enc.h, [enc.alignment[i] for i in range(s, e)])
            em = model.tagger.emissions(states)
            if model.tagger.use_crf:
                path, _ = viterbi_decode(em.data, model.tagger.transitions.data)
            else:
                path = linear_decode(em.data)
            tag_strs = [TAGS[t] for t in path]
            tags_by_sentence[si] = tag_strs
            for phrase, local in extract_spans(tag_strs, ex.tokens[s:e]):
                collected.append((phrase, s + local))
        collected.sort(key=lambda item: item[1])
        seen = set()
        phrases = []
        for phrase, pos in collected:
            if phrase not in seen:
                seen.add(phrase)
                phrases.append((phrase, pos))
    return PkePrediction(selected=selected, tags=tags_by_sentence, phrases=phrases)
