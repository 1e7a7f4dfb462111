"""Two-stage training: the extractor first, then the generator on top of
its (optionally frozen) encoder.

Both loops keep a snapshot of the best-so-far parameters by a validation
metric (span F1 with the cutoff at the number of predictions for the
extractor, mean phrase NLL for the generator), stop early after a patience
budget of evaluations without improvement, and abort loudly on a non-finite
loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import akg as akg_mod
from . import autodiff as ad
from . import metrics as met
from . import nn
from . import pke as pke_mod
from .checkpoint import CheckpointData, load_subset, verify_vocab
from .config import RunConfig
from .corpus import Corpus, EOS_ID, Example, Vocabulary
from .errors import ConfigError, GradientError


@dataclass
class TrainLog:
    losses: list = field(default_factory=list)   # (step, training loss)
    evals: list = field(default_factory=list)    # (step, validation metric)
    best_step: int = 0
    best_metric: float | None = None
    stopped_early: bool = False


def _batch_order(n: int, batch_size: int, rng):
    """Endless stream of index batches, reshuffled each epoch."""
    while True:
        order = rng.permutation(n)
        for i in range(0, n, batch_size):
            chunk = order[i:i + batch_size]
            if len(chunk):
                yield [int(x) for x in chunk]


def _snapshot(params):
    return [p.data.copy() for _, p in params]


def _restore(params, snap):
    for (_, p), arr in zip(params, snap):
        p.data[...] = arr


def evaluate_pke_f1m(model: pke_mod.PkeModel, examples: list[Example],
                     vocab: Vocabulary) -> float | None:
    scores = []
    for ex in examples:
        pred = pke_mod.pke_predict(model, ex, vocab)
        preds = [list(p) for p, _ in pred.phrases]
        gold = [list(p) for p, _ in ex.present]
        ds = met.f1_at_m(preds, gold)
        scores.append(None if ds is None else ds.f1)
    return met.macro_average(scores)


def train_pke(corpus: Corpus, cfg: RunConfig, log_fn=None) -> tuple[pke_mod.PkeModel, TrainLog]:
    """Train the extractor on the corpus; validation runs on the training
    documents themselves (the desk workflow has no held-out split)."""
    vocab = corpus.encoder_vocab
    model = pke_mod.PkeModel(
        vocab_size=len(vocab), d_enc=cfg.d_enc, enc_blocks=cfg.enc_blocks,
        enc_heads=cfg.enc_heads, bilstm_hidden=cfg.bilstm_hidden,
        max_len=cfg.max_len, k=cfg.filter_k, filter_enabled=cfg.filter_enabled,
        use_crf=cfg.tagger_crf, seed=cfg.seed)
    params = model.parameters()
    opt = ad.Adam(params, base_lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                  epsilon=cfg.eps, warmup_steps=cfg.warmup_pke,
                  clip_norm=cfg.clip_norm, decay=cfg.lr_decay)
    drop = nn.Drop(cfg.dropout, ad.seeded_rng(cfg.seed, "dropout.pke")) if cfg.dropout > 0 else None
    batches = _batch_order(len(corpus.examples), cfg.train_batch_size,
                           ad.seeded_rng(cfg.seed, "batches.pke"))
    log = TrainLog()
    best = _snapshot(params)
    stale = 0
    for step in range(1, cfg.train_steps_pke + 1):
        batch = [corpus.examples[i] for i in next(batches)]
        loss = pke_mod.pke_train_step(model, batch, vocab, opt, drop)
        if not np.isfinite(loss):
            raise GradientError(f"extractor loss became non-finite at step {step}")
        if step % cfg.train_log_every == 0 or step == 1:
            log.losses.append((step, loss))
            if log_fn:
                log_fn(f"step {step} loss {loss:.4f}")
        if step % cfg.train_eval_every == 0 or step == cfg.train_steps_pke:
            f1m = evaluate_pke_f1m(model, corpus.examples, vocab)
            score = -1.0 if f1m is None else f1m
            log.evals.append((step, score))
            if log_fn:
                log_fn(f"step {step} val-f1m {score:.4f}")
            if log.best_metric is None or score > log.best_metric:
                log.best_metric = score
                log.best_step = step
                best = _snapshot(params)
                stale = 0
            else:
                stale += 1
                if stale >= cfg.train_patience:
                    log.stopped_early = True
                    break
            if score >= 1.0:
                break  # nothing left to improve
    _restore(params, best)
    return model, log


def build_shared_encoder(cfg: RunConfig, enc_vocab: Vocabulary,
                         pke_data: CheckpointData | None):
    """Shared encoder for the generator per the encoder.mode switch.

    fixed-finetuned / trainable reconstruct the extractor's encoder from its
    checkpoint; fresh draws new weights of the same shape from a shifted
    seed and never sees the extractor. Returns (encoder, trainable flag).
    """
    if not cfg.fusion_enabled:
        return None, False
    if cfg.encoder_mode == "fresh":
        hyper = (pke_data.config if pke_data is not None else cfg.to_dict())
        enc = pke_mod.SharedEncoder(
            int(hyper["seed"]) + 104729, len(enc_vocab), int(hyper["d_enc"]),
            int(hyper["enc_blocks"]), int(hyper["enc_heads"]), int(hyper["max_len"]))
        return enc, False
    if pke_data is None:
        raise ConfigError(
            f"encoder.mode={cfg.encoder_mode} needs an extractor checkpoint")
    verify_vocab(pke_data, enc_vocab)
    hyper = pke_data.config
    enc = pke_mod.SharedEncoder(
        int(hyper["seed"]), len(enc_vocab), int(hyper["d_enc"]),
        int(hyper["enc_blocks"]), int(hyper["enc_heads"]), int(hyper["max_len"]))
    load_subset(enc.parameters(), pke_data, prefix="shared.")
    return enc, cfg.encoder_mode == "trainable"


def _doc_memory(model: akg_mod.AkgModel, ex: Example, ext_map, shared_encoder,
                enc_vocab, h_cache: dict, detach_h: bool, drop):
    """Fused source representation for one document. Frozen-encoder states
    are computed once and reused across steps."""
    u = model.encode_source(ext_map.source_base_ids(), drop)
    if not model.fusion_enabled:
        return u
    h = h_cache.get(ex.doc_id)
    if h is None:
        if detach_h:
            with ad.no_grad():
                h = pke_mod.encode_with_cls(shared_encoder, ex, enc_vocab).h.detach()
            h_cache[ex.doc_id] = h
        else:
            h = pke_mod.encode_with_cls(shared_encoder, ex, enc_vocab, drop).h
    return model.fuse(u, h, detach_h=detach_h, drop=drop)


def mean_akg_nll(model, docs, ext_maps, shared_encoder, enc_vocab, h_cache,
                 detach_h) -> float:
    """Mean per-phrase NLL over all (document, absent phrase) pairs."""
    total, count = 0.0, 0
    with ad.no_grad():
        for ex in docs:
            ext_map = ext_maps[ex.doc_id]
            memory = _doc_memory(model, ex, ext_map, shared_encoder, enc_vocab,
                                 h_cache, detach_h, None)
            for phrase in ex.absent:
                gold = ext_map.encode_target(phrase) + [EOS_ID]
                total += akg_mod.akg_nll(model, gold, memory, ext_map).item()
                count += 1
    return total / max(count, 1)


def train_akg(corpus: Corpus, cfg: RunConfig, pke_data: CheckpointData | None = None,
              log_fn=None):
    """Train the generator on absent phrases. Returns (model, shared_encoder,
    log); shared_encoder is None when fusion is disabled."""
    gen_vocab = corpus.generator_vocab
    enc_vocab = corpus.encoder_vocab
    shared_encoder, enc_trainable = build_shared_encoder(cfg, enc_vocab, pke_data)
    detach_h = not enc_trainable
    model = akg_mod.AkgModel(
        vocab_size=len(gen_vocab), d_model=cfg.d_model,
        d_enc=(shared_encoder.d_enc if shared_encoder is not None else None),
        n_layers=cfg.layers, n_heads=cfg.heads,
        fusion_enabled=cfg.fusion_enabled, seed=cfg.seed)
    params = model.parameters()
    if enc_trainable:
        params = params + shared_encoder.parameters()
    opt = ad.Adam(params, base_lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                  epsilon=cfg.eps, warmup_steps=cfg.warmup_akg,
                  clip_norm=cfg.clip_norm, decay=cfg.lr_decay)
    drop = nn.Drop(cfg.dropout, ad.seeded_rng(cfg.seed, "dropout.akg")) if cfg.dropout > 0 else None

    docs = [ex for ex in corpus.examples if ex.absent]
    if not docs:
        raise ConfigError("no document has an absent phrase; nothing to train on")
    ext_maps = {ex.doc_id: akg_mod.build_ext_map(ex.tokens, gen_vocab) for ex in docs}
    h_cache: dict = {}

    batches = _batch_order(len(docs), cfg.train_batch_size,
                           ad.seeded_rng(cfg.seed, "batches.akg"))
    log = TrainLog()
    best = _snapshot(params)
    stale = 0
    for step in range(1, cfg.train_steps_akg + 1):
        opt.zero_grad()
        total = None
        count = 0
        for i in next(batches):
            ex = docs[i]
            ext_map = ext_maps[ex.doc_id]
            memory = _doc_memory(model, ex, ext_map, shared_encoder, enc_vocab,
                                 h_cache, detach_h, drop)
            for phrase in ex.absent:
                gold = ext_map.encode_target(phrase) + [EOS_ID]
                nll = akg_mod.akg_nll(model, gold, memory, ext_map, drop)
                total = nll if total is None else ad.add(total, nll)
                count += 1
        total = ad.mul(total, 1.0 / count)
        total.backward()
        opt.step()
        loss = total.item()
        if not np.isfinite(loss):
            raise GradientError(f"generator loss became non-finite at step {step}")
        if step % cfg.train_log_every == 0 or step == 1:
            log.losses.append((step, loss))
            if log_fn:
                log_fn(f"step {step} loss {loss:.4f}")
        if step % cfg.train_eval_every == 0 or step == cfg.train_steps_akg:
            val = mean_akg_nll(model, docs, ext_maps, shared_encoder, enc_vocab,
                               h_cache, detach_h)
            log.evals.append((step, val))
            if log_fn:
                log_fn(f"step {step} val-nll {val:.4f}")
            # lower is better for the NLL criterion
            if log.best_metric is None or val < log.best_metric:
                log.best_metric = val
                log.best_step = step
                best = _snapshot(params)
                stale = 0
            else:
                stale += 1
                if stale >= cfg.train_patience:
                    log.stopped_early = True
                    break
    _restore(params, best)
    return model, shared_encoder, log
