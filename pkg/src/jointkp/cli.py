"""Command line entry point.

Subcommands cover the whole workflow: make-toy, prepare, train-pke,
train-akg, predict, eval. Every failure path prints a single line whose
first token is the exception class name and exits nonzero, so scripts can
match on it.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from dataclasses import fields

from . import akg as akg_mod
from . import metrics as met
from . import pke as pke_mod
from . import report
from .checkpoint import (CheckpointData, load_checkpoint, load_into,
                         load_subset, restore_vocab, save_checkpoint)
from .config import RunConfig, apply_overrides, load_config
from .corpus import Example, build_corpus, prepare_document, read_cache, write_cache
from .errors import CheckpointError, ConfigError, DataError, JointKPError
from .toydata import write_toy_corpus
from .training import train_akg, train_pke


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="key=value configuration file")
    p.add_argument("--profile", default="desk", choices=("desk", "paper"),
                   help="default hyperparameter profile")
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override one configuration key")


def _config_from_args(args) -> RunConfig:
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got '{item}'")
        key, _, val = item.partition("=")
        overrides[key.strip()] = val
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return load_config(args.config, args.profile, overrides)


def _run_config_from_snapshot(data: CheckpointData) -> RunConfig:
    names = {f.name for f in fields(RunConfig)}
    return RunConfig.from_dict({k: v for k, v in data.config.items() if k in names})


def _require_kind(data: CheckpointData, kind: str, flag: str) -> None:
    got = data.config.get("kind")
    if got != kind:
        raise CheckpointError(f"{flag} expects a {kind} checkpoint, found '{got}'")


# -- document loading ----------------------------------------------------------


def _examples_from_lines(lines, max_len: int) -> list[Example]:
    examples = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except ValueError:
            raise DataError(f"line {lineno}: not valid JSON")
        if not isinstance(rec, dict) or "title" not in rec or "abstract" not in rec:
            raise DataError(f"line {lineno}: document needs title and abstract fields")
        ex, _ = prepare_document(str(rec.get("id", f"doc{lineno - 1:05d}")),
                                 rec["title"], rec["abstract"],
                                 rec.get("keyphrases", []), max_len)
        examples.append(ex)
    return examples


def _load_documents(path: str, max_len: int) -> list[Example]:
    """Accept a prepared cache (detected by its header) or raw JSONL records;
    '-' reads raw records from stdin."""
    if path == "-":
        return _examples_from_lines(sys.stdin.read().splitlines(), max_len)
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    try:
        head = json.loads(first) if first.strip() else None
    except ValueError:
        head = None
    if isinstance(head, dict) and "format_version" in head:
        return read_cache(path).examples
    with open(path, "r", encoding="utf-8") as fh:
        return _examples_from_lines(fh.read().splitlines(), max_len)


# -- model reconstruction ------------------------------------------------------


def _rebuild_pke(data: CheckpointData):
    cfg = _run_config_from_snapshot(data)
    vocab = restore_vocab(data)
    model = pke_mod.PkeModel(
        vocab_size=len(vocab), d_enc=cfg.d_enc, enc_blocks=cfg.enc_blocks,
        enc_heads=cfg.enc_heads, bilstm_hidden=cfg.bilstm_hidden,
        max_len=cfg.max_len, k=cfg.filter_k, filter_enabled=cfg.filter_enabled,
        use_crf=cfg.tagger_crf, seed=cfg.seed)
    load_into(model.parameters(), data)
    return model, vocab, cfg


def _rebuild_akg(data: CheckpointData, enc_vocab):
    cfg = _run_config_from_snapshot(data)
    gen_vocab = restore_vocab(data)
    model = akg_mod.AkgModel(
        vocab_size=len(gen_vocab), d_model=cfg.d_model,
        d_enc=(cfg.d_enc if cfg.fusion_enabled else None),
        n_layers=cfg.layers, n_heads=cfg.heads,
        fusion_enabled=cfg.fusion_enabled, seed=cfg.seed)
    load_subset(model.parameters(), data, prefix="akg.")
    encoder = None
    if cfg.fusion_enabled:
        stored = data.config.get("enc_vocab_sha256")
        if enc_vocab is None:
            raise CheckpointError("fused generator checkpoint needs the extractor checkpoint")
        if stored != enc_vocab.content_hash():
            raise CheckpointError(
                "generator was fused against a different encoder vocabulary")
        encoder = pke_mod.SharedEncoder(cfg.seed, len(enc_vocab), cfg.d_enc,
                                        cfg.enc_blocks, cfg.enc_heads, cfg.max_len)
        load_subset(encoder.parameters(), data, prefix="shared.")
    return model, gen_vocab, encoder, cfg


# -- subcommands ---------------------------------------------------------------


def cmd_make_toy(args) -> int:
    n = write_toy_corpus(args.out, seed=args.seed if args.seed is not None else 13)
    print(f"wrote {n} documents to {args.out}")
    return 0


def cmd_prepare(args) -> int:
    cfg = _config_from_args(args)
    corpus = build_corpus(args.input, vocab_size=cfg.vocab_size, max_len=cfg.max_len)
    if not corpus.examples:
        raise DataError(f"no usable documents in {args.input}")
    write_cache(corpus, args.out)
    print(f"prepared {len(corpus.examples)} documents "
          f"(encoder vocab {len(corpus.encoder_vocab)}, "
          f"generator vocab {len(corpus.generator_vocab)}, "
          f"skipped {corpus.skipped_records} records, "
          f"{corpus.skipped_phrases} unusable phrases) -> {args.out}")
    return 0


def cmd_train_pke(args) -> int:
    cfg = _config_from_args(args)
    corpus = read_cache(args.cache)
    model, log = train_pke(corpus, cfg, log_fn=print)
    save_checkpoint(args.out, model.parameters(), corpus.encoder_vocab,
                    {"kind": "pke", **cfg.to_dict()}, log.best_step)
    if args.out_dir:
        for p in report.save_training_report(args.out_dir, "pke", log.losses,
                                             log.evals, "f1m"):
            print(f"wrote {p}")
    best = "n/a" if log.best_metric is None else f"{log.best_metric:.4f}"
    print(f"saved extractor checkpoint to {args.out} "
          f"(best step {log.best_step}, val f1m {best})")
    return 0


def cmd_train_akg(args) -> int:
    cfg = _config_from_args(args)
    corpus = read_cache(args.cache)
    pke_data = None
    if args.pke:
        pke_data = load_checkpoint(args.pke)
        _require_kind(pke_data, "pke", "--pke")
    model, encoder, log = train_akg(corpus, cfg, pke_data, log_fn=print)
    params = model.parameters()
    snapshot = {"kind": "akg", **cfg.to_dict()}
    if encoder is not None:
        params = params + encoder.parameters()
        snapshot["enc_vocab_sha256"] = corpus.encoder_vocab.content_hash()
    save_checkpoint(args.out, params, corpus.generator_vocab, snapshot, log.best_step)
    if args.out_dir:
        for p in report.save_training_report(args.out_dir, "akg", log.losses,
                                             log.evals, "nll"):
            print(f"wrote {p}")
    best = "n/a" if log.best_metric is None else f"{log.best_metric:.4f}"
    print(f"saved generator checkpoint to {args.out} "
          f"(best step {log.best_step}, val nll {best})")
    return 0


def cmd_predict(args) -> int:
    pke_data = load_checkpoint(args.pke)
    _require_kind(pke_data, "pke", "--pke")
    akg_data = load_checkpoint(args.akg)
    _require_kind(akg_data, "akg", "--akg")
    pke_model, enc_vocab, pke_cfg = _rebuild_pke(pke_data)
    akg_model, gen_vocab, encoder, akg_cfg = _rebuild_akg(akg_data, enc_vocab)
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got '{item}'")
        key, _, val = item.partition("=")
        overrides[key.strip()] = val
    if overrides:
        pke_cfg = apply_overrides(pke_cfg, dict(overrides))
        akg_cfg = apply_overrides(akg_cfg, dict(overrides))
    examples = _load_documents(args.input, pke_cfg.max_len)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for ex in examples:
            pred = pke_mod.pke_predict(pke_model, ex, enc_vocab, k=pke_cfg.filter_k)
            absent = akg_mod.akg_predict(
                akg_model, ex, encoder, enc_vocab, gen_vocab,
                width=akg_cfg.beam_width, depth=akg_cfg.beam_depth,
                filter_present=akg_cfg.beam_filter_present)
            rec = {
                "id": ex.doc_id,
                "present": [{"phrase": list(p), "position": pos}
                            for p, pos in pred.phrases],
                "absent": [{"phrase": list(p), "score": float(s)}
                           for p, s in absent],
                "selected": list(pred.selected),
            }
            out.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
    finally:
        if args.out:
            out.close()
    if args.out:
        print(f"wrote predictions for {len(examples)} documents to {args.out}")
    return 0


def _parse_sweep(text: str) -> range:
    m = re.fullmatch(r"(\d+)\.\.(\d+)", text.strip())
    if not m:
        raise ConfigError(f"--sweep-k expects LO..HI, got '{text}'")
    lo, hi = int(m.group(1)), int(m.group(2))
    if lo < 1 or hi < lo:
        raise ConfigError(f"sweep bounds must satisfy 1 <= LO <= HI, got {text}")
    return range(lo, hi + 1)


def _ordered_unique(phrases):
    seen = set()
    out = []
    for p in phrases:
        t = tuple(p)
        if t not in seen:
            seen.add(t)
            out.append(list(p))
    return out


def _read_predictions(path: str) -> dict:
    preds = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except ValueError:
                raise DataError(f"{path}:{lineno}: not valid JSON")
            for key in ("id", "present", "absent"):
                if key not in rec:
                    raise DataError(f"{path}:{lineno}: prediction missing '{key}'")
            preds[str(rec["id"])] = rec
    return preds


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    corpus = read_cache(args.cache)

    if args.sweep_k:
        if not args.pke:
            raise ConfigError("--sweep-k needs --pke to re-run extraction")
        ks = _parse_sweep(args.sweep_k)
        data = load_checkpoint(args.pke)
        _require_kind(data, "pke", "--pke")
        model, vocab, _ = _rebuild_pke(data)
        rows = []
        for k in ks:
            scores = []
            for ex in corpus.examples:
                pred = pke_mod.pke_predict(model, ex, vocab, k=k)
                hyp = [list(p) for p, _ in pred.phrases]
                gold = _ordered_unique(p for p, _ in ex.present)
                ds = met.f1_at_m(hyp, gold, stem=cfg.eval_stem, dedup=cfg.eval_dedup)
                scores.append(None if ds is None else ds.f1)
            avg = met.macro_average(scores)
            rows.append((k, 0.0 if avg is None else avg))
        print(report.format_table(["K", "F1@M"], rows))
        if args.out_dir:
            os.makedirs(args.out_dir, exist_ok=True)
            tsv = os.path.join(args.out_dir, "sweep.tsv")
            report.write_tsv(tsv, ["K", "F1@M"], rows)
            png = os.path.join(args.out_dir, "sweep.png")
            report.render_sweep(rows, png)
            print(f"wrote {tsv}")
            print(f"wrote {png}")
        return 0

    if not args.preds:
        raise ConfigError("eval needs --preds (or --sweep-k with --pke)")
    preds = _read_predictions(args.preds)
    gold_ids = [ex.doc_id for ex in corpus.examples]
    missing = sorted(set(gold_ids) - set(preds))
    extra = sorted(set(preds) - set(gold_ids))
    if missing or extra:
        parts = []
        if missing:
            parts.append("missing from predictions: " + ", ".join(missing[:10]))
        if extra:
            parts.append("not in the gold cache: " + ", ".join(extra[:10]))
        raise DataError("document ids do not line up; " + "; ".join(parts))

    per_k = {k: [] for k in cfg.eval_ks}
    f1m_scores = []
    recall_scores = []
    for ex in corpus.examples:
        rec = preds[ex.doc_id]
        hyp_present = [list(e["phrase"]) for e in rec["present"]]
        hyp_absent = [list(e["phrase"]) for e in rec["absent"]]
        gold_present = _ordered_unique(p for p, _ in ex.present)
        gold_absent = _ordered_unique(ex.absent)
        for k in cfg.eval_ks:
            ds = met.f1_at_k(hyp_present, gold_present, k,
                             stem=cfg.eval_stem, dedup=cfg.eval_dedup)
            per_k[k].append(None if ds is None else ds.f1)
        ds = met.f1_at_m(hyp_present, gold_present,
                         stem=cfg.eval_stem, dedup=cfg.eval_dedup)
        f1m_scores.append(None if ds is None else ds.f1)
        recall_scores.append(met.recall_at_k(hyp_absent, gold_absent, cfg.eval_r_k,
                                             stem=cfg.eval_stem, dedup=cfg.eval_dedup))

    rows = []
    for k in cfg.eval_ks:
        rows.append((f"present_f1@{k}", _fmt(met.macro_average(per_k[k]))))
    rows.append(("present_f1@M", _fmt(met.macro_average(f1m_scores))))
    rows.append((f"absent_recall@{cfg.eval_r_k}", _fmt(met.macro_average(recall_scores))))
    print(report.format_table(["metric", "value"], rows))
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        tsv = os.path.join(args.out_dir, "metrics.tsv")
        report.write_tsv(tsv, ["metric", "value"], rows)
        print(f"wrote {tsv}")
    return 0


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.6f}"


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="jointkp",
        description="Joint keyphrase extraction and generation toolkit.")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy", help="write the synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_make_toy)

    p = sub.add_parser("prepare", help="tokenize, label, and cache a corpus")
    p.add_argument("--input", required=True, help="JSONL with title/abstract/keyphrases")
    p.add_argument("--out", required=True, help="cache file to write")
    _add_config_flags(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train-pke", help="train the extractor")
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--out-dir", default=None, help="loss table and figure directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_pke)

    p = sub.add_parser("train-akg", help="train the generator")
    p.add_argument("--cache", required=True)
    p.add_argument("--pke", default=None, help="extractor checkpoint for the shared encoder")
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--out-dir", default=None, help="loss table and figure directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_akg)

    p = sub.add_parser("predict", help="run both models over documents")
    p.add_argument("--input", required=True,
                   help="cache file, raw JSONL, or - for stdin")
    p.add_argument("--pke", required=True)
    p.add_argument("--akg", required=True)
    p.add_argument("--out", default=None, help="predictions JSONL (default stdout)")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a checkpoint configuration key")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against a gold cache")
    p.add_argument("--cache", required=True, help="gold cache file")
    p.add_argument("--preds", default=None, help="predictions JSONL")
    p.add_argument("--out-dir", default=None, help="report directory")
    p.add_argument("--sweep-k", default=None, metavar="LO..HI",
                   help="re-run extraction for each sentence budget K")
    p.add_argument("--pke", default=None, help="extractor checkpoint for --sweep-k")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    return top


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (JointKPError, OSError) as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
