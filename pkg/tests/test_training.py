import json

import numpy as np
import pytest

from jointkp import training
from jointkp.checkpoint import load_checkpoint, save_checkpoint
from jointkp.config import RunConfig, apply_overrides, default_config
from jointkp.corpus import build_corpus
from jointkp.errors import ConfigError, GradientError
from jointkp.toydata import toy_records

TINY = {
    "d_enc": "16", "enc_blocks": "1", "enc_heads": "2", "bilstm_hidden": "8",
    "d_model": "16", "layers": "1", "heads": "2",
    "beam.width": "4", "beam.depth": "3",
    "warmup_pke": "10", "warmup_akg": "10",
    "train.steps_pke": "12", "train.steps_akg": "12",
    "train.eval_every": "6", "train.log_every": "3",
    "train.batch_size": "2", "train.patience": "50",
}


def tiny_config(**extra) -> RunConfig:
    ov = dict(TINY)
    ov.update({k: str(v) for k, v in extra.items()})
    return apply_overrides(default_config("desk"), ov)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "docs.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for rec in toy_records(n_topics=2, docs_per_topic=2):
            fh.write(json.dumps(rec) + "\n")
    return build_corpus(str(path), vocab_size=500, max_len=512)


class TestTrainPke:
    def test_loss_decreases_and_logs(self, corpus):
        model, log = training.train_pke(corpus, tiny_config())
        assert log.losses and log.evals
        first = log.losses[0][1]
        last = log.losses[-1][1]
        assert last < first
        assert log.best_metric is not None

    def test_fixed_seed_identical_loss_curve(self, corpus):
        _, log1 = training.train_pke(corpus, tiny_config())
        _, log2 = training.train_pke(corpus, tiny_config())
        assert log1.losses == log2.losses
        assert log1.evals == log2.evals

    def test_seed_changes_curve(self, corpus):
        _, log1 = training.train_pke(corpus, tiny_config())
        _, log2 = training.train_pke(corpus, tiny_config(seed=99))
        assert log1.losses != log2.losses

    def test_best_snapshot_restored(self, corpus):
        model, log = training.train_pke(corpus, tiny_config())
        f1 = training.evaluate_pke_f1m(model, corpus.examples, corpus.encoder_vocab)
        assert f1 == pytest.approx(log.best_metric)

    def test_nan_loss_aborts_with_step(self, corpus, monkeypatch):
        monkeypatch.setattr(training.pke_mod, "pke_train_step",
                            lambda *a, **k: float("nan"))
        with pytest.raises(GradientError, match="step 1"):
            training.train_pke(corpus, tiny_config())


def _pke_ckpt(tmp_path, corpus, cfg):
    model, log = training.train_pke(corpus, cfg)
    path = tmp_path / "pke.ckpt"
    save_checkpoint(str(path), model.parameters(), corpus.encoder_vocab,
                    {"kind": "pke", **cfg.to_dict()}, log.best_step)
    return load_checkpoint(str(path))


class TestTrainAkg:
    def test_fixed_finetuned_freezes_encoder(self, tmp_path, corpus):
        cfg = tiny_config()
        pke_data = _pke_ckpt(tmp_path, corpus, cfg)
        model, encoder, log = training.train_akg(corpus, cfg, pke_data)
        assert encoder is not None
        for name, p in encoder.parameters():
            assert np.array_equal(p.data, pke_data.tensors[name]), name
        assert log.losses

    def test_trainable_encoder_moves(self, tmp_path, corpus):
        cfg = tiny_config(**{"encoder.mode": "trainable"})
        pke_data = _pke_ckpt(tmp_path, corpus, cfg)
        model, encoder, _ = training.train_akg(corpus, cfg, pke_data)
        moved = any(not np.array_equal(p.data, pke_data.tensors[name])
                    for name, p in encoder.parameters())
        assert moved

    def test_fresh_encoder_ignores_checkpoint(self, tmp_path, corpus):
        cfg = tiny_config(**{"encoder.mode": "fresh"})
        pke_data = _pke_ckpt(tmp_path, corpus, cfg)
        before = None
        model, encoder, _ = training.train_akg(corpus, cfg, pke_data)
        differs = any(not np.array_equal(p.data, pke_data.tensors[name])
                      for name, p in encoder.parameters())
        assert differs  # fresh weights, not the finetuned ones

    def test_fresh_encoder_stays_frozen(self, corpus):
        cfg = tiny_config(**{"encoder.mode": "fresh"})
        enc1, trainable = training.build_shared_encoder(cfg, corpus.encoder_vocab, None)
        assert not trainable
        snap = [p.data.copy() for _, p in enc1.parameters()]
        model, encoder, _ = training.train_akg(corpus, cfg, None)
        for (_, p), arr in zip(encoder.parameters(), snap):
            assert np.array_equal(p.data, arr)

    def test_missing_checkpoint_rejected(self, corpus):
        with pytest.raises(ConfigError, match="checkpoint"):
            training.train_akg(corpus, tiny_config(), None)

    def test_fusion_disabled_needs_no_encoder(self, corpus):
        cfg = tiny_config(**{"fusion.enabled": "false"})
        model, encoder, log = training.train_akg(corpus, cfg, None)
        assert encoder is None
        assert not model.fusion_enabled
        assert log.losses

    def test_nll_falls_with_training(self, corpus):
        cfg = tiny_config(**{"fusion.enabled": "false"},
                          **{"train.steps_akg": "40", "train.eval_every": "40"})
        _, _, log = training.train_akg(corpus, cfg, None)
        assert log.losses[-1][1] < log.losses[0][1]

    def test_no_absent_phrases_rejected(self, corpus, monkeypatch):
        stripped = [type(ex)(**{**ex.__dict__, "absent": []}) for ex in corpus.examples]
        bare = type(corpus)(examples=stripped, encoder_vocab=corpus.encoder_vocab,
                            generator_vocab=corpus.generator_vocab,
                            skipped_records=0, skipped_phrases=0, max_len=corpus.max_len)
        cfg = tiny_config(**{"fusion.enabled": "false"})
        with pytest.raises(ConfigError, match="absent"):
            training.train_akg(bare, cfg, None)
