import json
import os

import pytest

from jointkp import cli
from jointkp.corpus import read_cache
from jointkp.toydata import toy_records

TINY_SETS = [
    "--set", "d_enc=16", "--set", "enc_blocks=1", "--set", "enc_heads=2",
    "--set", "bilstm_hidden=8", "--set", "d_model=16", "--set", "layers=1",
    "--set", "heads=2", "--set", "beam.width=4", "--set", "beam.depth=3",
    "--set", "warmup_pke=10", "--set", "warmup_akg=10",
    "--set", "train.steps_pke=10", "--set", "train.steps_akg=10",
    "--set", "train.eval_every=5", "--set", "train.log_every=5",
    "--set", "train.batch_size=2", "--set", "train.patience=50",
]


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Raw corpus, cache, and quick checkpoints shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    raw = root / "docs.jsonl"
    with open(raw, "w", encoding="utf-8") as fh:
        for rec in toy_records(n_topics=2, docs_per_topic=2):
            fh.write(json.dumps(rec) + "\n")
    cache = root / "cache.jsonl"
    assert cli.main(["prepare", "--input", str(raw), "--out", str(cache)]) == 0
    pke = root / "pke.ckpt"
    assert cli.main(["train-pke", "--cache", str(cache), "--out", str(pke)] + TINY_SETS) == 0
    akg = root / "akg.ckpt"
    assert cli.main(["train-akg", "--cache", str(cache), "--pke", str(pke),
                     "--out", str(akg)] + TINY_SETS) == 0
    return {"root": root, "raw": raw, "cache": cache, "pke": pke, "akg": akg}


class TestMakeToyAndPrepare:
    def test_make_toy_writes_corpus(self, tmp_path):
        out = tmp_path / "toy.jsonl"
        assert cli.main(["make-toy", "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 64
        rec = json.loads(lines[0])
        assert set(rec) == {"id", "title", "abstract", "keyphrases"}

    def test_prepare_deterministic_cache(self, work, tmp_path):
        again = tmp_path / "cache2.jsonl"
        assert cli.main(["prepare", "--input", str(work["raw"]), "--out", str(again)]) == 0
        assert again.read_bytes() == work["cache"].read_bytes()

    def test_prepare_reports_skipped_records(self, tmp_path, capsys):
        raw = tmp_path / "docs.jsonl"
        recs = [json.dumps(r) for r in toy_records(n_topics=1, docs_per_topic=2)]
        recs.insert(1, json.dumps({"title": "no keyphrases", "abstract": "text"}))
        recs.insert(2, "{broken json")
        raw.write_text("\n".join(recs) + "\n")
        out = tmp_path / "cache.jsonl"
        assert cli.main(["prepare", "--input", str(raw), "--out", str(out)]) == 0
        assert "skipped 2 records" in capsys.readouterr().out
        assert len(read_cache(str(out)).examples) == 2

    def test_prepare_empty_input_fails(self, tmp_path, capsys):
        raw = tmp_path / "empty.jsonl"
        raw.write_text("")
        rc = cli.main(["prepare", "--input", str(raw), "--out", str(tmp_path / "c.jsonl")])
        assert rc == 2
        assert capsys.readouterr().err.startswith("DataError:")

    def test_missing_input_one_line_error(self, tmp_path, capsys):
        rc = cli.main(["prepare", "--input", str(tmp_path / "nope.jsonl"),
                       "--out", str(tmp_path / "c.jsonl")])
        assert rc == 2
        err = capsys.readouterr().err.strip()
        assert len(err.splitlines()) == 1
        assert err.split(":")[0] == "FileNotFoundError"


class TestTraining:
    def test_unknown_set_key_fails(self, work, tmp_path, capsys):
        rc = cli.main(["train-pke", "--cache", str(work["cache"]),
                       "--out", str(tmp_path / "x.ckpt"), "--set", "optimizer=sgd"])
        assert rc == 2
        assert capsys.readouterr().err.startswith("ConfigError:")

    def test_train_akg_requires_pke_when_fused(self, work, tmp_path, capsys):
        rc = cli.main(["train-akg", "--cache", str(work["cache"]),
                       "--out", str(tmp_path / "x.ckpt")] + TINY_SETS)
        assert rc == 2
        assert capsys.readouterr().err.startswith("ConfigError:")

    def test_wrong_checkpoint_kind_rejected(self, work, tmp_path, capsys):
        rc = cli.main(["train-akg", "--cache", str(work["cache"]),
                       "--pke", str(work["akg"]),
                       "--out", str(tmp_path / "x.ckpt")] + TINY_SETS)
        assert rc == 2
        assert capsys.readouterr().err.startswith("CheckpointError:")

    def test_out_dir_reports(self, work, tmp_path):
        out = tmp_path / "reports"
        rc = cli.main(["train-pke", "--cache", str(work["cache"]),
                       "--out", str(tmp_path / "m.ckpt"),
                       "--out-dir", str(out)] + TINY_SETS)
        assert rc == 0
        assert (out / "pke_loss.tsv").exists()
        assert (out / "pke_eval.tsv").exists()
        assert (out / "pke_loss.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        header = (out / "pke_loss.tsv").read_text().splitlines()[0]
        assert header == "step\tloss"

    def test_config_file_applies(self, work, tmp_path, capsys):
        cfgf = tmp_path / "run.cfg"
        cfgf.write_text("train.steps_pke = 2\ntrain.eval_every = 2\n"
                        "d_enc = 16\nenc_blocks = 1\nenc_heads = 2\n"
                        "bilstm_hidden = 8\nwarmup_pke = 5\n")
        rc = cli.main(["train-pke", "--cache", str(work["cache"]),
                       "--out", str(tmp_path / "m.ckpt"), "--config", str(cfgf)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "step 2" in out and "step 3" not in out


class TestPredict:
    def test_predict_schema_and_invariants(self, work, tmp_path):
        preds = tmp_path / "preds.jsonl"
        rc = cli.main(["predict", "--input", str(work["cache"]),
                       "--pke", str(work["pke"]), "--akg", str(work["akg"]),
                       "--out", str(preds)])
        assert rc == 0
        cache = read_cache(str(work["cache"]))
        by_id = {ex.doc_id: ex for ex in cache.examples}
        lines = preds.read_text().strip().splitlines()
        assert len(lines) == len(cache.examples)
        for line in lines:
            rec = json.loads(line)
            assert set(rec) == {"id", "present", "absent", "selected"}
            ex = by_id[rec["id"]]
            for entry in rec["present"]:
                pos, phrase = entry["position"], entry["phrase"]
                assert ex.tokens[pos:pos + len(phrase)] == phrase
            assert len(rec["absent"]) <= 4  # beam width above
            for entry in rec["absent"]:
                assert isinstance(entry["score"], float)
            assert all(0 <= s < len(ex.sentence_spans) for s in rec["selected"])

    def test_predict_raw_and_cache_inputs_agree(self, work, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for src, dst in ((work["cache"], a), (work["raw"], b)):
            rc = cli.main(["predict", "--input", str(src),
                           "--pke", str(work["pke"]), "--akg", str(work["akg"]),
                           "--out", str(dst)])
            assert rc == 0
        assert a.read_bytes() == b.read_bytes()

    def test_predict_twice_identical(self, work, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for dst in (a, b):
            rc = cli.main(["predict", "--input", str(work["cache"]),
                           "--pke", str(work["pke"]), "--akg", str(work["akg"]),
                           "--out", str(dst)])
            assert rc == 0
        assert a.read_bytes() == b.read_bytes()

    def test_beam_override(self, work, tmp_path):
        preds = tmp_path / "preds.jsonl"
        rc = cli.main(["predict", "--input", str(work["cache"]),
                       "--pke", str(work["pke"]), "--akg", str(work["akg"]),
                       "--out", str(preds), "--set", "beam.width=2"])
        assert rc == 0
        for line in preds.read_text().strip().splitlines():
            assert len(json.loads(line)["absent"]) <= 2

    def test_swapped_checkpoints_rejected(self, work, tmp_path, capsys):
        rc = cli.main(["predict", "--input", str(work["cache"]),
                       "--pke", str(work["akg"]), "--akg", str(work["pke"]),
                       "--out", str(tmp_path / "p.jsonl")])
        assert rc == 2
        assert capsys.readouterr().err.startswith("CheckpointError:")


class TestEval:
    @pytest.fixture()
    def gold_preds(self, work, tmp_path):
        """Predictions equal to the gold annotations."""
        cache = read_cache(str(work["cache"]))
        path = tmp_path / "gold_preds.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for ex in cache.examples:
                rec = {
                    "id": ex.doc_id,
                    "present": [{"phrase": list(p), "position": pos[0] if isinstance(pos, list) else pos}
                                for p, pos in ex.present],
                    "absent": [{"phrase": list(p), "score": -1.0} for p in ex.absent],
                    "selected": [],
                }
                fh.write(json.dumps(rec) + "\n")
        return path

    def test_perfect_predictions_score_one(self, work, gold_preds, capsys):
        rc = cli.main(["eval", "--cache", str(work["cache"]), "--preds", str(gold_preds)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "present_f1@M" in out
        for line in out.splitlines():
            if line.startswith(("present_f1@M", "absent_recall@50")):
                assert "1.000000" in line

    def test_metrics_tsv_written(self, work, gold_preds, tmp_path):
        out = tmp_path / "rep"
        rc = cli.main(["eval", "--cache", str(work["cache"]),
                       "--preds", str(gold_preds), "--out-dir", str(out)])
        assert rc == 0
        lines = (out / "metrics.tsv").read_text().strip().splitlines()
        assert lines[0] == "metric\tvalue"
        assert any(l.startswith("present_f1@M\t1.000000") for l in lines)

    def test_id_mismatch_lists_offenders(self, work, gold_preds, tmp_path, capsys):
        kept = gold_preds.read_text().strip().splitlines()[1:]
        bad = tmp_path / "bad.jsonl"
        extra = json.dumps({"id": "ghost-doc", "present": [], "absent": []})
        bad.write_text("\n".join(kept + [extra]) + "\n")
        rc = cli.main(["eval", "--cache", str(work["cache"]), "--preds", str(bad)])
        assert rc == 2
        err = capsys.readouterr().err
        assert err.startswith("DataError:")
        assert "toy-00-00" in err and "ghost-doc" in err

    def test_sweep_emits_rows_and_files(self, work, tmp_path, capsys):
        out = tmp_path / "rep"
        rc = cli.main(["eval", "--cache", str(work["cache"]), "--sweep-k", "2..5",
                       "--pke", str(work["pke"]), "--out-dir", str(out)])
        assert rc == 0
        lines = (out / "sweep.tsv").read_text().strip().splitlines()
        assert lines[0] == "K\tF1@M"
        ks = [int(l.split("\t")[0]) for l in lines[1:]]
        assert ks == [2, 3, 4, 5]
        for l in lines[1:]:
            assert 0.0 <= float(l.split("\t")[1]) <= 1.0
        assert (out / "sweep.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_sweep_requires_pke(self, work, capsys):
        rc = cli.main(["eval", "--cache", str(work["cache"]), "--sweep-k", "1..3"])
        assert rc == 2
        assert capsys.readouterr().err.startswith("ConfigError:")

    def test_bad_sweep_range(self, work, capsys):
        rc = cli.main(["eval", "--cache", str(work["cache"]), "--sweep-k", "5..2",
                       "--pke", str(work["pke"])])
        assert rc == 2
        assert capsys.readouterr().err.startswith("ConfigError:")

    def test_eval_needs_preds_or_sweep(self, work, capsys):
        rc = cli.main(["eval", "--cache", str(work["cache"])])
        assert rc == 2
        assert capsys.readouterr().err.startswith("ConfigError:")
