import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointkp import corpus as cp


class TestNormalize:
    def test_digits_collapse_to_placeholder(self):
        assert cp.normalize("Training 12 GPUs.") == ["training", "<digit>", "gpus", "."]

    def test_empty_text(self):
        assert cp.normalize("") == []

    def test_lowercasing(self):
        assert cp.normalize("ABC abc") == ["abc", "abc"]

    def test_punctuation_kept_as_tokens(self):
        assert cp.normalize("end-to-end, yes!") == ["end", "-", "to", "-", "end", ",", "yes", "!"]

    def test_mixed_alnum_splits(self):
        assert cp.normalize("bert4rec v2") == ["bert", "<digit>", "rec", "v", "<digit>"]

    @settings(max_examples=60, deadline=None)
    @given(st.text(max_size=80))
    def test_idempotent(self, text):
        once = cp.normalize(text)
        assert cp.normalize(" ".join(once)) == once


class TestSentenceSplit:
    def test_two_terminated_sentences(self):
        assert cp.split_sentences(["a", ".", "b", "."]) == [(0, 2), (2, 4)]

    def test_no_terminator_single_span(self):
        assert cp.split_sentences(["a", "b", "c"]) == [(0, 3)]

    def test_consecutive_terminators_make_tiny_spans(self):
        assert cp.split_sentences(["a", ".", ".", "b"]) == [(0, 2), (2, 3), (3, 4)]

    def test_empty_tokens(self):
        assert cp.split_sentences([]) == []

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.sampled_from(["a", "b", ".", "!", "?", ";"]), max_size=30))
    def test_spans_partition_tokens(self, tokens):
        spans = cp.split_sentences(tokens)
        covered = [i for s, e in spans for i in range(s, e)]
        assert covered == list(range(len(tokens)))
        assert all(e > s for s, e in spans)


class TestPresentAbsentSplit:
    def test_contiguous_phrase_is_present(self):
        tokens = cp.normalize("we study abstract machines for reduction")
        present, absent, skipped = cp.split_present_absent(
            tokens, [cp.normalize("abstract machines"), cp.normalize("operational semantics")])
        assert [p for p, _ in present] == [("abstract", "machines")]
        assert present[0][1] == [2]
        assert absent == [("operational", "semantics")]
        assert skipped == 0

    def test_whole_document_phrase(self):
        tokens = ["a", "b"]
        present, _, _ = cp.split_present_absent(tokens, [["a", "b"]])
        assert present == [(("a", "b"), [0])]

    def test_noncontiguous_tokens_are_absent(self):
        tokens = ["x", "a", "z", "b"]
        present, absent, _ = cp.split_present_absent(tokens, [["a", "b"]])
        assert present == [] and absent == [("a", "b")]

    def test_empty_phrase_skipped_and_counted(self):
        _, _, skipped = cp.split_present_absent(["a"], [[], ["a"]])
        assert skipped == 1

    def test_duplicates_collapse(self):
        present, absent, _ = cp.split_present_absent(["a"], [["a"], ["a"], ["b"], ["b"]])
        assert len(present) == 1 and len(absent) == 1

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.sampled_from("abcd"), min_size=1, max_size=12),
           st.lists(st.lists(st.sampled_from("abcd"), min_size=1, max_size=3), max_size=6))
    def test_partition_property(self, tokens, phrases):
        present, absent, _ = cp.split_present_absent(tokens, phrases)
        p_set = {p for p, _ in present}
        a_set = set(absent)
        assert not (p_set & a_set)
        assert p_set | a_set == {tuple(p) for p in phrases if p}


class TestIobLabels:
    def test_single_occurrence(self):
        tags = cp.make_iob_labels(["x", "a", "b", "y"], [(("a", "b"), [1])])
        assert tags == ["O", "B", "I", "O"]

    def test_no_phrases_all_outside(self):
        assert cp.make_iob_labels(["x", "y"], []) == ["O", "O"]

    def test_overlap_keeps_earliest_drops_rest(self):
        tags = cp.make_iob_labels(["x", "a", "b", "y"], [(("a", "b"), [1]), (("b", "y"), [2])])
        assert tags == ["O", "B", "I", "O"]

    def test_equal_start_longer_wins(self):
        tags = cp.make_iob_labels(["a", "b", "c"], [(("a",), [0]), (("a", "b"), [0])])
        assert tags == ["B", "I", "O"]

    def test_adjacent_phrases_both_kept(self):
        tags = cp.make_iob_labels(["a", "b", "c", "d"], [(("a", "b"), [0]), (("c", "d"), [2])])
        assert tags == ["B", "I", "B", "I"]

    def test_every_i_follows_b_or_i(self):
        toks = ["a", "b", "a", "b", "c"]
        tags = cp.make_iob_labels(toks, [(("a", "b"), [0, 2]), (("b", "c"), [3])])
        for i, t in enumerate(tags):
            if t == "I":
                assert tags[i - 1] in ("B", "I")


class TestSentenceLabels:
    def test_overlap_marks_sentence(self):
        spans = [(0, 3), (3, 6)]
        labels = cp.make_sentence_labels(spans, [(("a",), [4])])
        assert labels == [0, 1]

    def test_no_phrases_all_zero(self):
        assert cp.make_sentence_labels([(0, 2), (2, 4)], []) == [0, 0]

    def test_straddling_occurrence_marks_both(self):
        spans = [(0, 2), (2, 4), (4, 6), (6, 8)]
        labels = cp.make_sentence_labels(spans, [(("p", "q"), [5])])
        assert labels == [0, 0, 1, 1]


class TestVocabulary:
    def test_reserved_ids_fixed(self):
        v = cp.Vocabulary(["alpha"])
        assert v.token_to_id["<pad>"] == cp.PAD_ID == 0
        assert v.token_to_id["<unk>"] == cp.UNK_ID == 1
        assert v.token_to_id["<sos>"] == cp.SOS_ID == 2
        assert v.token_to_id["</s>"] == cp.EOS_ID == 3
        assert v.token_to_id["<cls>"] == cp.CLS_ID == 4
        assert v.token_to_id["<sep>"] == cp.SEP_ID == 5
        assert v.token_to_id["alpha"] == 6

    def test_unknown_maps_to_unk(self):
        v = cp.Vocabulary(["alpha"])
        assert v.encode(["alpha", "missing"]) == [6, cp.UNK_ID]

    def test_frequency_then_first_seen_order(self):
        counts = {"b": 3, "a": 3, "c": 9}
        first = {"b": 0, "a": 1, "c": 2}
        v = cp.Vocabulary.from_counts(counts, first, 10)
        assert v.content_tokens() == ["c", "b", "a"]

    def test_cap_applies_to_content_only(self):
        counts = {t: 1 for t in "abcde"}
        first = {t: i for i, t in enumerate("abcde")}
        v = cp.Vocabulary.from_counts(counts, first, 10)
        assert len(v) == 5 + 6

    def test_roundtrip_encode_decode(self):
        v = cp.Vocabulary(["x", "y"])
        assert v.decode(v.encode(["x", "y"])) == ["x", "y"]


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


class TestBuildCorpus:
    def test_basic_build_and_labels(self, tmp_path):
        p = tmp_path / "docs.jsonl"
        write_jsonl(p, [{
            "id": "d1",
            "title": "Abstract machines",
            "abstract": "We survey abstract machines. Semantics are discussed",
            "keyphrases": ["abstract machines", "operational semantics"],
        }])
        c = cp.build_corpus(str(p), vocab_size=100)
        ex = c.examples[0]
        assert ex.tokens[:3] == ["abstract", "machines", "."]
        assert ex.sentence_labels[0] == 1
        assert [p_ for p_, _ in ex.present] == [("abstract", "machines")]
        assert ex.absent == [("operational", "semantics")]

    def test_truncation_to_max_len(self, tmp_path):
        p = tmp_path / "docs.jsonl"
        write_jsonl(p, [{"title": "t", "abstract": " ".join(f"w{i}" for i in range(700)), "keyphrases": []}])
        c = cp.build_corpus(str(p), vocab_size=5000, max_len=512)
        assert len(c.examples[0].tokens) == 512

    def test_malformed_records_skipped_and_counted(self, tmp_path):
        p = tmp_path / "docs.jsonl"
        with open(p, "w") as fh:
            fh.write("not json\n")
            fh.write(json.dumps({"title": "t", "abstract": "a b", "keyphrases": []}) + "\n")
            fh.write(json.dumps({"title": "t", "abstract": "a"}) + "\n")
        c = cp.build_corpus(str(p), vocab_size=10)
        assert len(c.examples) == 1
        assert c.skipped_records == 2

    def test_generator_vocab_covers_absent_phrases(self, tmp_path):
        p = tmp_path / "docs.jsonl"
        write_jsonl(p, [{"title": "alpha", "abstract": "beta gamma", "keyphrases": ["delta epsilon"]}])
        c = cp.build_corpus(str(p), vocab_size=100)
        assert "delta" not in c.encoder_vocab
        assert "delta" in c.generator_vocab

    def test_deterministic_vocabulary(self, tmp_path):
        p = tmp_path / "docs.jsonl"
        write_jsonl(p, [{"title": "a b", "abstract": "c a b c c", "keyphrases": ["a b"]}] * 3)
        c1 = cp.build_corpus(str(p), vocab_size=50)
        c2 = cp.build_corpus(str(p), vocab_size=50)
        assert c1.encoder_vocab.id_to_token == c2.encoder_vocab.id_to_token
        assert c1.generator_vocab.content_hash() == c2.generator_vocab.content_hash()


class TestCache:
    def test_roundtrip_and_byte_identity(self, tmp_path):
        src = tmp_path / "docs.jsonl"
        write_jsonl(src, [{
            "id": "d7",
            "title": "Gated fusion networks",
            "abstract": "We fuse 2 encoders. Gated fusion helps",
            "keyphrases": ["gated fusion", "pointer networks"],
        }])
        c = cp.build_corpus(str(src), vocab_size=64)
        out1, out2 = tmp_path / "c1.jsonl", tmp_path / "c2.jsonl"
        cp.write_cache(c, str(out1))
        back = cp.read_cache(str(out1))
        cp.write_cache(back, str(out2))
        assert out1.read_bytes() == out2.read_bytes()
        ex0, ex1 = c.examples[0], back.examples[0]
        assert ex0 == ex1
        assert back.encoder_vocab.id_to_token == c.encoder_vocab.id_to_token

    def test_version_mismatch_rejected(self, tmp_path):
        f = tmp_path / "bad.jsonl"
        f.write_text('{"format_version": 99}\n')
        from jointkp.errors import DataError
        with pytest.raises(DataError):
            cp.read_cache(str(f))
