"""Corpus ingestion: normalization, sentence splitting, phrase labeling, vocab.

Documents arrive as JSON records (`title`, `abstract`, `keyphrases`, optional
`id`) one per line. Preparation produces, per document, the token sequence,
sentence spans, the present/absent split of the gold phrases, IOB tags for
present occurrences, and binary per-sentence labels; plus two frequency-built
vocabularies (encoder side over document tokens, generator side additionally
covering gold phrase tokens so generation targets stay representable).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from hashlib import sha256

from .errors import DataError

DIGIT_TOKEN = "<digit>"
SENTENCE_ENDERS = {".", "!", "?", ";"}

# Reserved ids shared by both vocabularies.
RESERVED_TOKENS = ("<pad>", "<unk>", "<sos>", "</s>", "<cls>", "<sep>")
PAD_ID, UNK_ID, SOS_ID, EOS_ID, CLS_ID, SEP_ID = range(6)

# <digit> first so normalization is idempotent; then letter runs, digit runs,
# single punctuation, and bare underscores (']' etc. count as punctuation).
_TOKEN_RE = re.compile(r"<digit>|[^\W\d_]+|\d+|[^\w\s]|_")


def normalize(text: str) -> list[str]:
    """Lowercase and tokenize; every maximal digit run becomes `<digit>`."""
    out = []
    for m in _TOKEN_RE.finditer(text.lower()):
        tok = m.group(0)
        out.append(DIGIT_TOKEN if tok.isdigit() else tok)
    return out


def split_sentences(tokens: list[str]) -> list[tuple[int, int]]:
    """Spans [start, end) cut after ., !, ? or ;. A trailing unterminated
    run still forms a span; consecutive enders give one-token spans."""
    spans = []
    start = 0
    for i, tok in enumerate(tokens):
        if tok in SENTENCE_ENDERS:
            spans.append((start, i + 1))
            start = i + 1
    if start < len(tokens):
        spans.append((start, len(tokens)))
    return spans


def _occurrences(tokens: list[str], phrase: tuple[str, ...]) -> list[int]:
    n, m = len(tokens), len(phrase)
    return [i for i in range(n - m + 1) if tuple(tokens[i:i + m]) == phrase]


def split_present_absent(tokens: list[str], keyphrases: list[list[str]]):
    """Partition normalized gold phrases by contiguous occurrence.

    Returns (present, absent, skipped) where present items are
    (phrase tokens, occurrence start positions), absent items are phrase
    token tuples, and skipped counts phrases that normalized to nothing.
    Phrases are deduplicated, first occurrence kept.
    """
    seen = set()
    present, absent = [], []
    skipped = 0
    for phrase in keyphrases:
        key = tuple(phrase)
        if not key:
            skipped += 1
            continue
        if key in seen:
            continue
        seen.add(key)
        pos = _occurrences(tokens, key)
        if pos:
            present.append((key, pos))
        else:
            absent.append(key)
    return present, absent, skipped


def make_iob_labels(tokens: list[str], present) -> list[str]:
    """Tag occurrence tokens B then I, everything else O.

    Occurrences are taken earliest-start-first, longer first on equal
    starts; an occurrence touching any already-tagged token is dropped
    entirely (never partially tagged).
    """
    occs = []
    for phrase, positions in present:
        for p in positions:
            occs.append((p, len(phrase)))
    occs.sort(key=lambda se: (se[0], -se[1]))
    tags = ["O"] * len(tokens)
    for start, length in occs:
        if any(tags[i] != "O" for i in range(start, start + length)):
            continue
        tags[start] = "B"
        for i in range(start + 1, start + length):
            tags[i] = "I"
    return tags


def make_sentence_labels(sentence_spans, present) -> list[int]:
    """1 when a span overlaps any present occurrence; a straddling
    occurrence marks both sentences."""
    labels = [0] * len(sentence_spans)
    for phrase, positions in present:
        m = len(phrase)
        for p in positions:
            for i, (s, e) in enumerate(sentence_spans):
                if p < e and p + m > s:
                    labels[i] = 1
    return labels


class Vocabulary:
    """Token/id bijection with six reserved leading ids.

    Content tokens are ordered by descending frequency, ties by first
    appearance, and capped by `vocab_size` (reserved ids don't count
    against the cap).
    """

    def __init__(self, content_tokens: list[str]):
        self.id_to_token = list(RESERVED_TOKENS) + list(content_tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise DataError("duplicate token in vocabulary")

    @classmethod
    def from_counts(cls, counts: dict, first_seen: dict, vocab_size: int) -> "Vocabulary":
        ordered = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))
        ordered = [t for t in ordered if t not in RESERVED_TOKENS]
        return cls(ordered[:vocab_size])

    def encode(self, tokens: list[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token: str):
        return token in self.token_to_id

    def content_tokens(self) -> list[str]:
        return self.id_to_token[len(RESERVED_TOKENS):]

    def content_hash(self) -> str:
        return sha256("\n".join(self.id_to_token).encode("utf-8")).hexdigest()


@dataclass
class Example:
    """One prepared document: tokens plus everything training needs."""

    doc_id: str
    tokens: list[str]
    sentence_spans: list[tuple[int, int]]
    present: list[tuple[tuple[str, ...], list[int]]]
    absent: list[tuple[str, ...]]
    iob_tags: list[str]
    sentence_labels: list[int]


@dataclass
class Corpus:
    examples: list[Example]
    encoder_vocab: Vocabulary
    generator_vocab: Vocabulary
    skipped_records: int = 0
    skipped_phrases: int = 0
    max_len: int = 512
    meta: dict = field(default_factory=dict)


def prepare_document(doc_id: str, title: str, abstract: str, keyphrases, max_len: int = 512) -> tuple[Example, int]:
    """Join title and abstract with a period (the title becomes its own
    sentence), truncate, and label."""
    tokens = (normalize(title) + ["."] + normalize(abstract))[:max_len]
    spans = split_sentences(tokens)
    phrases = [normalize(" ".join(kp) if isinstance(kp, list) else kp) for kp in keyphrases]
    present, absent, skipped = split_present_absent(tokens, phrases)
    ex = Example(
        doc_id=doc_id,
        tokens=tokens,
        sentence_spans=spans,
        present=present,
        absent=[tuple(a) for a in absent],
        iob_tags=make_iob_labels(tokens, present),
        sentence_labels=make_sentence_labels(spans, present),
    )
    return ex, skipped


def _parse_record(line: str):
    rec = json.loads(line)
    if not isinstance(rec, dict):
        raise DataError("record is not an object")
    for key in ("title", "abstract", "keyphrases"):
        if key not in rec:
            raise DataError(f"record missing field '{key}'")
    if not str(rec["title"]).strip() or not str(rec["abstract"]).strip():
        raise DataError("empty title or abstract")
    if not isinstance(rec["keyphrases"], list):
        raise DataError("keyphrases must be a list")
    return rec


def build_corpus(path: str, vocab_size: int = 50000, max_len: int = 512) -> Corpus:
    """Read one JSON record per line and produce labeled examples plus the
    encoder/generator vocabulary pair. Malformed records are skipped and
    counted, deterministically given input order."""
    examples = []
    skipped_records = 0
    skipped_phrases = 0
    enc_counts, enc_first = {}, {}
    gen_counts, gen_first = {}, {}
    order = 0

    def count(tokens, counts, first):
        nonlocal order
        for t in tokens:
            counts[t] = counts.get(t, 0) + 1
            if t not in first:
                first[t] = order
                order += 1

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                rec = _parse_record(line)
            except (json.JSONDecodeError, DataError):
                skipped_records += 1
                continue
            doc_id = str(rec.get("id", f"doc{lineno:05d}"))
            ex, skipped = prepare_document(doc_id, rec["title"], rec["abstract"], rec["keyphrases"], max_len)
            skipped_phrases += skipped
            examples.append(ex)
            count(ex.tokens, enc_counts, enc_first)
            count(ex.tokens, gen_counts, gen_first)
            for phrase, _ in ex.present:
                count(phrase, gen_counts, gen_first)
            for phrase in ex.absent:
                count(phrase, gen_counts, gen_first)

    return Corpus(
        examples=examples,
        encoder_vocab=Vocabulary.from_counts(enc_counts, enc_first, vocab_size),
        generator_vocab=Vocabulary.from_counts(gen_counts, gen_first, vocab_size),
        skipped_records=skipped_records,
        skipped_phrases=skipped_phrases,
        max_len=max_len,
    )


CACHE_VERSION = 1


def write_cache(corpus: Corpus, path: str):
    """Line-based cache: a version header, then one record per example.
    Byte-identical across runs for identical inputs."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "format_version": CACHE_VERSION,
            "encoder_vocab": corpus.encoder_vocab.content_tokens(),
            "generator_vocab": corpus.generator_vocab.content_tokens(),
            "max_len": corpus.max_len,
            "skipped_records": corpus.skipped_records,
            "skipped_phrases": corpus.skipped_phrases,
        }
        fh.write(json.dumps(header, sort_keys=True, ensure_ascii=False) + "\n")
        for ex in corpus.examples:
            rec = {
                "id": ex.doc_id,
                "tokens": ex.tokens,
                "sentence_spans": [list(s) for s in ex.sentence_spans],
                "present": [{"tokens": list(p), "positions": pos} for p, pos in ex.present],
                "absent": [list(a) for a in ex.absent],
                "iob_tags": "".join(ex.iob_tags),
                "sentence_labels": ex.sentence_labels,
            }
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def read_cache(path: str) -> Corpus:
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line:
            raise DataError(f"empty cache file: {path}")
        header = json.loads(header_line)
        if header.get("format_version") != CACHE_VERSION:
            raise DataError(f"unsupported cache version {header.get('format_version')!r}")
        examples = []
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            examples.append(Example(
                doc_id=rec["id"],
                tokens=rec["tokens"],
                sentence_spans=[tuple(s) for s in rec["sentence_spans"]],
                present=[(tuple(p["tokens"]), list(p["positions"])) for p in rec["present"]],
                absent=[tuple(a) for a in rec["absent"]],
                iob_tags=list(rec["iob_tags"]),
                sentence_labels=list(rec["sentence_labels"]),
            ))
    return Corpus(
        examples=examples,
        encoder_vocab=Vocabulary(header["encoder_vocab"]),
        generator_vocab=Vocabulary(header["generator_vocab"]),
        skipped_records=header.get("skipped_records", 0),
        skipped_phrases=header.get("skipped_phrases", 0),
        max_len=header.get("max_len", 512),
    )
