"""Deterministic synthetic corpus for smoke tests and memorization runs.

Construction rules that make perfect scores attainable:
  * phrase tokens are fabricated words that appear only inside keyphrases,
  * context words never appear inside any keyphrase,
  * every document has exactly seven sentences that contain a present
    phrase (the default sentence budget) plus two distractor sentences, so
    a converged filter passes exactly the phrase-bearing sentences to the
    tagger, matching how the tagger was trained,
  * distractor sentences recombine the same context words the positive
    templates use, never introducing words the span training cannot see,
  * absent phrases are anchored to their topic, so eight documents per
    topic reinforce the same generation target,
  * topic vocabularies are disjoint, so no phrase leaks across topics.

Each topic carries two present phrases (a bigram and a unigram), one absent
bigram whose first token also occurs in the document (a pure copy target),
and on even topics an extra absent unigram that never occurs in any
document (a pure generation target).
"""

from __future__ import annotations

import json

import numpy as np

# three coprime syllable tables -> words unique for ids < 3120
_S1 = ("ba", "ce", "di", "fo", "gu", "ka", "le", "mi",
       "no", "pu", "ra", "se", "ti", "vo", "wa", "ze")
_S2 = ("bel", "cor", "dun", "fal", "gor", "hin", "jul", "kem",
       "lor", "mun", "nax", "pol", "quin", "rul", "sym")
_S3 = ("da", "fe", "gi", "ho", "ju", "ko", "lu", "ma",
       "ne", "pi", "ro", "su", "te")


def _word(i: int) -> str:
    return _S1[i % 16] + _S2[i % 15] + _S3[i % 13]


# distractors reuse only words the positive templates already carry
_FILLERS = (
    "the module improves across settings",
    "we propose robust analysis for this task",
    "our design improves the results",
    "this task improves across 12 settings",
    "the results for robust analysis",
    "we evaluate the design on standard benchmarks",
    "our framework generalizes across domains",
    "the core variants share this module",
)


def topic_phrases(t: int) -> dict:
    """Fixed phrase inventory for topic `t`."""
    w = [_word(6 * t + i) for i in range(6)]
    present_a = (w[0], w[1])
    present_b = (w[2],)
    absent_copy = (w[1], w[4])  # first token occurs in the text, second never does
    absent_gen = (w[5],)
    out = {
        "present": [present_a, present_b],
        "absent": [absent_copy],
    }
    if t % 2 == 0:
        out["absent"].append(absent_gen)
    return out


def toy_records(seed: int = 13, n_topics: int = 8, docs_per_topic: int = 8) -> list[dict]:
    rng = np.random.default_rng(seed)
    records = []
    for t in range(n_topics):
        ph = topic_phrases(t)
        a = " ".join(ph["present"][0])
        b = " ".join(ph["present"][1])
        for j in range(docs_per_topic):
            positives = [
                f"we propose {a} for this task",
                f"the {b} module improves results",
                f"our {a} design complements {b} across 12 settings",
                f"we evaluate {a} on standard benchmarks",
                f"the {b} framework generalizes across domains",
                f"{a} variants share the {b} core",
            ]
            fillers = rng.choice(len(_FILLERS), size=2, replace=False)
            slots = sorted(rng.choice(len(positives) + 1, size=2, replace=True))
            sentences = list(positives)
            sentences.insert(int(slots[1]), _FILLERS[fillers[1]])
            sentences.insert(int(slots[0]), _FILLERS[fillers[0]])
            keyphrases = [a, b] + [" ".join(p) for p in ph["absent"]]
            records.append({
                "id": f"toy-{t:02d}-{j:02d}",
                "title": f"{a} for robust analysis",
                "abstract": ". ".join(sentences) + ".",
                "keyphrases": keyphrases,
            })
    return records


def write_toy_corpus(path: str, seed: int = 13, n_topics: int = 8,
                     docs_per_topic: int = 8) -> int:
    records = toy_records(seed=seed, n_topics=n_topics, docs_per_topic=docs_per_topic)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
    return len(records)
