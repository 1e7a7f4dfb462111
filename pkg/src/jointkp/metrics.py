"""Evaluation: macro-averaged P/R/F1 at k, F1 over all predictions, R@k.

Predictions and gold are normalized token tuples. Matching is exact
token-sequence equality, optionally after Porter-stemming each token
(conventions differ across the literature, so both are runnable). Documents
with an empty gold set are skipped, not scored zero, and the macro average
runs over non-skipped documents only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

_VOWELS = set("aeiou")


def _cons(w: str, i: int) -> bool:
    ch = w[i]
    if ch in _VOWELS:
        return False
    if ch == "y":
        return i == 0 or not _cons(w, i - 1)
    return True


def _measure(stem: str) -> int:
    """Number of vowel-consonant alternations (the m of [C](VC)^m[V])."""
    m = 0
    prev_cons = None
    for i in range(len(stem)):
        c = _cons(stem, i)
        if prev_cons is not None and prev_cons is False and c:
            m += 1
        prev_cons = c
    return m


def _has_vowel(stem: str) -> bool:
    return any(not _cons(stem, i) for i in range(len(stem)))


def _double_cons(w: str) -> bool:
    return len(w) >= 2 and w[-1] == w[-2] and _cons(w, len(w) - 1)


def _cvc(w: str) -> bool:
    if len(w) < 3:
        return False
    return (_cons(w, len(w) - 3) and not _cons(w, len(w) - 2)
            and _cons(w, len(w) - 1) and w[-1] not in "wxy")


_STEP2 = [("ational", "ate"), ("tional", "tion"), ("enci", "ence"), ("anci", "ance"),
          ("izer", "ize"), ("abli", "able"), ("alli", "al"), ("entli", "ent"),
          ("eli", "e"), ("ousli", "ous"), ("ization", "ize"), ("ation", "ate"),
          ("ator", "ate"), ("alism", "al"), ("iveness", "ive"), ("fulness", "ful"),
          ("ousness", "ous"), ("aliti", "al"), ("iviti", "ive"), ("biliti", "ble")]

_STEP3 = [("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"),
          ("ical", "ic"), ("ful", ""), ("ness", "")]

_STEP4 = ["al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement",
          "ment", "ent", "ion", "ou", "ism", "ate", "iti", "ous", "ive", "ize"]


def porter_stem(word: str) -> str:
    """Classic suffix-stripping stemmer; non-alphabetic tokens pass through."""
    w = word
    if len(w) <= 2 or not w.isalpha():
        return w

    # step 1a: plurals
    if w.endswith("sses"):
        w = w[:-2]
    elif w.endswith("ies"):
        w = w[:-2]
    elif not w.endswith("ss") and w.endswith("s"):
        w = w[:-1]

    # step 1b: -ed / -ing
    cleanup = False
    if w.endswith("eed"):
        if _measure(w[:-3]) > 0:
            w = w[:-1]
    elif w.endswith("ed") and _has_vowel(w[:-2]):
        w = w[:-2]
        cleanup = True
    elif w.endswith("ing") and _has_vowel(w[:-3]):
        w = w[:-3]
        cleanup = True
    if cleanup:
        if w.endswith(("at", "bl", "iz")):
            w += "e"
        elif _double_cons(w) and w[-1] not in "lsz":
            w = w[:-1]
        elif _measure(w) == 1 and _cvc(w):
            w += "e"

    # step 1c: terminal y
    if w.endswith("y") and _has_vowel(w[:-1]):
        w = w[:-1] + "i"

    for suf, rep in _STEP2:
        if w.endswith(suf):
            if _measure(w[:-len(suf)]) > 0:
                w = w[:-len(suf)] + rep
            break
    for suf, rep in _STEP3:
        if w.endswith(suf):
            if _measure(w[:-len(suf)]) > 0:
                w = w[:-len(suf)] + rep
            break
    for suf in _STEP4:
        if w.endswith(suf):
            stem = w[:-len(suf)]
            if _measure(stem) > 1:
                if suf == "ion" and not stem.endswith(("s", "t")):
                    break
                w = stem
            break

    # step 5a: terminal e
    if w.endswith("e"):
        m = _measure(w[:-1])
        if m > 1 or (m == 1 and not _cvc(w[:-1])):
            w = w[:-1]
    # step 5b: terminal double l
    if _measure(w) > 1 and _double_cons(w) and w.endswith("l"):
        w = w[:-1]
    return w


@dataclass
class EvalConfig:
    k_values: list = field(default_factory=lambda: [5, 10])
    stem: bool = False
    dedup: bool = True

    def __post_init__(self):
        if any(k < 1 for k in self.k_values):
            raise ValueError("k values must be positive")


@dataclass
class DocScore:
    precision: float
    recall: float
    f1: float
    used: int
    correct: int
    gold: int


def _key(phrase, stem: bool):
    return tuple(porter_stem(t) for t in phrase) if stem else tuple(phrase)


def _dedup(preds, stem: bool):
    seen = set()
    out = []
    for p in preds:
        k = _key(p, stem)
        if k not in seen:
            seen.add(k)
            out.append(p)
    return out


def match(preds, gold, stem: bool = False, dedup: bool = True) -> list[bool]:
    """Per-prediction hit flags against the gold set (deduplicated preds)."""
    if dedup:
        preds = _dedup(preds, stem)
    gold_keys = {_key(g, stem) for g in gold}
    return [_key(p, stem) in gold_keys for p in preds]


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def f1_at_k(preds, gold, k: int, stem: bool = False, dedup: bool = True) -> DocScore | None:
    """Score the top-min(k, available) predictions; None when gold is empty
    (the document is skipped from macro averaging)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    gold_keys = {_key(g, stem) for g in gold}
    if not gold_keys:
        return None
    if dedup:
        preds = _dedup(preds, stem)
    top = preds[:k]
    if not top:
        return DocScore(0.0, 0.0, 0.0, 0, 0, len(gold_keys))
    correct = sum(1 for p in top if _key(p, stem) in gold_keys)
    precision = correct / len(top)
    recall = correct / len(gold_keys)
    return DocScore(precision, recall, _f1(precision, recall), len(top), correct, len(gold_keys))


def f1_at_m(preds, gold, stem: bool = False, dedup: bool = True) -> DocScore | None:
    """F1 with the cutoff equal to the number of predictions made."""
    if dedup:
        preds = _dedup(preds, stem)
    gold_keys = {_key(g, stem) for g in gold}
    if not gold_keys:
        return None
    if not preds:
        return DocScore(0.0, 0.0, 0.0, 0, 0, len(gold_keys))
    return f1_at_k(preds, gold, len(preds), stem=stem, dedup=False)


def recall_at_k(preds, gold, k: int = 50, stem: bool = False, dedup: bool = True) -> float | None:
    """|top-k hits| / |gold|; None when gold is empty (skipped)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    gold_keys = {_key(g, stem) for g in gold}
    if not gold_keys:
        return None
    if dedup:
        preds = _dedup(preds, stem)
    found = {_key(p, stem) for p in preds[:k]} & gold_keys
    return len(found) / len(gold_keys)


def macro_average(values) -> float | None:
    """Unweighted mean over non-skipped entries; None when every document
    was skipped (undefined, never reported as zero)."""
    kept = [v for v in values if v is not None]
    if not kept:
        return None
    return sum(kept) / len(kept)
