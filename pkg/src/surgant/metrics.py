"""BLEU-1..4, ROUGE-L, METEOR, categorical accuracy and time MAE.

Sentences are tokenized with the decoder's normalizer so training and
scoring agree on what a token is. Scores are fractions in [0, 1]; the
report printer multiplies by 100.
"""
from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache

from . import _kernels
from .dataset import CATEGORIES, INSTRUMENTS, PHASES, STEPS, TIME_SCOPES
from .decoder import tokenize_words
from .errors import InputError, UndefinedMetricError

log = logging.getLogger(__name__)

BLEU_EPS = 1e-9
TEXT_METRICS = ("bleu1", "bleu2", "bleu3", "bleu4", "rougeL", "meteor")
ACCURACY_CATEGORIES = ("future-instrument", "future-step", "future-phase")
_NUMBER_RE = re.compile(r"\d+(?:\.\d+)?")


def _toks(s):
    return list(s) if isinstance(s, (list, tuple)) else tokenize_words(s)


# --------------------------------------------------------------------- BLEU

def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_precisions(candidates, references, max_n=4):
    """Corpus totals: list of (clipped matches, candidate n-grams) per order."""
    if len(candidates) != len(references):
        raise InputError(f"{len(candidates)} candidates vs {len(references)} references")
    totals = [[0, 0] for _ in range(max_n)]
    for cand, ref in zip(candidates, references):
        c, r = _toks(cand), _toks(ref)
        for n in range(1, max_n + 1):
            cc, rc = ngrams(c, n), ngrams(r, n)
            totals[n - 1][0] += sum(min(v, rc[g]) for g, v in cc.items())
            totals[n - 1][1] += max(len(c) - n + 1, 0)
    return totals


def brevity_penalty(cand_len, ref_len):
    if cand_len == 0:
        return 0.0
    return 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)


def bleu(candidates, references, n=4, eps=BLEU_EPS):
    """Corpus BLEU-n with uniform weights and epsilon-floored precisions."""
    return bleu_scores(candidates, references, n, eps)[n - 1]


def bleu_scores(candidates, references, max_n=4, eps=BLEU_EPS):
    if not 1 <= max_n <= 4:
        raise InputError(f"BLEU order must be 1..4, got {max_n}")
    totals = bleu_precisions(candidates, references, max_n)
    c_len = sum(len(_toks(c)) for c in candidates)
    r_len = sum(len(_toks(r)) for r in references)
    bp = brevity_penalty(c_len, r_len)
    logs, scores = [], []
    for num, den in totals:
        p = (num if num > 0 else eps) / (den if den > 0 else 1)
        logs.append(math.log(p))
        scores.append(bp * math.exp(math.fsum(logs) / len(logs)))
    return scores


# ------------------------------------------------------------------ ROUGE-L

def _as_ids(a, b):
    table = {}
    return ([table.setdefault(t, len(table)) for t in a],
            [table.setdefault(t, len(table)) for t in b])


def lcs_length(a, b):
    ia, ib = _as_ids(a, b)
    return _kernels.lcs_length(ia, ib)


def rouge_l(candidate, reference):
    c, r = _toks(candidate), _toks(reference)
    if not c:
        log.warning("ROUGE-L: empty candidate scored as 0")
        return 0.0
    if not r:
        return 0.0
    lcs = lcs_length(c, r)
    if lcs == 0:
        return 0.0
    p, rec = lcs / len(c), lcs / len(r)
    return 2 * p * rec / (p + rec)


def rouge_l_corpus(candidates, references):
    if len(candidates) != len(references):
        raise InputError(f"{len(candidates)} candidates vs {len(references)} references")
    return math.fsum(rouge_l(c, r) for c, r in zip(candidates, references)) / len(candidates)


# ------------------------------------------------------------------- METEOR

def meteor_alignment(candidate, reference):
    """``(matches, chunks)`` of the exact-match alignment with the most matches
    and, among those, the fewest chunks."""
    c, r = _toks(candidate), _toks(reference)
    cand_words = set(c)
    slots = [j for j, w in enumerate(r) if w in cand_words]
    bit = {j: 1 << k for k, j in enumerate(slots)}
    by_word = {}
    for j in slots:
        by_word.setdefault(r[j], []).append(j)

    @lru_cache(maxsize=None)
    def best(i, used, prev):
        # returns (matches, -chunks) to maximise lexicographically
        if i == len(c):
            return (0, 0)
        m, negc = best(i + 1, used, -1)
        top = (m, negc)
        for j in by_word.get(c[i], ()):
            if used & bit[j]:
                continue
            m, negc = best(i + 1, used | bit[j], j)
            cand = (m + 1, negc - (0 if prev >= 0 and j == prev + 1 else 1))
            if cand > top:
                top = cand
        return top

    matches, negc = best(0, 0, -1)
    best.cache_clear()
    return matches, -negc


def meteor(candidate, reference):
    c, r = _toks(candidate), _toks(reference)
    if not c or not r:
        return 0.0
    m, chunks = meteor_alignment(c, r)
    if m == 0:
        return 0.0
    p, rec = m / len(c), m / len(r)
    fmean = 10.0 * p * rec / (rec + 9.0 * p)
    return fmean * (1.0 - 0.5 * (chunks / m) ** 3)


def meteor_corpus(candidates, references):
    if len(candidates) != len(references):
        raise InputError(f"{len(candidates)} candidates vs {len(references)} references")
    return math.fsum(meteor(c, r) for c, r in zip(candidates, references)) / len(candidates)


def text_scores(candidates, references):
    if not candidates:
        raise UndefinedMetricError("no sentences to score")
    b = bleu_scores(candidates, references)
    return {"bleu1": b[0], "bleu2": b[1], "bleu3": b[2], "bleu4": b[3],
            "rougeL": rouge_l_corpus(candidates, references),
            "meteor": meteor_corpus(candidates, references)}


# --------------------------------------------------------- class accuracies

_CLASS_VOCAB = {
    "future-phase": PHASES,
    "future-step": STEPS,
    "future-instrument": INSTRUMENTS,
}


def extract_classes(text, category):
    """Class names from the category's vocabulary found in ``text`` (longest first)."""
    words = _toks(text)
    names = sorted((tuple(tokenize_words(n)) for n in _CLASS_VOCAB[category]),
                   key=len, reverse=True)
    found, i = set(), 0
    while i < len(words):
        for name in names:
            if tuple(words[i:i + len(name)]) == name:
                found.add(" ".join(name))
                i += len(name)
                break
        else:
            i += 1
    return found


def _gold_set(label):
    if isinstance(label, (list, tuple, set)):
        return {" ".join(tokenize_words(x)) for x in label}
    return {" ".join(tokenize_words(label))}


def category_accuracy(predictions, golds, category):
    if category not in _CLASS_VOCAB:
        raise InputError(f"no class vocabulary for category {category!r}")
    if len(predictions) != len(golds):
        raise InputError(f"{len(predictions)} predictions vs {len(golds)} golds")
    if not predictions:
        raise UndefinedMetricError(f"no {category} items to score")
    hits = sum(extract_classes(p, category) == _gold_set(g) for p, g in zip(predictions, golds))
    return hits / len(predictions)


# ------------------------------------------------------------------ time MAE

def parse_minutes(text):
    m = _NUMBER_RE.search(text)
    return float(m.group()) if m else None


@dataclass
class MaeResult:
    mae: float
    scored: int
    unparseable: int


def time_mae(predictions, golds):
    if len(predictions) != len(golds):
        raise InputError(f"{len(predictions)} predictions vs {len(golds)} golds")
    errors, bad = [], 0
    for p, g in zip(predictions, golds):
        v = parse_minutes(p)
        if v is None:
            bad += 1
        else:
            errors.append(abs(v - float(g)))
    if not errors:
        raise UndefinedMetricError("no parseable time answers")
    return MaeResult(math.fsum(errors) / len(errors), len(errors), bad)


# ------------------------------------------------------------------- report

@dataclass
class MetricReport:
    overall: dict = field(default_factory=dict)
    per_category: dict = field(default_factory=dict)
    accuracy: dict = field(default_factory=dict)
    mae_minutes: dict = field(default_factory=dict)
    scored_count: dict = field(default_factory=dict)
    unparseable_count: dict = field(default_factory=dict)
    count: int = 0

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self):
        lines = ["scope               " + "".join(f"{m:>9}" for m in TEXT_METRICS)]
        rows = [("overall", self.overall)] + sorted(self.per_category.items())
        for name, scores in rows:
            if scores:
                lines.append(f"{name:<20}" + "".join(f"{100 * scores[m]:9.2f}"
                                                     for m in TEXT_METRICS))
        acc = "  ".join(f"{k}={'n/a' if v is None else f'{100 * v:.2f}%'}"
                        for k, v in self.accuracy.items())
        mae = "  ".join(f"{k}={'n/a' if v is None else f'{v:.2f}'}"
                        for k, v in self.mae_minutes.items())
        lines.append(f"accuracy: {acc}")
        lines.append(f"time MAE (minutes): {mae}")
        return "\n".join(lines)


def align(pred_items, gold_items):
    preds = {it.key: it for it in pred_items}
    if len(preds) != len(pred_items):
        raise InputError("duplicate prediction records")
    missing = [it.key for it in gold_items if it.key not in preds]
    if missing or len(pred_items) != len(gold_items):
        raise InputError(f"predictions do not cover the gold set ({len(missing)} missing, "
                         f"{len(pred_items)} vs {len(gold_items)} records)")
    return [(preds[g.key], g) for g in gold_items]


def evaluate(pred_items, gold_items):
    pairs = align(pred_items, gold_items)
    report = MetricReport(count=len(pairs))
    if pairs:
        report.overall = text_scores([p.answer for p, _ in pairs], [g.answer for _, g in pairs])
    for cat in CATEGORIES:
        sub = [(p, g) for p, g in pairs if g.category == cat]
        if sub:
            report.per_category[cat] = text_scores([p.answer for p, _ in sub],
                                                   [g.answer for _, g in sub])
    for cat in ACCURACY_CATEGORIES:
        sub = [(p, g) for p, g in pairs if g.category == cat]
        report.accuracy[cat] = (category_accuracy([p.answer for p, _ in sub],
                                                  [g.label for _, g in sub], cat)
                                if sub else None)
    for scope in TIME_SCOPES:
        sub = [(p, g) for p, g in pairs if g.category == "time" and g.scope == scope]
        if not sub:
            report.mae_minutes[scope] = None
            report.scored_count[scope] = report.unparseable_count[scope] = 0
            continue
        try:
            res = time_mae([p.answer for p, _ in sub], [g.label for _, g in sub])
            report.mae_minutes[scope] = res.mae
            report.scored_count[scope] = res.scored
            report.unparseable_count[scope] = res.unparseable
        except UndefinedMetricError:
            report.mae_minutes[scope] = None
            report.scored_count[scope] = 0
            report.unparseable_count[scope] = len(sub)
    return report
