"""Independent reference implementations used only by the tests.

Each one takes the slow, obvious route (enumeration, plain loops, finite
differences) so that agreement with the package is meaningful.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


# ------------------------------------------------------------ derivatives

def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar ``f()`` with respect to array ``x`` (in place)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        up = f()
        x[idx] = orig - h
        down = f()
        x[idx] = orig
        g[idx] = (up - down) / (2 * h)
    return g


def rel_error(a, b):
    scale = max(np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / scale)


# ------------------------------------------------------------------ BLEU

def count_ngram_matches(cand, ref, n):
    """Clipped matches by explicit counting over every n-gram position."""
    cand_grams = [tuple(cand[i:i + n]) for i in range(len(cand) - n + 1)]
    ref_grams = [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)]
    matched = 0
    for gram in set(cand_grams):
        in_cand = sum(1 for g in cand_grams if g == gram)
        in_ref = sum(1 for g in ref_grams if g == gram)
        matched += min(in_cand, in_ref)
    return matched, len(cand_grams)


def bleu_oracle(cands, refs, n, eps=1e-9):
    c_len = sum(len(c) for c in cands)
    r_len = sum(len(r) for r in refs)
    if c_len == 0:
        bp = 0.0
    elif c_len > r_len:
        bp = 1.0
    else:
        bp = math.exp(1 - r_len / c_len)
    log_sum = 0.0
    for k in range(1, n + 1):
        num = den = 0
        for c, r in zip(cands, refs):
            m, t = count_ngram_matches(c, r, k)
            num += m
            den += t
        log_sum += math.log((num if num else eps) / (den if den else 1))
    return bp * math.exp(log_sum / n)


# -------------------------------------------------------------- ROUGE-L

def lcs_bruteforce(a, b):
    """Longest common subsequence by enumerating subsequences of the shorter side."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for size in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), size):
            sub = [short[i] for i in idx]
            it = iter(long_)
            if all(any(tok == x for x in it) for tok in sub):
                return size
    return 0


def rouge_l_oracle(cand, ref):
    if not cand or not ref:
        return 0.0
    lcs = lcs_bruteforce(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return 2 * p * r / (p + r)


# --------------------------------------------------------------- METEOR

def meteor_alignments(cand, ref):
    """Every exact-match partial alignment as a sorted list of (i, j) pairs."""
    out = []

    def rec(i, used, pairs):
        if i == len(cand):
            out.append(list(pairs))
            return
        rec(i + 1, used, pairs)
        for j, w in enumerate(ref):
            if w == cand[i] and j not in used:
                rec(i + 1, used | {j}, pairs + [(i, j)])

    rec(0, frozenset(), [])
    return out


def count_chunks(pairs):
    if not pairs:
        return 0
    chunks = 1
    for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
        if not (i1 == i0 + 1 and j1 == j0 + 1):
            chunks += 1
    return chunks


def meteor_oracle(cand, ref):
    if not cand or not ref:
        return 0.0
    best = max(((len(p), -count_chunks(p)) for p in meteor_alignments(cand, ref)))
    m, chunks = best[0], -best[1]
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    fmean = 10 * p * r / (r + 9 * p)
    return fmean * (1 - 0.5 * (chunks / m) ** 3)


# ------------------------------------------------------------- datasets

def count_windows(valid, k):
    """Number of positions t whose window t-k+1..t lies inside and is all valid."""
    n = 0
    for t in range(len(valid)):
        window = range(t - k + 1, t + 1)
        if window.start >= 0 and all(valid[i] for i in window):
            n += 1
    return n
