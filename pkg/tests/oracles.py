"""Reference implementations used as test oracles.

Each one is deliberately naive and shares no code with the package: grid
counting for IoU, explicit n-gram enumeration for CIDEr, and exhaustive
enumeration for matching and alignment.
"""
from __future__ import annotations

import itertools
import math
from fractions import Fraction
from functools import lru_cache

import numpy as np


def sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def hard_interval(c_logit: float, w_logit: float) -> tuple[float, float]:
    c, w = sigmoid(c_logit), sigmoid(w_logit)
    return max(0.0, c - w / 2), min(1.0, c + w / 2)


# -- pairwise IoU on a grid ----------------------------------------------------

def grid_pt_iou(moments, n_points: int = 10_000) -> float:
    """Mean pairwise IoU measured by counting grid cells covered by each interval."""
    x = (np.arange(n_points) + 0.5) / n_points
    cover = []
    for c, w in moments:
        s, e = hard_interval(c, w)
        cover.append((x >= s) & (x <= e))
    ious = []
    for a, b in itertools.combinations(cover, 2):
        union = np.count_nonzero(a | b)
        ious.append(np.count_nonzero(a & b) / union if union else 0.0)
    return sum(ious) / len(ious)


# -- CIDEr ---------------------------------------------------------------------

def _words(sentence: str) -> list[str]:
    out, cur = [], ""
    for ch in sentence.lower():
        if ch.isalnum() or ch in "_'":
            cur += ch
        else:
            if cur:
                out.append(cur)
            cur = ""
    if cur:
        out.append(cur)
    return out


def _grams(words, n):
    return [" ".join(words[i:i + n]) for i in range(len(words) - n + 1)]


def brute_cider(pairs, max_n: int = 4) -> float:
    """CIDEr from first principles: idf over the reference documents, cosine per n."""
    docs = [refs for _, refs in pairs]
    n_docs = len(docs)

    def doc_freq(gram, n):
        count = 0
        for refs in docs:
            if any(gram in _grams(_words(r), n) for r in refs):
                count += 1
        return count

    def tfidf(sentence, n):
        grams = _grams(_words(sentence), n)
        return {g: grams.count(g) * (math.log(n_docs) - math.log(max(1, doc_freq(g, n)))) for g in set(grams)}

    total = 0.0
    for cand, refs in pairs:
        if not _words(cand):
            continue
        pair_score = 0.0
        for ref in refs:
            sims = []
            for n in range(1, max_n + 1):
                vc, vr = tfidf(cand, n), tfidf(ref, n)
                dot = sum(vc[g] * vr.get(g, 0.0) for g in vc)
                nc = math.sqrt(sum(v * v for v in vc.values()))
                nr = math.sqrt(sum(v * v for v in vr.values()))
                sims.append(dot / (nc * nr) if nc > 0 and nr > 0 else 0.0)
            pair_score += sum(sims) / max_n
        total += pair_score / len(refs)
    return total / len(pairs)


# -- exhaustive matching -------------------------------------------------------

def frac_iou(a, b) -> Fraction:
    return _frac_iou(tuple(a[:2]), tuple(b[:2]))


@lru_cache(maxsize=None)
def _frac_iou(a, b) -> Fraction:
    a = (Fraction(a[0]), Fraction(a[1]))
    b = (Fraction(b[0]), Fraction(b[1]))
    inter = max(Fraction(0), min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    if union == 0:
        return Fraction(1) if a == b else Fraction(0)
    return inter / union


def all_matchings(n_pred: int, n_gt: int, allowed):
    """Every set of disjoint (pred, gt) pairs drawn from ``allowed``."""
    def rec(i, used):
        if i == n_pred:
            yield []
            return
        yield from rec(i + 1, used)
        for j in range(n_gt):
            if j not in used and (i, j) in allowed:
                for rest in rec(i + 1, used | {j}):
                    yield [(i, j)] + rest
    yield from rec(0, frozenset())


def lexicographic_matching(preds, gts, threshold) -> set:
    """The matching whose pairs, listed by (-IoU, pred, gt), are lexicographically best.

    A matching that stops early loses to one that continues, so the winner is
    maximal. Greedy selection by the same key must reproduce it.
    """
    t = Fraction(threshold).limit_denominator(10**6) if isinstance(threshold, float) else Fraction(threshold)
    iou = {(i, j): frac_iou(p, g) for i, p in enumerate(preds) for j, g in enumerate(gts)}
    allowed = {k for k, v in iou.items() if v >= t}
    # exact ranks (0 = highest IoU) stand in for -IoU so keys compare as ints
    rank = {v: r for r, v in enumerate(sorted(set(iou.values()), reverse=True))}
    best, best_key = None, None
    sentinel = (math.inf, math.inf, math.inf)
    for m in all_matchings(len(preds), len(gts), allowed):
        key = sorted((rank[iou[p]], p[0], p[1]) for p in m) + [sentinel]
        if best_key is None or key < best_key:
            best, best_key = m, key
    return set(best)


# -- exhaustive order-preserving alignment -------------------------------------

@lru_cache(maxsize=None)
def order_preserving_alignments(n: int, m: int) -> tuple:
    """All chains of pairs strictly increasing in both coordinates."""
    pairs = [(i, j) for i in range(n) for j in range(m)]
    return tuple(
        combo
        for r in range(min(n, m) + 1)
        for combo in itertools.combinations(pairs, r)
        if all(a[0] < b[0] and a[1] < b[1] for a, b in zip(combo, combo[1:]))
    )


def best_alignment_value(weights):
    n = len(weights)
    m = len(weights[0]) if n else 0
    return max(sum((weights[i][j] for i, j in a), Fraction(0)) for a in order_preserving_alignments(n, m))


def brute_soda(preds, gts, score) -> Fraction:
    if not preds or not gts:
        return Fraction(0)
    weights = [[frac_iou(p, g) * score[i][j] for j, g in enumerate(gts)] for i, p in enumerate(preds)]
    value = best_alignment_value(weights)
    if value <= 0:
        return Fraction(0)
    p, r = value / len(preds), value / len(gts)
    return 2 * p * r / (p + r)


# -- finite differences --------------------------------------------------------

def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        grad.flat[k] = (f(x + e) - f(x - e)) / (2 * h)
    return grad


def relative_error(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))
