"""Dense captioning metrics: tIoU matching, CIDEr, a SODA-style aligner, report assembly.

CIDEr here is the plain (non "-D") variant: n-grams 1-4, TF-IDF vectors with
document frequencies taken over the reference side of the scored corpus, cosine
similarity per n, averaged over n and over references. The customary x10 factor
is not applied.

The SODA-style score finds the maximum-weight order-preserving alignment between
time-sorted predictions and ground truth by dynamic programming, where a pair
weighs tIoU times sentence score, and reports the F-measure of that value
against the prediction and ground-truth counts. It follows the idea of SODA_c
but is not a reimplementation of the reference scorer.
"""
from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .errors import FormatError
from .temporal import Interval, temporal_iou

log = logging.getLogger(__name__)

THRESHOLDS = (0.3, 0.5, 0.7, 0.9)


# -- matching ----------------------------------------------------------------

def match_at_threshold(preds: Sequence, gts: Sequence, threshold: float) -> list[tuple[int, int]]:
    """Greedy one-to-one matching by descending tIoU.

    Pairs are visited in order of (-tIoU, pred index, gt index); a pair is kept when
    its tIoU reaches ``threshold`` and neither side is taken yet. Returns index pairs.
    """
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    scored = []
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            iou = temporal_iou(Interval(*p), Interval(*g))
            if iou >= threshold:
                scored.append((-iou, i, j))
    scored.sort()
    used_p, used_g, out = set(), set(), []
    for _, i, j in scored:
        if i not in used_p and j not in used_g:
            used_p.add(i)
            used_g.add(j)
            out.append((i, j))
    return out


# -- CIDEr -------------------------------------------------------------------

_PUNCT = re.compile(r"[^\w\s']")


def tokenize(sentence: str) -> list[str]:
    return _PUNCT.sub(" ", sentence.lower()).split()


def ngram_counts(words: Sequence[str], n: int = 4) -> Counter:
    counts = Counter()
    for k in range(1, n + 1):
        for i in range(len(words) - k + 1):
            counts[tuple(words[i:i + k])] += 1
    return counts


class CiderScorer:
    """TF-IDF n-gram cosine scorer with document frequencies from a fixed reference corpus.

    ``corpus`` is a list of documents, each a list of reference sentences.
    """

    def __init__(self, corpus: Sequence[Sequence[str]], n: int = 4):
        self.n = n
        self.df = Counter()
        for refs in corpus:
            seen = set()
            for ref in refs:
                seen.update(ngram_counts(tokenize(ref), n))
            self.df.update(seen)
        self.log_docs = math.log(float(len(corpus))) if corpus else 0.0

    def _vec(self, counts: Counter):
        vec = [dict() for _ in range(self.n)]
        norm = [0.0] * self.n
        for gram, tf in counts.items():
            k = len(gram) - 1
            v = float(tf) * (self.log_docs - math.log(max(1.0, self.df[gram])))
            vec[k][gram] = v
            norm[k] += v * v
        return vec, [math.sqrt(x) for x in norm]

    def score(self, candidate: str, refs: Sequence[str]) -> float:
        words = tokenize(candidate)
        if not words:
            log.warning("empty candidate sentence scores 0")
            return 0.0
        vh, nh = self._vec(ngram_counts(words, self.n))
        total = 0.0
        for ref in refs:
            vr, nr = self._vec(ngram_counts(tokenize(ref), self.n))
            per_n = 0.0
            for k in range(self.n):
                dot = sum(v * vr[k].get(g, 0.0) for g, v in vh[k].items())
                if nh[k] != 0 and nr[k] != 0:
                    dot /= nh[k] * nr[k]
                per_n += dot
            total += per_n / self.n
        return total / len(refs) if refs else 0.0


def cider(pairs: Sequence[tuple[str, Sequence[str]]], n: int = 4) -> tuple[float, list[float]]:
    """Corpus CIDEr over (candidate, references) pairs; IDF comes from these references."""
    if not pairs:
        return 0.0, []
    scorer = CiderScorer([refs for _, refs in pairs], n)
    scores = [scorer.score(cand, refs) for cand, refs in pairs]
    return sum(scores) / len(scores), scores


# -- SODA-style --------------------------------------------------------------

def soda_alignment(weights: Sequence[Sequence]):
    """Maximum total weight of an order-preserving partial alignment.

    Works for any numeric type supporting ``+`` and ``max`` (floats, Fractions).
    """
    n = len(weights)
    m = len(weights[0]) if n else 0
    zero = 0 * weights[0][0] if n and m else 0
    best = [[zero] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            best[i][j] = max(best[i - 1][j], best[i][j - 1], best[i - 1][j - 1] + weights[i - 1][j - 1])
    return best[n][m]


def soda_style(preds: Sequence[tuple], gts: Sequence[tuple],
               sentence_score: Callable[[str, str], float]) -> float:
    """``preds`` and ``gts`` are time-sorted ((start, end), sentence) lists."""
    if not preds or not gts:
        return 0.0
    weights = []
    for (p_iv, p_sent) in preds:
        row = []
        for (g_iv, g_sent) in gts:
            iou = temporal_iou(p_iv, g_iv)
            row.append(iou * sentence_score(p_sent, g_sent) if iou > 0 else 0)
        weights.append(row)
    value = soda_alignment(weights)
    if value <= 0:
        return 0.0
    precision = value / len(preds)
    recall = value / len(gts)
    return 2 * precision * recall / (precision + recall)


# -- file formats ------------------------------------------------------------

def _interval(value, where):
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise FormatError("timestamp must be a [start, end] pair", where)
    try:
        s, e = float(value[0]), float(value[1])
    except (TypeError, ValueError):
        raise FormatError("timestamp entries must be numbers", where) from None
    if not (math.isfinite(s) and math.isfinite(e)):
        raise FormatError("timestamp entries must be finite", where)
    if s > e:
        raise FormatError(f"start {s} after end {e}", where)
    return s, e


def _read_json(path, what):
    text = Path(path).read_text()
    try:
        return json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed {what} JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})",
                          str(path)) from exc


def parse_predictions(data) -> dict[str, list[dict]]:
    """Validate a predictions mapping ``{video_id: [{"timestamp": [s, e], "sentence": str}]}``."""
    if isinstance(data, dict) and "results" in data and set(data) <= {"results", "version", "external_data"}:
        data = data["results"]
    if not isinstance(data, dict):
        raise FormatError("predictions must be a JSON object keyed by video id")
    out = {}
    for vid, entries in data.items():
        if not isinstance(entries, list):
            raise FormatError("expected a list of predictions", f"{vid}")
        parsed = []
        for k, entry in enumerate(entries):
            where = f"{vid}[{k}]"
            if not isinstance(entry, dict):
                raise FormatError("prediction must be an object", where)
            if "timestamp" not in entry:
                raise FormatError("missing field 'timestamp'", where)
            if not isinstance(entry.get("sentence"), str):
                raise FormatError("missing or non-string 'sentence'", f"{where}.sentence")
            s, e = _interval(entry["timestamp"], f"{where}.timestamp")
            if s < 0:
                raise FormatError(f"negative start {s}", f"{where}.timestamp")
            parsed.append({"timestamp": [s, e], "sentence": entry["sentence"]})
        out[str(vid)] = parsed
    return out


def load_predictions(path) -> dict[str, list[dict]]:
    data = _read_json(path, "predictions")
    try:
        return parse_predictions(data)
    except FormatError as exc:
        msg = str(exc)[len(exc.where) + 2:] if exc.where else str(exc)
        raise FormatError(msg, f"{path}:{exc.where}" if exc.where else str(path)) from exc


def dump_predictions(predictions: Mapping[str, list[dict]], path=None) -> str:
    text = json.dumps({k: predictions[k] for k in sorted(predictions)}, indent=1, sort_keys=True) + "\n"
    if path is not None:
        from .data_io import atomic_write_text
        atomic_write_text(path, text)
    return text


# -- report ------------------------------------------------------------------

@dataclass
class EvalReport:
    thresholds: tuple
    matched: dict  # threshold -> matched pair count
    precision: dict
    recall: dict
    cider_per_threshold: dict
    cider: float
    soda: float
    meteor: float | None = None
    n_videos: int = 0
    per_video: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        key = lambda t: f"{t:g}"
        return {
            "thresholds": list(self.thresholds),
            "matched": {key(t): v for t, v in self.matched.items()},
            "precision": {key(t): v for t, v in self.precision.items()},
            "recall": {key(t): v for t, v in self.recall.items()},
            "cider_per_threshold": {key(t): v for t, v in self.cider_per_threshold.items()},
            "cider": self.cider,
            "soda": self.soda,
            "meteor": self.meteor,
            "n_videos": self.n_videos,
            "per_video": self.per_video,
        }

    def table(self) -> str:
        lines = [f"{'tIoU':>6} {'matched':>8} {'precision':>10} {'recall':>8} {'CIDEr':>8}"]
        for t in self.thresholds:
            lines.append(f"{t:>6.1f} {self.matched[t]:>8d} {self.precision[t]:>10.4f} "
                         f"{self.recall[t]:>8.4f} {self.cider_per_threshold[t]:>8.4f}")
        lines.append(f"CIDEr (mean over thresholds): {self.cider:.4f}")
        lines.append(f"SODA-style: {self.soda:.4f}")
        lines.append("METEOR: " + ("n/a (no external scorer)" if self.meteor is None else f"{self.meteor:.4f}"))
        lines.append(f"videos: {self.n_videos}")
        return "\n".join(lines)


def evaluate(predictions: Mapping[str, list[dict]], ground_truth: Mapping, thresholds=THRESHOLDS,
             sentence_score: Callable[[str, str], float] | None = None,
             meteor_scorer: Callable[[list[tuple[str, list[str]]]], float] | None = None) -> EvalReport:
    """Score predictions against ground truth.

    ``ground_truth`` maps video id to an object with ``duration`` and
    ``segments`` (list of ((start, end), sentence)), as returned by
    :func:`zsdvc.data_io.load_ground_truth`. Videos without predictions count as
    zero matches. Precision and recall are averaged over videos.
    """
    vids = sorted(ground_truth)
    if sentence_score is None:
        sentences = [[s] for v in vids for _, s in ground_truth[v].segments]
        scorer = CiderScorer(sentences)
        sentence_score = lambda cand, ref: scorer.score(cand, [ref])

    matched = {t: 0 for t in thresholds}
    prec = {t: 0.0 for t in thresholds}
    rec = {t: 0.0 for t in thresholds}
    pairs = {t: [] for t in thresholds}
    per_video = {}
    soda_total = 0.0
    for vid in vids:
        gt = ground_truth[vid].segments
        pred = [((p["timestamp"][0], p["timestamp"][1]), p["sentence"]) for p in predictions.get(vid, [])]
        p_iv = [iv for iv, _ in pred]
        g_iv = [iv for iv, _ in gt]
        entry = {}
        for t in thresholds:
            m = match_at_threshold(p_iv, g_iv, t)
            matched[t] += len(m)
            p = len(m) / len(pred) if pred else 0.0
            r = len(m) / len(gt) if gt else 0.0
            prec[t] += p
            rec[t] += r
            pairs[t].extend((pred[i][1], [gt[j][1]]) for i, j in m)
            entry[f"{t:g}"] = {"matched": len(m), "precision": p, "recall": r}
        soda = soda_style(sorted(pred, key=lambda x: x[0]), sorted(gt, key=lambda x: x[0]), sentence_score)
        entry["soda"] = soda
        soda_total += soda
        per_video[vid] = entry

    n = len(vids)
    cider_t = {t: cider(pairs[t])[0] for t in thresholds}
    meteor = None
    if meteor_scorer is not None:
        all_pairs = [p for t in thresholds for p in pairs[t]]
        meteor = float(meteor_scorer(all_pairs)) if all_pairs else 0.0
    return EvalReport(
        thresholds=tuple(thresholds),
        matched=matched,
        precision={t: (prec[t] / n if n else 0.0) for t in thresholds},
        recall={t: (rec[t] / n if n else 0.0) for t in thresholds},
        cider_per_threshold=cider_t,
        cider=sum(cider_t.values()) / len(thresholds),
        soda=soda_total / n if n else 0.0,
        meteor=meteor,
        n_videos=n,
        per_video=per_video,
    )
