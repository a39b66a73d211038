"""Sequence metrics for matched routes: AHD, macro F-score, and BLEU.

Point-level metrics compare equal-length per-point routes positionally.
Segment-level metrics first collapse consecutive duplicates, then align the
two segment sequences with Needleman-Wunsch before counting matches, since
predicted and true segment routes may differ in length.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .errors import LengthMismatch, ReferenceTooShort
from .routes import PointRoute, SegmentRoute, collapse

# Gap marker in alignments. Distinct from any edge id.
GAP = None

NW_MATCH = 1
NW_MISMATCH = -1
NW_GAP = -1


@dataclass(frozen=True)
class Alignment:
    pairs: tuple[tuple[object, object], ...]  # (a symbol or GAP, b symbol or GAP)
    score: int


@dataclass(frozen=True)
class MetricReport:
    ahd_point: float
    f_point: float
    bleu_point: float
    ahd_segment: float
    f_segment: float
    bleu_segment: float
    n_trajectories: int


def needleman_wunsch(
    a, b, match: int = NW_MATCH, mismatch: int = NW_MISMATCH, gap: int = NW_GAP
) -> Alignment:
    """Global alignment maximizing total score.

    Traceback prefers diagonal over up (gap in b) over left (gap in a), so
    ties resolve deterministically.
    """
    n, m = len(a), len(b)
    score = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        score[i][0] = i * gap
    for j in range(1, m + 1):
        score[0][j] = j * gap
    for i in range(1, n + 1):
        row, prev = score[i], score[i - 1]
        ai = a[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (match if ai == b[j - 1] else mismatch)
            up = prev[j] + gap
            left = row[j - 1] + gap
            row[j] = max(diag, up, left)

    pairs = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and score[i][j] == score[i - 1][j - 1] + (match if a[i - 1] == b[j - 1] else mismatch):
            pairs.append((a[i - 1], b[j - 1]))
            i -= 1
            j -= 1
        elif i > 0 and score[i][j] == score[i - 1][j] + gap:
            pairs.append((a[i - 1], GAP))
            i -= 1
        else:
            pairs.append((GAP, b[j - 1]))
            j -= 1
    pairs.reverse()
    return Alignment(tuple(pairs), score[n][m])


def ahd_point(pred: PointRoute, truth: PointRoute) -> float:
    """Fraction of positions whose symbols agree."""
    if len(pred) != len(truth):
        raise LengthMismatch(f"point routes differ in length: {len(pred)} vs {len(truth)}")
    if not truth:
        return 1.0
    return sum(p == t for p, t in zip(pred, truth)) / len(truth)


def ahd_segment(pred: SegmentRoute, truth: SegmentRoute) -> float:
    """Matched alignment columns divided by alignment length."""
    if not pred and not truth:
        return 1.0
    alignment = needleman_wunsch(pred, truth)
    if not alignment.pairs:
        return 0.0
    matched = sum(x == y for x, y in alignment.pairs if x is not GAP and y is not GAP)
    return matched / len(alignment.pairs)


def _f1(tp: int, pred_count: int, truth_count: int) -> float:
    precision = tp / pred_count if pred_count else 0.0
    recall = tp / truth_count if truth_count else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def f_score(pred, truth, level: str) -> float:
    """Macro-averaged per-class F1 over classes present in either sequence.

    Point level counts positional matches and requires equal lengths; segment
    level counts matched columns of the Needleman-Wunsch alignment.
    """
    if level not in ("point", "segment"):
        raise ValueError(f"unknown level {level!r}")
    if level == "point":
        if len(pred) != len(truth):
            raise LengthMismatch(f"point routes differ in length: {len(pred)} vs {len(truth)}")
        tp_pairs = [(p, t) for p, t in zip(pred, truth)]
    else:
        tp_pairs = [(x, y) for x, y in needleman_wunsch(pred, truth).pairs]

    classes = set(pred) | set(truth)
    if not classes:
        return 1.0
    pred_counts = Counter(pred)
    truth_counts = Counter(truth)
    tp = Counter(p for p, t in tp_pairs if p == t and p is not GAP)
    return sum(_f1(tp[c], pred_counts[c], truth_counts[c]) for c in classes) / len(classes)


def bleu(pred, truth, n: int = 3) -> float:
    """Geometric mean of clipped n-gram precisions times a brevity penalty.

    Scores against the single reference; zero if any order's precision is
    zero. The reference must hold at least one n-gram of the top order.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(truth) < n:
        raise ReferenceTooShort(f"reference length {len(truth)} < n = {n}")
    precisions = []
    for order in range(1, n + 1):
        pred_grams = Counter(tuple(pred[i : i + order]) for i in range(len(pred) - order + 1))
        total = sum(pred_grams.values())
        if total == 0:
            return 0.0
        truth_grams = Counter(tuple(truth[i : i + order]) for i in range(len(truth) - order + 1))
        clipped = sum(min(count, truth_grams[g]) for g, count in pred_grams.items())
        if clipped == 0:
            return 0.0
        precisions.append(clipped / total)
    brevity = min(1.0, len(pred) / len(truth))
    product = 1.0
    for p in precisions:
        product *= p
    return brevity * product ** (1.0 / n)


def evaluate_corpus(pairs: list[tuple[PointRoute, PointRoute]], *, bleu_n: int = 3) -> MetricReport:
    """Mean per-trajectory metrics at point and segment level.

    Each pair is (predicted point route, truth point route); segment-level
    scores apply the same metrics to the collapsed routes.
    """
    if not pairs:
        raise ValueError("evaluate_corpus needs at least one trajectory")
    per_traj = []
    for pred, truth in pairs:
        pred_seg = collapse(pred)
        truth_seg = collapse(truth)
        per_traj.append(
            (
                ahd_point(pred, truth),
                f_score(pred, truth, "point"),
                bleu(pred, truth, bleu_n),
                ahd_segment(pred_seg, truth_seg),
                f_score(pred_seg, truth_seg, "segment"),
                bleu(pred_seg, truth_seg, bleu_n),
            )
        )
    n = len(pairs)
    # fsum keeps the mean exactly independent of trajectory order
    means = [math.fsum(values) / n for values in zip(*per_traj)]
    return MetricReport(*means, n_trajectories=n)


def report_rows(name: str, report: MetricReport) -> list[dict]:
    """Two CSV rows (point and segment level) in the metrics table layout."""
    return [
        {
            "model": name,
            "level": "point",
            "ahd": f"{report.ahd_point:.6f}",
            "fscore": f"{report.f_point:.6f}",
            "bleu": f"{report.bleu_point:.6f}",
            "n_traj": report.n_trajectories,
        },
        {
            "model": name,
            "level": "segment",
            "ahd": f"{report.ahd_segment:.6f}",
            "fscore": f"{report.f_segment:.6f}",
            "bleu": f"{report.bleu_segment:.6f}",
            "n_traj": report.n_trajectories,
        },
    ]
