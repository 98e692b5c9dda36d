"""One-vs-all instance ranking and Otsu-based selection."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DimensionError, EmptySelection

__all__ = [
    "RankingReport",
    "one_vs_all_criterion",
    "criterion_matrix",
    "aggregate_scores",
    "otsu_threshold",
    "otsu_bin",
    "histogram_edges",
    "rank",
    "select",
    "top_m_threshold",
]

SD_FLOOR_ABS = 1e-12
SD_FLOOR_REL = 1e-9


@dataclass(frozen=True)
class RankingReport:
    criterion: np.ndarray  # N x c
    score: np.ndarray  # N
    threshold: float
    mask: np.ndarray  # N, bool

    @property
    def selected_fraction(self) -> float:
        return float(self.mask.mean()) if self.mask.size else 0.0

    def to_csv(self, with_criterion: bool = False) -> str:
        head = ["index", "score", "selected"]
        c = self.criterion.shape[1]
        if with_criterion:
            head += [f"crit_{i}" for i in range(c)]
        lines = [",".join(head)]
        for j in range(self.score.shape[0]):
            row = [str(j), repr(float(self.score[j])), str(int(self.mask[j]))]
            if with_criterion:
                row += [repr(float(x)) for x in self.criterion[j]]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def one_vs_all_criterion(v: np.ndarray, i: int) -> np.ndarray:
    """Absolute pooled-variance t statistic of column ``i`` against the rest, per row.

    Each row is split into a one-sample group (the entry in column ``i``)
    and the remaining ``c - 1`` entries. With a single sample in the first
    group the pooled variance is the unbiased variance of the rest. The
    standard deviation is floored at ``1e-12 + 1e-9 * |mean(rest)|``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2:
        raise DimensionError("projected set must be N x c")
    c = v.shape[1]
    if c < 3:
        raise DimensionError(f"need at least 3 columns for a pooled variance, got {c}")
    if not 0 <= i < c:
        raise DimensionError(f"column {i} out of range for {c} columns")
    rest = np.delete(v, i, axis=1)
    mean0 = rest.mean(axis=1)
    sd = np.sqrt(rest.var(axis=1, ddof=1))
    sd = np.maximum(sd, SD_FLOOR_ABS + SD_FLOOR_REL * np.abs(mean0))
    return np.abs(v[:, i] - mean0) / (sd * np.sqrt(1.0 + 1.0 / (c - 1)))


def criterion_matrix(v: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """All ``c`` one-vs-all criteria at once, N x c.

    Same statistic as :func:`one_vs_all_criterion`, vectorised over columns:
    rest sums come from ``v @ (1 - I)`` and the held-out entry's deviation is
    zeroed rather than subtracted, so the variance stays a two-pass sum.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2:
        raise DimensionError("projected set must be N x c")
    n, c = v.shape
    if c < 3:
        raise DimensionError(f"need at least 3 columns for a pooled variance, got {c}")
    others = np.ones((c, c)) - np.eye(c)
    diag = np.arange(c)
    scale = np.sqrt(1.0 + 1.0 / (c - 1))
    out = np.empty_like(v)
    for start in range(0, n, chunk):
        blk = v[start:start + chunk]
        mean0 = (blk @ others) / (c - 1)
        dev = blk[:, None, :] - mean0[:, :, None]
        dev[:, diag, diag] = 0.0
        sd = np.sqrt(np.einsum("nij,nij->ni", dev, dev) / (c - 2))
        sd = np.maximum(sd, SD_FLOOR_ABS + SD_FLOOR_REL * np.abs(mean0))
        out[start:start + chunk] = np.abs(blk - mean0) / (sd * scale)
    return out


def aggregate_scores(criterion: np.ndarray) -> np.ndarray:
    """Row sums of the per-class criteria; larger means better separated."""
    return np.asarray(criterion, dtype=np.float64).sum(axis=1)


def histogram_edges(scores: np.ndarray, bins: int = 256):
    """Equal-width histogram of ``scores`` over ``[min, max]``.

    Returns ``(counts, edges)``; bin ``b`` holds ``edges[b] <= x < edges[b+1]``
    with the last bin closed.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    counts, edges = np.histogram(scores, bins=bins, range=(scores.min(), scores.max()))
    return counts, edges


def otsu_bin(counts: np.ndarray) -> int:
    """Split index ``b`` in ``[1, len(counts) - 1]`` maximising between-class variance.

    Classes are bins ``[0, b)`` and ``[b, bins)``, valued by bin index.
    Candidates are ranked in floating point and near-ties are settled in
    exact rational arithmetic; remaining exact ties go to the smallest ``b``.
    Returns 0 when no split separates two non-empty classes.
    """
    counts = np.asarray(counts, dtype=np.int64)
    nb = counts.shape[0]
    if nb < 2:
        return 0
    idx = np.arange(nb, dtype=np.int64)
    n_lo = np.cumsum(counts)[:-1]
    s_lo = np.cumsum(counts * idx)[:-1]
    n = int(counts.sum())
    s = int((counts * idx).sum())
    n_hi = n - n_lo
    s_hi = s - s_lo
    valid = (n_lo > 0) & (n_hi > 0)
    if not valid.any():
        return 0
    # n^2 * between-class variance = (n_hi s_lo - n_lo s_hi)^2 / (n_lo n_hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        diff = n_hi.astype(np.float64) * s_lo - n_lo.astype(np.float64) * s_hi
        key = np.where(valid, diff * diff / (n_lo.astype(np.float64) * n_hi), -1.0)
    best = key.max()
    cand = np.flatnonzero(key >= best * (1 - 1e-9))
    winner, wval = None, None
    for k in cand:
        nl, nh, sl, sh = int(n_lo[k]), int(n_hi[k]), int(s_lo[k]), int(s_hi[k])
        val = Fraction((nh * sl - nl * sh) ** 2, nl * nh)
        if wval is None or val > wval:
            winner, wval = int(k), val
    return winner + 1


def otsu_threshold(scores: np.ndarray, bins: int = 256) -> float:
    """Otsu threshold of a continuous score vector.

    Scores are histogrammed into ``bins`` equal-width bins over their range;
    the lower edge of the first bin of the upper class is returned. A
    constant vector yields its value, so everything is selected.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise ValueError("no scores")
    if bins < 1:
        raise ValueError("bins must be positive")
    lo, hi = scores.min(), scores.max()
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValueError("scores must be finite")
    if hi == lo:
        return float(lo)
    counts, edges = histogram_edges(scores, bins)
    b = otsu_bin(counts)
    return float(edges[b])


def top_m_threshold(scores: np.ndarray, m: int) -> float:
    """Threshold keeping the ``m`` best scores (ties at the cut are kept)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if m < 1:
        raise ValueError("m must be positive")
    if m >= scores.size:
        return float(scores.min())
    return float(np.sort(scores)[::-1][m - 1])


def rank(v: np.ndarray, bins: int = 256, threshold: float | None = None) -> RankingReport:
    """Score every row of ``v`` and threshold the scores.

    The threshold defaults to Otsu over this set's scores; pass one to apply
    an externally fitted threshold.
    """
    crit = criterion_matrix(v)
    score = aggregate_scores(crit)
    if threshold is None:
        threshold = otsu_threshold(score, bins)
    return RankingReport(crit, score, float(threshold), score >= threshold)


def select(v: np.ndarray, report: RankingReport):
    """Keep rows whose score reaches the threshold, in original order.

    Returns ``(selected_rows, original_indices)``.
    """
    v = np.asarray(v)
    if v.shape[0] != report.score.shape[0]:
        raise DimensionError("report does not match the projected set")
    idx = np.flatnonzero(report.score >= report.threshold)
    if idx.size == 0:
        raise EmptySelection(f"no score reaches threshold {report.threshold:g}")
    return v[idx], idx
