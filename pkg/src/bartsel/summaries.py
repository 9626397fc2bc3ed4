"""Posterior variable-importance summaries.

All functions are pure maps from posterior traces (or vectors) to
importance values and ranks:

* VIP   - mean per-draw proportion of splitting rules using each feature;
* VC    - mean per-draw count of splitting rules using each feature;
* MPVIP - fraction of draws in which each feature is split on at least once;
* MI    - normalized mean Metropolis acceptance probability attributed to
          each feature's interior nodes;
* rank variants - descending midranks of the above, per fit;
* summary matrix - the p x 4 (or p x 1) clustering feature matrix built
  from replicate fits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .data import PosteriorTrace

__all__ = [
    "KIND_VIP",
    "KIND_VC",
    "KIND_MPVIP",
    "KIND_MI",
    "SOURCE_VC_MEASURE",
    "SOURCE_VIP_MEASURE",
    "SOURCE_VIP_RANK",
    "ImportanceVector",
    "RankVector",
    "SummaryMatrix",
    "vip",
    "vc",
    "mpvip",
    "metropolis_importance",
    "rank_descending",
    "build_summary_matrix",
]

KIND_VIP = "vip"
KIND_VC = "vc"
KIND_MPVIP = "mpvip"
KIND_MI = "mi"

SOURCE_VC_MEASURE = "vc-measure"
SOURCE_VIP_MEASURE = "vip-measure"
SOURCE_VIP_RANK = "vip-rank"


@dataclass(frozen=True)
class ImportanceVector:
    kind: str
    values: np.ndarray
    fit_id: int | None = None

    @property
    def p(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class RankVector:
    """Midranks in descending importance order: rank 1 = most important."""

    ranks: np.ndarray
    fit_id: int | None = None


@dataclass(frozen=True)
class SummaryMatrix:
    """Clustering feature matrix over replicate fits.

    For count/proportion sources, Z columns are (mean importance,
    25th-percentile importance, mean rank, 75th-percentile rank). For the
    rank-only source, Z is the single column of mean ranks.
    """

    Z: np.ndarray
    l_rep: int
    source_kind: str

    @property
    def p(self) -> int:
        return self.Z.shape[0]


def vip(trace: PosteriorTrace, fit_id: int | None = None) -> ImportanceVector:
    """Mean per-draw proportion of splitting rules using each feature.
    Draws with no splits at all contribute 0 to every feature."""
    counts = trace.counts.astype(np.float64)
    totals = counts.sum(axis=1)
    props = np.divide(
        counts,
        totals[:, None],
        out=np.zeros_like(counts),
        where=totals[:, None] > 0,
    )
    return ImportanceVector(KIND_VIP, props.mean(axis=0), fit_id)


def vc(trace: PosteriorTrace, fit_id: int | None = None) -> ImportanceVector:
    """Mean per-draw split count per feature (unnormalized VIP)."""
    return ImportanceVector(KIND_VC, trace.counts.mean(axis=0).astype(np.float64), fit_id)


def mpvip(trace: PosteriorTrace, fit_id: int | None = None) -> ImportanceVector:
    """Fraction of draws in which each feature is split on at least once."""
    return ImportanceVector(KIND_MPVIP, trace.inclusion.mean(axis=0), fit_id)


def metropolis_importance(trace: PosteriorTrace, fit_id: int | None = None) -> ImportanceVector:
    """Normalized mean Metropolis acceptance probability per feature.

    Per draw k: u_jk = mean acceptance tag over interior nodes splitting on
    feature j (0 if none); the draw contributes u_jk / sum_i u_ik, or 0 for
    every feature when the draw has no interior nodes.
    """
    if trace.mi_features is None or trace.mi_probs is None:
        raise ValueError("MI logging was not enabled for this trace")
    p = trace.p
    acc = np.zeros(p)
    for feats, probs in zip(trace.mi_features, trace.mi_probs):
        if feats.size == 0:
            continue
        node_counts = np.bincount(feats, minlength=p).astype(np.float64)
        prob_sums = np.bincount(feats, weights=probs, minlength=p)
        u = np.divide(prob_sums, node_counts, out=np.zeros(p), where=node_counts > 0)
        total = u.sum()
        if total > 0:
            acc += u / total
    return ImportanceVector(KIND_MI, acc / trace.n_kept, fit_id)


def rank_descending(values: np.ndarray, fit_id: int | None = None) -> RankVector:
    """Midranks with rank 1 for the largest value; ties get averaged ranks."""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("importance values must be finite")
    return RankVector(rankdata(-values, method="average"), fit_id)


def build_summary_matrix(traces: list[PosteriorTrace], source_kind: str) -> SummaryMatrix:
    """Stack replicate-fit importances into the clustering feature matrix.

    vc-measure / vip-measure: per feature, the mean and 25th percentile of
    the per-fit importance plus the mean and 75th percentile of its per-fit
    descending rank. vip-rank: the single column of mean VIP ranks.
    Quantiles use linear interpolation of order statistics (type 7).
    """
    if not traces:
        raise ValueError("need at least one replicate trace")
    p = traces[0].p
    if any(t.p != p for t in traces):
        raise ValueError("replicate traces disagree on feature count p")
    if source_kind == SOURCE_VC_MEASURE:
        vals = np.stack([vc(t).values for t in traces])
    elif source_kind in (SOURCE_VIP_MEASURE, SOURCE_VIP_RANK):
        vals = np.stack([vip(t).values for t in traces])
    else:
        raise ValueError(f"unknown summary source {source_kind!r}")
    ranks = np.stack([rank_descending(row).ranks for row in vals])
    if source_kind == SOURCE_VIP_RANK:
        Z = ranks.mean(axis=0)[:, None]
    else:
        Z = np.column_stack(
            [
                vals.mean(axis=0),
                np.quantile(vals, 0.25, axis=0),
                ranks.mean(axis=0),
                np.quantile(ranks, 0.75, axis=0),
            ]
        )
    return SummaryMatrix(Z=Z, l_rep=len(traces), source_kind=source_kind)
