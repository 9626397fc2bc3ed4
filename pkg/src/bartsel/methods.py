"""End-to-end selection methods: fit replicates, summarize, select.

Each method name bundles a split-feature prior with a selection route:

* permutation thresholds on VIP or MI (bart-vip-local / gse / gmax,
  bart-mi-local);
* clustering on a replicate summary matrix (bart-vip-rank, bart/dart
  vc-measure, bart/dart vip-measure);
* the median probability model on MPVIP (dart-mpm).

Seed scheme: a run seed expands to per-fit seeds seed + fit_index
(0-based) and per-permutation seeds seed + 10000 + ell (1-based), so any
prefix of the replicate fits is reproducible independently.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, FitConfig, PosteriorTrace
from .sampler import fit
from .selection import (
    PERMUTATION_SEED_OFFSET,
    SelectionResult,
    cluster_select,
    mpm_select,
    permutation_null,
    threshold_gmax,
    threshold_gse,
    threshold_local,
)
from .summaries import (
    KIND_MI,
    KIND_VIP,
    SOURCE_VC_MEASURE,
    SOURCE_VIP_MEASURE,
    SOURCE_VIP_RANK,
    ImportanceVector,
    SummaryMatrix,
    build_summary_matrix,
    metropolis_importance,
    mpvip,
    vip,
)

__all__ = [
    "METHOD_SPECS",
    "METHOD_NAMES",
    "MethodSpec",
    "RunConfig",
    "MethodResult",
    "resolve_l_rep",
    "fit_replicates",
    "select_with_method",
    "run_method",
]

ROUTE_PERMUTATION = "permutation"
ROUTE_CLUSTER = "cluster"
ROUTE_MPM = "mpm"


@dataclass(frozen=True)
class MethodSpec:
    name: str
    prior_kind: str
    route: str
    default_l_rep: int
    perm_kind: str | None = None
    perm_rule: str | None = None
    source_kind: str | None = None

    @property
    def needs_null(self) -> bool:
        return self.route == ROUTE_PERMUTATION

    @property
    def track_mi(self) -> bool:
        return self.perm_kind == KIND_MI


METHOD_SPECS: dict[str, MethodSpec] = {
    spec.name: spec
    for spec in [
        MethodSpec("bart-vip-local", "bart", ROUTE_PERMUTATION, 10, KIND_VIP, "local"),
        MethodSpec("bart-vip-gse", "bart", ROUTE_PERMUTATION, 10, KIND_VIP, "gse"),
        MethodSpec("bart-vip-gmax", "bart", ROUTE_PERMUTATION, 10, KIND_VIP, "gmax"),
        MethodSpec("bart-mi-local", "bart", ROUTE_PERMUTATION, 10, KIND_MI, "local"),
        MethodSpec("bart-vip-rank", "bart", ROUTE_CLUSTER, 20, source_kind=SOURCE_VIP_RANK),
        MethodSpec("dart-mpm", "dart", ROUTE_MPM, 1),
        MethodSpec("bart-vc-measure", "bart", ROUTE_CLUSTER, 10, source_kind=SOURCE_VC_MEASURE),
        MethodSpec("dart-vc-measure", "dart", ROUTE_CLUSTER, 10, source_kind=SOURCE_VC_MEASURE),
        MethodSpec("bart-vip-measure", "bart", ROUTE_CLUSTER, 10, source_kind=SOURCE_VIP_MEASURE),
        MethodSpec("dart-vip-measure", "dart", ROUTE_CLUSTER, 10, source_kind=SOURCE_VIP_MEASURE),
    ]
}

METHOD_NAMES = tuple(METHOD_SPECS)


def resolve_l_rep(method: str, l_rep: int | None) -> int:
    spec = METHOD_SPECS[method]
    return spec.default_l_rep if l_rep is None else int(l_rep)


@dataclass(frozen=True)
class RunConfig:
    """One selection run: method plus fit, replication, and threshold knobs."""

    method: str
    fit: FitConfig = field(default_factory=FitConfig)
    l_rep: int | None = None
    l_perm: int = 50
    alpha: float = 0.05
    seed: int = 0
    jobs: int = 1

    def validate(self) -> None:
        if self.method not in METHOD_SPECS:
            raise ValueError(
                f"unknown method {self.method!r}; choose one of {', '.join(METHOD_NAMES)}"
            )
        spec = METHOD_SPECS[self.method]
        if resolve_l_rep(self.method, self.l_rep) < 1:
            raise ValueError("l_rep must be >= 1")
        if spec.needs_null and self.l_perm < 1:
            raise ValueError(f"method {self.method!r} needs l_perm >= 1 permutations")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        self.fit.validate()

    def fit_config(self) -> FitConfig:
        """The per-fit configuration implied by the method (prior, MI log)."""
        spec = METHOD_SPECS[self.method]
        return replace(
            self.fit,
            prior_kind=spec.prior_kind,
            track_mi=self.fit.track_mi or spec.track_mi,
        )


@dataclass
class MethodResult:
    method: str
    selection: SelectionResult
    summary: SummaryMatrix | None
    null: np.ndarray | None
    fit_seeds: list[int]
    perm_seeds: list[int]
    runtime_s: float
    config: RunConfig

    @property
    def importance(self) -> np.ndarray:
        return self.selection.importance


def _fit_one(args) -> PosteriorTrace:
    dataset, cfg = args
    return fit(dataset, cfg)


def fit_replicates(
    dataset: Dataset,
    fit_config: FitConfig,
    seed: int,
    l_rep: int,
    jobs: int = 1,
    start: int = 0,
) -> list[PosteriorTrace]:
    """Independent replicate fits with seeds seed + start .. seed + l_rep - 1."""
    tasks = [(dataset, replace(fit_config, seed=seed + i)) for i in range(start, l_rep)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_fit_one, tasks))
    return [_fit_one(t) for t in tasks]


def _mean_importance(traces: list[PosteriorTrace], kind: str) -> np.ndarray:
    if kind == KIND_MI:
        vecs = [metropolis_importance(t).values for t in traces]
    else:
        vecs = [vip(t).values for t in traces]
    return np.mean(np.stack(vecs), axis=0)


_THRESHOLD_RULES = {
    "local": threshold_local,
    "gse": threshold_gse,
    "gmax": threshold_gmax,
}


def select_with_method(
    method: str,
    traces: list[PosteriorTrace],
    null: np.ndarray | None,
    alpha: float,
) -> tuple[SelectionResult, SummaryMatrix | None]:
    """Apply a method's selection route to already-fitted replicate traces."""
    spec = METHOD_SPECS[method]
    if spec.route == ROUTE_PERMUTATION:
        if null is None:
            raise ValueError(f"method {method!r} requires a permutation null matrix")
        observed = _mean_importance(traces, spec.perm_kind)
        return _THRESHOLD_RULES[spec.perm_rule](observed, null, alpha), None
    if spec.route == ROUTE_CLUSTER:
        summary = build_summary_matrix(traces, spec.source_kind)
        return cluster_select(summary), summary
    pi_hat = np.mean(np.stack([mpvip(t).values for t in traces]), axis=0)
    return mpm_select(ImportanceVector("mpvip", pi_hat)), None


def run_method(dataset: Dataset, config: RunConfig) -> MethodResult:
    """Fit, summarize, and select end to end for one dataset."""
    config.validate()
    spec = METHOD_SPECS[config.method]
    l_rep = resolve_l_rep(config.method, config.l_rep)
    fit_cfg = config.fit_config()
    t0 = time.perf_counter()
    traces = fit_replicates(dataset, fit_cfg, config.seed, l_rep, jobs=config.jobs)
    null = None
    perm_seeds: list[int] = []
    if spec.needs_null:
        null = permutation_null(
            dataset, spec.perm_kind, config.l_perm, fit_cfg, config.seed, jobs=config.jobs
        )
        perm_seeds = [
            config.seed + PERMUTATION_SEED_OFFSET + ell for ell in range(1, config.l_perm + 1)
        ]
    selection, summary = select_with_method(config.method, traces, null, config.alpha)
    runtime = time.perf_counter() - t0
    return MethodResult(
        method=config.method,
        selection=selection,
        summary=summary,
        null=null,
        fit_seeds=[config.seed + i for i in range(l_rep)],
        perm_seeds=perm_seeds,
        runtime_s=runtime,
        config=config,
    )
