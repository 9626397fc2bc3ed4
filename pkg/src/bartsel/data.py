"""Core data structures: datasets, cutpoint grids, decision trees, fit
configuration, and posterior traces.

Conventions used throughout the package:

* matrices and importance vectors are positional (0-based columns);
* *feature index sets* (ground truth, selected sets) are 1-based, matching
  the usual statistical numbering x1..xp;
* all randomness flows through ``numpy.random.Generator`` objects seeded
  explicitly by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "DataError",
    "Dataset",
    "validate_dataset",
    "CutpointGrid",
    "DecisionTree",
    "EnsembleState",
    "FitConfig",
    "PosteriorTrace",
    "predict_tree",
    "predict_ensemble",
]


class DataError(ValueError):
    """Raised when an input table fails validation."""


@dataclass(frozen=True)
class Dataset:
    """A validated regression dataset.

    Attributes
    ----------
    y : ndarray, shape (n,)
        Continuous response.
    X : ndarray, shape (n, p)
        Feature matrix, all entries finite.
    feature_names : tuple of str
        Column names, length p.
    truth : frozenset of int or None
        Optional ground-truth relevant features, 1-based indices.
    """

    y: np.ndarray
    X: np.ndarray
    feature_names: tuple[str, ...]
    truth: frozenset[int] | None = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def with_response(self, y_new: np.ndarray) -> "Dataset":
        """Same features, new response (used by permutation nulls)."""
        y_new = np.asarray(y_new, dtype=np.float64)
        if y_new.shape != (self.n,):
            raise DataError(f"replacement response has shape {y_new.shape}, expected ({self.n},)")
        y_new = y_new.copy()
        y_new.flags.writeable = False
        return replace(self, y=y_new, truth=None)


def validate_dataset(
    y,
    X,
    feature_names: Sequence[str] | None = None,
    truth: Sequence[int] | None = None,
) -> Dataset:
    """Validate raw arrays and construct an immutable :class:`Dataset`.

    Raises :class:`DataError` naming the offending row/column on non-finite
    entries, shape mismatches, or out-of-range truth indices.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"feature matrix must be 2-dimensional, got ndim={X.ndim}")
    n, p = X.shape
    if n < 1 or p < 1:
        raise DataError(f"feature matrix must be non-empty, got shape {X.shape}")
    if y.shape != (n,):
        raise DataError(f"response has shape {y.shape}, expected ({n},)")
    bad = np.argwhere(~np.isfinite(X))
    if bad.size:
        i, j = bad[0]
        raise DataError(f"non-finite feature value at row {i}, column {j}")
    bad_y = np.flatnonzero(~np.isfinite(y))
    if bad_y.size:
        raise DataError(f"non-finite response value at row {bad_y[0]}")
    if feature_names is None:
        names = tuple(f"x{j + 1}" for j in range(p))
    else:
        names = tuple(str(s) for s in feature_names)
        if len(names) != p:
            raise DataError(f"{len(names)} feature names for {p} columns")
        if len(set(names)) != p:
            raise DataError("feature names must be unique")
    truth_set: frozenset[int] | None = None
    if truth is not None:
        truth_set = frozenset(int(t) for t in truth)
        out = [t for t in truth_set if not 1 <= t <= p]
        if out:
            raise DataError(f"truth indices out of range 1..{p}: {sorted(out)}")
    X = X.copy()
    y = y.copy()
    X.flags.writeable = False
    y.flags.writeable = False
    return Dataset(y=y, X=X, feature_names=names, truth=truth_set)


@dataclass(frozen=True)
class CutpointGrid:
    """Per-feature candidate cutpoints: the sorted distinct observed values."""

    grids: tuple[np.ndarray, ...]

    @classmethod
    def from_matrix(cls, X: np.ndarray) -> "CutpointGrid":
        cols = []
        for j in range(X.shape[1]):
            g = np.unique(X[:, j])
            g.flags.writeable = False
            cols.append(g)
        return cls(grids=tuple(cols))

    @property
    def p(self) -> int:
        return len(self.grids)

    def size(self, j: int) -> int:
        return self.grids[j].size


_NO_NODE = -1


class DecisionTree:
    """Binary regression tree stored as an indexed node arena.

    Node ``i`` is a leaf iff ``feature[i] < 0``; internal nodes carry an
    axis-aligned rule ``x[feature] <= cutpoint`` routing left. Freed slots
    are recycled through a free list so ids stay small during sampling.
    ``accept_prob[i]`` is a bookkeeping tag on internal nodes: the
    Metropolis-Hastings acceptance probability min(1, r) of the move that
    created or last modified the rule at ``i``.
    """

    __slots__ = (
        "feature",
        "cutpoint",
        "left",
        "right",
        "parent",
        "value",
        "accept_prob",
        "root",
        "_free",
    )

    def __init__(self) -> None:
        self.feature: list[int] = [_NO_NODE]
        self.cutpoint: list[float] = [0.0]
        self.left: list[int] = [_NO_NODE]
        self.right: list[int] = [_NO_NODE]
        self.parent: list[int] = [_NO_NODE]
        self.value: list[float] = [0.0]
        self.accept_prob: list[float] = [0.0]
        self.root: int = 0
        self._free: list[int] = []

    @classmethod
    def stump(cls, value: float = 0.0) -> "DecisionTree":
        t = cls()
        t.value[t.root] = float(value)
        return t

    # -- structure queries ------------------------------------------------

    @property
    def arena_size(self) -> int:
        return len(self.feature)

    def is_leaf(self, i: int) -> bool:
        return self.feature[i] < 0

    def node_ids(self) -> list[int]:
        """Live node ids in increasing order."""
        dead = set(self._free)
        return [i for i in range(len(self.feature)) if i not in dead]

    def leaf_ids(self) -> list[int]:
        return [i for i in self.node_ids() if self.feature[i] < 0]

    def internal_ids(self) -> list[int]:
        return [i for i in self.node_ids() if self.feature[i] >= 0]

    def prunable_ids(self) -> list[int]:
        """Internal nodes whose children are both leaves."""
        out = []
        for i in self.internal_ids():
            if self.feature[self.left[i]] < 0 and self.feature[self.right[i]] < 0:
                out.append(i)
        return out

    def n_leaves(self) -> int:
        return len(self.leaf_ids())

    def depth(self, i: int) -> int:
        d = 0
        while self.parent[i] != _NO_NODE:
            i = self.parent[i]
            d += 1
        return d

    # -- structure edits ---------------------------------------------------

    def _alloc(self) -> int:
        if self._free:
            return self._free.pop()
        self.feature.append(_NO_NODE)
        self.cutpoint.append(0.0)
        self.left.append(_NO_NODE)
        self.right.append(_NO_NODE)
        self.parent.append(_NO_NODE)
        self.value.append(0.0)
        self.accept_prob.append(0.0)
        return len(self.feature) - 1

    def split_leaf(self, i: int, j: int, c: float) -> tuple[int, int]:
        """Turn leaf ``i`` into an internal node with rule x[j] <= c."""
        if not self.is_leaf(i):
            raise ValueError(f"node {i} is not a leaf")
        l = self._alloc()
        r = self._alloc()
        for child in (l, r):
            self.feature[child] = _NO_NODE
            self.left[child] = _NO_NODE
            self.right[child] = _NO_NODE
            self.value[child] = 0.0
            self.accept_prob[child] = 0.0
            self.parent[child] = i
        self.feature[i] = int(j)
        self.cutpoint[i] = float(c)
        self.left[i] = l
        self.right[i] = r
        return l, r

    def prune(self, i: int) -> None:
        """Collapse a prunable internal node back to a leaf."""
        l, r = self.left[i], self.right[i]
        if l == _NO_NODE or self.feature[l] >= 0 or self.feature[r] >= 0:
            raise ValueError(f"node {i} is not prunable")
        self._free.extend((l, r))
        self.feature[i] = _NO_NODE
        self.left[i] = _NO_NODE
        self.right[i] = _NO_NODE
        self.value[i] = 0.0
        self.accept_prob[i] = 0.0

    def set_rule(self, i: int, j: int, c: float) -> None:
        if self.is_leaf(i):
            raise ValueError(f"node {i} is a leaf")
        self.feature[i] = int(j)
        self.cutpoint[i] = float(c)

    # -- traversal ----------------------------------------------------------

    def route(self, x: np.ndarray) -> int:
        """Leaf id reached by a single observation."""
        i = self.root
        while self.feature[i] >= 0:
            i = self.left[i] if x[self.feature[i]] <= self.cutpoint[i] else self.right[i]
        return i

    def split_counts(self, p: int) -> np.ndarray:
        """Number of internal nodes splitting on each feature, shape (p,)."""
        out = np.zeros(p, dtype=np.int64)
        for i in self.internal_ids():
            out[self.feature[i]] += 1
        return out

    def copy(self) -> "DecisionTree":
        t = DecisionTree.__new__(DecisionTree)
        t.feature = list(self.feature)
        t.cutpoint = list(self.cutpoint)
        t.left = list(self.left)
        t.right = list(self.right)
        t.parent = list(self.parent)
        t.value = list(self.value)
        t.accept_prob = list(self.accept_prob)
        t.root = self.root
        t._free = list(self._free)
        return t

    def validate(self) -> None:
        """Check structural invariants; raises AssertionError on violation."""
        seen: set[int] = set()
        stack = [self.root]
        while stack:
            i = stack.pop()
            assert i not in seen, f"node {i} reachable twice"
            seen.add(i)
            if self.feature[i] >= 0:
                l, r = self.left[i], self.right[i]
                assert l != _NO_NODE and r != _NO_NODE, f"internal node {i} missing a child"
                assert self.parent[l] == i and self.parent[r] == i, "parent link broken"
                stack.extend((l, r))
            else:
                assert self.left[i] == _NO_NODE and self.right[i] == _NO_NODE
        assert seen == set(self.node_ids()), "arena contains unreachable live nodes"
        assert self.parent[self.root] == _NO_NODE


def predict_tree(tree: DecisionTree, X: np.ndarray) -> np.ndarray:
    """Evaluate one tree at each row of ``X`` (shape (n, p)) -> (n,)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    # iterative level-order routing, vectorized over observations
    idx = np.full(n, tree.root, dtype=np.int64)
    feature = np.asarray(tree.feature, dtype=np.int64)
    cutpoint = np.asarray(tree.cutpoint, dtype=np.float64)
    left = np.asarray(tree.left, dtype=np.int64)
    right = np.asarray(tree.right, dtype=np.int64)
    active = feature[idx] >= 0
    while active.any():
        rows = np.flatnonzero(active)
        nodes = idx[rows]
        go_left = X[rows, feature[nodes]] <= cutpoint[nodes]
        idx[rows] = np.where(go_left, left[nodes], right[nodes])
        active[rows] = feature[idx[rows]] >= 0
    return np.asarray(tree.value, dtype=np.float64)[idx]


@dataclass
class EnsembleState:
    """One ensemble draw: trees, noise variance, and (for the sparse prior)
    the split-probability vector and its concentration."""

    trees: list[DecisionTree]
    sigma2: float
    split_probs: np.ndarray | None = None
    alpha: float | None = None

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def predict_ensemble(state: EnsembleState, X: np.ndarray) -> np.ndarray:
    """Sum of per-tree predictions, shape (n,)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = np.zeros(X.shape[0], dtype=np.float64)
    for t in state.trees:
        out += predict_tree(t, X)
    return out


@dataclass(frozen=True)
class FitConfig:
    """Sampler configuration.

    ``prior_kind`` selects the split-feature prior: "bart" (uniform) or
    "dart" (Dirichlet with concentration alpha resampled each sweep).
    Defaults follow the standard regression setup: 20 trees, 5000 burn-in
    sweeps, 5000 kept draws, split prior gamma/(1+d)^beta with gamma=0.95,
    beta=2, leaf sd 0.5/(k_leaf*sqrt(T)) with k_leaf=2, noise prior
    Inv-Gamma(nu/2, nu*lambda/2) with nu=3 and lambda calibrated so
    P(sigma < sd(y_scaled)) = q = 0.9.
    """

    n_trees: int = 20
    burn_in: int = 5000
    n_draws: int = 5000
    gamma: float = 0.95
    beta: float = 2.0
    k_leaf: float = 2.0
    nu: float = 3.0
    q: float = 0.9
    prior_kind: str = "bart"
    dart_a: float = 0.5
    dart_b: float = 1.0
    dart_rho: float | None = None
    alpha_grid_size: int = 1000
    p_birth: float = 0.25
    p_death: float = 0.25
    seed: int = 0
    track_mi: bool = False
    track_s_path: bool = False

    def validate(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.burn_in < 0 or self.n_draws < 1:
            raise ValueError("burn_in must be >= 0 and n_draws >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.beta < 0.0:
            raise ValueError("beta must be >= 0")
        if self.k_leaf <= 0.0 or self.nu <= 0.0 or not 0.0 < self.q < 1.0:
            raise ValueError("k_leaf, nu must be positive and q in (0, 1)")
        if self.prior_kind not in ("bart", "dart"):
            raise ValueError(f"unknown prior_kind {self.prior_kind!r}")
        if self.dart_a <= 0.0 or self.dart_b <= 0.0:
            raise ValueError("dart_a and dart_b must be positive")
        if self.dart_rho is not None and self.dart_rho <= 0.0:
            raise ValueError("dart_rho must be positive when given")
        if self.alpha_grid_size < 1:
            raise ValueError("alpha_grid_size must be >= 1")
        if self.p_birth < 0 or self.p_death < 0 or self.p_birth + self.p_death > 1.0:
            raise ValueError("move probabilities must be non-negative and sum to <= 1")


@dataclass
class PosteriorTrace:
    """Post burn-in draws of everything the summaries need.

    ``counts[k, j]`` is the number of internal nodes splitting on feature j
    anywhere in the ensemble at kept draw k. ``inclusion`` is derived:
    counts > 0. The optional MI log stores, per draw, the features and
    acceptance tags of every internal node in the ensemble.
    """

    counts: np.ndarray
    sigma2_path: np.ndarray
    insample_mean_path: np.ndarray
    leaf_counts: np.ndarray
    seed: int
    config_echo: dict
    mi_features: list[np.ndarray] | None = None
    mi_probs: list[np.ndarray] | None = None
    alpha_path: np.ndarray | None = None
    s_path: np.ndarray | None = None

    @property
    def n_kept(self) -> int:
        return self.counts.shape[0]

    @property
    def p(self) -> int:
        return self.counts.shape[1]

    @property
    def inclusion(self) -> np.ndarray:
        return self.counts > 0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PosteriorTrace):
            return NotImplemented

        def arr_eq(a, b):
            if a is None or b is None:
                return (a is None) == (b is None)
            return a.shape == b.shape and bool(np.array_equal(a, b))

        def list_eq(a, b):
            if a is None or b is None:
                return (a is None) == (b is None)
            return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))

        return (
            arr_eq(self.counts, other.counts)
            and arr_eq(self.sigma2_path, other.sigma2_path)
            and arr_eq(self.insample_mean_path, other.insample_mean_path)
            and arr_eq(self.leaf_counts, other.leaf_counts)
            and self.seed == other.seed
            and self.config_echo == other.config_echo
            and list_eq(self.mi_features, other.mi_features)
            and list_eq(self.mi_probs, other.mi_probs)
            and arr_eq(self.alpha_path, other.alpha_path)
            and arr_eq(self.s_path, other.s_path)
        )
