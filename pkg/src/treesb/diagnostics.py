"""Post-processing of posterior traces.

Covers the clustering distance used to judge recovery, equal-tailed
pointwise credible intervals, per-draw descending weight sorting as a
label-switching mitigation, covariate-effect weight differences, and the
variance-decay table contrasting per-leaf weight variances with the
right-spine product bound.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .stick_breaking import log_weights_from_eta, log_weights_from_split_matrix
from .tree import TreeKind, TreeTopology, tree_index

__all__ = [
    "jaccard_distance",
    "posthoc_sort",
    "IntervalSummary",
    "pointwise_ci",
    "covariate_effect_differences",
    "VarianceDecayReport",
    "variance_decay_report",
]


def _pair_count(counts: np.ndarray) -> int:
    counts = counts.astype(np.int64)
    return int((counts * (counts - 1) // 2).sum())


def jaccard_distance(a, b) -> float:
    """One minus the ratio of shared to combined co-clustered pairs.

    Label-permutation invariant; defined as 0 when neither clustering has a
    co-clustered pair.
    """
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    if a.shape != b.shape:
        raise ValueError(f"clustering lengths differ: {a.size} vs {b.size}")
    if a.size == 0:
        return 0.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    width = int(bi.max()) + 1
    joint = np.bincount(ai.astype(np.int64) * width + bi)
    pairs_a = _pair_count(np.bincount(ai))
    pairs_b = _pair_count(np.bincount(bi))
    both = _pair_count(joint)
    union = pairs_a + pairs_b - both
    if union == 0:
        return 0.0
    return 1.0 - both / union


def posthoc_sort(weight_draws) -> np.ndarray:
    """Sort each draw's weight vector in decreasing order (rank indexing).

    Removes permutation variation across draws; summaries are then taken
    per rank instead of per leaf label.  The procedure rests on assumptions
    that do not hold in general, so a warning is emitted when the sorted
    medians disagree with the rank-ordered raw medians beyond the sorted
    CI widths.
    """
    draws = np.atleast_2d(np.asarray(weight_draws, dtype=float))
    sorted_draws = np.sort(draws, axis=1)[:, ::-1]
    if draws.shape[0] >= 2:
        sorted_medians = np.median(sorted_draws, axis=0)
        ranked_raw = np.sort(np.median(draws, axis=0))[::-1]
        ci = pointwise_ci(sorted_draws, 0.95)
        widths = ci.upper - ci.lower
        if np.any(np.abs(sorted_medians - ranked_raw) > np.maximum(widths, 1e-12)):
            warnings.warn(
                "post-hoc sorted medians disagree with rank-ordered raw medians "
                "beyond the CI widths; the sorting assumptions may not hold here",
                stacklevel=2,
            )
    return sorted_draws


@dataclass(frozen=True)
class IntervalSummary:
    """Per-index equal-tailed interval endpoints and medians."""

    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    level: float

    def __post_init__(self):
        if np.any(self.lower > self.median) or np.any(self.median > self.upper):
            raise ValueError("interval endpoints out of order")


def pointwise_ci(values, level: float) -> IntervalSummary:
    """Equal-tailed empirical interval from order statistics.

    With n draws and alpha = 1 - level, the endpoints are the order
    statistics at (1-based) indices ceil(alpha/2 * n) and
    ceil((1-alpha/2) * n).
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie strictly between 0 and 1")
    vals = np.asarray(values, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    n = vals.shape[0]
    if n < 2:
        raise ValueError("need at least 2 draws for an interval")
    alpha = 1.0 - level
    lo_idx = max(int(np.ceil(alpha / 2.0 * n)), 1) - 1
    hi_idx = int(np.ceil((1.0 - alpha / 2.0) * n)) - 1
    ordered = np.sort(vals, axis=0)
    return IntervalSummary(
        lower=ordered[lo_idx].copy(),
        median=np.median(vals, axis=0),
        upper=ordered[hi_idx].copy(),
        level=level,
    )


def covariate_effect_differences(trace, profile_a, profile_b) -> np.ndarray:
    """Per-draw, per-leaf weight differences W_{a,leaf} - W_{b,leaf}.

    Each draw's coefficients are pushed through the weight map at both
    covariate profiles; rows sum to zero since both vectors live on the
    simplex.
    """
    index = tree_index(trace.tree)
    gammas = trace.gamma_array()
    pa = np.atleast_1d(np.asarray(profile_a, dtype=float))
    pb = np.atleast_1d(np.asarray(profile_b, dtype=float))
    r = gammas.shape[2] if gammas.ndim == 3 and index.num_internal else pa.size
    if pa.shape != (r,) or pb.shape != (r,):
        raise ValueError("profile feature length does not match the trace coefficients")
    if index.num_internal == 0:
        return np.zeros((len(trace.draws), 1))
    wa = np.exp(log_weights_from_eta(index, gammas @ pa))
    wb = np.exp(log_weights_from_eta(index, gammas @ pb))
    return wa - wb


@dataclass(frozen=True)
class VarianceDecayReport:
    """Empirical per-leaf weight variances against the product bound.

    ``bounds`` multiplies E[(1-V)^2] over each leaf's right-step ancestors
    (for the lopsided tree this is the classic prod_{l<k} E(1-V_l)^2 bound
    on Var W_k); it is None for non-lopsided trees.
    """

    leaves: tuple
    variances: np.ndarray
    bounds: np.ndarray | None
    e_one_minus_v_sq: np.ndarray


def variance_decay_report(split_draws, topology: TreeTopology) -> VarianceDecayReport:
    """Build the variance-decay table from split-value draws.

    ``split_draws`` has one row per draw and one column per internal node in
    canonical order; weights are recomputed per draw, so the table applies
    equally to prior simulations and posterior traces evaluated at a fixed
    covariate profile.
    """
    index = tree_index(topology)
    draws = np.atleast_2d(np.asarray(split_draws, dtype=float))
    if draws.shape[1] != index.num_internal:
        raise ValueError("split draws do not match the tree's internal nodes")
    weights = np.exp(log_weights_from_split_matrix(index, draws))
    variances = weights.var(axis=0)
    e1mv_sq = ((1.0 - draws) ** 2).mean(axis=0) if index.num_internal else np.zeros(0)
    bounds = None
    if topology.kind is TreeKind.LOPSIDED:
        bounds = np.ones(index.num_leaves)
        for k in range(index.num_leaves):
            for lev in range(index.depths[k]):
                if index.anc_side[k, lev] == 1:
                    bounds[k] *= e1mv_sq[index.anc_idx[k, lev]]
    return VarianceDecayReport(index.leaf_order, variances, bounds, e1mv_sq)
