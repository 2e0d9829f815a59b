"""Leaf weights from splitting variables.

Each internal node ``eps`` of a topology carries a splitting variable
``V_eps`` in [0,1]; a leaf's weight is the product over its ancestors of
``V`` (stepping left) or ``1-V`` (stepping right).  Covariate dependence
enters through a logistic-linear model on each split,
``V = logistic(psi(x)^T gamma_eps)`` with a shared Gaussian prior on the
coefficient vectors.

Products are evaluated in log space and exponentiated at the end; the
resulting weights must land on the simplex by algebra alone and are never
renormalized (a failing sum signals a bug upstream).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tree import NodeId, TreeIndex, TreeTopology, tree_index

__all__ = [
    "SplitCoefficientSet",
    "SplitValues",
    "WeightVector",
    "logistic",
    "split_values",
    "weights_from_splits",
    "weights_for_covariate",
    "log_weights_from_split_matrix",
    "log_weights_from_eta",
]

SIMPLEX_ATOL = 1e-12


def logistic(z):
    """Standard logistic CDF 1/(1+e^-z); accepts scalars or arrays."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("logistic requires finite input")
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def _softplus(x):
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class SplitCoefficientSet:
    """Per-internal-node regression coefficients with a shared Gaussian prior.

    ``gamma`` is aligned to ``tree.internal_order`` and has one length-R row
    per internal node.  The prior covariance must be symmetric positive
    definite (checked by Cholesky).
    """

    tree: TreeTopology
    gamma: np.ndarray
    mu_gamma: np.ndarray
    sigma_gamma: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu_gamma, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.sigma_gamma, dtype=float))
        n_int = len(self.tree.internal_nodes)
        gamma = np.asarray(self.gamma, dtype=float)
        if gamma.size != n_int * mu.size:
            raise ValueError(
                f"gamma must be ({n_int}, {mu.size}), got shape {gamma.shape}"
            )
        if sigma.shape != (mu.size, mu.size):
            raise ValueError("prior covariance shape does not match prior mean")
        if not np.allclose(sigma, sigma.T):
            raise ValueError("prior covariance must be symmetric")
        try:
            np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as exc:
            raise ValueError("prior covariance must be positive definite") from exc
        object.__setattr__(self, "gamma", gamma.reshape(n_int, mu.size))
        object.__setattr__(self, "mu_gamma", mu)
        object.__setattr__(self, "sigma_gamma", sigma)

    @property
    def num_features(self) -> int:
        return self.mu_gamma.size

    def vector_for(self, node: NodeId) -> np.ndarray:
        idx = tree_index(self.tree).internal_pos[node]
        return self.gamma[idx]

    def with_gamma(self, gamma: np.ndarray) -> "SplitCoefficientSet":
        return SplitCoefficientSet(self.tree, gamma, self.mu_gamma, self.sigma_gamma)

    @classmethod
    def draw_prior(cls, tree, mu_gamma, sigma_gamma, rng) -> "SplitCoefficientSet":
        """Draw every node's coefficient vector independently from the prior."""
        mu = np.atleast_1d(np.asarray(mu_gamma, dtype=float))
        sigma = np.atleast_2d(np.asarray(sigma_gamma, dtype=float))
        n_int = len(tree.internal_nodes)
        chol = np.linalg.cholesky(sigma)
        z = rng.standard_normal((n_int, mu.size))
        return cls(tree, mu + z @ chol.T, mu, sigma)


@dataclass(frozen=True)
class SplitValues:
    """One splitting value per internal node, aligned to internal_order."""

    tree: TreeTopology
    values: np.ndarray

    def __post_init__(self):
        vals = np.atleast_1d(np.asarray(self.values, dtype=float))
        n_int = len(self.tree.internal_nodes)
        if vals.shape != (n_int,):
            raise ValueError(f"expected {n_int} split values, got shape {vals.shape}")
        if np.any((vals < 0.0) | (vals > 1.0)) or not np.all(np.isfinite(vals)):
            raise ValueError("split values must lie in [0, 1]")
        object.__setattr__(self, "values", vals)

    def value_for(self, node: NodeId) -> float:
        return float(self.values[tree_index(self.tree).internal_pos[node]])

    @classmethod
    def from_mapping(cls, tree: TreeTopology, mapping) -> "SplitValues":
        order = tree.internal_order
        missing = [n for n in order if n not in mapping]
        if missing:
            raise ValueError(f"missing split value for node {missing[0].serialize()}")
        return cls(tree, np.array([mapping[n] for n in order], dtype=float))


@dataclass(frozen=True)
class WeightVector:
    """Leaf weights aligned to leaf_order; must sum to one within 1e-12."""

    tree: TreeTopology
    values: np.ndarray

    def __post_init__(self):
        vals = np.atleast_1d(np.asarray(self.values, dtype=float))
        if vals.shape != (self.tree.num_leaves,):
            raise ValueError("one weight per leaf required")
        if np.any(vals < 0.0):
            raise ValueError("weights must be non-negative")
        if abs(vals.sum() - 1.0) > SIMPLEX_ATOL:
            raise ValueError(f"weights sum to {vals.sum()!r}, not 1")
        object.__setattr__(self, "values", vals)

    def weight_for(self, leaf: NodeId) -> float:
        return float(self.values[tree_index(self.tree).leaf_pos[leaf]])

    def as_dict(self) -> dict[NodeId, float]:
        return dict(zip(self.tree.leaf_order, self.values))


def split_values(tree: TreeTopology, coeffs: SplitCoefficientSet, features) -> SplitValues:
    """Evaluate V = logistic(psi(x)^T gamma) at every internal node."""
    feats = np.atleast_1d(np.asarray(features, dtype=float))
    if feats.shape != (coeffs.num_features,):
        raise ValueError(
            f"feature length {feats.shape} does not match coefficient length "
            f"{coeffs.num_features}"
        )
    if coeffs.tree != tree:
        raise ValueError("coefficient set is attached to a different tree")
    eta = coeffs.gamma @ feats
    return SplitValues(tree, np.asarray(logistic(eta)))


def weights_from_splits(tree: TreeTopology, splits: SplitValues) -> WeightVector:
    """Multiply splits down each leaf's ancestor path (log space)."""
    if splits.tree != tree:
        raise ValueError("split values are attached to a different tree")
    index = tree_index(tree)
    log_w = log_weights_from_split_matrix(index, splits.values)
    return WeightVector(tree, np.exp(log_w))


def weights_for_covariate(
    tree: TreeTopology, coeffs: SplitCoefficientSet, features
) -> WeightVector:
    return weights_from_splits(tree, split_values(tree, coeffs, features))


def _gather_log_weights(index: TreeIndex, log_v, log_1mv):
    K = index.num_leaves
    if index.num_internal == 0:
        return np.zeros(log_v.shape[:-1] + (K,))
    anc = index.anc_idx
    valid = anc >= 0
    safe = np.where(valid, anc, 0)
    take_left = index.anc_side == 0
    terms = np.where(take_left, log_v[..., safe], log_1mv[..., safe])
    return np.where(valid, terms, 0.0).sum(axis=-1)


def log_weights_from_split_matrix(index: TreeIndex, v) -> np.ndarray:
    """Log leaf weights from split values; leading axes are batch axes.

    ``v`` has shape (..., n_internal); the result has shape (..., K).
    Splits equal to 0 or 1 produce -inf entries (weight zero).
    """
    v = np.asarray(v, dtype=float)
    with np.errstate(divide="ignore"):
        return _gather_log_weights(index, np.log(v), np.log1p(-v))


def log_weights_from_eta(index: TreeIndex, eta) -> np.ndarray:
    """Log leaf weights straight from split logits (numerically preferred).

    Uses log V = -softplus(-eta) and log(1-V) = -softplus(eta), which never
    underflow for finite logits.
    """
    eta = np.asarray(eta, dtype=float)
    return _gather_log_weights(index, -_softplus(-eta), -_softplus(eta))
