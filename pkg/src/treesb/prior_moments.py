"""Prior moments of the covariate-indexed random measures.

Closed forms: the mean/variance/covariance/correlation factorizations in
terms of event probabilities and the cross-covariate kernel
``a(x, x') = sum over leaves of E[W_{x,leaf} W_{x',leaf}]``, plus the
lopsided/balanced evaluations of that kernel under identically distributed
splits and the corresponding correlation lower bounds.

Monte-Carlo: estimators for the logit-normal split moments and for the
measure correlation itself, used both for prior elicitation sweeps and as
the stochastic side of the closed-form oracles.  Estimators stream over
chunks, each chunk drawing from its own spawned generator, so a replicate
budget can be partitioned across independent streams and merged; results
are reproducible given the parent seed and the chunk size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .stick_breaking import logistic
from .tree import TreeKind

__all__ = [
    "MeasureMomentInputs",
    "MeasureMoments",
    "measure_moments",
    "a_lt_truncated",
    "a_lt_finite",
    "a_bt",
    "lower_bound_lt",
    "lower_bound_bt",
    "MomentEstimate",
    "SplitMomentEstimates",
    "ev_product_logitnormal",
    "MeasurePairSample",
    "simulate_measure_pair",
    "mc_corr_measures",
    "mc_sum_cross_moment",
]


@dataclass(frozen=True)
class MeasureMomentInputs:
    """Event probabilities under the base measure and the a(x,x') kernels.

    ``p = G0(A)``, ``p2 = G0(A')``, ``p_joint = G0(A intersect A')``;
    ``a_xx``, ``a_xxp``, ``a_xpxp`` are the within/cross-covariate kernels.
    """

    p: float
    p_joint: float
    p2: float
    a_xx: float
    a_xxp: float
    a_xpxp: float

    def __post_init__(self):
        for name in ("p", "p_joint", "p2"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name}={val} is not a probability")
        if self.p_joint > min(self.p, self.p2) + 1e-12:
            raise ValueError("p_joint cannot exceed min(p, p2)")
        for name in ("a_xx", "a_xxp", "a_xpxp"):
            val = getattr(self, name)
            if not 0.0 < val <= 1.0:
                raise ValueError(f"{name}={val} must lie in (0, 1]")


@dataclass(frozen=True)
class MeasureMoments:
    mean: float
    variance: float
    cov_sets: float
    cov_covariates: float
    corr_sets: float
    corr_covariates: float


def measure_moments(inputs: MeasureMomentInputs) -> MeasureMoments:
    """Mean, variance, covariances and correlations of G_x(A) terms.

    The correlation between two sets under one covariate depends only on
    the base measure; the correlation across covariates depends only on the
    a(x, x') kernels.
    """
    p, p2, pj = inputs.p, inputs.p2, inputs.p_joint
    for name, val in (("G0(A)", p), ("G0(A')", p2)):
        if val in (0.0, 1.0):
            raise ValueError(
                f"correlations are undefined: factor {name}*(1-{name}) vanishes "
                f"at {name}={val}"
            )
    mean = p
    variance = (p - p * p) * inputs.a_xx
    cov_sets = (pj - p * p2) * inputs.a_xx
    cov_covariates = (p - p * p) * inputs.a_xxp
    corr_sets = (pj - p * p2) / math.sqrt(p * (1 - p) * p2 * (1 - p2))
    corr_covariates = inputs.a_xxp / math.sqrt(inputs.a_xx * inputs.a_xpxp)
    return MeasureMoments(mean, variance, cov_sets, cov_covariates, corr_sets, corr_covariates)


def a_lt_truncated(num_terms: int, ev_x: float, ev_xp: float, ev_xxp: float) -> float:
    """Kernel for K remainder-free stick-break pieces of a lopsided chain.

    This is the ``sum of K terms V_k * prod_{l<k}(1-V_l)`` convention; at
    K=1 it equals E[V_x V_x'].  The sampler's K-leaf lopsided tree, which
    assigns the remainder to the last leaf, is ``a_lt_finite``.
    """
    if num_terms < 1:
        raise ValueError("num_terms must be >= 1")
    denom = ev_x + ev_xp - ev_xxp
    if denom == 0.0:
        raise ValueError("zero denominator: EV_x + EV_x' - EV_xV_x' vanishes")
    d = 1.0 - denom
    return ev_xxp * (1.0 - d**num_terms) / denom


def a_lt_finite(num_leaves: int, ev_x: float, ev_xp: float, ev_xxp: float) -> float:
    """Kernel for the sampler's K-leaf lopsided tree (remainder in leaf K)."""
    if num_leaves < 1:
        raise ValueError("num_leaves must be >= 1")
    d = 1.0 - ev_x - ev_xp + ev_xxp
    tail = d ** (num_leaves - 1)
    if num_leaves == 1:
        return 1.0
    return a_lt_truncated(num_leaves - 1, ev_x, ev_xp, ev_xxp) + tail


def a_bt(levels: int, ev_x: float, ev_xp: float, ev_xxp: float) -> float:
    """Kernel for the balanced tree with m levels (K = 2^m leaves)."""
    if levels < 0:
        raise ValueError("levels must be >= 0")
    base = 1.0 - ev_x - ev_xp + 2.0 * ev_xxp
    if base < 0.0:
        raise ValueError(f"inconsistent split moments: base {base} < 0")
    return base**levels


def lower_bound_lt(num_leaves: int) -> float:
    """Finite-K correlation floor for lopsided trees; 1/3 as K -> inf."""
    if num_leaves < 1:
        raise ValueError("num_leaves must be >= 1")
    return (1.0 / 3.0) * (1.0 - 4.0**-num_leaves) / (1.0 - 2.0**-num_leaves)


def lower_bound_bt(levels: int) -> float:
    """Correlation floor 2^-m for balanced trees with m levels."""
    if levels < 0:
        raise ValueError("levels must be >= 0")
    return 2.0**-levels


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    stderr: float


@dataclass(frozen=True)
class SplitMomentEstimates:
    ev_x: MomentEstimate
    ev_xp: MomentEstimate
    ev_xxp: MomentEstimate


def _check_gaussian(mu_gamma, sigma_gamma):
    mu = np.atleast_1d(np.asarray(mu_gamma, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma_gamma, dtype=float))
    if sigma.shape != (mu.size, mu.size):
        raise ValueError("covariance shape does not match mean length")
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise ValueError("coefficient covariance must be positive definite") from exc
    return mu, chol


def ev_product_logitnormal(
    mu_gamma, sigma_gamma, feats_x, feats_xp, n_mc: int, rng
) -> SplitMomentEstimates:
    """MC estimates of E V_x, E V_x', E V_x V_x' under the logit-normal model.

    A common coefficient draw feeds both covariates, matching how one split
    depends on x and x' simultaneously.
    """
    if n_mc < 1000:
        raise ValueError("n_mc must be at least 1000")
    mu, chol = _check_gaussian(mu_gamma, sigma_gamma)
    fx = np.atleast_1d(np.asarray(feats_x, dtype=float))
    fxp = np.atleast_1d(np.asarray(feats_xp, dtype=float))
    if fx.shape != (mu.size,) or fxp.shape != (mu.size,):
        raise ValueError("feature length does not match coefficient length")
    gamma = mu + rng.standard_normal((n_mc, mu.size)) @ chol.T
    vx = logistic(gamma @ fx)
    vxp = logistic(gamma @ fxp)
    prod = vx * vxp

    def est(values):
        return MomentEstimate(float(values.mean()), float(values.std(ddof=1) / math.sqrt(n_mc)))

    return SplitMomentEstimates(est(vx), est(vxp), est(prod))


class _PairAccumulator:
    """Streaming raw power sums for pairs (x, y) in [0, 1]; mergeable."""

    def __init__(self):
        self.n = 0
        self.sx = self.sxx = self.sx3 = self.sx4 = 0.0
        self.sy = self.syy = 0.0
        self.sxy = 0.0

    def add(self, x, y):
        self.n += x.size
        self.sx += float(x.sum())
        self.sxx += float((x * x).sum())
        self.sx3 += float((x**3).sum())
        self.sx4 += float((x**4).sum())
        self.sy += float(y.sum())
        self.syy += float((y * y).sum())
        self.sxy += float((x * y).sum())

    @property
    def mean_x(self) -> MomentEstimate:
        n = self.n
        m = self.sx / n
        var = max(self.sxx / n - m * m, 0.0)
        return MomentEstimate(m, math.sqrt(var / n))

    @property
    def var_x(self) -> MomentEstimate:
        n = self.n
        m = self.sx / n
        m2 = self.sxx / n - m * m
        # central fourth moment from raw sums
        m4 = (
            self.sx4 / n
            - 4 * m * self.sx3 / n
            + 6 * m * m * self.sxx / n
            - 3 * m**4
        )
        se = math.sqrt(max(m4 - m2 * m2, 0.0) / n)
        return MomentEstimate(m2, se)

    @property
    def corr(self) -> MomentEstimate:
        n = self.n
        mx, my = self.sx / n, self.sy / n
        vx = self.sxx / n - mx * mx
        vy = self.syy / n - my * my
        cov = self.sxy / n - mx * my
        r = cov / math.sqrt(vx * vy)
        return MomentEstimate(r, (1.0 - r * r) / math.sqrt(n))


@dataclass(frozen=True)
class MeasurePairSample:
    """Summary statistics of simulated (G_x(A), G_x'(A)) pairs."""

    n: int
    mean_x: MomentEstimate
    mean_xp: MomentEstimate
    var_x: MomentEstimate
    corr: MomentEstimate


def _lt_pieces(v):
    """Stick pieces of a lopsided chain: v (n, B) -> (n, B+1) with remainder."""
    n, breaks = v.shape
    out = np.empty((n, breaks + 1))
    rem = np.ones(n)
    for k in range(breaks):
        out[:, k] = rem * v[:, k]
        rem = rem * (1.0 - v[:, k])
    out[:, breaks] = rem
    return out


def _bt_weights(v):
    """Balanced-tree leaf weights from BFS-ordered splits: (n, K-1) -> (n, K)."""
    n = v.shape[0]
    masses = np.ones((n, 1))
    pos, width = 0, 1
    while pos < v.shape[1]:
        level = v[:, pos : pos + width]
        nxt = np.empty((n, 2 * width))
        nxt[:, 0::2] = masses * level
        nxt[:, 1::2] = masses * (1.0 - level)
        masses = nxt
        pos += width
        width *= 2
    return masses


def _num_split_nodes(kind: TreeKind, num_leaves: int, lt_truncated: bool) -> int:
    if kind is TreeKind.BALANCED:
        m = num_leaves.bit_length() - 1
        if 2**m != num_leaves:
            raise ValueError("balanced tree needs a power-of-two leaf count")
        return num_leaves - 1
    if kind is TreeKind.LOPSIDED:
        return num_leaves if lt_truncated else num_leaves - 1
    raise ValueError("prior-moment simulation supports lopsided/balanced trees only")


def _draw_weight_pairs(kind, num_leaves, mu, chol, fx, fxp, size, rng, lt_truncated):
    """Draw `size` prior replicates of the weight vectors at x and x'."""
    n_nodes = _num_split_nodes(kind, num_leaves, lt_truncated)
    if n_nodes == 0:
        w = np.ones((size, 1))
        return w, w
    gamma = mu + rng.standard_normal((size, n_nodes, mu.size)) @ chol.T
    vx = logistic(gamma @ fx)
    vxp = logistic(gamma @ fxp)
    if kind is TreeKind.BALANCED:
        return _bt_weights(vx), _bt_weights(vxp)
    if lt_truncated:
        return _lt_pieces(vx)[:, :-1], _lt_pieces(vxp)[:, :-1]
    return _lt_pieces(vx), _lt_pieces(vxp)


def simulate_measure_pair(
    kind: TreeKind,
    num_leaves: int,
    mu_gamma,
    sigma_gamma,
    feats_x,
    feats_xp,
    p: float,
    n_mc: int,
    rng,
    chunk_size: int = 20_000,
) -> MeasurePairSample:
    """Simulate prior pairs (G_x(A), G_x'(A)) and return streamed statistics.

    Each replicate draws fresh coefficients for every internal node, builds
    both weight vectors, and realizes the event set A as independent
    Bernoulli(p) leaf memberships shared between the two measures
    (equivalent in distribution to atoms drawn from the base measure with a
    fixed set of probability p).
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be a probability")
    if n_mc < 2:
        raise ValueError("n_mc must be at least 2")
    mu, chol = _check_gaussian(mu_gamma, sigma_gamma)
    fx = np.atleast_1d(np.asarray(feats_x, dtype=float))
    fxp = np.atleast_1d(np.asarray(feats_xp, dtype=float))
    if fx.shape != (mu.size,) or fxp.shape != (mu.size,):
        raise ValueError("feature length does not match coefficient length")

    sizes = [chunk_size] * (n_mc // chunk_size)
    if n_mc % chunk_size:
        sizes.append(n_mc % chunk_size)
    acc = _PairAccumulator()
    for stream, size in zip(rng.spawn(len(sizes)), sizes):
        wx, wxp = _draw_weight_pairs(
            kind, num_leaves, mu, chol, fx, fxp, size, stream, lt_truncated=False
        )
        member = stream.random((size, wx.shape[1])) < p
        gx = (wx * member).sum(axis=1)
        gxp = (wxp * member).sum(axis=1)
        acc.add(gx, gxp)
    return MeasurePairSample(acc.n, acc.mean_x, acc.mean_xp, acc.var_x, acc.corr)


def mc_corr_measures(
    kind: TreeKind,
    num_leaves: int,
    mu_gamma,
    sigma_gamma,
    feats_x,
    feats_xp,
    p: float,
    n_mc: int,
    rng,
    chunk_size: int = 20_000,
) -> MomentEstimate:
    """MC estimate of corr(G_x(A), G_x'(A)) with its standard error."""
    sample = simulate_measure_pair(
        kind, num_leaves, mu_gamma, sigma_gamma, feats_x, feats_xp, p, n_mc, rng, chunk_size
    )
    return sample.corr


def mc_sum_cross_moment(
    kind: TreeKind,
    num_leaves: int,
    mu_gamma,
    sigma_gamma,
    feats_x,
    feats_xp,
    n_mc: int,
    rng,
    lt_truncated: bool = False,
    chunk_size: int = 20_000,
) -> MomentEstimate:
    """MC estimate of a(x, x') = sum over leaves of E[W_x W_x'].

    ``lt_truncated=True`` evaluates the remainder-free lopsided convention
    matching ``a_lt_truncated``; the default matches the sampler's trees.
    """
    mu, chol = _check_gaussian(mu_gamma, sigma_gamma)
    fx = np.atleast_1d(np.asarray(feats_x, dtype=float))
    fxp = np.atleast_1d(np.asarray(feats_xp, dtype=float))
    if fx.shape != (mu.size,) or fxp.shape != (mu.size,):
        raise ValueError("feature length does not match coefficient length")
    sizes = [chunk_size] * (n_mc // chunk_size)
    if n_mc % chunk_size:
        sizes.append(n_mc % chunk_size)
    total = total_sq = 0.0
    count = 0
    for stream, size in zip(rng.spawn(len(sizes)), sizes):
        wx, wxp = _draw_weight_pairs(
            kind, num_leaves, mu, chol, fx, fxp, size, stream, lt_truncated
        )
        t = (wx * wxp).sum(axis=1)
        total += float(t.sum())
        total_sq += float((t * t).sum())
        count += size
    mean = total / count
    var = max(total_sq / count - mean * mean, 0.0)
    return MomentEstimate(mean, math.sqrt(var / count))
