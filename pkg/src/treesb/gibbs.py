"""Posterior simulation for finite tree stick-breaking mixtures.

One sweep is: categorical reallocation of every observation (likelihood
tempered by the coarsening power zeta), then the Polya-Gamma-augmented
coefficient update at every internal node, then conjugate
Normal-Inverse-Wishart atom updates per leaf with zeta-weighted sufficient
statistics.  Kernels are multivariate Gaussian; the coefficient updates are
never tempered (they involve no kernel likelihood).

Internal nodes with no descendant observations still refresh their
coefficients from the prior so the chain keeps exploring unoccupied
subtrees.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .data_io import Dataset
from .errors import ConfigurationError, NumericalError
from .polya_gamma import sample_pg1
from .stick_breaking import SplitCoefficientSet, log_weights_from_eta
from .tree import (
    NodeId,
    TreeTopology,
    build_balanced,
    build_lopsided,
    tree_index,
)

__all__ = [
    "KernelParams",
    "KernelHyperprior",
    "MixtureState",
    "ModelSpec",
    "RunConfig",
    "TraceDraw",
    "PosteriorTrace",
    "draw_prior_state",
    "sample_observations",
    "allocate_observations",
    "update_gamma_node",
    "update_atoms",
    "gibbs_sweep",
    "run_chain",
    "gibbs_cost_sum",
    "invwishart_rvs",
    "write_trace",
    "load_trace",
    "TraceWriter",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class KernelParams:
    """Per-leaf Gaussian kernel parameters, aligned to leaf_order."""

    means: np.ndarray  # (K, d)
    covs: np.ndarray  # (K, d, d)

    def copy(self) -> "KernelParams":
        return KernelParams(self.means.copy(), self.covs.copy())


@dataclass(frozen=True)
class KernelHyperprior:
    """Normal-Inverse-Wishart base measure for the kernel atoms."""

    m0: np.ndarray
    kappa0: float
    nu0: float
    psi0: np.ndarray

    def __post_init__(self):
        m0 = np.atleast_1d(np.asarray(self.m0, dtype=float))
        psi0 = np.atleast_2d(np.asarray(self.psi0, dtype=float))
        d = m0.size
        if psi0.shape != (d, d):
            raise ConfigurationError("psi0 shape does not match m0 length")
        if self.kappa0 <= 0:
            raise ConfigurationError("kappa0 must be positive")
        if self.nu0 <= d - 1:
            raise ConfigurationError(
                f"nu0={self.nu0} too weak for dimension {d} (need nu0 > d-1)"
            )
        try:
            np.linalg.cholesky(psi0)
        except np.linalg.LinAlgError as exc:
            raise ConfigurationError("psi0 must be positive definite") from exc
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "psi0", psi0)

    @property
    def dim(self) -> int:
        return self.m0.size


@dataclass
class MixtureState:
    """One Gibbs-sweep state.

    ``alloc`` stores leaf positions (indices into ``tree.leaf_order``);
    ``pg_aux`` maps each internal node to the (observation indices, omega)
    pair drawn at its last coefficient update.
    """

    alloc: np.ndarray
    kernels: KernelParams
    coeffs: SplitCoefficientSet
    pg_aux: dict = field(default_factory=dict)

    @property
    def tree(self) -> TreeTopology:
        return self.coeffs.tree

    def allocation_nodes(self) -> list[NodeId]:
        order = self.tree.leaf_order
        return [order[i] for i in self.alloc]


@lru_cache(maxsize=8)
def _tril_indices(d: int):
    return np.tril_indices(d, -1)


def invwishart_rvs(df: float, scale: np.ndarray, rng) -> np.ndarray:
    """Inverse-Wishart draw via the Bartlett decomposition (real df > d-1).

    With A the Bartlett factor and C = chol(scale), the draw is M^T M for
    M = A^-1 C^T, avoiding any explicit matrix inversion.
    """
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    d = scale.shape[0]
    if df <= d - 1:
        raise ConfigurationError(f"inverse-Wishart df {df} requires > {d - 1}")
    chol = np.linalg.cholesky(scale)
    a = np.zeros((d, d))
    np.fill_diagonal(a, np.sqrt(rng.chisquare(df - np.arange(d))))
    if d > 1:
        rows, cols = _tril_indices(d)
        a[rows, cols] = rng.standard_normal(rows.size)
    m = solve_triangular(a, chol.T, lower=True, check_finite=False)
    return m.T @ m


def _draw_niw(hyper: KernelHyperprior, rng) -> tuple[np.ndarray, np.ndarray]:
    cov = invwishart_rvs(hyper.nu0, hyper.psi0, rng)
    mean = hyper.m0 + np.linalg.cholesky(cov / hyper.kappa0) @ rng.standard_normal(hyper.dim)
    return mean, cov


@dataclass(frozen=True)
class ModelSpec:
    """A run configuration resolved against a concrete dataset."""

    topology: TreeTopology
    mu_gamma: np.ndarray
    sigma_gamma: np.ndarray
    hyperprior: KernelHyperprior
    zeta: float

    def resolve(self, dataset: Dataset) -> "ModelSpec":
        return self


@dataclass(frozen=True)
class RunConfig:
    """Sampler settings as read from a flat key-value config file.

    ``m0``/``psi0``/``nu0`` accept the literals ``data_mean``/``data_cov``/
    ``d+2`` which resolve against the dataset; ``mu_gamma`` broadcasts a
    scalar across the R feature columns.
    """

    tree: str
    num_leaves: int
    burn_in: int
    thin: int
    n_draws: int
    seed: int
    mu_gamma: object = 0.0
    sigma_gamma_scale: float | None = 10.0
    sigma_gamma: object = None
    m0: object = "data_mean"
    kappa0: float = 0.01
    nu0: object = "d+2"
    psi0: object = "data_cov"
    zeta: float = 1.0

    def __post_init__(self):
        if self.tree not in ("lopsided", "balanced"):
            raise ConfigurationError(f"unknown tree kind {self.tree!r}")
        if self.num_leaves < 1:
            raise ConfigurationError("num_leaves must be >= 1")
        if self.tree == "balanced":
            k = self.num_leaves
            if (1 << (k.bit_length() - 1)) != k:
                raise ConfigurationError(
                    f"balanced tree needs a power-of-two num_leaves, got {k}"
                )
        if self.burn_in < 0 or self.thin < 1 or self.n_draws < 1:
            raise ConfigurationError("need burn_in >= 0, thin >= 1, n_draws >= 1")
        if not 0.0 < self.zeta <= 1.0:
            raise ConfigurationError("zeta must lie in (0, 1]")

    def build_topology(self) -> TreeTopology:
        if self.tree == "balanced":
            return build_balanced(self.num_leaves)
        return build_lopsided(self.num_leaves)

    def resolve(self, dataset: Dataset) -> ModelSpec:
        r = dataset.num_features
        d = dataset.dim
        mu = np.asarray(self.mu_gamma, dtype=float)
        mu = np.full(r, float(mu)) if mu.ndim == 0 else mu
        if mu.shape != (r,):
            raise ConfigurationError(f"mu_gamma length {mu.shape} != R={r}")
        if self.sigma_gamma is not None:
            sigma = np.atleast_2d(np.asarray(self.sigma_gamma, dtype=float))
            if sigma.shape != (r, r):
                raise ConfigurationError("sigma_gamma matrix shape must be (R, R)")
        elif self.sigma_gamma_scale is not None:
            if self.sigma_gamma_scale <= 0:
                raise ConfigurationError("sigma_gamma_scale must be positive")
            sigma = self.sigma_gamma_scale * np.eye(r)
        else:
            raise ConfigurationError("one of sigma_gamma / sigma_gamma_scale required")
        m0 = dataset.y.mean(axis=0) if _is_literal(self.m0, "data_mean") else np.asarray(self.m0, dtype=float)
        if _is_literal(self.psi0, "data_cov"):
            psi0 = np.atleast_2d(np.cov(dataset.y.T)) if dataset.n > 1 else np.eye(d)
        else:
            psi0 = np.asarray(self.psi0, dtype=float)
            psi0 = float(psi0) * np.eye(d) if psi0.ndim == 0 else np.atleast_2d(psi0)
        nu0 = float(d + 2) if _is_literal(self.nu0, "d+2") else float(self.nu0)
        hyper = KernelHyperprior(m0, float(self.kappa0), nu0, psi0)
        return ModelSpec(self.build_topology(), mu, sigma, hyper, self.zeta)

    def to_mapping(self) -> dict:
        out = {
            "tree": self.tree,
            "num_leaves": self.num_leaves,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "n_draws": self.n_draws,
            "seed": self.seed,
            "kappa0": self.kappa0,
            "zeta": self.zeta,
            "mu_gamma": _value_to_text(self.mu_gamma),
            "m0": _value_to_text(self.m0),
            "nu0": _value_to_text(self.nu0),
            "psi0": _value_to_text(self.psi0),
        }
        if self.sigma_gamma is not None:
            out["sigma_gamma"] = _value_to_text(self.sigma_gamma)
        else:
            out["sigma_gamma_scale"] = self.sigma_gamma_scale
        return out

    @classmethod
    def from_mapping(cls, mapping: dict) -> "RunConfig":
        known = {
            "tree": str,
            "num_leaves": int,
            "burn_in": int,
            "thin": int,
            "n_draws": int,
            "seed": int,
            "kappa0": float,
            "zeta": float,
            "sigma_gamma_scale": float,
            "mu_gamma": _text_to_value,
            "sigma_gamma": _text_to_value,
            "m0": _text_to_value,
            "nu0": _text_to_value,
            "psi0": _text_to_value,
        }
        kwargs = {}
        for key, raw in mapping.items():
            if key not in known:
                raise ConfigurationError(f"unknown config key {key!r}")
            kwargs[key] = known[key](raw)
        missing = {"tree", "num_leaves", "burn_in", "thin", "n_draws", "seed"} - set(kwargs)
        if missing:
            raise ConfigurationError(f"missing config keys: {sorted(missing)}")
        if "sigma_gamma" in kwargs:
            kwargs.setdefault("sigma_gamma_scale", None)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        mapping = {}
        with open(path) as fh:
            for line_no, line in enumerate(fh, start=1):
                text = line.strip()
                if not text or text.startswith("#"):
                    continue
                if "=" not in text:
                    raise ConfigurationError(f"{path}:{line_no}: expected key = value")
                key, _, value = text.partition("=")
                mapping[key.strip()] = value.strip()
        return cls.from_mapping(mapping)


def _is_literal(value, literal: str) -> bool:
    return isinstance(value, str) and value == literal


def _value_to_text(value):
    if isinstance(value, str):
        return value
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return repr(float(arr))
    return ",".join(repr(float(v)) for v in arr.ravel())


def _text_to_value(raw):
    if isinstance(raw, (int, float)):
        return float(raw)
    if not isinstance(raw, str):
        return raw
    if raw in ("data_mean", "data_cov", "d+2"):
        return raw
    parts = [p for p in raw.split(",") if p.strip()]
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise ConfigurationError(f"cannot parse config value {raw!r}")
    if len(values) == 1:
        return values[0]
    n = len(values)
    side = math.isqrt(n)
    if side * side == n and side > 1:
        return np.array(values).reshape(side, side)
    return np.array(values)


def draw_prior_state(model: ModelSpec, dataset: Dataset, rng) -> MixtureState:
    """Sample coefficients, atoms, and allocations from the joint prior."""
    coeffs = SplitCoefficientSet.draw_prior(
        model.topology, model.mu_gamma, model.sigma_gamma, rng
    )
    index = tree_index(model.topology)
    k = index.num_leaves
    d = model.hyperprior.dim
    means = np.empty((k, d))
    covs = np.empty((k, d, d))
    for leaf in range(k):
        means[leaf], covs[leaf] = _draw_niw(model.hyperprior, rng)
    kernels = KernelParams(means, covs)
    if dataset.n:
        log_w = _profile_log_weights(index, coeffs, dataset.profiles)
        logits = log_w[dataset.profile_idx]
        alloc = np.argmax(logits + rng.gumbel(size=logits.shape), axis=1)
    else:
        alloc = np.zeros(0, dtype=np.int64)
    return MixtureState(alloc.astype(np.int64), kernels, coeffs)


def sample_observations(state: MixtureState, rng) -> np.ndarray:
    """Draw y_i from each observation's currently assigned kernel."""
    d = state.kernels.means.shape[1]
    out = np.empty((state.alloc.size, d))
    for leaf in np.unique(state.alloc):
        rows = np.flatnonzero(state.alloc == leaf)
        chol = np.linalg.cholesky(state.kernels.covs[leaf])
        z = rng.standard_normal((rows.size, d))
        out[rows] = state.kernels.means[leaf] + z @ chol.T
    return out


def _profile_log_weights(index, coeffs: SplitCoefficientSet, profiles) -> np.ndarray:
    if index.num_internal == 0:
        return np.zeros((profiles.shape[0], 1))
    eta = profiles @ coeffs.gamma.T  # (P, n_internal)
    return log_weights_from_eta(index, eta)


def _kernel_log_likelihood(kernels: KernelParams, y: np.ndarray) -> np.ndarray:
    """(n, K) Gaussian log densities, one column per leaf."""
    n, d = y.shape
    k = kernels.means.shape[0]
    out = np.empty((n, k))
    for leaf in range(k):
        try:
            chol = np.linalg.cholesky(kernels.covs[leaf])
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"kernel covariance at leaf {leaf} not SPD") from exc
        diff = (y - kernels.means[leaf]).T
        sol = solve_triangular(chol, diff, lower=True, check_finite=False)
        logdet = np.log(np.diag(chol)).sum()
        out[:, leaf] = -0.5 * (sol * sol).sum(axis=0) - logdet - 0.5 * d * _LOG_2PI
    return out


def allocate_observations(
    state: MixtureState, dataset: Dataset, zeta: float, rng
) -> np.ndarray:
    """Draw each allocation from mass proportional to W_{x,leaf} * h^zeta.

    Log-space with Gumbel-max sampling; a row whose every log mass is -inf
    raises a numerical error naming the observation.
    """
    if dataset.n == 0:
        return state.alloc.copy()
    index = tree_index(state.tree)
    log_w = _profile_log_weights(index, state.coeffs, dataset.profiles)
    logits = log_w[dataset.profile_idx] + zeta * _kernel_log_likelihood(
        state.kernels, dataset.y
    )
    dead = ~np.isfinite(logits.max(axis=1))
    if dead.any():
        raise NumericalError(
            f"allocation mass underflow for observation {int(np.flatnonzero(dead)[0])}"
        )
    return np.argmax(logits + rng.gumbel(size=logits.shape), axis=1).astype(np.int64)


def update_gamma_node(node: NodeId, state: MixtureState, dataset: Dataset, rng):
    """One coefficient update with Polya-Gamma augmentation.

    Returns ``(gamma, members, omega)``: the new coefficient vector, the
    indices of the descendant observations, and their auxiliary draws
    (both empty when no observation sits under the node, in which case the
    draw comes from the prior).
    """
    index = tree_index(state.tree)
    if node not in index.internal_pos:
        raise ValueError(f"{node!r} is not an internal node")
    pos = index.internal_pos[node]
    coeffs = state.coeffs
    prior_prec = np.linalg.inv(coeffs.sigma_gamma)
    members = np.flatnonzero(index.desc_mask[pos][state.alloc])
    if members.size == 0:
        chol = np.linalg.cholesky(coeffs.sigma_gamma)
        gamma = coeffs.mu_gamma + chol @ rng.standard_normal(coeffs.num_features)
        return gamma, members, np.zeros(0)
    x = dataset.features[members]
    omega = sample_pg1(x @ coeffs.gamma[pos], rng)
    kappa = np.where(index.left_mask[pos][state.alloc[members]], 0.5, -0.5)
    prec = x.T @ (omega[:, None] * x) + prior_prec
    rhs = x.T @ kappa + prior_prec @ coeffs.mu_gamma
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"gamma update solve failed at node {node.serialize()}") from exc
    mean = solve_triangular(
        chol.T, solve_triangular(chol, rhs, lower=True, check_finite=False),
        lower=False, check_finite=False,
    )
    gamma = mean + solve_triangular(
        chol.T, rng.standard_normal(coeffs.num_features), lower=False, check_finite=False
    )
    return gamma, members, omega


def update_atoms(
    state: MixtureState, dataset: Dataset, zeta: float, hyper: KernelHyperprior, rng
) -> KernelParams:
    """Conjugate NIW atom draws from zeta-weighted sufficient statistics."""
    index = tree_index(state.tree)
    k, d = index.num_leaves, hyper.dim
    means = np.empty((k, d))
    covs = np.empty((k, d, d))
    for leaf in range(k):
        rows = np.flatnonzero(state.alloc == leaf)
        if rows.size == 0:
            means[leaf], covs[leaf] = _draw_niw(hyper, rng)
            continue
        yk = dataset.y[rows]
        n_eff = zeta * rows.size
        ybar = yk.mean(axis=0)
        diff = yk - ybar
        scatter = zeta * diff.T @ diff
        kappa_n = hyper.kappa0 + n_eff
        nu_n = hyper.nu0 + n_eff
        m_n = (hyper.kappa0 * hyper.m0 + n_eff * ybar) / kappa_n
        dm = ybar - hyper.m0
        psi_n = hyper.psi0 + scatter + (hyper.kappa0 * n_eff / kappa_n) * np.outer(dm, dm)
        cov = invwishart_rvs(nu_n, psi_n, rng)
        means[leaf] = m_n + np.linalg.cholesky(cov / kappa_n) @ rng.standard_normal(d)
        covs[leaf] = cov
    return KernelParams(means, covs)


def gibbs_sweep(state: MixtureState, dataset: Dataset, config, rng) -> MixtureState:
    """Allocation, then every internal node's coefficients, then atoms."""
    model = config.resolve(dataset)
    alloc = allocate_observations(state, dataset, model.zeta, rng)
    state = MixtureState(alloc, state.kernels, state.coeffs, {})
    gamma = state.coeffs.gamma.copy()
    pg_aux = {}
    for node in state.tree.internal_order:
        vec, members, omega = update_gamma_node(node, state, dataset, rng)
        gamma[tree_index(state.tree).internal_pos[node]] = vec
        pg_aux[node] = (members, omega)
    coeffs = state.coeffs.with_gamma(gamma)
    state = MixtureState(alloc, state.kernels, coeffs, pg_aux)
    kernels = update_atoms(state, dataset, model.zeta, model.hyperprior, rng)
    return MixtureState(alloc, kernels, coeffs, pg_aux)


@dataclass
class TraceDraw:
    index: int
    gamma: np.ndarray  # (n_internal, R)
    means: np.ndarray  # (K, d)
    covs: np.ndarray  # (K, d, d)
    alloc: np.ndarray  # (n,) leaf positions
    weights: np.ndarray  # (P, K) per-profile leaf weights


@dataclass
class PosteriorTrace:
    tree: TreeTopology
    profiles: np.ndarray
    draws: list
    complete: bool = True

    def __len__(self):
        return len(self.draws)

    def weights_array(self) -> np.ndarray:
        return np.stack([d.weights for d in self.draws])

    def gamma_array(self) -> np.ndarray:
        return np.stack([d.gamma for d in self.draws])

    def allocations_array(self) -> np.ndarray:
        return np.stack([d.alloc for d in self.draws])


def run_chain(
    dataset: Dataset,
    config: RunConfig,
    chain_index: int = 0,
    on_draw=None,
) -> PosteriorTrace:
    """Run one chain: burn in, then record every thin-th sweep.

    All randomness flows from ``SeedSequence(config.seed, spawn_key=(chain,))``
    so reruns (and any degree of chain parallelism) are bit-identical.
    """
    model = config.resolve(dataset)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(chain_index,)))
    index = tree_index(model.topology)
    state = draw_prior_state(model, dataset, rng)
    trace = PosteriorTrace(model.topology, dataset.profiles.copy(), [], complete=False)
    total = config.burn_in + config.thin * config.n_draws
    kept = 0
    for sweep in range(1, total + 1):
        state = gibbs_sweep(state, dataset, model, rng)
        if sweep > config.burn_in and (sweep - config.burn_in) % config.thin == 0:
            weights = np.exp(_profile_log_weights(index, state.coeffs, dataset.profiles))
            draw = TraceDraw(
                index=kept,
                gamma=state.coeffs.gamma.copy(),
                means=state.kernels.means.copy(),
                covs=state.kernels.covs.copy(),
                alloc=state.alloc.copy(),
                weights=weights,
            )
            trace.draws.append(draw)
            kept += 1
            if on_draw is not None:
                on_draw(draw)
    trace.complete = True
    return trace


def gibbs_cost_sum(topology: TreeTopology, allocations) -> int:
    """Total ancestor count over allocated leaves (per-sweep regression cost)."""
    index = tree_index(topology)
    alloc = np.asarray(
        [index.leaf_pos[a] if isinstance(a, NodeId) else a for a in allocations],
        dtype=np.int64,
    )
    if alloc.size and (alloc.min() < 0 or alloc.max() >= index.num_leaves):
        raise ValueError("allocation index out of range")
    return int(index.depths[alloc].sum())


# ---------------------------------------------------------------------------
# Trace wire format: newline-delimited JSON, one record per draw, bracketed
# by a header and a completeness marker.

def _profile_key(profile) -> str:
    return ",".join(repr(float(v)) for v in profile)


class TraceWriter:
    """Incremental NDJSON trace writer with an end-of-run marker."""

    def __init__(self, path, topology: TreeTopology, profiles):
        self.path = path
        self.topology = topology
        self.profiles = np.atleast_2d(np.asarray(profiles, dtype=float))
        self._fh = open(path, "w")
        self._count = 0
        header = {
            "kind": "header",
            "tree": topology.kind.value,
            "num_leaves": topology.num_leaves,
            "internal_nodes": [n.serialize() for n in topology.internal_order],
            "leaves": [n.serialize() for n in topology.leaf_order],
            "profiles": [[float(v) for v in row] for row in self.profiles],
        }
        self._fh.write(json.dumps(header) + "\n")

    def write_draw(self, draw: TraceDraw) -> None:
        order = self.topology.internal_order
        leaves = self.topology.leaf_order
        record = {
            "kind": "draw",
            "draw": draw.index,
            "gamma": {
                node.serialize(): [float(v) for v in draw.gamma[j]]
                for j, node in enumerate(order)
            },
            "kernels": {
                leaf.serialize(): {
                    "mean": [float(v) for v in draw.means[j]],
                    "cov": [[float(v) for v in row] for row in draw.covs[j]],
                }
                for j, leaf in enumerate(leaves)
            },
            "alloc": [leaves[i].serialize() for i in draw.alloc],
            "weights": {
                _profile_key(self.profiles[p]): [float(v) for v in draw.weights[p]]
                for p in range(self.profiles.shape[0])
            },
        }
        self._fh.write(json.dumps(record) + "\n")
        self._count += 1

    def close(self, complete: bool) -> None:
        if self._fh.closed:
            return
        if complete:
            self._fh.write(json.dumps({"kind": "end", "n_draws": self._count}) + "\n")
        self._fh.close()


def write_trace(path, trace: PosteriorTrace) -> None:
    writer = TraceWriter(path, trace.tree, trace.profiles)
    for draw in trace.draws:
        writer.write_draw(draw)
    writer.close(trace.complete)


def load_trace(path) -> PosteriorTrace:
    """Read a trace file; absence of the end marker flags it incomplete."""
    from .tree import build_custom

    with open(path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("kind") != "header":
        raise ValueError(f"{path}: not a trace file (missing header)")
    header = lines[0]
    kind = header["tree"]
    if kind == "lopsided":
        topology = build_lopsided(header["num_leaves"])
    elif kind == "balanced":
        topology = build_balanced(header["num_leaves"])
    else:
        topology = build_custom(header["leaves"])
    profiles = np.array(header["profiles"], dtype=float)
    leaves = topology.leaf_order
    leaf_pos = {n.serialize(): i for i, n in enumerate(leaves)}
    order = topology.internal_order
    draws = []
    complete = False
    for rec in lines[1:]:
        if rec.get("kind") == "end":
            complete = True
            continue
        gamma = np.array([rec["gamma"][n.serialize()] for n in order], dtype=float)
        if gamma.size == 0:
            gamma = gamma.reshape(0, 0)
        means = np.array([rec["kernels"][n.serialize()]["mean"] for n in leaves])
        covs = np.array([rec["kernels"][n.serialize()]["cov"] for n in leaves])
        alloc = np.array([leaf_pos[s] for s in rec["alloc"]], dtype=np.int64)
        weights = np.array(
            [rec["weights"][_profile_key(row)] for row in profiles], dtype=float
        )
        draws.append(TraceDraw(rec["draw"], gamma, means, covs, alloc, weights))
    return PosteriorTrace(topology, profiles, draws, complete)
