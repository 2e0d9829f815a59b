"""Synthetic data generation and dataset I/O.

The packaged 20-component skew-normal design reproduces the simulation
layout at configurable scale: a fixed count vector split across the eight
covariate profiles in {1} x {0,1}^3, either evenly (independent design) or
with antisymmetric +-20-per-unit-scale perturbations on six clusters
(dependent design).  Component locations/scales/skews are artifact-chosen
(the reference experiments pin only counts and separation) and live in a
checked-in JSON file, one record per component with location,
lower-triangular Cholesky scale entries, and skew.

CSV layout: header ``y1..yd,f1..fR``, one observation per row.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import DataError

__all__ = [
    "SkewNormalComponent",
    "SyntheticDesign",
    "Dataset",
    "sample_skew_normal",
    "section4_design",
    "generate_section4",
    "load_csv",
    "write_csv",
    "load_labels",
    "write_labels",
]

# Per-profile base counts of the 20 components (scale 1 gives 8x these in total).
_BASE20 = (200, 170, 130, 100, 80, 70, 50, 30, 28, 22, 20, 18, 16, 14, 12, 10, 9, 8, 7, 6)
# (plus_cluster, minus_cluster, covariate_column, amplitude), zero-based clusters.
_PERTURBATIONS = ((7, 4, 1, 20.0), (9, 5, 2, 20.0), (8, 6, 3, 20.0))


@dataclass(frozen=True)
class SkewNormalComponent:
    """One generator component: location, SPD scale matrix, skew vector."""

    location: np.ndarray
    scale: np.ndarray
    skew: np.ndarray

    def __post_init__(self):
        loc = np.atleast_1d(np.asarray(self.location, dtype=float))
        scale = np.atleast_2d(np.asarray(self.scale, dtype=float))
        skew = np.atleast_1d(np.asarray(self.skew, dtype=float))
        if scale.shape != (loc.size, loc.size) or skew.shape != (loc.size,):
            raise ValueError("component dimensions disagree")
        if not np.allclose(scale, scale.T):
            raise ValueError("scale matrix must be symmetric")
        try:
            chol = np.linalg.cholesky(scale)
        except np.linalg.LinAlgError as exc:
            raise ValueError("scale matrix must be positive definite") from exc
        object.__setattr__(self, "location", loc)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "skew", skew)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return self.location.size

    def sample(self, n: int, rng) -> np.ndarray:
        return sample_skew_normal(self, rng, n)


def sample_skew_normal(component: SkewNormalComponent, rng, n: int = 1) -> np.ndarray:
    """Exact draws via hidden truncation.

    Coordinate-wise, u_j = delta_j |z0| + sqrt(1 - delta_j^2) z1_j with a
    shared half-normal z0 and delta_j = skew_j / sqrt(1 + skew_j^2); the
    draw is location + chol(scale) @ u.  Zero skew reduces to a Gaussian.
    """
    delta = component.skew / np.sqrt(1.0 + component.skew**2)
    z0 = np.abs(rng.standard_normal((n, 1)))
    z1 = rng.standard_normal((n, component.dim))
    u = delta * z0 + np.sqrt(1.0 - delta**2) * z1
    return component.location + u @ component._chol.T


def _covariate_profiles() -> np.ndarray:
    rows = [(1.0, x1, x2, x3) for x1 in (0.0, 1.0) for x2 in (0.0, 1.0) for x3 in (0.0, 1.0)]
    return np.array(sorted(rows))


@dataclass(frozen=True)
class SyntheticDesign:
    """Components plus the count structure of the synthetic experiment."""

    components: tuple[SkewNormalComponent, ...]
    per_profile_base: tuple[int, ...]
    covariates: np.ndarray = field(default_factory=_covariate_profiles)
    perturbations: tuple[tuple[int, int, int, float], ...] = _PERTURBATIONS

    @property
    def num_components(self) -> int:
        return len(self.components)

    @property
    def total_counts(self) -> np.ndarray:
        """The scale-1 count vector summed over profiles (8x the base)."""
        return np.asarray(self.per_profile_base, dtype=int) * self.covariates.shape[0]

    def _real_targets(self, scale: float, dependent: bool) -> np.ndarray:
        base = np.asarray(self.per_profile_base, dtype=float)
        targets = np.tile(base[:, None], (1, self.covariates.shape[0]))
        if dependent:
            for plus, minus, col, amp in self.perturbations:
                sign = 2.0 * self.covariates[:, col] - 1.0
                targets[plus] += amp * sign
                targets[minus] -= amp * sign
        return targets * scale

    def count_matrix(self, scale: float, dependent: bool) -> np.ndarray:
        """Integer per-(component, profile) counts at the given scale.

        Per-component totals scale exactly; fractional per-profile targets
        are apportioned by largest remainder with a rotating tie-break so
        the profile totals stay balanced whenever they are integral.
        """
        if scale <= 0:
            raise ValueError("scale must be positive")
        totals = np.asarray(self.total_counts, dtype=float) * scale
        rounded = np.rint(totals)
        if np.any(np.abs(totals - rounded) > 1e-9):
            bad = int(np.argmax(np.abs(totals - rounded)))
            raise ValueError(
                f"non-integer scaled count {totals[bad]} for cluster {bad + 1}"
            )
        targets = self._real_targets(scale, dependent)
        if np.any(targets < -1e-9):
            j = int(np.argmin(targets.min(axis=1)))
            raise ValueError(
                f"negative perturbed count for cluster {j + 1} at scale {scale}"
            )
        counts = np.zeros(targets.shape, dtype=int)
        n_prof = targets.shape[1]
        pointer = 0
        for j in range(targets.shape[0]):
            row = np.maximum(targets[j], 0.0)
            base = np.floor(row).astype(int)
            short = int(rounded[j]) - int(base.sum())
            fracs = row - base
            order = sorted(
                range(n_prof), key=lambda i: (-fracs[i], (i - pointer) % n_prof)
            )
            for i in order[:short]:
                base[i] += 1
            pointer = (pointer + max(short, 0)) % n_prof
            counts[j] = base
        return counts

    def true_weights(self, scale: float, dependent: bool) -> np.ndarray:
        """Per-profile component proportions implied by the realized counts."""
        counts = self.count_matrix(scale, dependent)
        return counts / counts.sum(axis=0, keepdims=True)

    def merged_to_strongest(self, n_keep: int) -> "SyntheticDesign":
        """Fold every tail component's counts into the nearest retained one.

        Components are ranked by base count; each dropped component's counts
        (and perturbation roles) transfer to the retained component with the
        closest location.
        """
        if not 1 <= n_keep <= self.num_components:
            raise ValueError("n_keep out of range")
        order = np.argsort(-np.asarray(self.per_profile_base))
        keep = sorted(order[:n_keep])
        locs = np.array([c.location for c in self.components])
        target = {}
        for j in range(self.num_components):
            if j in keep:
                target[j] = keep.index(j)
            else:
                dists = np.linalg.norm(locs[keep] - locs[j], axis=1)
                target[j] = int(np.argmin(dists))
        base = np.zeros(n_keep, dtype=int)
        for j, cnt in enumerate(self.per_profile_base):
            base[target[j]] += cnt
        perts = []
        for plus, minus, col, amp in self.perturbations:
            if target[plus] != target[minus]:
                perts.append((target[plus], target[minus], col, amp))
        return SyntheticDesign(
            tuple(self.components[j] for j in keep),
            tuple(int(b) for b in base),
            self.covariates,
            tuple(perts),
        )

    def generate(self, scale: float, dependent: bool, rng) -> "Dataset":
        counts = self.count_matrix(scale, dependent)
        ys, feats, labels = [], [], []
        for j, comp in enumerate(self.components):
            for x in range(self.covariates.shape[0]):
                c = int(counts[j, x])
                if c == 0:
                    continue
                ys.append(comp.sample(c, rng))
                feats.append(np.tile(self.covariates[x], (c, 1)))
                labels.append(np.full(c, j, dtype=int))
        return Dataset(
            y=np.concatenate(ys),
            features=np.concatenate(feats),
            ref_labels=np.concatenate(labels),
        )


def section4_design() -> SyntheticDesign:
    """The packaged 20-component design (counts fixed, shapes artifact-chosen)."""
    text = resources.files("treesb").joinpath("data/section4_components.json").read_text()
    records = json.loads(text)
    components = []
    for rec in records:
        chol = np.asarray(rec["scale_chol"], dtype=float)
        components.append(
            SkewNormalComponent(rec["location"], chol @ chol.T, rec["skew"])
        )
    return SyntheticDesign(tuple(components), _BASE20)


def generate_section4(scale: float, dependent: bool, rng) -> "Dataset":
    """Generate the synthetic benchmark at the requested scale."""
    return section4_design().generate(scale, dependent, rng)


@dataclass
class Dataset:
    """Observations y (n x d), covariate features (n x R), optional truth."""

    y: np.ndarray
    features: np.ndarray
    ref_labels: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        if self.y.shape[0] != self.features.shape[0]:
            raise ValueError("y and features row counts differ")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.features))):
            raise ValueError("dataset contains non-finite values")
        if self.ref_labels is not None:
            self.ref_labels = np.asarray(self.ref_labels)
            if self.ref_labels.shape != (self.y.shape[0],):
                raise ValueError("reference labels length mismatch")
        if self.y.shape[0]:
            profiles, idx = np.unique(self.features, axis=0, return_inverse=True)
        else:
            profiles = np.zeros((0, self.features.shape[1]))
            idx = np.zeros(0, dtype=np.int64)
        self.profiles = profiles
        self.profile_idx = np.asarray(idx, dtype=np.int64).ravel()

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.y.shape[1]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]


def _float_cell(text: str, line_no: int, col: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise DataError(f"line {line_no}: cannot parse {col}={text!r} as a number")
    if not np.isfinite(val):
        raise DataError(f"line {line_no}: non-finite value in column {col}")
    return val


def load_csv(path) -> Dataset:
    """Read a dataset CSV (header y1..yd,f1..fR); rejects NaN/Inf."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        d = sum(1 for h in header if h.startswith("y"))
        r = sum(1 for h in header if h.startswith("f"))
        expected = [f"y{i+1}" for i in range(d)] + [f"f{i+1}" for i in range(r)]
        if d < 1 or r < 1 or header != expected:
            raise DataError(f"{path}: header must be y1..yd,f1..fR, got {header}")
        ys, feats = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + r:
                raise DataError(f"line {line_no}: expected {d + r} fields, got {len(row)}")
            ys.append([_float_cell(v, line_no, header[i]) for i, v in enumerate(row[:d])])
            feats.append(
                [_float_cell(v, line_no, header[d + i]) for i, v in enumerate(row[d:])]
            )
    if not ys:
        raise DataError(f"{path}: no data rows")
    try:
        return Dataset(np.array(ys), np.array(feats))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [f"y{i+1}" for i in range(dataset.dim)]
            + [f"f{i+1}" for i in range(dataset.num_features)]
        )
        for yrow, frow in zip(dataset.y, dataset.features):
            writer.writerow([repr(float(v)) for v in yrow] + [repr(float(v)) for v in frow])


def load_labels(path) -> np.ndarray:
    """Read a one-column clustering CSV with header ``label``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file")
        if [h.strip() for h in header] != ["label"]:
            raise DataError(f"{path}: expected single header column 'label'")
        labels = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 1:
                raise DataError(f"line {line_no}: expected one field")
            labels.append(row[0].strip())
    if not labels:
        raise DataError(f"{path}: no label rows")
    return np.array(labels)


def write_labels(labels, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"])
        for lab in labels:
            writer.writerow([lab])
