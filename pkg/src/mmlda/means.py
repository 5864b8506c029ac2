"""Max-Mahalanobis mean sets: construction, validation, and robustness geometry.

A mean set is a collection of L class prototypes in R^p that all share one
squared norm, sum to zero, and have every pairwise inner product pinned to
the single value that maximises the minimal pairwise distance.  Under an
identity covariance the Mahalanobis distance between prototypes reduces to
the Euclidean one; a general SPD covariance is handled by whitening.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .rng import make_rng, normals

__all__ = [
    "MeanSet",
    "MMDSpec",
    "CovarianceModel",
    "OptConditionReport",
    "WhitenTransform",
    "generate_opt_means",
    "verify_opt_condition",
    "pairwise_mahalanobis",
    "approx_robustness",
    "robustness_upper_bound",
    "whiten",
    "save_mean_set",
    "load_mean_set",
]


@dataclass(frozen=True)
class MeanSet:
    """L prototype vectors of dimension p, each with squared norm ``sq_norm``.

    Invariants checked at construction: at least two classes, L <= p + 1,
    every squared norm within 1e-6 (relative) of sq_norm, and a zero vector
    sum.  Strict verification at a caller-chosen tolerance is done by
    :func:`verify_opt_condition`.
    """

    means: np.ndarray
    sq_norm: float

    def __post_init__(self):
        means = np.ascontiguousarray(np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sq_norm", float(self.sq_norm))
        if means.ndim != 2:
            raise ValueError("means must have shape (classes, dim)")
        num_classes, dim = means.shape
        if num_classes < 2 or dim < 1:
            raise ValueError(f"need >= 2 classes and >= 1 dimension, got shape {means.shape}")
        if num_classes > dim + 1:
            raise ValueError(
                f"{num_classes} equidistant prototypes do not fit in dimension {dim}; "
                "need classes <= dim + 1"
            )
        if not np.isfinite(self.sq_norm) or self.sq_norm <= 0.0:
            raise ValueError("sq_norm must be a positive real")
        norms = np.einsum("ij,ij->i", means, means)
        if np.abs(norms - self.sq_norm).max() > 1e-6 * self.sq_norm:
            raise ValueError("every mean must have squared norm equal to sq_norm")
        col_sum = np.abs(means.sum(axis=0)).max()
        if col_sum > 1e-6 * np.sqrt(self.sq_norm) * num_classes:
            raise ValueError("means must sum to the zero vector")

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class MMDSpec:
    """Latent-space generative model: a mean set plus class priors."""

    mean_set: MeanSet
    priors: np.ndarray

    def __post_init__(self):
        priors = np.asarray(self.priors, dtype=np.float64)
        object.__setattr__(self, "priors", priors)
        if priors.shape != (self.mean_set.num_classes,):
            raise ValueError("priors length must match the number of classes")
        if (priors < 0).any():
            raise ValueError("priors must be nonnegative")
        if abs(priors.sum() - 1.0) > 1e-12:
            raise ValueError("priors must sum to one")

    @classmethod
    def uniform(cls, mean_set: MeanSet) -> "MMDSpec":
        k = mean_set.num_classes
        return cls(mean_set, np.full(k, 1.0 / k))


@dataclass(frozen=True)
class CovarianceModel:
    """Shared class covariance: an SPD matrix, or None for the identity."""

    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.matrix is None:
            return
        sigma = np.asarray(self.matrix, dtype=np.float64)
        object.__setattr__(self, "matrix", sigma)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ValueError("covariance must be a square matrix")
        scale = max(np.abs(sigma).max(), 1.0)
        if np.abs(sigma - sigma.T).max() > 1e-8 * scale:
            raise ValueError("covariance must be symmetric")

    def cholesky(self, dim: int) -> np.ndarray:
        """Lower-triangular factor with positive diagonal; identity when unset."""
        if self.matrix is None:
            return np.eye(dim)
        if self.matrix.shape[0] != dim:
            raise ValueError(f"covariance is {self.matrix.shape[0]}x{self.matrix.shape[0]}, need {dim}")
        try:
            return np.linalg.cholesky(self.matrix)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc


@dataclass(frozen=True)
class OptConditionReport:
    max_diag_err: float
    max_offdiag_err: float
    passed: bool


@dataclass(frozen=True)
class WhitenTransform:
    """Affine map v -> factor^{-1} (v - center) that standardises a covariance."""

    factor: np.ndarray
    center: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        shifted = np.atleast_2d(np.asarray(points, dtype=np.float64)) - self.center
        out = solve_triangular(self.factor, shifted.T, lower=True).T
        return out if np.asarray(points).ndim == 2 else out[0]


def _as_means(means) -> np.ndarray:
    if isinstance(means, MeanSet):
        return means.means
    arr = np.asarray(means, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("means must have shape (classes, dim)")
    return arr


def generate_opt_means(sq_norm: float, dim: int, num_classes: int,
                       rotation_seed: int | None = None) -> MeanSet:
    """Construct prototypes whose Gram matrix is sq_norm on the diagonal and
    sq_norm / (1 - L) everywhere else.

    The construction is deterministic: start from the first basis vector,
    solve each new prototype's leading coordinates from the inner-product
    constraints against the previous ones, and place the residual mass on the
    next fresh coordinate.  When ``num_classes == dim + 1`` the last prototype
    has no fresh coordinate left; its residual is analytically zero and is
    asserted to be so instead of being written out of bounds.

    ``rotation_seed`` optionally applies a seeded random orthogonal rotation;
    the canonical (unrotated) solution is the default.
    """
    sq_norm = float(sq_norm)
    if not np.isfinite(sq_norm) or sq_norm <= 0.0:
        raise ValueError("sq_norm must be a positive real")
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if dim < 1:
        raise ValueError("dimension must be at least 1")
    if num_classes > dim + 1:
        raise ValueError(
            f"no solution for {num_classes} classes in dimension {dim}; need classes <= dim + 1"
        )

    k = num_classes
    mu = np.zeros((k, dim))
    mu[0, 0] = 1.0
    for i in range(1, k):
        for j in range(i):
            mu[i, j] = -(1.0 + np.dot(mu[i], mu[j]) * (k - 1)) / (mu[j, j] * (k - 1))
        residual = 1.0 - np.dot(mu[i], mu[i])
        if i < min(dim, k - 1):
            if residual < -1e-9:
                raise ArithmeticError(f"negative residual {residual:.3e} in mean construction")
            mu[i, i] = np.sqrt(max(residual, 0.0))
        elif abs(residual) > 1e-9:
            # the last prototype is pinned by its constraints; writing
            # sqrt(float noise) here would pollute the zero-sum property
            raise ArithmeticError(
                f"residual {residual:.3e} for the last prototype should vanish analytically"
            )
    mu *= np.sqrt(sq_norm)

    if rotation_seed is not None:
        gauss = normals(make_rng(rotation_seed), (dim, dim))
        q, r = np.linalg.qr(gauss)
        q *= np.sign(np.diag(r))  # fix the factorisation's sign ambiguity
        mu = mu @ q.T

    col_sum = np.abs(mu.sum(axis=0)).max()
    if col_sum > 1e-9 * np.sqrt(sq_norm) * k:
        raise ArithmeticError("constructed means do not sum to zero")
    return MeanSet(mu, sq_norm)


def verify_opt_condition(means, tol: float = 1e-9, sq_norm: float | None = None) -> OptConditionReport:
    """Check the Gram-matrix optimality condition at relative tolerance ``tol``.

    Accepts a MeanSet (sq_norm taken from it) or a raw (L, p) array with an
    explicit ``sq_norm``.  Errors are reported in absolute units; the pass
    criterion compares them against ``tol * sq_norm``.
    """
    if isinstance(means, MeanSet):
        sq_norm = means.sq_norm
    elif sq_norm is None:
        raise ValueError("sq_norm is required when passing a raw array")
    arr = _as_means(means)
    k = arr.shape[0]
    gram = arr @ arr.T
    off_mask = ~np.eye(k, dtype=bool)
    max_diag_err = float(np.abs(np.diag(gram) - sq_norm).max())
    max_offdiag_err = float(np.abs(gram[off_mask] - sq_norm / (1.0 - k)).max())
    passed = max_diag_err <= tol * sq_norm and max_offdiag_err <= tol * sq_norm
    return OptConditionReport(max_diag_err, max_offdiag_err, passed)


def pairwise_mahalanobis(means) -> np.ndarray:
    """Pairwise distances between prototypes under an identity covariance."""
    arr = _as_means(means)
    diff = arr[:, None, :] - arr[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def approx_robustness(means) -> float:
    """Half the minimal pairwise prototype distance."""
    arr = _as_means(means)
    if arr.shape[0] < 2:
        raise ValueError("need at least two means")
    dists = pairwise_mahalanobis(arr)
    off = dists[~np.eye(arr.shape[0], dtype=bool)]
    return float(off.min() / 2.0)


def robustness_upper_bound(sq_norm: float, num_classes: int) -> float:
    """Largest attainable value of :func:`approx_robustness` for zero-sum means
    with maximal squared norm ``sq_norm``: sqrt(L * C / (2 (L - 1)))."""
    if sq_norm <= 0.0:
        raise ValueError("sq_norm must be positive")
    if num_classes < 2:
        raise ValueError("need at least two classes")
    return float(np.sqrt(num_classes * sq_norm / (2.0 * (num_classes - 1))))


def whiten(means, covariance: CovarianceModel | np.ndarray | None = None):
    """Standardise means under a shared covariance.

    Returns ``(standardized_means, transform)`` where the transform is
    v -> Q^{-1} (v - mean_of_means) with Q the lower Cholesky factor.  The map
    recenters the means to zero sum and turns covariance-weighted distances
    into plain Euclidean ones.
    """
    arr = _as_means(means)
    if covariance is None or isinstance(covariance, CovarianceModel):
        cov = covariance or CovarianceModel()
    else:
        cov = CovarianceModel(covariance)
    factor = cov.cholesky(arr.shape[1])
    center = arr.mean(axis=0)
    transform = WhitenTransform(factor, center)
    return transform.apply(arr), transform


def save_mean_set(path, mean_set: MeanSet) -> None:
    """Write a mean set as text: header "L p C", then one row per prototype.

    Values are printed with 17 significant digits, so parse/emit round-trips
    are bit-identical.
    """
    lines = [f"{mean_set.num_classes} {mean_set.dim} {mean_set.sq_norm:.17g}"]
    for row in mean_set.means:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mean_set(path) -> MeanSet:
    with open(path, "r", encoding="ascii") as fh:
        tokens = fh.readline().split()
        if len(tokens) != 3:
            raise ValueError("mean-set file must start with an 'L p C' header")
        num_classes, dim, sq_norm = int(tokens[0]), int(tokens[1]), float(tokens[2])
        rows = []
        for _ in range(num_classes):
            row = fh.readline().split()
            if len(row) != dim:
                raise ValueError("mean-set file row has the wrong number of values")
            rows.append([float(v) for v in row])
    return MeanSet(np.array(rows), sq_norm)
