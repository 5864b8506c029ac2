"""Closed-form robustness and efficiency results, with numerical oracles.

Conventions: ``delta`` is the Mahalanobis distance between two class means,
``zeta`` the log-ratio of their priors, and the standard normal CDF is
computed through the complementary error function (accurate to ~1e-15 on the
ranges used here).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import erfc

from .rng import make_rng, normals

__all__ = [
    "QuadratureError",
    "MonteCarloResult",
    "norm_cdf",
    "folded_normal_mean",
    "expected_boundary_distance",
    "boundary_distance_derivative",
    "monte_carlo_boundary_distance",
    "efron_A",
    "efron_A_trapezoid",
    "efron_efficiency",
    "efron_efficiency_reference",
    "mmlda_label_gap",
]

# Integrands below decay at least as fast as a standard gaussian; beyond 12
# sigma they contribute less than 1e-30.
_QUAD_RANGE = 12.0
_QUAD_ABS_TOL = 1e-10


class QuadratureError(RuntimeError):
    """Numerical integration did not converge to the requested tolerance."""


@dataclass(frozen=True)
class MonteCarloResult:
    estimate: float
    standard_error: float


def norm_cdf(x):
    """Standard normal CDF via erfc."""
    return 0.5 * erfc(-np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


def folded_normal_mean(mean: float, std: float) -> float:
    """E|H| for H ~ N(mean, std^2)."""
    if std <= 0.0:
        raise ValueError("std must be positive")
    ratio = mean / std
    return float(
        math.sqrt(2.0 / math.pi) * std * math.exp(-0.5 * ratio * ratio)
        + mean * (1.0 - 2.0 * norm_cdf(-ratio))
    )


def _check_delta_zeta(delta: float, zeta: float) -> None:
    if not np.isfinite(delta) or delta < 0.0:
        raise ValueError("delta must be a nonnegative real")
    if delta == 0.0 and zeta != 0.0:
        raise ValueError("delta = 0 with nonzero zeta leaves the boundary offset undefined")


def expected_boundary_distance(delta: float, zeta: float = 0.0) -> float:
    """Expected distance from a class sample to the pairwise Fisher boundary.

    The signed boundary value at a sample is Gaussian with mean
    zeta + delta^2/2 and standard deviation delta, so the distance is that
    variable's absolute value divided by delta: a folded normal with unit
    scale and location alpha = delta/2 + zeta/delta.  At delta = 0 (and
    zeta = 0) this degenerates to the half-normal mean sqrt(2/pi).
    """
    delta = float(delta)
    zeta = float(zeta)
    _check_delta_zeta(delta, zeta)
    if delta == 0.0:
        return math.sqrt(2.0 / math.pi)
    return folded_normal_mean(zeta + 0.5 * delta * delta, delta) / delta


def boundary_distance_derivative(delta: float, zeta: float = 0.0) -> float:
    """d/d(delta) of :func:`expected_boundary_distance`.

    With alpha = delta/2 + zeta/delta the chain rule gives
    [1 - 2 Phi(-alpha)] * (1/2 - zeta/delta^2); at zeta = 0 this reduces to
    [1 - 2 Phi(-delta/2)] / 2 >= 0.
    """
    delta = float(delta)
    zeta = float(zeta)
    if not np.isfinite(delta) or delta <= 0.0:
        raise ValueError("delta must be positive")
    alpha = 0.5 * delta + zeta / delta
    return float((1.0 - 2.0 * norm_cdf(-alpha)) * (0.5 - zeta / (delta * delta)))


def monte_carlo_boundary_distance(delta: float, zeta: float, n: int, seed: int) -> MonteCarloResult:
    """Monte-Carlo oracle for :func:`expected_boundary_distance`.

    Two means are placed at +-(delta/2) e1 in the plane (distances to the
    pairwise boundary are rotation invariant, so two dimensions suffice);
    samples are drawn around the first mean and their distance to the Fisher
    hyperplane, whose offset is zeta because the means share a norm, is
    averaged.  Deterministic for a fixed seed.
    """
    delta = float(delta)
    zeta = float(zeta)
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    n = int(n)
    if n < 1:
        raise ValueError("need at least one sample")
    rng = make_rng(seed)
    points = normals(rng, (n, 2))
    points[:, 0] += 0.5 * delta
    boundary_normal = np.array([delta, 0.0])
    values = np.abs(zeta + points @ boundary_normal) / np.linalg.norm(boundary_normal)
    estimate = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return MonteCarloResult(estimate, stderr)


def _check_efron_args(moment: int, prior0: float, delta: float) -> None:
    if moment not in (0, 1, 2):
        raise ValueError("moment must be 0, 1 or 2")
    if not 0.0 < prior0 < 1.0:
        raise ValueError("prior0 must lie strictly inside (0, 1)")
    if not np.isfinite(delta) or delta <= 0.0:
        raise ValueError("delta must be positive")


def efron_A(moment: int, prior0: float, delta: float) -> float:
    """Moment integral A_i(prior0, delta) by adaptive quadrature.

    Integrates exp(-delta^2/8) x^i phi(x) / (pi0 e^{-delta x/2} + pi1 e^{delta x/2})
    over the real line (truncated to +-12, where the integrand is below
    1e-30), with phi the standard normal density.  Raises QuadratureError
    instead of silently returning a truncated result.
    """
    _check_efron_args(moment, prior0, delta)
    prior1 = 1.0 - prior0
    scale = math.exp(-delta * delta / 8.0)

    def integrand(x: float) -> float:
        density = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        denom = prior0 * math.exp(-0.5 * delta * x) + prior1 * math.exp(0.5 * delta * x)
        return scale * x**moment * density / denom

    out = integrate.quad(integrand, -_QUAD_RANGE, _QUAD_RANGE,
                         epsabs=1e-12, epsrel=1e-12, limit=200, full_output=1)
    if len(out) > 3:
        raise QuadratureError(f"A_{moment}(pi0={prior0}, delta={delta}): {out[3]}")
    value, abserr = out[0], out[1]
    if abserr > _QUAD_ABS_TOL:
        raise QuadratureError(
            f"A_{moment}(pi0={prior0}, delta={delta}) error estimate {abserr:.2e} "
            f"exceeds {_QUAD_ABS_TOL:.0e}"
        )
    return float(value)


def efron_A_trapezoid(moment: int, prior0: float, delta: float,
                      num_points: int = 2_000_001) -> float:
    """Independent evaluation of A_i on a dense uniform grid (oracle route)."""
    _check_efron_args(moment, prior0, delta)
    x = np.linspace(-_QUAD_RANGE, _QUAD_RANGE, num_points)
    density = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    denom = prior0 * np.exp(-0.5 * delta * x) + (1.0 - prior0) * np.exp(0.5 * delta * x)
    y = np.exp(-delta * delta / 8.0) * x**moment * density / denom
    return float(np.trapezoid(y, x))


def _efficiency_from_A(dim: int, zeta: float, delta: float,
                       a0: float, a1: float, a2: float) -> float:
    prior0 = 1.0 / (1.0 + math.exp(-zeta))
    prior1 = 1.0 - prior0
    det = a0 * a2 - a1 * a1
    if det <= 0.0:
        raise QuadratureError(
            f"moment matrix not positive definite (det={det:.3e}); quadrature is suspect"
        )
    v = np.array([1.0, zeta / delta])
    top_mat = np.array([
        [1.0 + delta * delta / 4.0, (prior0 - prior1) * delta / 2.0],
        [(prior0 - prior1) * delta / 2.0, 1.0 + 2.0 * prior0 * prior1 * delta * delta],
    ])
    q1 = float(v @ top_mat @ v)
    q2 = 1.0 + prior0 * prior1 * delta * delta
    q3 = float(v @ (np.array([[a2, a1], [a1, a0]]) / det) @ v)
    q4 = 1.0 / a0
    return (q1 + (dim - 1) * q2) / (q3 + (dim - 1) * q4)


def efron_efficiency(dim: int, zeta: float, delta: float) -> float:
    """Asymptotic efficiency of the discriminative linear classifier relative
    to the generative one, for two Gaussian classes at distance ``delta`` with
    log prior ratio ``zeta`` in ``dim`` dimensions.

    The prior pair is derived from zeta (prior0 = sigmoid(zeta)), which keeps
    the two parameterisations consistent by construction.
    """
    if dim < 1:
        raise ValueError("dim must be at least 1")
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    prior0 = 1.0 / (1.0 + math.exp(-zeta))
    a0 = efron_A(0, prior0, delta)
    a1 = efron_A(1, prior0, delta)
    a2 = efron_A(2, prior0, delta)
    return _efficiency_from_A(dim, zeta, delta, a0, a1, a2)


def efron_efficiency_reference(dim: int, zeta: float, delta: float,
                               num_points: int = 2_000_001) -> float:
    """Self-contained re-implementation of :func:`efron_efficiency` on a dense
    trapezoid grid, kept independent so the two routes can cross-check each
    other to ~1e-8.
    """
    if dim < 1:
        raise ValueError("dim must be at least 1")
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    prior0 = 1.0 / (1.0 + math.exp(-zeta))
    prior1 = 1.0 - prior0

    x = np.linspace(-_QUAD_RANGE, _QUAD_RANGE, num_points)
    weight = (np.exp(-delta * delta / 8.0 - 0.5 * x * x) / np.sqrt(2.0 * np.pi)
              / (prior0 * np.exp(-0.5 * delta * x) + prior1 * np.exp(0.5 * delta * x)))
    a0 = float(np.trapezoid(weight, x))
    a1 = float(np.trapezoid(x * weight, x))
    a2 = float(np.trapezoid(x * x * weight, x))
    det = a0 * a2 - a1 * a1
    if det <= 0.0:
        raise QuadratureError("moment matrix not positive definite on the grid route")

    r = zeta / delta
    q1 = ((1.0 + delta * delta / 4.0)
          + 2.0 * r * (prior0 - prior1) * delta / 2.0
          + r * r * (1.0 + 2.0 * prior0 * prior1 * delta * delta))
    q2 = 1.0 + prior0 * prior1 * delta * delta
    q3 = (a2 + 2.0 * r * a1 + r * r * a0) / det
    q4 = 1.0 / a0
    return (q1 + (dim - 1) * q2) / (q3 + (dim - 1) * q4)


def mmlda_label_gap(sq_norm: float, num_classes: int) -> float:
    """Upper bound on the sup-norm gap between a one-hot label and the head's
    prediction at the class prototype: 1 / (1 + exp(2LC/(L-1)) / (L-1)).

    Evaluated in log space so large ``sq_norm`` never overflows.
    """
    if sq_norm <= 0.0:
        raise ValueError("sq_norm must be positive")
    if num_classes < 2:
        raise ValueError("need at least two classes")
    c, k = float(sq_norm), int(num_classes)
    t = 2.0 * k * c / (k - 1.0) - math.log(k - 1.0)
    if t >= 0.0:
        e = math.exp(-t)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(t))
