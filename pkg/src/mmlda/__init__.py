"""Max-Mahalanobis LDA networks at desk scale.

Prototype mean construction and its robustness geometry, the associated
closed-form theory with Monte-Carlo and quadrature oracles, a small dense
network with exact backpropagation, softmax and max-Mahalanobis classifier
heads, white-box attacks, and an experiment harness with a CLI.
"""

from .means import (
    MeanSet,
    MMDSpec,
    CovarianceModel,
    generate_opt_means,
    verify_opt_condition,
    pairwise_mahalanobis,
    approx_robustness,
    robustness_upper_bound,
    whiten,
)
from .theory import (
    expected_boundary_distance,
    boundary_distance_derivative,
    monte_carlo_boundary_distance,
    efron_A,
    efron_efficiency,
    mmlda_label_gap,
)

__version__ = "0.1.0"
