"""Minimax estimation for exponential-family regression over star-shaped sets."""

from .errors import MinimaxError
from .expfam import (
    ExponentialFamily,
    FamilyConstants,
    bernoulli,
    cumulant_constants,
    gaussian_unit_variance,
    kl_divergence,
    log_likelihood,
    make_family,
)
from .geometry import (
    ConstraintSet,
    MonotoneLatticeSet,
    epsilon_star,
    farthest_point_packing,
    greedy_maximal_packing,
    local_entropy,
    monotone_lattice_set,
    segment_set,
    singleton_set,
)
from .tree import PrunedTree, build_tree, verify_tree
from .estimator import EstimatorConfig, compute_J_star, dominates, estimate, h_score, traverse

__version__ = "0.1.0"
