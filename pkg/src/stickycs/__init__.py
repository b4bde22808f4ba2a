"""Sticky-particle alignment dynamics: flux classification, cluster
prediction, event-driven simulation, and verification."""

from . import protocols
from ._backend import BACKEND
from .analysis import (ClusterReport, Prediction, VerdictRow, audit,
                       barycenter_r, bounded_phi_separation, decay_exponent,
                       extract_clusters, flocking_diameter,
                       heavy_tail_contraction, predict,
                       supercritical_time_bound, verify,
                       wasserstein_table, weak_singular_collapse_time)
from .dynamics import (AdvanceOptions, CollisionEvent, ParticleState,
                       Trajectory, accelerations, advance, compute_psi,
                       initial_state, simulate)
from .envelope import (Envelope, RegionDecomposition, Tolerances, c_interval,
                       check_a4, classify_regions, l_interval,
                       level_set_params, lower_convex_envelope)
from .initial import (Cdf, Discretization, Flux, InitialData, Psi0,
                      QuantileFn, build_cdf, build_flux, build_psi0,
                      discretize, discretize_atomic, generalized_inverse,
                      initial_data, quantile_from_data, sup_distance,
                      wasserstein1)
from .protocols import Protocol

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
