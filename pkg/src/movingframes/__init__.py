"""Moving frames, Coulomb gauges and harmonic maps on discretised balls."""
from .connection import (ConnectionForm, check_projector_identities, compute_divergence_omega,
                         compute_omega_from_A, compute_omega_from_projector,
                         compute_omega_from_reflection, covariant_derivative, curvature,
                         gauge_transform, tension)
from .gauge import (CoulombGauge, FramePair, FrameRefusal, GaugeSolution, coulomb_gauge,
                    extract_frames, q_field)
from .grid import (ConvergenceError, Field, GridDomain, codifferential, exterior_derivative,
                   hodge_potential, inner, l2_norm, laplacian, poisson_solve, wedge)
from .harmonic import (FlowState, HarmonicMapFlow, NoetherCurrents, conservation_residual,
                       decay_iteration_probe, heat_flow, noether_currents, regularity_experiment)
from .norms import BallFamily, NormReport, bmo_seminorm, lp_norm, morrey_norm
from .targets import (Grassmann, MapField, OffManifoldError, SpecialOrthogonal, Sphere,
                      TargetManifold, make_target)
from .wente import WenteInstance, duality_pairing, smallness_certificate, wente_solve

__version__ = "0.1.0"

__all__ = [
    "BallFamily", "ConnectionForm", "ConvergenceError", "CoulombGauge", "Field", "FlowState",
    "FramePair", "FrameRefusal", "GaugeSolution", "Grassmann", "GridDomain", "HarmonicMapFlow",
    "MapField", "NoetherCurrents", "NormReport", "OffManifoldError", "SpecialOrthogonal", "Sphere",
    "TargetManifold", "WenteInstance", "bmo_seminorm", "check_projector_identities",
    "codifferential", "compute_divergence_omega", "compute_omega_from_A",
    "compute_omega_from_projector", "compute_omega_from_reflection", "conservation_residual",
    "coulomb_gauge", "covariant_derivative", "curvature", "decay_iteration_probe",
    "duality_pairing", "exterior_derivative", "extract_frames", "gauge_transform", "heat_flow",
    "hodge_potential", "inner", "l2_norm", "laplacian", "lp_norm", "make_target", "morrey_norm",
    "noether_currents", "poisson_solve", "q_field", "regularity_experiment",
    "smallness_certificate", "tension", "wedge", "wente_solve",
]
