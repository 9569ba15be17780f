"""Numerical laboratory for compatible Laplacians on lattices with a corner.

Subpackages build the discrete geometry and its sparse operators, compute
channel spectra and Mourre certificates, evaluate the smoothed max-selector
partition functions used by the propagation estimates, time-evolve states,
and assemble wave operators, completeness residuals and the scattering
operator, with an exact product-model oracle alongside.
"""

from .geometry import (
    CornerModel,
    GraphSpec,
    RegionTag,
    GeometryError,
    build_model,
    classify_site,
    exhaustion_mask,
    model_from_json,
    model_summary,
    site_index,
)
from .operators import (
    SparseHermitian,
    assemble_H,
    assemble_b,
    assemble_channel,
    conjugate_A,
    cross_section_operator,
    cutoff_kappa,
    double_commutator,
    kappa,
    radius_squared,
)

__version__ = "0.1.0"
