"""Dephasing-driven dynamics of a disordered tight-binding chain."""

from .dephasing import (
    DephasingProfile,
    RateMatrix,
    coupling_matrix,
    dissipator_apply,
    power_law_profile,
    profile_from_exponent,
    quadratic_form_kernel,
    uniform_profile,
)
from .evolution import (
    DensityMatrix,
    MasterEquationEngine,
    PopulationVector,
    RateEquationEngine,
    Trajectory,
    decay_time,
    evolve_tracked,
    integrate_master,
    lindblad_rhs,
    rate_matrix_propagator,
    select_engine,
    site_populations,
)
from .kernels import BACKEND
from .lattice import (
    DisorderRealization,
    LatticeHamiltonian,
    ModelConfig,
    OccupationProfile,
    SpectralDecomposition,
    build_hamiltonian,
    center_of_mass,
    clean_chain_modes,
    diagonalize,
    ground_state,
    ground_state_profile,
    sample_disorder,
)
from .peaks import PeakRecord, ProminenceReport, find_peaks, prominence, track_side_peaks

__version__ = "0.1.0"

__all__ = [
    "DephasingProfile",
    "RateMatrix",
    "coupling_matrix",
    "dissipator_apply",
    "power_law_profile",
    "profile_from_exponent",
    "quadratic_form_kernel",
    "uniform_profile",
    "DensityMatrix",
    "MasterEquationEngine",
    "PopulationVector",
    "RateEquationEngine",
    "Trajectory",
    "decay_time",
    "evolve_tracked",
    "integrate_master",
    "lindblad_rhs",
    "rate_matrix_propagator",
    "select_engine",
    "site_populations",
    "DisorderRealization",
    "LatticeHamiltonian",
    "ModelConfig",
    "OccupationProfile",
    "SpectralDecomposition",
    "build_hamiltonian",
    "center_of_mass",
    "clean_chain_modes",
    "diagonalize",
    "ground_state",
    "ground_state_profile",
    "sample_disorder",
    "BACKEND",
    "PeakRecord",
    "ProminenceReport",
    "find_peaks",
    "prominence",
    "track_side_peaks",
    "__version__",
]
