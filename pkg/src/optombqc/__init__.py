"""Dissipative preparation of non-Gaussian mechanical cluster states.

Truncated Fock-space operators and states, the multimode optomechanical
model, a Lindblad solver, the switching and measurement protocols, and
analysis helpers.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DimensionError,
    DomainError,
    GridError,
    NumericalError,
    OptomechError,
    RareOutcomeError,
    ResourceError,
    StabilityError,
    TruncationError,
    UnsupportedOperationError,
)
from .fock import (
    QOperator,
    QState,
    TensorSpace,
    annihilation,
    creation,
    embed,
    matrix_exp,
    number,
    quadrature_eigenvector,
    quadratures,
    rotated_quadrature,
    tensor,
)
from .states import (
    ClusterSpec,
    cluster_state,
    cubic_phase_state,
    fock_state,
    product_state,
    squeezed_vacuum,
    thermal_state,
    vacuum,
)
from .model import (
    DriveSet,
    PhysicalParams,
    cubic_drive_couplings,
    drift_matrix,
    full_hamiltonian,
    r_of_s,
    rwa_hamiltonian,
    rwa_validity,
    s_of_r,
)
from .lindblad import OpenSystem, evolve, expectation, optomech_system, partial_trace, steady_state
from .protocols import (
    SwitchingPlan,
    cubic_gate_pipeline,
    cubic_steady_setup,
    homodyne_project,
    mechanical_fidelity,
    run_switching,
    sample_homodyne,
    switching_matrices,
)
from .analysis import fidelity_pure_target, truncation_report, uhlmann_fidelity, wigner
