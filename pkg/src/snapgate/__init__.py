"""Simulation and analysis of SNAP gates on a dispersively coupled qubit-cavity system."""
from .dispersive import (
    EXCITED_FRAME_SHIFT_KHZ,
    KHZ,
    REFERENCE_PARAMS,
    DecoherenceParams,
    HamiltonianParams,
    free_evolve,
    level_energy,
    lindblad_evolve,
    phase_difference_rate,
    transition_frequency,
)
from .errors import (
    AliasingError,
    CoverageError,
    CoverageWarning,
    DimensionError,
    DomainError,
    LowContrastError,
    NumericalIntegrityError,
    OptimizationFailure,
    SelectivityWarning,
    SnapGateError,
    StepSizeError,
    TruncationError,
    UnderdeterminedError,
)
from .fock import (
    DEFAULT_DIM,
    CavityState,
    DensityMatrix,
    Operator,
    annihilation,
    apply,
    coherent_state,
    creation,
    displacement_operator,
    fidelity,
    fock_state,
    number,
    phasor_view,
    trace_distance,
)
from .snap import kerr_phases, parity_phases, rotation_phases, single_snap, snap, wrap_phases

__version__ = "0.1.0"
