"""Quantum-state conversion by cross-Kerr interferometry, and the protocols built on it."""

__version__ = "0.1.0"

from .fock import (  # noqa: E402
    ConfigurationError,
    DensityOperator,
    FockSpace,
    IsomorphismMap,
    SpaceMismatchError,
    StateVector,
    build_space,
    fidelity,
    lift_operator,
    lift_state,
    lower_operator,
    lower_state,
    partial_trace,
    source_space,
    target_space,
    tensor,
    trace_distance,
)
from .optics import (  # noqa: E402
    BeamSplitterElement,
    CrossKerrElement,
    MultiportUnitary,
    PhaseShifterElement,
    PolarFactors,
    element_matrix,
    multiport_matrix,
    polar_decompose,
    synthesize_mesh,
    vacuum_projected_splitter,
)
from .converter import (  # noqa: E402
    ConverterConfig,
    OutcomeRecord,
    build_M,
    build_Vb,
    convert_a_to_b,
    convert_b_to_a,
    convert_unconditional_a_to_b,
    convert_unconditional_b_to_a,
)
from .engineering import (  # noqa: E402
    EngineeringConfig,
    LeftInput,
    build_target_operator,
    decompose_target,
    run_engineering,
    run_engineering_unconditional,
)
from .measurement import (  # noqa: E402
    ProbeChannel,
    TuningError,
    diagonalize_experimentally,
    expectation,
    matrix_element,
    overlap_probe,
    qnd_purify,
    reconstruct_fock_matrix,
    unconditional_probe,
)
from .telemanip import (  # noqa: E402
    ClassicalMessage,
    reduced_states_engineering,
    reduced_states_telemanip,
    run_telemanip_conditional,
    run_telemanip_unconditional,
)
