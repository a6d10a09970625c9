"""Differentiable quantum architecture search with a transformer-
enriched architecture matrix.

A statevector/density-matrix simulator with exact adjoint gradients
(`sim`), candidate operation pools and circuit assembly (`pools`),
diagonal problem Hamiltonians (`objective`), a from-scratch transformer
encoder with manual reverse-mode gradients (`encoder`), the sampled
architecture search itself (`search`), and a config-driven experiment
CLI (`config`, `experiments`, `cli`).
"""

from .sim import (
    CircuitIR,
    GateInstance,
    GateKind,
    KrausChannel,
    NoiseSpec,
    basis_state,
    build_qft,
    circuit_from_text,
    circuit_unitary,
    fidelity,
    gate_matrix,
    run_circuit,
    run_noisy,
    zero_state,
)
from .pools import (
    BlockLayout,
    Operation,
    OperationPool,
    assemble_circuit,
    build_pool,
    gate_counts,
    hardware_efficient_baseline,
    ideal_scaffold,
    parse_operation_label,
    pool_from_labels,
    shrink_pool,
)
from .objective import (
    DiagonalHamiltonian,
    Graph,
    benchmark_graph,
    load_diag_hamiltonian,
    load_graph,
    maxcut_hamiltonian,
    scale_energy,
)
from .encoder import (
    EncoderConfig,
    EncoderState,
    encoder_forward,
    encoder_loss,
    encoder_step,
    init_encoder,
    transform_alpha,
)
from .search import (
    EnergyObjective,
    FidelityObjective,
    SearchConfig,
    SearchResult,
    adjoint_energy_grad,
    adjoint_overlap_grad,
    asp,
    batch_weights,
    extract_structure,
    fine_tune,
    grad_alpha,
    parameter_shift_grad,
    run_search,
    sample_batch,
    structure_prob,
)
from .config import ConfigError, ExperimentConfig, load_config

__version__ = "0.1.0"

__all__ = [
    "BlockLayout", "CircuitIR", "ConfigError", "DiagonalHamiltonian",
    "EncoderConfig", "EncoderState", "EnergyObjective", "ExperimentConfig",
    "FidelityObjective", "GateInstance", "GateKind", "Graph", "KrausChannel",
    "NoiseSpec", "Operation", "OperationPool", "SearchConfig", "SearchResult",
    "adjoint_energy_grad", "adjoint_overlap_grad", "asp", "assemble_circuit",
    "basis_state", "batch_weights", "benchmark_graph", "build_pool",
    "build_qft", "circuit_from_text", "circuit_unitary", "encoder_forward",
    "encoder_loss", "encoder_step", "extract_structure", "fidelity",
    "fine_tune", "gate_counts", "gate_matrix", "grad_alpha",
    "hardware_efficient_baseline", "ideal_scaffold", "init_encoder",
    "load_config", "load_diag_hamiltonian", "load_graph",
    "maxcut_hamiltonian", "parameter_shift_grad", "parse_operation_label",
    "pool_from_labels", "run_circuit", "run_noisy", "run_search",
    "sample_batch", "scale_energy", "shrink_pool", "structure_prob",
    "transform_alpha", "zero_state",
]
