"""Exact statevector and density-matrix simulation of small gate circuits.

Conventions used throughout the package:

- Qubit 0 is the most significant bit of the basis index, so on three
  qubits the basis state |q0 q1 q2> = |110> has index 6.
- A pure state is a complex vector of length 2**n (ndim 1); a mixed
  state is a complex density matrix of shape (2**n, 2**n) (ndim 2).
  Both use complex128.
- Gates are applied by tensor contraction over the target-qubit axes;
  the full 2**n x 2**n unitary is never materialized.
- Global phase is not meaningful; states are compared via `fidelity`.

All functions are pure: inputs are never mutated and results are fresh
arrays, so circuits and states can be shared freely across threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

SQRT2_INV = 1.0 / math.sqrt(2.0)


# =============================================================================
# Gate kinds and matrices
# =============================================================================

class GateKind(enum.Enum):
    """Gate vocabulary for circuits assembled from operation pools.

    IDLE is an explicit no-op: it contributes no matrix and is skipped
    by the simulator and by circuit layering.
    """

    RX = "RX"
    RY = "RY"
    RZ = "RZ"
    H = "H"
    X = "X"
    T = "T"
    U3 = "U3"
    CU3 = "CU3"
    CZ = "CZ"
    CNOT = "CNOT"
    IDLE = "IDLE"

    @property
    def param_arity(self) -> int:
        return _PARAM_ARITY[self]

    @property
    def n_qubits(self) -> int:
        return 2 if self in (GateKind.CZ, GateKind.CNOT, GateKind.CU3) else 1

    @property
    def is_controlled(self) -> bool:
        return self.n_qubits == 2


_PARAM_ARITY = {
    GateKind.RX: 1,
    GateKind.RY: 1,
    GateKind.RZ: 1,
    GateKind.H: 0,
    GateKind.X: 0,
    GateKind.T: 0,
    GateKind.U3: 3,
    GateKind.CU3: 3,
    GateKind.CZ: 0,
    GateKind.CNOT: 0,
    GateKind.IDLE: 0,
}


def _u3_matrix(theta: float, phi: float, lam: float) -> np.ndarray:
    c = math.cos(theta / 2.0)
    s = math.sin(theta / 2.0)
    return np.array(
        [
            [c, -np.exp(1j * lam) * s],
            [np.exp(1j * phi) * s, np.exp(1j * (phi + lam)) * c],
        ],
        dtype=np.complex128,
    )


def _controlled(u: np.ndarray) -> np.ndarray:
    """Embed a 1-qubit matrix as a 2-qubit gate controlled on the first qubit."""
    out = np.eye(4, dtype=np.complex128)
    out[2:, 2:] = u
    return out


def gate_matrix(kind: GateKind, params) -> np.ndarray:
    """Unitary matrix of a gate; 2x2 for single-qubit kinds, 4x4 for controlled.

    `params` must have exactly `kind.param_arity` entries.  For two-qubit
    gates the first qubit of the enclosing GateInstance is the control.
    IDLE has no matrix and is rejected.
    """
    params = tuple(float(x) for x in params)
    if len(params) != kind.param_arity:
        raise ValueError(
            f"{kind.value} takes {kind.param_arity} parameter(s), got {len(params)}"
        )
    if kind is GateKind.IDLE:
        raise ValueError("IDLE contributes no matrix")
    if kind is GateKind.RX:
        (theta,) = params
        c, s = math.cos(theta / 2.0), math.sin(theta / 2.0)
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=np.complex128)
    if kind is GateKind.RY:
        (theta,) = params
        c, s = math.cos(theta / 2.0), math.sin(theta / 2.0)
        return np.array([[c, -s], [s, c]], dtype=np.complex128)
    if kind is GateKind.RZ:
        (theta,) = params
        return np.array(
            [[np.exp(-0.5j * theta), 0.0], [0.0, np.exp(0.5j * theta)]],
            dtype=np.complex128,
        )
    if kind is GateKind.H:
        return np.array([[1.0, 1.0], [1.0, -1.0]], dtype=np.complex128) * SQRT2_INV
    if kind is GateKind.X:
        return np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)
    if kind is GateKind.T:
        return np.array(
            [[1.0, 0.0], [0.0, np.exp(0.25j * math.pi)]], dtype=np.complex128
        )
    if kind is GateKind.U3:
        return _u3_matrix(*params)
    if kind is GateKind.CU3:
        return _controlled(_u3_matrix(*params))
    if kind is GateKind.CZ:
        return np.diag([1.0, 1.0, 1.0, -1.0]).astype(np.complex128)
    if kind is GateKind.CNOT:
        out = np.eye(4, dtype=np.complex128)
        out[2:, 2:] = np.array([[0.0, 1.0], [1.0, 0.0]])
        return out
    raise ValueError(f"unknown gate kind {kind!r}")


def _u3_derivs(theta: float, phi: float, lam: float) -> list[np.ndarray]:
    c = math.cos(theta / 2.0)
    s = math.sin(theta / 2.0)
    ephi = np.exp(1j * phi)
    elam = np.exp(1j * lam)
    eboth = np.exp(1j * (phi + lam))
    d_theta = 0.5 * np.array(
        [[-s, -elam * c], [ephi * c, -eboth * s]], dtype=np.complex128
    )
    d_phi = np.array(
        [[0.0, 0.0], [1j * ephi * s, 1j * eboth * c]], dtype=np.complex128
    )
    d_lam = np.array(
        [[0.0, -1j * elam * s], [0.0, 1j * eboth * c]], dtype=np.complex128
    )
    return [d_theta, d_phi, d_lam]


def gate_matrix_derivs(kind: GateKind, params) -> list[np.ndarray]:
    """Analytic derivative matrices dU/d(param_i), one per parameter.

    Used by adjoint differentiation; empty list for parameter-free kinds.
    """
    params = tuple(float(x) for x in params)
    if len(params) != kind.param_arity:
        raise ValueError(
            f"{kind.value} takes {kind.param_arity} parameter(s), got {len(params)}"
        )
    if kind.param_arity == 0:
        return []
    if kind is GateKind.RX:
        (theta,) = params
        c, s = math.cos(theta / 2.0), math.sin(theta / 2.0)
        return [0.5 * np.array([[-s, -1j * c], [-1j * c, -s]], dtype=np.complex128)]
    if kind is GateKind.RY:
        (theta,) = params
        c, s = math.cos(theta / 2.0), math.sin(theta / 2.0)
        return [0.5 * np.array([[-s, -c], [c, -s]], dtype=np.complex128)]
    if kind is GateKind.RZ:
        (theta,) = params
        return [
            np.array(
                [[-0.5j * np.exp(-0.5j * theta), 0.0], [0.0, 0.5j * np.exp(0.5j * theta)]],
                dtype=np.complex128,
            )
        ]
    if kind is GateKind.U3:
        return _u3_derivs(*params)
    if kind is GateKind.CU3:
        out = []
        for d in _u3_derivs(*params):
            m = np.zeros((4, 4), dtype=np.complex128)
            m[2:, 2:] = d
            out.append(m)
        return out
    raise ValueError(f"no derivative for gate kind {kind!r}")


# =============================================================================
# Circuit representation
# =============================================================================

@dataclass(frozen=True)
class GateInstance:
    """One gate occurrence inside a circuit.

    Parameterized gates carry exactly one parameter source: either
    `param_slot` (index of the first of `param_arity` consecutive slots
    in the circuit's trainable parameter vector) or `fixed_params`
    (baked-in constants, used by encoding blocks and the QFT scaffold).
    `encoding` marks gates that belong to the fixed, non-searched part
    of a circuit; gate_counts in the pools module skips them.
    """

    kind: GateKind
    qubits: tuple[int, ...]
    param_slot: int | None = None
    fixed_params: tuple[float, ...] | None = None
    encoding: bool = False

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        if self.fixed_params is not None:
            object.__setattr__(
                self, "fixed_params", tuple(float(x) for x in self.fixed_params)
            )
        if len(self.qubits) != self.kind.n_qubits:
            raise ValueError(
                f"{self.kind.value} acts on {self.kind.n_qubits} qubit(s), "
                f"got {self.qubits}"
            )
        if len(set(self.qubits)) != len(self.qubits):
            raise ValueError(f"duplicate qubit in {self.qubits}")
        arity = self.kind.param_arity
        has_slot = self.param_slot is not None
        has_fixed = self.fixed_params is not None
        if arity == 0:
            if has_slot or has_fixed:
                raise ValueError(f"{self.kind.value} takes no parameters")
        else:
            if has_slot == has_fixed:
                raise ValueError(
                    f"{self.kind.value} needs exactly one parameter source "
                    "(param_slot or fixed_params)"
                )
            if has_fixed and len(self.fixed_params) != arity:
                raise ValueError(
                    f"{self.kind.value} takes {arity} parameter(s), "
                    f"got {len(self.fixed_params)} fixed"
                )

    def resolve_params(self, params: np.ndarray) -> tuple[float, ...]:
        """Parameter values for this gate, from its slot range or constants."""
        if self.kind.param_arity == 0:
            return ()
        if self.fixed_params is not None:
            return self.fixed_params
        lo = self.param_slot
        return tuple(float(x) for x in params[lo : lo + self.kind.param_arity])


@dataclass(frozen=True)
class CircuitIR:
    """Immutable gate-list circuit with a flat trainable-parameter vector.

    `n_params` counts trainable slots only; fixed-parameter gates (such
    as encoding rotations) contribute nothing to it.
    """

    n_qubits: int
    gates: tuple[GateInstance, ...]
    n_params: int

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        if self.n_params < 0:
            raise ValueError("n_params must be >= 0")
        for g in self.gates:
            for q in g.qubits:
                if not 0 <= q < self.n_qubits:
                    raise ValueError(
                        f"qubit {q} out of range for {self.n_qubits}-qubit circuit"
                    )
            if g.param_slot is not None:
                if not 0 <= g.param_slot <= self.n_params - g.kind.param_arity:
                    raise ValueError(
                        f"param_slot {g.param_slot} out of range "
                        f"(n_params={self.n_params})"
                    )

    def to_text(self) -> str:
        """Line-oriented serialization; see `circuit_from_text`."""
        lines = [f"qubits {self.n_qubits} params {self.n_params}"]
        for g in self.gates:
            tokens = [g.kind.value, ",".join(str(q) for q in g.qubits)]
            if g.param_slot is not None:
                tokens.append(f"slot={g.param_slot}")
            if g.fixed_params is not None:
                tokens.append("fix=" + ",".join(repr(x) for x in g.fixed_params))
            if g.encoding:
                tokens.append("enc")
            lines.append(" ".join(tokens))
        return "\n".join(lines) + "\n"


def circuit_from_text(text: str) -> CircuitIR:
    """Parse the text format written by CircuitIR.to_text.

    Format: header line `qubits N params M`, then one gate per line,
    `KIND q0[,q1] [slot=i] [fix=f1,f2,..] [enc]`.  Blank lines and lines
    starting with `#` are ignored.
    """
    lines = text.splitlines()
    header = None
    gates = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if header is None:
            if (
                len(tokens) != 4
                or tokens[0] != "qubits"
                or tokens[2] != "params"
            ):
                raise ValueError(
                    f"line {lineno}: expected header 'qubits N params M', got {line!r}"
                )
            try:
                header = (int(tokens[1]), int(tokens[3]))
            except ValueError:
                raise ValueError(f"line {lineno}: non-integer header field") from None
            continue
        try:
            kind = GateKind(tokens[0])
        except ValueError:
            raise ValueError(
                f"line {lineno}: unknown gate kind {tokens[0]!r}"
            ) from None
        if len(tokens) < 2:
            raise ValueError(f"line {lineno}: missing qubit list")
        try:
            qubits = tuple(int(q) for q in tokens[1].split(","))
        except ValueError:
            raise ValueError(f"line {lineno}: bad qubit list {tokens[1]!r}") from None
        slot = None
        fixed = None
        encoding = False
        for tok in tokens[2:]:
            if tok == "enc":
                encoding = True
            elif tok.startswith("slot="):
                slot = int(tok[5:])
            elif tok.startswith("fix="):
                fixed = tuple(float(x) for x in tok[4:].split(","))
            else:
                raise ValueError(f"line {lineno}: unknown token {tok!r}")
        try:
            gates.append(
                GateInstance(
                    kind=kind,
                    qubits=qubits,
                    param_slot=slot,
                    fixed_params=fixed,
                    encoding=encoding,
                )
            )
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    if header is None:
        raise ValueError("empty circuit text: missing header line")
    return CircuitIR(n_qubits=header[0], gates=tuple(gates), n_params=header[1])


# =============================================================================
# States and gate application
# =============================================================================

def zero_state(n_qubits: int) -> np.ndarray:
    """Pure |0...0> on n qubits."""
    psi = np.zeros(2**n_qubits, dtype=np.complex128)
    psi[0] = 1.0
    return psi


def basis_state(n_qubits: int, index: int) -> np.ndarray:
    psi = np.zeros(2**n_qubits, dtype=np.complex128)
    psi[index] = 1.0
    return psi


def promote(psi: np.ndarray) -> np.ndarray:
    """Pure vector -> density matrix |psi><psi|."""
    psi = np.asarray(psi, dtype=np.complex128)
    if psi.ndim != 1:
        raise ValueError("promote expects a pure state vector")
    return np.outer(psi, psi.conj())


def is_pure(state: np.ndarray) -> bool:
    return np.asarray(state).ndim == 1


def _n_qubits_of(state: np.ndarray) -> int:
    dim = state.shape[0]
    n = dim.bit_length() - 1
    if 2**n != dim:
        raise ValueError(f"state dimension {dim} is not a power of 2")
    return n


def _apply_matrix_pure(psi: np.ndarray, mat: np.ndarray, targets, n: int) -> np.ndarray:
    k = len(targets)
    tensor = mat.reshape((2,) * (2 * k))
    work = psi.reshape((2,) * n)
    work = np.tensordot(tensor, work, axes=(tuple(range(k, 2 * k)), tuple(targets)))
    work = np.moveaxis(work, tuple(range(k)), tuple(targets))
    return work.reshape(2**n)


def _apply_matrix_mixed_oneside(rho_t, mat, axes, k):
    work = np.tensordot(mat.reshape((2,) * (2 * k)), rho_t,
                        axes=(tuple(range(k, 2 * k)), tuple(axes)))
    return np.moveaxis(work, tuple(range(k)), tuple(axes))


def _sandwich_mixed(rho: np.ndarray, mat: np.ndarray, targets, n: int) -> np.ndarray:
    """rho -> M rho M^dagger on the target qubits of a density matrix."""
    k = len(targets)
    work = rho.reshape((2,) * (2 * n))
    work = _apply_matrix_mixed_oneside(work, mat, targets, k)
    col_axes = [n + t for t in targets]
    work = _apply_matrix_mixed_oneside(work, mat.conj(), col_axes, k)
    return work.reshape(2**n, 2**n)


def apply_gate(state: np.ndarray, gate: GateInstance, params=()) -> np.ndarray:
    """Apply one gate to a pure or mixed state.

    Pure: |psi> <- U|psi> by contraction over the target axes.
    Mixed: rho <- U rho U^dagger (rows, then conjugate on columns).
    IDLE returns the state unchanged.
    """
    state = np.asarray(state, dtype=np.complex128)
    n = _n_qubits_of(state)
    for q in gate.qubits:
        if not 0 <= q < n:
            raise ValueError(f"qubit {q} out of range for {n}-qubit state")
    if gate.kind is GateKind.IDLE:
        return state
    mat = gate_matrix(gate.kind, gate.resolve_params(np.asarray(params, dtype=float)))
    if state.ndim == 1:
        return _apply_matrix_pure(state, mat, gate.qubits, n)
    if state.ndim == 2:
        return _sandwich_mixed(state, mat, gate.qubits, n)
    raise ValueError("state must be a vector (pure) or square matrix (mixed)")


def run_circuit(
    circuit: CircuitIR, params=(), initial: np.ndarray | None = None
) -> np.ndarray:
    """Run all gates in list order from `initial` (default |0...0>)."""
    params = np.asarray(params, dtype=float)
    if params.shape != (circuit.n_params,):
        raise ValueError(
            f"expected {circuit.n_params} parameters, got shape {params.shape}"
        )
    state = zero_state(circuit.n_qubits) if initial is None else np.asarray(
        initial, dtype=np.complex128
    )
    if state.shape[0] != 2**circuit.n_qubits:
        raise ValueError("initial state dimension does not match circuit")
    for gate in circuit.gates:
        state = apply_gate(state, gate, params)
    return state


# =============================================================================
# Noise channels
# =============================================================================

CHANNEL_NAMES = ("BitFlip", "PhaseDamping", "AmplitudeDamping", "Depolarizing")

_I2 = np.eye(2, dtype=np.complex128)
_X2 = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)
_Y2 = np.array([[0.0, -1j], [1j, 0.0]], dtype=np.complex128)
_Z2 = np.diag([1.0, -1.0]).astype(np.complex128)


@dataclass(frozen=True)
class KrausChannel:
    """Single-qubit channel as a list of 2x2 Kraus operators.

    Completeness sum(K^dagger K) = I is checked at construction.
    """

    name: str
    probability: float
    kraus_ops: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(
            self,
            "kraus_ops",
            tuple(np.asarray(k, dtype=np.complex128) for k in self.kraus_ops),
        )
        total = sum(k.conj().T @ k for k in self.kraus_ops)
        if np.max(np.abs(total - _I2)) > 1e-12:
            raise ValueError(f"Kraus completeness violated for channel {self.name!r}")


def make_channel(name: str, probability: float) -> KrausChannel:
    """Standard single-qubit channels.

    BitFlip(p):          {sqrt(1-p) I, sqrt(p) X}
    Depolarizing(p):     total error probability p split equally over X, Y, Z
    PhaseDamping(g):     {[[1,0],[0,sqrt(1-g)]], [[0,0],[0,sqrt(g)]]}
    AmplitudeDamping(g): {[[1,0],[0,sqrt(1-g)]], [[0,sqrt(g)],[0,0]]}
    """
    p = float(probability)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0,1]")
    if name == "BitFlip":
        ops = (math.sqrt(1.0 - p) * _I2, math.sqrt(p) * _X2)
    elif name == "Depolarizing":
        q = math.sqrt(p / 3.0)
        ops = (math.sqrt(1.0 - p) * _I2, q * _X2, q * _Y2, q * _Z2)
    elif name == "PhaseDamping":
        k0 = np.array([[1.0, 0.0], [0.0, math.sqrt(1.0 - p)]], dtype=np.complex128)
        k1 = np.array([[0.0, 0.0], [0.0, math.sqrt(p)]], dtype=np.complex128)
        ops = (k0, k1)
    elif name == "AmplitudeDamping":
        k0 = np.array([[1.0, 0.0], [0.0, math.sqrt(1.0 - p)]], dtype=np.complex128)
        k1 = np.array([[0.0, math.sqrt(p)], [0.0, 0.0]], dtype=np.complex128)
        ops = (k0, k1)
    else:
        raise ValueError(f"unknown channel {name!r}; known: {CHANNEL_NAMES}")
    return KrausChannel(name=name, probability=p, kraus_ops=ops)


def apply_channel(state: np.ndarray, channel: KrausChannel, qubit: int) -> np.ndarray:
    """rho <- sum_m K_m rho K_m^dagger on one qubit of a density matrix."""
    state = np.asarray(state, dtype=np.complex128)
    if state.ndim != 2:
        raise ValueError("apply_channel needs a density matrix; promote pure states")
    n = _n_qubits_of(state)
    if not 0 <= qubit < n:
        raise ValueError(f"qubit {qubit} out of range")
    out = np.zeros_like(state)
    for k in channel.kraus_ops:
        out += _sandwich_mixed(state, k, (qubit,), n)
    return out


# =============================================================================
# Noise models over whole circuits
# =============================================================================

NOISE_MODELS = ("after-gate", "idle", "terminal")


@dataclass(frozen=True)
class NoiseSpec:
    """One noise-model setting for run_noisy.

    model "after-gate": the channel (at `probability`) follows every
        gate, on that gate's qubits.
    model "idle": after-gate noise at `probability`, plus the channel at
        `idle_probability` on every qubit left untouched by a layer,
        once per layer (see `circuit_layers`).
    model "terminal": the channel (at `probability`) on every qubit
        after the last gate; with `at_start` also before the first.

    Several specs can be combined by passing a sequence to run_noisy;
    they contribute independently in the documented order.
    """

    model: str
    channel: str
    probability: float
    idle_probability: float | None = None
    at_start: bool = False

    def __post_init__(self):
        if self.model not in NOISE_MODELS:
            raise ValueError(
                f"unknown noise model {self.model!r}; known: {NOISE_MODELS}"
            )
        if self.channel not in CHANNEL_NAMES:
            raise ValueError(f"unknown channel {self.channel!r}")
        if self.model == "idle" and self.idle_probability is None:
            raise ValueError("idle model needs idle_probability")


def circuit_layers(circuit: CircuitIR) -> list[list[int]]:
    """Greedy left-to-right packing of gate indices into layers.

    Each gate lands in the earliest layer after every earlier gate that
    shares one of its qubits; gates inside one layer have disjoint
    support.  IDLE gates are skipped.  A qubit is "idle in a layer" when
    no gate of that layer touches it.
    """
    next_free = [0] * circuit.n_qubits
    layers: list[list[int]] = []
    for idx, gate in enumerate(circuit.gates):
        if gate.kind is GateKind.IDLE:
            continue
        layer = max(next_free[q] for q in gate.qubits)
        while len(layers) <= layer:
            layers.append([])
        layers[layer].append(idx)
        for q in gate.qubits:
            next_free[q] = layer + 1
    return layers


def run_noisy(
    circuit: CircuitIR,
    params=(),
    noise: NoiseSpec | tuple | list = (),
    initial: np.ndarray | None = None,
) -> np.ndarray:
    """Density-matrix run of a circuit under one or more noise specs.

    Gates are processed layer by layer (list order within a layer; the
    reordering only ever swaps operations on disjoint qubits, so the
    result equals plain list-order application).  Per layer: each gate,
    then its after-gate channels, then idle channels on the layer's
    untouched qubits in ascending qubit order.  Terminal channels close
    the run (and open it, for specs with at_start).
    """
    specs = (noise,) if isinstance(noise, NoiseSpec) else tuple(noise)
    for s in specs:
        if not isinstance(s, NoiseSpec):
            raise ValueError(f"expected NoiseSpec, got {type(s).__name__}")
    params = np.asarray(params, dtype=float)
    if params.shape != (circuit.n_params,):
        raise ValueError(
            f"expected {circuit.n_params} parameters, got shape {params.shape}"
        )

    gate_channels = [
        make_channel(s.channel, s.probability)
        for s in specs
        if s.model in ("after-gate", "idle")
    ]
    idle_channels = [
        make_channel(s.channel, s.idle_probability) for s in specs if s.model == "idle"
    ]
    terminal_channels = [
        make_channel(s.channel, s.probability) for s in specs if s.model == "terminal"
    ]
    leading_channels = [
        make_channel(s.channel, s.probability)
        for s in specs
        if s.model == "terminal" and s.at_start
    ]

    if initial is None:
        rho = promote(zero_state(circuit.n_qubits))
    else:
        initial = np.asarray(initial, dtype=np.complex128)
        rho = promote(initial) if initial.ndim == 1 else initial.copy()
    if rho.shape[0] != 2**circuit.n_qubits:
        raise ValueError("initial state dimension does not match circuit")

    for ch in leading_channels:
        for q in range(circuit.n_qubits):
            rho = apply_channel(rho, ch, q)

    for layer in circuit_layers(circuit):
        touched: set[int] = set()
        for idx in layer:
            gate = circuit.gates[idx]
            rho = apply_gate(rho, gate, params)
            touched.update(gate.qubits)
            for ch in gate_channels:
                for q in gate.qubits:
                    rho = apply_channel(rho, ch, q)
        for ch in idle_channels:
            for q in range(circuit.n_qubits):
                if q not in touched:
                    rho = apply_channel(rho, ch, q)

    for ch in terminal_channels:
        for q in range(circuit.n_qubits):
            rho = apply_channel(rho, ch, q)
    return rho


# =============================================================================
# Observables
# =============================================================================

def expectation_diag(
    state: np.ndarray,
    hdiag: np.ndarray,
    shots: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """<H> for a diagonal observable given as its 2**n diagonal vector.

    Exact by default.  With `shots` set, bitstrings are sampled from the
    state's computational-basis distribution with the supplied generator
    and the shot average is returned instead.
    """
    state = np.asarray(state, dtype=np.complex128)
    hdiag = np.asarray(hdiag, dtype=float)
    if state.ndim == 1:
        probs = np.abs(state) ** 2
    elif state.ndim == 2:
        probs = np.real(np.diag(state)).copy()
    else:
        raise ValueError("state must be pure or mixed")
    if probs.shape != hdiag.shape:
        raise ValueError(
            f"dimension mismatch: state {probs.shape} vs hdiag {hdiag.shape}"
        )
    if shots is None:
        return float(probs @ hdiag)
    if rng is None:
        raise ValueError("shot sampling requires an explicit rng")
    probs = np.clip(probs, 0.0, None)
    probs = probs / probs.sum()
    cdf = np.cumsum(probs)
    draws = np.searchsorted(cdf, rng.random(int(shots)), side="right")
    return float(np.mean(hdiag[draws]))


def fidelity(ideal: np.ndarray, actual: np.ndarray) -> float:
    """Overlap of a pure reference with a pure or mixed state.

    pure/pure: |<ideal|actual>|^2; pure/mixed: <ideal|rho|ideal>.
    """
    ideal = np.asarray(ideal, dtype=np.complex128)
    actual = np.asarray(actual, dtype=np.complex128)
    if ideal.ndim != 1:
        raise ValueError("reference state must be pure")
    if actual.shape[0] != ideal.shape[0]:
        raise ValueError("dimension mismatch between states")
    if actual.ndim == 1:
        return float(np.abs(np.vdot(ideal, actual)) ** 2)
    if actual.ndim == 2:
        return float(np.real(np.vdot(ideal, actual @ ideal)))
    raise ValueError("actual state must be pure or mixed")


# =============================================================================
# QFT construction
# =============================================================================

def build_qft(n: int) -> CircuitIR:
    """Standard QFT circuit: Hadamards, controlled phases (as fixed-angle
    CU3 gates, since CU3(0, phi, 0) = diag(1,1,1,e^{i phi})), and final
    qubit-reversal swaps realized as 3 CNOTs each.

    The resulting unitary equals the DFT matrix W[x,y] = exp(2*pi*i*x*y/2^n)
    with 1/sqrt(2^n) normalization under this package's qubit ordering.
    """
    if n < 1:
        raise ValueError("QFT needs at least one qubit")
    gates: list[GateInstance] = []
    for i in range(n):
        gates.append(GateInstance(GateKind.H, (i,)))
        for j in range(i + 1, n):
            angle = 2.0 * math.pi / (2 ** (j - i + 1))
            gates.append(
                GateInstance(GateKind.CU3, (j, i), fixed_params=(0.0, angle, 0.0))
            )
    for i in range(n // 2):
        a, b = i, n - 1 - i
        gates.append(GateInstance(GateKind.CNOT, (a, b)))
        gates.append(GateInstance(GateKind.CNOT, (b, a)))
        gates.append(GateInstance(GateKind.CNOT, (a, b)))
    return CircuitIR(n_qubits=n, gates=tuple(gates), n_params=0)


def circuit_unitary(circuit: CircuitIR, params=()) -> np.ndarray:
    """Full 2**n x 2**n unitary, column by column.  Test/inspection helper."""
    dim = 2**circuit.n_qubits
    out = np.zeros((dim, dim), dtype=np.complex128)
    for col in range(dim):
        out[:, col] = run_circuit(circuit, params, initial=basis_state(circuit.n_qubits, col))
    return out
