"""Operation pools and circuit assembly from structure vectors.

An operation is a gate kind plus a working range of qubits; a pool is
an ordered list of operations, and a structure vector k picks one
operation per placeholder.  Pool construction follows a shrinking-range
scheme: the largest pool holds parameterized single-qubit operations
over every contiguous range down to length 2, and each smaller pool
drops the shortest ranges.  The smallest pool additionally receives the
family's non-parameterized single-qubit gates at full range, so a
full-range layer of fixed gates stays expressible when every shorter
range is gone.

Pool entry order is construction order and is what indexes the columns
of the architecture matrix: single-qubit operations sorted by
descending range length, then ascending start qubit, then family type
order (parameterized types first); controlled operations next; the
identity candidate E last.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .sim import CircuitIR, GateInstance, GateKind, build_qft

# =============================================================================
# Operations
# =============================================================================


@dataclass(frozen=True)
class Operation:
    """One pool candidate: a gate kind over a working range of qubits.

    kind None is the identity candidate E, which expands to zero gates.
    """

    kind: GateKind | None
    working_range: tuple[int, ...]
    n_qubits: int

    def __post_init__(self):
        object.__setattr__(
            self, "working_range", tuple(int(q) for q in self.working_range)
        )
        if not self.working_range:
            raise ValueError("working range must be non-empty")
        if len(set(self.working_range)) != len(self.working_range):
            raise ValueError(f"duplicate qubit in working range {self.working_range}")
        for q in self.working_range:
            if not 0 <= q < self.n_qubits:
                raise ValueError(
                    f"qubit {q} outside [0,{self.n_qubits}) in working range"
                )
        for a, b in zip(self.working_range, self.working_range[1:]):
            if b != a + 1:
                raise ValueError(
                    f"working range {self.working_range} must be contiguous "
                    "ascending"
                )

    @property
    def is_identity(self) -> bool:
        return self.kind is None

    @property
    def is_controlled(self) -> bool:
        return self.kind is not None and self.kind.is_controlled

    @property
    def label(self) -> str:
        name = "E" if self.kind is None else self.kind.value
        return f"{name}:[{','.join(str(q) for q in self.working_range)}]"

    @property
    def range_length(self) -> int:
        return len(self.working_range)


def parse_operation_label(label: str, n_qubits: int) -> Operation:
    """Parse the display syntax, e.g. "U3:[0,1,2]" or "E:[0,1,2]"."""
    text = label.strip()
    if ":" not in text:
        raise ValueError(f"bad operation label {label!r}: missing ':'")
    name, _, rng = text.partition(":")
    rng = rng.strip()
    if not (rng.startswith("[") and rng.endswith("]")):
        raise ValueError(f"bad operation label {label!r}: range must be [..]")
    try:
        qubits = tuple(int(q) for q in rng[1:-1].split(","))
    except ValueError:
        raise ValueError(f"bad operation label {label!r}: non-integer qubit") from None
    name = name.strip()
    if name == "E":
        kind = None
    else:
        try:
            kind = GateKind(name)
        except ValueError:
            raise ValueError(f"bad operation label {label!r}: unknown gate") from None
    return Operation(kind=kind, working_range=qubits, n_qubits=n_qubits)


def expand_operation(
    op: Operation, placeholder_index: int = 0
) -> tuple[list[GateInstance], int]:
    """Gates realizing one operation, with expansion-local parameter slots.

    Single-qubit operations put one gate on each qubit of the working
    range, each with its own parameter slots.  Controlled operations
    expand as a chain over consecutive pairs of the listed range; a
    single-entry range [q] means the pair (q, (q+1) mod n_qubits).
    E expands to nothing.  Returns (gates, slot_count); slots are
    numbered from 0 within the expansion and offset by the assembler.
    The placeholder index is accepted for error reporting only.
    """
    del placeholder_index
    if op.is_identity:
        return [], 0
    arity = op.kind.param_arity
    gates: list[GateInstance] = []
    offset = 0
    if not op.is_controlled:
        for q in op.working_range:
            gates.append(
                GateInstance(
                    op.kind, (q,), param_slot=offset if arity else None
                )
            )
            offset += arity
        return gates, offset
    if len(op.working_range) == 1:
        q = op.working_range[0]
        pairs = [(q, (q + 1) % op.n_qubits)]
    else:
        pairs = list(zip(op.working_range, op.working_range[1:]))
    for pair in pairs:
        gates.append(
            GateInstance(op.kind, pair, param_slot=offset if arity else None)
        )
        offset += arity
    return gates, offset


# =============================================================================
# Pools
# =============================================================================


@dataclass(frozen=True)
class OperationPool:
    n_qubits: int
    ops: tuple[Operation, ...]
    name: str
    family: str | None = None
    size_index: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        if not self.ops:
            raise ValueError("pool must be non-empty")
        if sum(1 for op in self.ops if op.is_identity) > 1:
            raise ValueError("pool may contain at most one E operation")
        labels = [op.label for op in self.ops]
        if len(set(labels)) != len(labels):
            dup = next(x for x in labels if labels.count(x) > 1)
            raise ValueError(f"duplicate operation {dup} in pool")
        for op in self.ops:
            if op.n_qubits != self.n_qubits:
                raise ValueError(
                    f"operation {op.label} built for {op.n_qubits} qubits, "
                    f"pool has {self.n_qubits}"
                )

    def __len__(self) -> int:
        return len(self.ops)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(op.label for op in self.ops)

    def slot_count(self, j: int) -> int:
        """Parameter-slot count of the expansion of op j."""
        return expand_operation(self.ops[j])[1]


# Single-qubit types are listed parameterized-first; that order breaks
# ties between ops of equal range length and start qubit.
_FAMILIES: dict[str, dict] = {
    "O1": {"single_param": (GateKind.RY, GateKind.RZ), "single_fixed": (GateKind.H,),
           "controlled": (GateKind.CZ,)},
    "O2": {"single_param": (GateKind.RY, GateKind.RZ), "single_fixed": (GateKind.H,),
           "controlled": (GateKind.CNOT,)},
    "O3": {"single_param": (GateKind.RY, GateKind.RZ), "single_fixed": (GateKind.H,),
           "controlled": (GateKind.CZ, GateKind.CNOT)},
    "O4": {"single_param": (GateKind.U3,), "single_fixed": (GateKind.H,),
           "controlled": (GateKind.CU3,)},
}


def _controlled_range(family: str, n_qubits: int) -> tuple[int, ...]:
    # O4's entangler spans the first n-1 qubits (chain (0,1)..(n-3,n-2));
    # the other families entangle over the full register.
    if family == "O4":
        return tuple(range(n_qubits - 1))
    return tuple(range(n_qubits))


def _fixed_pool(family: str, n_qubits: int) -> OperationPool:
    if n_qubits != 3:
        raise ValueError(f"{family} is a fixed 3-qubit pool")
    singles = [
        Operation(kind, (q,), 3)
        for kind in (GateKind.X, GateKind.T)
        for q in range(3)
    ]
    ops = list(singles)
    if family == "Of2":
        for kind in (GateKind.CNOT, GateKind.CZ):
            ops.extend(Operation(kind, (q,), 3) for q in range(3))
            ops.append(Operation(kind, (0, 1, 2), 3))
    ops.append(Operation(None, (0, 1, 2), 3))
    return OperationPool(
        n_qubits=3, ops=tuple(ops), name=family.lower(), family=family, size_index=1
    )


def _assemble_family_pool(
    family: str, size_index: int, n_qubits: int, singles: list[Operation]
) -> OperationPool:
    spec = _FAMILIES[family]
    type_order = list(spec["single_param"]) + list(spec["single_fixed"])
    singles = sorted(
        singles,
        key=lambda op: (
            -op.range_length,
            op.working_range[0],
            type_order.index(op.kind),
        ),
    )
    ops = list(singles)
    crange = _controlled_range(family, n_qubits)
    ops.extend(Operation(kind, crange, n_qubits) for kind in spec["controlled"])
    ops.append(Operation(None, tuple(range(n_qubits)), n_qubits))
    digit = family[1]
    return OperationPool(
        n_qubits=n_qubits,
        ops=tuple(ops),
        name=f"op{digit}-{size_index}",
        family=family,
        size_index=size_index,
    )


def build_pool(family: str, size_index: int, n_qubits: int) -> OperationPool:
    """Construct a named pool.

    For families O1-O4 on n qubits there are n-1 sizes, numbered from
    largest (1) to smallest (n-1).  Size s holds each parameterized
    single-qubit type over every contiguous range of length n down to
    s+1 (so size 1 reaches length 2 and size n-1 keeps only the full
    range), the family's controlled operation(s), and E.  The smallest
    size additionally holds the family's non-parameterized single-qubit
    types at full range.  Of1/Of2 are fixed 3-qubit pools.
    """
    if family in ("Of1", "Of2"):
        if size_index != 1:
            raise ValueError(f"{family} has a single size; got size {size_index}")
        return _fixed_pool(family, n_qubits)
    if family not in _FAMILIES:
        raise ValueError(
            f"unknown family {family!r}; known: {sorted(_FAMILIES)} + ['Of1', 'Of2']"
        )
    if n_qubits < 2:
        raise ValueError("pools need at least 2 qubits")
    if not 1 <= size_index <= n_qubits - 1:
        raise ValueError(
            f"size_index {size_index} outside [1, {n_qubits - 1}] for {family}"
        )
    spec = _FAMILIES[family]
    singles: list[Operation] = []
    min_len = size_index + 1
    for kind in spec["single_param"]:
        for length in range(n_qubits, min_len - 1, -1):
            for start in range(n_qubits - length + 1):
                singles.append(
                    Operation(kind, tuple(range(start, start + length)), n_qubits)
                )
    if size_index == n_qubits - 1:
        for kind in spec["single_fixed"]:
            singles.append(Operation(kind, tuple(range(n_qubits)), n_qubits))
    return _assemble_family_pool(family, size_index, n_qubits, singles)


def shrink_pool(pool: OperationPool) -> OperationPool:
    """Drop every single-qubit operation at the current minimum range length.

    Controlled operations and E are untouched.  When the deletion
    leaves only full-range single-qubit operations and the pool's
    family is known, the family's non-parameterized single-qubit types
    join at full range (the smallest-pool form).  Errors when there is
    no shorter length to delete.
    """
    singles = [op for op in pool.ops if not (op.is_identity or op.is_controlled)]
    lengths = {op.range_length for op in singles}
    if len(lengths) < 2:
        raise ValueError(
            f"nothing left to shrink in pool {pool.name!r}: "
            f"single-qubit range lengths {sorted(lengths)}"
        )
    cutoff = min(lengths)
    kept = [op for op in singles if op.range_length > cutoff]
    if (
        pool.family in _FAMILIES
        and all(op.range_length == pool.n_qubits for op in kept)
    ):
        present = {(op.kind, op.working_range) for op in kept}
        for kind in _FAMILIES[pool.family]["single_fixed"]:
            key = (kind, tuple(range(pool.n_qubits)))
            if key not in present:
                kept.append(Operation(kind, key[1], pool.n_qubits))
    size_index = None if pool.size_index is None else pool.size_index + 1
    if pool.family in _FAMILIES:
        return _assemble_family_pool(
            pool.family, size_index if size_index is not None else 0,
            pool.n_qubits, kept,
        )
    others = [op for op in pool.ops if op.is_identity or op.is_controlled]
    return replace(pool, ops=tuple(kept + others), size_index=size_index)


def pool_from_labels(
    labels, n_qubits: int, name: str = "custom"
) -> OperationPool:
    """Explicit pool from label syntax, e.g. ["U3:[0,1]", "CZ:[0,1,2]", "E:[0,1,2]"]."""
    ops = tuple(parse_operation_label(lbl, n_qubits) for lbl in labels)
    return OperationPool(n_qubits=n_qubits, ops=ops, name=name)


# =============================================================================
# Circuit assembly
# =============================================================================

ENCODINGS = ("rx_pi", "h_layer", "x_qft", "none")
QFT_POSITIONS = ("front", "back", "back_and_front")


@dataclass(frozen=True)
class BlockLayout:
    """How placeholders embed into a full circuit.

    encoding "rx_pi" prefixes RX(pi) on every qubit, "h_layer" prefixes
    Hadamards, "none" nothing.  "x_qft" builds the fidelity scaffold:
    X on every qubit, then the placeholder expansions split around a
    QFT on the full register per `position` ("front" = all expansions
    before the QFT, "back" = all after, "back_and_front" = the first
    ceil(P/2) placeholder groups before and the rest after).

    num_blocks repeats the whole placeholder sequence; blocks share the
    architecture matrix but own distinct parameter slots.
    """

    encoding: str = "none"
    position: str = "back_and_front"
    num_blocks: int = 1

    def __post_init__(self):
        if self.encoding not in ENCODINGS:
            raise ValueError(
                f"unknown encoding {self.encoding!r}; known: {ENCODINGS}"
            )
        if self.position not in QFT_POSITIONS:
            raise ValueError(
                f"unknown position {self.position!r}; known: {QFT_POSITIONS}"
            )
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")


def _offset_gates(gates: list[GateInstance], offset: int) -> list[GateInstance]:
    out = []
    for g in gates:
        if g.param_slot is None:
            out.append(g)
        else:
            out.append(replace(g, param_slot=g.param_slot + offset))
    return out


def assemble_circuit(k, pool: OperationPool, layout: BlockLayout) -> CircuitIR:
    """Concrete circuit for structure vector k under a layout.

    Parameter slots are laid out block-major, then placeholder-major, in
    expansion order; encoding gates carry fixed angles and contribute no
    slots.
    """
    k = [int(x) for x in k]
    for i, ki in enumerate(k):
        if not 0 <= ki < len(pool.ops):
            raise ValueError(
                f"structure index {ki} at placeholder {i} outside [0,{len(pool.ops)})"
            )
    n = pool.n_qubits
    groups: list[list[GateInstance]] = []
    offset = 0
    for _block in range(layout.num_blocks):
        for i, ki in enumerate(k):
            gates, slots = expand_operation(pool.ops[ki], i)
            groups.append(_offset_gates(gates, offset))
            offset += slots
    n_params = offset

    if layout.encoding == "rx_pi":
        prefix = [
            GateInstance(GateKind.RX, (q,), fixed_params=(math.pi,), encoding=True)
            for q in range(n)
        ]
        gates = prefix + [g for grp in groups for g in grp]
    elif layout.encoding == "h_layer":
        prefix = [GateInstance(GateKind.H, (q,), encoding=True) for q in range(n)]
        gates = prefix + [g for grp in groups for g in grp]
    elif layout.encoding == "x_qft":
        prefix = [GateInstance(GateKind.X, (q,), encoding=True) for q in range(n)]
        qft = [replace(g, encoding=True) for g in build_qft(n).gates]
        if layout.position == "front":
            front, back = groups, []
        elif layout.position == "back":
            front, back = [], groups
        else:
            split = (len(groups) + 1) // 2
            front, back = groups[:split], groups[split:]
        gates = (
            prefix
            + [g for grp in front for g in grp]
            + qft
            + [g for grp in back for g in grp]
        )
    else:
        gates = [g for grp in groups for g in grp]
    return CircuitIR(n_qubits=n, gates=tuple(gates), n_params=n_params)


def ideal_scaffold(n_qubits: int) -> CircuitIR:
    """The fixed reference circuit of the fidelity task: X on every qubit,
    then a full-register QFT (the all-E structure under the x_qft layout)."""
    prefix = tuple(
        GateInstance(GateKind.X, (q,), encoding=True) for q in range(n_qubits)
    )
    qft = tuple(replace(g, encoding=True) for g in build_qft(n_qubits).gates)
    return CircuitIR(n_qubits=n_qubits, gates=prefix + qft, n_params=0)


def gate_counts(circuit: CircuitIR) -> tuple[int, int, int]:
    """(total, parameterized, controlled) over the non-encoding gates."""
    total = parameterized = controlled = 0
    for g in circuit.gates:
        if g.encoding or g.kind is GateKind.IDLE:
            continue
        total += 1
        if g.kind.param_arity > 0:
            parameterized += 1
        if g.kind.is_controlled:
            controlled += 1
    return total, parameterized, controlled


def hardware_efficient_baseline(n_qubits: int) -> CircuitIR:
    """Reference circuit for comparison runs: RX(pi) encoding, then a RY
    layer, a CZ chain, a RZ layer, and a second CZ chain.  On 5 qubits
    this is 18 gates, 10 parameterized, 8 controlled."""
    gates: list[GateInstance] = [
        GateInstance(GateKind.RX, (q,), fixed_params=(math.pi,), encoding=True)
        for q in range(n_qubits)
    ]
    slot = 0
    for kind in (GateKind.RY, GateKind.RZ):
        for q in range(n_qubits):
            gates.append(GateInstance(kind, (q,), param_slot=slot))
            slot += 1
        for q in range(n_qubits - 1):
            gates.append(GateInstance(GateKind.CZ, (q, q + 1)))
    return CircuitIR(n_qubits=n_qubits, gates=tuple(gates), n_params=slot)
