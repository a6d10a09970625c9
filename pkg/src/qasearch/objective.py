"""Problem Hamiltonians: weighted max-cut and diagonal spin models.

Everything here is diagonal in the computational basis, so a
Hamiltonian is just its diagonal as a float64 vector of length 2**n,
indexed with qubit 0 as the most significant bit.  Max-cut energies are
negated cut values: the best cut is the ground state and lower energy
is better everywhere downstream.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# =============================================================================
# Graphs
# =============================================================================


@dataclass(frozen=True)
class Graph:
    """Undirected weighted graph; edges are (u, v, weight) with u < v."""

    n_nodes: int
    edges: tuple[tuple[int, int, float], ...]
    name: str = ""

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("graph needs at least one node")
        seen = set()
        norm = []
        for e in self.edges:
            if len(e) == 2:
                u, v, w = e[0], e[1], 1.0
            else:
                u, v, w = e
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if not (0 <= u < self.n_nodes and 0 <= v < self.n_nodes):
                raise ValueError(f"edge ({u},{v}) outside [0,{self.n_nodes})")
            if u > v:
                u, v = v, u
            if (u, v) in seen:
                raise ValueError(f"duplicate edge ({u},{v})")
            seen.add((u, v))
            norm.append((u, v, float(w)))
        object.__setattr__(self, "edges", tuple(norm))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def cut_value(self, assignment: int) -> float:
        """Total weight across the cut for a bitmask assignment
        (bit i = side of node i, node 0 as the most significant bit)."""
        n = self.n_nodes
        total = 0.0
        for u, v, w in self.edges:
            if ((assignment >> (n - 1 - u)) ^ (assignment >> (n - 1 - v))) & 1:
                total += w
        return total


_LADDER_EDGES = tuple(
    [(i, i + 4) for i in range(4)]
    + [(i, i + 1) for i in range(3)]
    + [(i + 4, i + 5) for i in range(3)]
)

_BARBELL_EDGES = tuple(
    [(u, v) for u in range(4) for v in range(u + 1, 4)]
    + [(u, v) for u in range(4, 8) for v in range(u + 1, 8)]
    + [(3, 4)]
)

# A fixed 8-node instance drawn once from an edge-probability-1/2 model
# and frozen here so every run sees the same graph.  Max cut 14.
_RANDOM_EDGES = (
    (0, 1), (0, 3), (0, 6), (0, 7),
    (1, 2), (1, 3), (1, 4), (1, 5), (1, 6), (1, 7),
    (2, 3), (2, 5), (2, 6),
    (3, 7),
    (4, 5), (4, 6), (4, 7),
    (5, 6), (5, 7),
    (6, 7),
)

_BENCHMARKS = {
    "Ladder": (8, _LADDER_EDGES),
    "Barbell": (8, _BARBELL_EDGES),
    "Random": (8, _RANDOM_EDGES),
}


def benchmark_graph(name: str) -> Graph:
    """Named 8-node benchmark instance.

    "Ladder" is the 2x4 grid (10 unit edges, bipartite, max cut 10).
    "Barbell" is two 4-cliques joined by one bridge edge (13 edges,
    max cut 9).  "Random" is a fixed instance with 20 edges.
    """
    key = name.strip()
    lookup = {k.lower(): k for k in _BENCHMARKS}
    if key.lower() not in lookup:
        raise ValueError(
            f"unknown benchmark graph {name!r}; known: {sorted(_BENCHMARKS)}"
        )
    key = lookup[key.lower()]
    n, edges = _BENCHMARKS[key]
    return Graph(n_nodes=n, edges=tuple((u, v, 1.0) for u, v in edges), name=key)


def load_graph(file) -> Graph:
    """Parse a graph file: a `nodes N` header, then `edge u v [weight]`
    lines.  Blank lines and `#` comments are skipped."""
    text, source = _read_text(file)
    n_nodes = None
    edges: list[tuple[int, int, float]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "nodes":
                if n_nodes is not None:
                    raise ValueError("duplicate nodes header")
                if len(parts) != 2:
                    raise ValueError("nodes header takes one integer")
                n_nodes = int(parts[1])
            elif parts[0] == "edge":
                if n_nodes is None:
                    raise ValueError("edge before nodes header")
                if len(parts) not in (3, 4):
                    raise ValueError("edge takes 2 nodes and an optional weight")
                w = float(parts[3]) if len(parts) == 4 else 1.0
                u, v = int(parts[1]), int(parts[2])
                for node in (u, v):
                    if not 0 <= node < n_nodes:
                        raise ValueError(f"node {node} outside [0,{n_nodes})")
                edges.append((u, v, w))
            else:
                raise ValueError(f"unknown directive {parts[0]!r}")
        except ValueError as e:
            raise ValueError(f"{source}:{lineno}: {e}") from None
    if n_nodes is None:
        raise ValueError(f"{source}: missing nodes header")
    return Graph(n_nodes=n_nodes, edges=tuple(edges), name=str(source))


# =============================================================================
# Diagonal Hamiltonians
# =============================================================================


@dataclass(frozen=True)
class DiagonalHamiltonian:
    """Computational-basis-diagonal observable with cached extremes."""

    n_qubits: int
    diag: np.ndarray
    name: str = ""
    _extremes: tuple = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        diag = np.asarray(self.diag, dtype=np.float64)
        if diag.shape != (2**self.n_qubits,):
            raise ValueError(
                f"diagonal has shape {diag.shape}, expected (2**{self.n_qubits},)"
            )
        diag = diag.copy()
        diag.flags.writeable = False
        object.__setattr__(self, "diag", diag)
        object.__setattr__(
            self, "_extremes", (float(diag.min()), float(diag.max()))
        )

    @property
    def emin(self) -> float:
        return self._extremes[0]

    @property
    def emax(self) -> float:
        return self._extremes[1]

    @property
    def ground_state_index(self) -> int:
        return int(np.argmin(self.diag))


def _bits(n_qubits: int) -> np.ndarray:
    """bits[i, z] = value of qubit i in basis index z (qubit 0 = MSB)."""
    z = np.arange(2**n_qubits)
    return np.stack(
        [(z >> (n_qubits - 1 - i)) & 1 for i in range(n_qubits)]
    ).astype(np.float64)


def maxcut_hamiltonian(graph: Graph) -> DiagonalHamiltonian:
    """diag[z] = -(weight across the cut given by bitstring z)."""
    if graph.n_nodes > 24:
        raise ValueError("refusing to enumerate more than 2**24 assignments")
    bits = _bits(graph.n_nodes)
    cut = np.zeros(2**graph.n_nodes)
    for u, v, w in graph.edges:
        cut += w * np.logical_xor(bits[u], bits[v])
    return DiagonalHamiltonian(
        n_qubits=graph.n_nodes, diag=-cut, name=graph.name or "maxcut"
    )


def load_diag_hamiltonian(file) -> DiagonalHamiltonian:
    """Parse a diagonal spin model.

    Format: a `qubits N` header, then any number of `const c`,
    `z i c` (adds c * s_i) and `zz i j c` (adds c * s_i * s_j) lines,
    where s_i = +1 when qubit i reads 0 and -1 when it reads 1.
    Blank lines and `#` comments are skipped.
    """
    text, source = _read_text(file)
    n_qubits = None
    terms: list[tuple] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "qubits":
                if n_qubits is not None:
                    raise ValueError("duplicate qubits header")
                n_qubits = int(parts[1])
                if not 1 <= n_qubits <= 20:
                    raise ValueError(f"qubits must be in [1,20], got {n_qubits}")
            elif parts[0] == "const":
                if len(parts) != 2:
                    raise ValueError("const takes one coefficient")
                terms.append(("const", float(parts[1])))
            elif parts[0] == "z":
                if len(parts) != 3:
                    raise ValueError("z takes a qubit and a coefficient")
                if n_qubits is None:
                    raise ValueError("term before qubits header")
                i = int(parts[1])
                _check_qubit(i, n_qubits)
                terms.append(("z", i, float(parts[2])))
            elif parts[0] == "zz":
                if len(parts) != 4:
                    raise ValueError("zz takes two qubits and a coefficient")
                if n_qubits is None:
                    raise ValueError("term before qubits header")
                i, j = int(parts[1]), int(parts[2])
                _check_qubit(i, n_qubits)
                _check_qubit(j, n_qubits)
                if i == j:
                    raise ValueError(f"zz term with repeated qubit {i}")
                terms.append(("zz", i, j, float(parts[3])))
            else:
                raise ValueError(f"unknown directive {parts[0]!r}")
            if parts[0] == "const" and n_qubits is None:
                raise ValueError("term before qubits header")
        except (ValueError, IndexError) as e:
            msg = e if str(e) else "malformed line"
            raise ValueError(f"{source}:{lineno}: {msg}") from None
    if n_qubits is None:
        raise ValueError(f"{source}: missing qubits header")
    signs = 1.0 - 2.0 * _bits(n_qubits)
    diag = np.zeros(2**n_qubits)
    for term in terms:
        if term[0] == "const":
            diag += term[1]
        elif term[0] == "z":
            _, i, c = term
            diag += c * signs[i]
        else:
            _, i, j, c = term
            diag += c * signs[i] * signs[j]
    return DiagonalHamiltonian(n_qubits=n_qubits, diag=diag, name=str(source))


def _check_qubit(i: int, n_qubits: int) -> None:
    if not 0 <= i < n_qubits:
        raise ValueError(f"qubit {i} outside [0,{n_qubits})")


def _read_text(file) -> tuple[str, str]:
    if isinstance(file, io.TextIOBase):
        return file.read(), getattr(file, "name", "<stream>")
    path = Path(file)
    return path.read_text(), path.name


def scale_energy(energy: float, hamiltonian: DiagonalHamiltonian) -> float:
    """Relative energy e = (E - Emin) / (Emax - Emin) in [0, 1] for any
    reachable expectation.  Not clamped: values outside the range signal
    a bug upstream rather than get hidden.  Degenerate spectra map to 0.
    """
    lo, hi = hamiltonian.emin, hamiltonian.emax
    if math.isclose(lo, hi):
        return 0.0
    return (float(energy) - lo) / (hi - lo)
