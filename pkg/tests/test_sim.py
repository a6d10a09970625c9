"""Simulator unit tests: gates, channels, noisy runs, QFT, gradutils."""

import numpy as np
import pytest

from qasearch.sim import (
    CHANNEL_NAMES,
    CircuitIR,
    GateInstance,
    GateKind,
    NoiseSpec,
    apply_gate,
    basis_state,
    build_qft,
    circuit_from_text,
    circuit_unitary,
    fidelity,
    gate_matrix,
    gate_matrix_derivs,
    make_channel,
    promote,
    run_circuit,
    run_noisy,
    zero_state,
)

RNG = np.random.default_rng(42)


def random_params(kind):
    return tuple(RNG.uniform(-np.pi, np.pi, size=kind.param_arity))


class TestGateMatrices:
    @pytest.mark.parametrize("kind", list(GateKind))
    def test_unitary(self, kind):
        if kind is GateKind.IDLE:
            return
        u = gate_matrix(kind, random_params(kind))
        dim = 2 ** kind.n_qubits
        assert u.shape == (dim, dim)
        assert np.allclose(u.conj().T @ u, np.eye(dim), atol=1e-12)

    def test_rx_pi_is_minus_i_x(self):
        u = gate_matrix(GateKind.RX, (np.pi,))
        assert np.allclose(u, -1j * np.array([[0, 1], [1, 0]]), atol=1e-12)

    def test_h_fixed(self):
        u = gate_matrix(GateKind.H, ())
        assert np.allclose(u, np.array([[1, 1], [1, -1]]) / np.sqrt(2))

    def test_t_phase(self):
        u = gate_matrix(GateKind.T, ())
        assert np.allclose(u, np.diag([1, np.exp(1j * np.pi / 4)]))

    def test_u3_recovers_ry_rz(self):
        th = 0.7
        ry = gate_matrix(GateKind.RY, (th,))
        u3 = gate_matrix(GateKind.U3, (th, 0.0, 0.0))
        assert np.allclose(ry, u3, atol=1e-12)

    def test_cu3_block_structure(self):
        params = (0.3, -0.4, 1.1)
        cu = gate_matrix(GateKind.CU3, params)
        u = gate_matrix(GateKind.U3, params)
        assert np.allclose(cu[:2, :2], np.eye(2))
        assert np.allclose(cu[2:, 2:], u)
        assert np.allclose(cu[:2, 2:], 0)

    @pytest.mark.parametrize("kind", [GateKind.RX, GateKind.RY, GateKind.RZ,
                                      GateKind.U3, GateKind.CU3])
    def test_derivs_match_fd(self, kind):
        params = np.array(random_params(kind))
        derivs = gate_matrix_derivs(kind, params)
        eps = 1e-6
        for s in range(kind.param_arity):
            up, dn = params.copy(), params.copy()
            up[s] += eps
            dn[s] -= eps
            fd = (gate_matrix(kind, up) - gate_matrix(kind, dn)) / (2 * eps)
            assert np.abs(derivs[s] - fd).max() < 1e-8


class TestStatesAndCircuits:
    def test_zero_and_basis(self):
        psi = zero_state(3)
        assert psi[0] == 1 and np.abs(psi).sum() == 1
        assert basis_state(3, 5)[5] == 1

    def test_apply_gate_targets(self):
        # X on qubit 0 of |000> flips the most significant bit
        psi = zero_state(3)
        g = GateInstance(GateKind.X, (0,))
        out = apply_gate(psi, g)
        assert np.argmax(np.abs(out)) == 0b100

    def test_run_circuit_norm_preserved(self):
        circ = build_qft(4)
        out = run_circuit(circ, np.zeros(0))
        assert abs(np.linalg.norm(out) - 1) < 1e-12

    def test_text_round_trip(self):
        gates = (
            GateInstance(GateKind.RX, (0,), fixed_params=(np.pi,), encoding=True),
            GateInstance(GateKind.U3, (1,), param_slot=0),
            GateInstance(GateKind.CU3, (1, 2), param_slot=3),
            GateInstance(GateKind.CZ, (0, 2)),
        )
        circ = CircuitIR(n_qubits=3, gates=gates, n_params=6)
        again = circuit_from_text(circ.to_text())
        assert again.n_qubits == 3 and again.n_params == 6
        assert circ.to_text() == again.to_text()
        th = RNG.normal(size=6)
        assert np.allclose(run_circuit(circ, th), run_circuit(again, th))

    def test_text_errors_carry_line_numbers(self):
        with pytest.raises(ValueError, match="line 2"):
            circuit_from_text("qubits 2 params 0\nBOGUS 0\n")


class TestChannels:
    @pytest.mark.parametrize("name", CHANNEL_NAMES)
    @pytest.mark.parametrize("p", [0.0, 0.1, 0.37, 1.0])
    def test_kraus_completeness(self, name, p):
        ch = make_channel(name, p)
        acc = sum(k.conj().T @ k for k in ch.kraus_ops)
        assert np.abs(acc - np.eye(2)).max() <= 1e-12

    def test_trace_preserved_over_many_applications(self):
        # criterion-5 style stress: 200 channel applications on 3 qubits
        rng = np.random.default_rng(7)
        psi = rng.normal(size=8) + 1j * rng.normal(size=8)
        rho = promote(psi / np.linalg.norm(psi))
        from qasearch.sim import apply_channel
        for i in range(200):
            name = CHANNEL_NAMES[i % len(CHANNEL_NAMES)]
            ch = make_channel(name, 0.05 + 0.002 * (i % 7))
            rho = apply_channel(rho, ch, i % 3)
        assert abs(np.trace(rho).real - 1) <= 1e-9
        evals = np.linalg.eigvalsh(rho)
        assert evals.min() > -1e-12

    def test_bitflip_mixes_plus_state(self):
        circ = CircuitIR(
            n_qubits=1,
            gates=(GateInstance(GateKind.H, (0,)),),
            n_params=0,
        )
        rho = run_noisy(circ, (), (NoiseSpec("terminal", "PhaseDamping", 0.5),))
        # phase damping shrinks off-diagonals, diagonal untouched
        assert abs(rho[0, 0] - 0.5) < 1e-12
        assert abs(rho[0, 1]) < 0.5

    def test_zero_noise_matches_pure(self):
        circ = build_qft(3)
        psi = run_circuit(circ, ())
        rho = run_noisy(circ, (), (NoiseSpec("terminal", "BitFlip", 0.0),))
        assert np.abs(rho - np.outer(psi, psi.conj())).max() < 1e-12


class TestQft:
    def test_qft3_matches_dft(self):
        n = 3
        u = circuit_unitary(build_qft(n), ())
        dim = 2**n
        omega = np.exp(2j * np.pi / dim)
        dft = np.array([[omega ** (j * k) for k in range(dim)]
                        for j in range(dim)]) / np.sqrt(dim)
        assert np.abs(u - dft).max() <= 1e-10

    def test_qft_gate_inventory(self):
        circ = build_qft(3)
        kinds = [g.kind for g in circ.gates]
        assert kinds.count(GateKind.H) == 3
        assert kinds.count(GateKind.CU3) == 3  # controlled phases
        assert circ.n_params == 0


class TestFidelity:
    def test_pure_pure(self):
        a = zero_state(2)
        b = basis_state(2, 1)
        assert fidelity(a, a) == pytest.approx(1.0, abs=1e-12)
        assert fidelity(a, b) == pytest.approx(0.0, abs=1e-12)

    def test_pure_mixed_consistency(self):
        rng = np.random.default_rng(3)
        psi = rng.normal(size=4) + 1j * rng.normal(size=4)
        psi /= np.linalg.norm(psi)
        phi = rng.normal(size=4) + 1j * rng.normal(size=4)
        phi /= np.linalg.norm(phi)
        pure = fidelity(psi, phi)
        mixed = fidelity(psi, promote(phi))
        assert pure == pytest.approx(mixed, abs=1e-12)
