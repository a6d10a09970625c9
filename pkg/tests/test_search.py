"""Search core: sampling math, gradients, training loop, fine-tuning."""

import math

import numpy as np
import pytest

from qasearch.objective import DiagonalHamiltonian, Graph, maxcut_hamiltonian
from qasearch.pools import (
    BlockLayout,
    assemble_circuit,
    build_pool,
    ideal_scaffold,
    pool_from_labels,
)
from qasearch.search import (
    EnergyObjective,
    FidelityObjective,
    SearchConfig,
    adjoint_energy_grad,
    adjoint_overlap_grad,
    asp,
    batch_loss,
    batch_weights,
    enriched_alpha,
    extract_structure,
    fine_tune,
    grad_alpha,
    grad_theta,
    init_search,
    local_loss,
    parameter_shift_grad,
    placeholder_probs,
    run_search,
    sample_batch,
    structure_prob,
    train_step,
)
from qasearch.sim import CircuitIR, GateInstance, GateKind, run_circuit


def triangle_hamiltonian():
    g = Graph(n_nodes=3, edges=((0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)))
    return maxcut_hamiltonian(g)


class TestDistribution:
    def test_softmax_oracle(self):
        alpha = np.log([[1.0, 2.0, 3.0]])
        probs = placeholder_probs(alpha, 0)
        assert np.allclose(probs, [1 / 6, 2 / 6, 3 / 6])

    def test_row_shift_invariance(self):
        rng = np.random.default_rng(0)
        alpha = rng.normal(size=(3, 5))
        shifted = alpha + rng.normal(size=(3, 1)) * 100
        for i in range(3):
            assert np.allclose(
                placeholder_probs(alpha, i), placeholder_probs(shifted, i)
            )

    def test_extreme_logits_stay_finite(self):
        probs = placeholder_probs(np.array([[1e4, 0.0, -1e4]]), 0)
        assert np.all(np.isfinite(probs))
        assert probs[0] == pytest.approx(1.0)

    def test_structure_prob_factorizes(self):
        rng = np.random.default_rng(1)
        alpha = rng.normal(size=(3, 4))
        k = (2, 0, 3)
        expected = 1.0
        for i, ki in enumerate(k):
            expected *= placeholder_probs(alpha, i)[ki]
        assert structure_prob(alpha, k) == pytest.approx(expected, rel=1e-12)

    def test_structure_probs_sum_to_one(self):
        rng = np.random.default_rng(2)
        alpha = rng.normal(size=(3, 4))
        total = 0.0
        for flat in range(4**3):
            k = (flat // 16, (flat // 4) % 4, flat % 4)
            total += structure_prob(alpha, k)
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_extract_structure_argmax_and_ties(self):
        alpha = np.array([[0.0, 2.0, 1.0], [5.0, 5.0, 1.0]])
        assert extract_structure(alpha) == (1, 0)


class TestSampling:
    def test_deterministic_given_stream(self):
        alpha = np.random.default_rng(3).normal(size=(4, 5))
        b1 = sample_batch(alpha, 16, np.random.default_rng(7))
        b2 = sample_batch(alpha, 16, np.random.default_rng(7))
        assert b1 == b2

    def test_draw_count_independent_of_alpha(self):
        # the stream must advance identically however the probabilities
        # fall, or seeded runs with different alphas would desynchronize
        r1 = np.random.default_rng(11)
        r2 = np.random.default_rng(11)
        sample_batch(np.zeros((3, 4)), 8, r1)
        sample_batch(np.random.default_rng(4).normal(size=(3, 4)) * 5, 8, r2)
        assert r1.random() == r2.random()

    def test_empirical_frequencies(self):
        alpha = np.log([[1.0, 2.0, 3.0]])
        batch = sample_batch(alpha, 20000, np.random.default_rng(5))
        counts = np.bincount([k[0] for k in batch], minlength=3) / 20000
        assert np.abs(counts - [1 / 6, 2 / 6, 3 / 6]).max() < 0.02

    def test_batch_size_validated(self):
        with pytest.raises(ValueError):
            sample_batch(np.zeros((2, 2)), 0, np.random.default_rng(0))


class TestWeights:
    def test_sum_to_one_and_ratio(self):
        alpha = np.random.default_rng(6).normal(size=(2, 3))
        batch = [(0, 1), (2, 2), (0, 1)]
        w = batch_weights(batch, alpha)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert w[0] == pytest.approx(w[2])
        ratio = structure_prob(alpha, batch[0]) / structure_prob(alpha, batch[1])
        assert w[0] / w[1] == pytest.approx(ratio, rel=1e-12)

    def test_underflow_rejected(self):
        alpha = np.array([[0.0, -2000.0]])
        with pytest.raises(ValueError, match="underflow"):
            batch_weights([(1,)], alpha)

    def test_batch_loss_weighted_mean(self):
        alpha = np.zeros((2, 2))
        batch = [(0, 0), (1, 1)]
        assert batch_loss(batch, [1.0, 3.0], alpha) == pytest.approx(2.0)


class TestGradAlpha:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        alpha = rng.normal(size=(3, 4))
        batch = sample_batch(alpha, 8, rng)
        losses = rng.normal(size=8)
        g = grad_alpha(batch, losses, alpha)
        eps = 1e-6
        fd = np.zeros_like(alpha)
        for i in range(3):
            for j in range(4):
                up = alpha.copy()
                up[i, j] += eps
                dn = alpha.copy()
                dn[i, j] -= eps
                fd[i, j] = (
                    batch_loss(batch, losses, up)
                    - batch_loss(batch, losses, dn)
                ) / (2 * eps)
        assert np.abs(g - fd).max() < 1e-6

    def test_uniform_losses_give_zero_gradient(self):
        alpha = np.random.default_rng(9).normal(size=(3, 4))
        batch = sample_batch(alpha, 6, np.random.default_rng(10))
        g = grad_alpha(batch, [0.7] * 6, alpha)
        assert np.abs(g).max() < 1e-15


class TestThetaGradients:
    def _circuit(self):
        pool = build_pool("O4", 1, 3)
        layout = BlockLayout(encoding="rx_pi")
        k = tuple(np.random.default_rng(12).integers(0, len(pool), size=3))
        return assemble_circuit(k, pool, layout)

    def test_adjoint_energy_vs_finite_differences(self):
        circuit = self._circuit()
        rng = np.random.default_rng(13)
        theta = rng.normal(size=circuit.n_params)
        hdiag = rng.normal(size=2**circuit.n_qubits)
        energy, grad = adjoint_energy_grad(circuit, theta, hdiag)
        psi = run_circuit(circuit, theta)
        assert energy == pytest.approx(
            float(np.real(np.vdot(psi, hdiag * psi)))
        )
        eps = 1e-6

        def e_of(th):
            s = run_circuit(circuit, th)
            return float(np.real(np.vdot(s, hdiag * s)))

        for s in range(circuit.n_params):
            up, dn = theta.copy(), theta.copy()
            up[s] += eps
            dn[s] -= eps
            fd = (e_of(up) - e_of(dn)) / (2 * eps)
            assert grad[s] == pytest.approx(fd, abs=5e-6)

    def test_adjoint_overlap_vs_finite_differences(self):
        circuit = self._circuit()
        rng = np.random.default_rng(14)
        theta = rng.normal(size=circuit.n_params)
        phi = rng.normal(size=2**circuit.n_qubits) + 1j * rng.normal(
            size=2**circuit.n_qubits
        )
        phi /= np.linalg.norm(phi)
        overlap, grad = adjoint_overlap_grad(circuit, theta, phi)
        assert 0.0 <= overlap <= 1.0
        eps = 1e-6

        def f_of(th):
            return float(np.abs(np.vdot(phi, run_circuit(circuit, th))) ** 2)

        for s in range(circuit.n_params):
            up, dn = theta.copy(), theta.copy()
            up[s] += eps
            dn[s] -= eps
            fd = (f_of(up) - f_of(dn)) / (2 * eps)
            assert grad[s] == pytest.approx(fd, abs=5e-6)

    def test_shift_rule_matches_adjoint_with_controlled_gates(self):
        # O4 placeholders include CU3, whose half-frequency component
        # needs the two-point rule; agreement here exercises it.
        pool = build_pool("O4", 2, 4)
        layout = BlockLayout(encoding="h_layer")
        rng = np.random.default_rng(15)
        hdiag = rng.normal(size=16)
        for trial in range(4):
            k = tuple(rng.integers(0, len(pool), size=3))
            circuit = assemble_circuit(k, pool, layout)
            theta = rng.normal(size=circuit.n_params)
            _, adj = adjoint_energy_grad(circuit, theta, hdiag)

            def e_of(th, circuit=circuit):
                s = run_circuit(circuit, th)
                return float(np.real(np.vdot(s, hdiag * s)))

            shift = parameter_shift_grad(circuit, theta, e_of)
            assert np.abs(shift - adj).max() < 1e-8

    def test_shared_slot_rejected(self):
        gates = (
            GateInstance(GateKind.RY, (0,), param_slot=0),
            GateInstance(GateKind.RZ, (0,), param_slot=0),
        )
        circuit = CircuitIR(n_qubits=1, gates=gates, n_params=1)
        with pytest.raises(ValueError, match="shared"):
            parameter_shift_grad(circuit, [0.3], lambda th: 0.0)

    def test_grad_theta_matches_unscaled_adjoint(self):
        ham = triangle_hamiltonian()
        pool = build_pool("O3", 1, 3)
        layout = BlockLayout(encoding="h_layer")
        k = (0, 2, 1)
        theta = np.random.default_rng(16).normal(
            size=assemble_circuit(k, pool, layout).n_params
        )
        g = grad_theta(k, theta, ham, pool, layout)
        circuit = assemble_circuit(k, pool, layout)
        _, expected = adjoint_energy_grad(circuit, theta, ham.diag)
        assert np.array_equal(g, expected)


class TestObjectives:
    def test_energy_loss_is_scaled(self):
        ham = triangle_hamiltonian()
        obj = EnergyObjective(ham)
        pool = build_pool("O3", 1, 3)
        layout = BlockLayout(encoding="h_layer")
        circuit = assemble_circuit((0, 1, 2), pool, layout)
        theta = np.random.default_rng(17).normal(size=circuit.n_params)
        raw = obj.energy(circuit, theta)
        span = ham.emax - ham.emin
        assert obj.loss(circuit, theta) == pytest.approx(
            (raw - ham.emin) / span
        )
        loss, grad = obj.loss_and_grad(circuit, theta)
        assert loss == pytest.approx(obj.loss(circuit, theta))
        _, raw_grad = adjoint_energy_grad(circuit, theta, ham.diag)
        assert np.allclose(grad, raw_grad / span)

    def test_fidelity_loss_zero_on_ideal_scaffold(self):
        obj = FidelityObjective(3)
        scaffold = ideal_scaffold(3)
        assert obj.loss(scaffold, np.zeros(0)) == pytest.approx(0.0, abs=1e-12)

    def test_fidelity_qubit_count_guard(self):
        obj = FidelityObjective(3)
        with pytest.raises(ValueError, match="qubits"):
            obj.fidelity(ideal_scaffold(2), np.zeros(0))

    def test_local_loss_matches_objective(self):
        ham = triangle_hamiltonian()
        pool = build_pool("O3", 1, 3)
        layout = BlockLayout(encoding="h_layer")
        k = (1, 1, 0)
        circuit = assemble_circuit(k, pool, layout)
        theta = np.random.default_rng(18).normal(size=circuit.n_params)
        assert local_loss(k, theta, ham, pool, layout) == pytest.approx(
            EnergyObjective(ham).loss(circuit, theta)
        )


class TestFineTune:
    def test_single_rotation_converges_to_pi(self):
        # RY(theta) on |0>: <Z> = cos(theta), scaled loss (1+cos)/2,
        # minimized at odd multiples of pi with loss 0.
        ham = DiagonalHamiltonian(n_qubits=1, diag=np.array([1.0, -1.0]))
        pool = pool_from_labels(["RY:[0]"], 1)
        layout = BlockLayout(encoding="none")
        theta, history = fine_tune(
            (0,), [0.3], ham, pool, layout, iters=200, lr=0.5
        )
        assert len(history) == 201
        assert history[0] == pytest.approx((1 + math.cos(0.3)) / 2)
        assert history[-1] < 1e-8
        assert abs(abs(theta[0]) % (2 * math.pi) - math.pi) < 1e-3

    def test_history_never_increases_for_convex_start(self):
        ham = DiagonalHamiltonian(n_qubits=1, diag=np.array([1.0, -1.0]))
        pool = pool_from_labels(["RY:[0]"], 1)
        layout = BlockLayout(encoding="none")
        _, history = fine_tune(
            (0,), [0.5], ham, pool, layout, iters=50, lr=0.2
        )
        assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))

    def test_theta_length_validated(self):
        ham = DiagonalHamiltonian(n_qubits=1, diag=np.array([1.0, -1.0]))
        pool = pool_from_labels(["RY:[0]"], 1)
        with pytest.raises(ValueError, match="entries"):
            fine_tune((0,), [0.1, 0.2], ham, pool,
                      BlockLayout(encoding="none"), iters=1)


class TestAsp:
    def test_strict_tail_never_settles(self):
        assert asp([1.0, 0.5, 0.0, 0.0, 0.02], 0.01) is None

    def test_loose_threshold_settles_early(self):
        assert asp([1.0, 0.5, 0.0, 0.0, 0.02], 0.05) == 2

    def test_flat_history_settles_immediately(self):
        assert asp([0.3, 0.3, 0.3], 10.0) == 0

    def test_empty_history_rejected(self):
        with pytest.raises(ValueError):
            asp([], 0.01)


def tiny_config(**kw):
    base = dict(
        num_placeholders=3,
        variant="SA-DQAS-F1",
        beta=0.1,
        batch_size=4,
        steps=6,
        lr_alpha=0.15,
        lr_theta=0.05,
        seed=0,
        layout=BlockLayout(encoding="h_layer"),
    )
    base.update(kw)
    return SearchConfig(**base)


class TestTraining:
    def test_init_layout(self):
        cfg = tiny_config()
        pool = build_pool("O3", 1, 3)
        state = init_search(cfg, pool, EnergyObjective(triangle_hamiltonian()))
        assert state.alpha.shape == (3, len(pool))
        assert np.all(state.alpha == 0)
        assert state.encoder is not None
        assert set(state.theta.vectors) == {
            (0, i, j) for i in range(3) for j in range(len(pool))
        }
        for (_, _, j), vec in state.theta.vectors.items():
            assert vec.shape == (pool.slot_count(j),)

    def test_plain_variant_has_no_encoder(self):
        cfg = tiny_config(variant="DQAS")
        pool = build_pool("O3", 1, 3)
        state = init_search(cfg, pool, EnergyObjective(triangle_hamiltonian()))
        assert state.encoder is None

    def test_records_and_argmax_energy(self):
        cfg = tiny_config()
        pool = build_pool("O3", 1, 3)
        ham = triangle_hamiltonian()
        result = run_search(cfg, pool, EnergyObjective(ham))
        assert len(result.records) == cfg.steps
        assert [r.step for r in result.records] == list(range(cfg.steps))
        for r in result.records:
            assert np.isfinite(r.batch_loss)
            assert 0.0 <= r.argmax_energy <= 1.0
            assert len(r.alpha_hash) == 16
            assert r.encoder_loss is not None
        assert result.k_star == extract_structure(result.alpha_prime)
        assert result.best_argmax_energy == min(
            r.argmax_energy for r in result.records
        )

    def test_plain_variant_records_no_encoder_loss(self):
        cfg = tiny_config(variant="DQAS")
        pool = build_pool("O3", 1, 3)
        result = run_search(cfg, pool, EnergyObjective(triangle_hamiltonian()))
        assert all(r.encoder_loss is None for r in result.records)

    def test_zero_beta_matches_plain_variant_bitwise(self):
        pool = build_pool("O3", 1, 3)
        ham = triangle_hamiltonian()
        runs = {}
        for variant in ("DQAS", "SA-DQAS-F1"):
            cfg = tiny_config(variant=variant, beta=0.0, steps=10)
            res = run_search(cfg, pool, EnergyObjective(ham))
            runs[variant] = res
        a, b = runs["DQAS"], runs["SA-DQAS-F1"]
        assert a.alpha.tobytes() == b.alpha.tobytes()

        def flat_theta(res):
            vecs = res.state.theta.vectors
            return np.concatenate([vecs[key] for key in sorted(vecs)])

        assert flat_theta(a).tobytes() == flat_theta(b).tobytes()
        assert a.k_star == b.k_star

    def test_seed_changes_trajectory(self):
        pool = build_pool("O3", 1, 3)
        ham = triangle_hamiltonian()
        r0 = run_search(tiny_config(seed=0), pool, EnergyObjective(ham))
        r1 = run_search(tiny_config(seed=1), pool, EnergyObjective(ham))
        assert r0.alpha.tobytes() != r1.alpha.tobytes()

    def test_reproducible_across_runs(self):
        pool = build_pool("O3", 1, 3)
        ham = triangle_hamiltonian()
        r1 = run_search(tiny_config(), pool, EnergyObjective(ham))
        r2 = run_search(tiny_config(), pool, EnergyObjective(ham))
        assert r1.alpha.tobytes() == r2.alpha.tobytes()
        assert [r.batch_loss for r in r1.records] == [
            r.batch_loss for r in r2.records
        ]

    def test_weighted_theta_update_mode_runs(self):
        cfg = tiny_config(theta_update="weighted", steps=4)
        pool = build_pool("O3", 1, 3)
        result = run_search(cfg, pool, EnergyObjective(triangle_hamiltonian()))
        assert len(result.records) == 4

    def test_default_enrichment_is_inactive(self):
        # zero-init output head keeps F = 0, so enriched alpha equals
        # alpha until a joint gradient is routed into the encoder
        cfg = tiny_config(steps=5)
        pool = build_pool("O3", 1, 3)
        state = init_search(cfg, pool, EnergyObjective(triangle_hamiltonian()))
        for _ in range(5):
            train_step(state, cfg)
        enriched = enriched_alpha(state.alpha, state.encoder, cfg)
        assert np.array_equal(enriched, state.alpha)

    def test_joint_gradient_activates_enrichment(self):
        cfg = tiny_config(steps=5, joint_encoder_grad=True)
        pool = build_pool("O3", 1, 3)
        state = init_search(cfg, pool, EnergyObjective(triangle_hamiltonian()))
        for _ in range(5):
            train_step(state, cfg)
        enriched = enriched_alpha(state.alpha, state.encoder, cfg)
        assert not np.array_equal(enriched, state.alpha)

    def test_fidelity_task_search_runs(self):
        cfg = tiny_config(
            num_placeholders=4,
            steps=4,
            layout=BlockLayout(encoding="x_qft", position="front"),
        )
        pool = build_pool("Of1", 1, 3)
        result = run_search(cfg, pool, FidelityObjective(3))
        assert len(result.records) == 4
        assert all(0.0 <= r.argmax_energy <= 1.0 for r in result.records)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            tiny_config(variant="DQAS-XL")
        with pytest.raises(ValueError):
            tiny_config(num_placeholders=0)
        with pytest.raises(ValueError):
            tiny_config(theta_update="global")
        with pytest.raises(ValueError):
            tiny_config(batch_size=0)
