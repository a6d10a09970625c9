"""Differentiable architecture search over operation pools.

The search maintains a real p x l matrix alpha whose softmax rows
define an independent categorical distribution per placeholder.  Each
step samples a batch of structures, evaluates their circuits, updates
the gate parameters of every sampled structure, and moves alpha along
the exact gradient of the self-normalized batch loss.  The
self-attention variants additionally run an encoder over alpha and add
beta times its output before sampling ("enrichment"); the plain
variant never touches the encoder.

Randomness: each run derives three independent counter-based streams
from the seed, consumed in a fixed order - child 0 encoder init,
child 1 parameter init, child 2 sampling.  The plain variant simply
never instantiates child 0, so a self-attention run with beta = 0
reproduces its trajectories bit for bit.

Gate-parameter gradients come from a reverse (adjoint) sweep of the
statevector simulation; the parameter-shift rule is implemented as an
independent oracle and as the fallback on density matrices, where the
adjoint trick does not apply.  Every angle in the gate set enters the
energy at frequency one, so the quarter-turn shift is exact, not an
approximation.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .encoder import (
    EncoderConfig,
    EncoderState,
    apply_update,
    encoder_backward,
    encoder_forward,
    encoder_loss,
    encoder_loss_grad,
    encoder_step,
    init_encoder,
)
from .objective import DiagonalHamiltonian, scale_energy
from .pools import BlockLayout, OperationPool, assemble_circuit, ideal_scaffold
from .sim import (
    CircuitIR,
    GateKind,
    _apply_matrix_pure,
    expectation_diag,
    fidelity,
    gate_matrix,
    gate_matrix_derivs,
    run_circuit,
    run_noisy,
)

VARIANTS = ("DQAS", "SA-DQAS-F1", "SA-DQAS-F2")
THETA_UPDATE_MODES = ("per-sample", "weighted")

THETA_INIT_SCALE = 0.1


@dataclass(frozen=True)
class SearchConfig:
    num_placeholders: int = 4
    variant: str = "SA-DQAS-F1"
    beta: float = 0.1
    batch_size: int = 16
    steps: int = 200
    lr_alpha: float = 0.15
    lr_theta: float = 0.05
    seed: int = 0
    asp_epsilon: float = 0.01
    num_param_blocks: int = 1
    layout: BlockLayout = field(default_factory=BlockLayout)
    encoder: EncoderConfig | None = None
    theta_update: str = "per-sample"
    joint_encoder_grad: bool = False

    def __post_init__(self):
        if self.num_placeholders < 1:
            raise ValueError("num_placeholders must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.num_param_blocks < 1:
            raise ValueError("num_param_blocks must be >= 1")
        if self.theta_update not in THETA_UPDATE_MODES:
            raise ValueError(f"theta_update must be one of {THETA_UPDATE_MODES}")

    @property
    def is_self_attention(self) -> bool:
        return self.variant != "DQAS"

    def encoder_config(self) -> EncoderConfig:
        """Encoder hyperparameters with the variant forced to match."""
        base = self.encoder if self.encoder is not None else EncoderConfig()
        want = "F2" if self.variant.endswith("F2") else "F1"
        return base if base.variant == want else replace(base, variant=want)


# =============================================================================
# Architecture distribution
# =============================================================================


def _softmax_rows(m: np.ndarray) -> np.ndarray:
    z = m - m.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def placeholder_probs(alpha_prime: np.ndarray, i: int) -> np.ndarray:
    """Stable softmax of row i: invariant to row shifts, never NaN."""
    row = np.asarray(alpha_prime, dtype=np.float64)[i]
    return _softmax_rows(row[None, :])[0]


def structure_prob(alpha_prime: np.ndarray, k) -> float:
    """P(k) = product over placeholders of the sampled op's probability."""
    probs = _softmax_rows(np.asarray(alpha_prime, dtype=np.float64))
    p = 1.0
    for i, ki in enumerate(k):
        p *= probs[i, int(ki)]
    return float(p)


def sample_batch(alpha_prime: np.ndarray, batch_size: int, rng) -> list:
    """batch_size i.i.d. structure draws, one uniform per placeholder.

    The draw count is fixed at batch_size x p regardless of outcomes, so
    two runs with equal alpha_prime and equal stream state stay aligned.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    probs = _softmax_rows(np.asarray(alpha_prime, dtype=np.float64))
    p, l = probs.shape
    cums = np.cumsum(probs, axis=1)
    draws = rng.random((batch_size, p))
    batch = []
    for s in range(batch_size):
        k = tuple(
            int(min(np.searchsorted(cums[i], draws[s, i], side="right"), l - 1))
            for i in range(p)
        )
        batch.append(k)
    return batch


def extract_structure(alpha_prime: np.ndarray):
    """Row-wise argmax; ties go to the lowest op index."""
    a = np.asarray(alpha_prime, dtype=np.float64)
    return tuple(int(j) for j in np.argmax(a, axis=1))


def batch_weights(batch, alpha_prime: np.ndarray) -> np.ndarray:
    """Self-normalized structure weights; errors if every probability
    underflowed to zero (a degenerate alpha)."""
    raw = np.array([structure_prob(alpha_prime, k) for k in batch])
    total = raw.sum()
    if total == 0.0:
        raise ValueError(
            "all structure probabilities underflowed to zero; "
            "alpha has degenerate rows"
        )
    return raw / total


def batch_loss(batch, losses, alpha_prime: np.ndarray) -> float:
    """Probability-weighted batch objective: sum of w_k L(k)."""
    w = batch_weights(batch, alpha_prime)
    return float(w @ np.asarray(losses, dtype=np.float64))


def grad_alpha(batch, losses, alpha_prime: np.ndarray) -> np.ndarray:
    """Exact gradient of batch_loss w.r.t. alpha_prime, batch held fixed.

    Both the weights and the log-probabilities depend on alpha, and the
    two contributions combine into
        sum_k w_k (L_k - L_batch) * d ln P(k) / d alpha,
    with d ln P(k) per placeholder row = one_hot(k_i) - softmax(row).
    """
    a = np.asarray(alpha_prime, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    w = batch_weights(batch, a)
    lbar = float(w @ losses)
    probs = _softmax_rows(a)
    g = np.zeros_like(a)
    for k, wk, lk in zip(batch, w, losses):
        coeff = wk * (lk - lbar)
        if coeff == 0.0:
            continue
        g -= coeff * probs
        for i, ki in enumerate(k):
            g[i, int(ki)] += coeff
    return g


# =============================================================================
# Gate-parameter gradients
# =============================================================================


def _adjoint_sweep(
    circuit: CircuitIR, params: np.ndarray, psi_final: np.ndarray,
    lam: np.ndarray,
) -> np.ndarray:
    """Reverse sweep computing 2 Re <lam_g | dU_g | psi_before_g> per slot.

    lam enters as (observable applied to the final state); psi_final is
    the forward result.  Both are walked backwards through the circuit.
    """
    n = circuit.n_qubits
    grad = np.zeros(circuit.n_params)
    psi = psi_final
    for gate in reversed(circuit.gates):
        if gate.kind is GateKind.IDLE:
            continue
        vals = gate.resolve_params(params)
        u = gate_matrix(gate.kind, vals)
        udag = u.conj().T
        psi = _apply_matrix_pure(psi, udag, gate.qubits, n)
        if gate.param_slot is not None:
            for off, du in enumerate(gate_matrix_derivs(gate.kind, vals)):
                dpsi = _apply_matrix_pure(psi, du, gate.qubits, n)
                grad[gate.param_slot + off] += 2.0 * float(
                    np.real(np.vdot(lam, dpsi))
                )
        lam = _apply_matrix_pure(lam, udag, gate.qubits, n)
    return grad


def adjoint_energy_grad(
    circuit: CircuitIR, params, hdiag: np.ndarray
) -> tuple[float, np.ndarray]:
    """(E, dE/dtheta) for a diagonal observable on the pure-state run."""
    params = np.asarray(params, dtype=np.float64)
    psi = run_circuit(circuit, params)
    lam = np.asarray(hdiag, dtype=np.float64).reshape(psi.shape) * psi
    energy = float(np.real(np.vdot(psi, lam)))
    return energy, _adjoint_sweep(circuit, params, psi, lam)


def adjoint_overlap_grad(
    circuit: CircuitIR, params, phi: np.ndarray
) -> tuple[float, np.ndarray]:
    """(|<phi|psi>|^2, its theta-gradient): adjoint with the projector
    observable |phi><phi|."""
    params = np.asarray(params, dtype=np.float64)
    psi = run_circuit(circuit, params)
    phi = np.asarray(phi, dtype=np.complex128).reshape(psi.shape)
    amp = np.vdot(phi, psi)
    lam = phi * amp
    overlap = float(np.abs(amp) ** 2)
    return overlap, _adjoint_sweep(circuit, params, psi, lam)


_4TERM_U1 = (math.sqrt(2.0) + 1.0) / (2.0 * math.sqrt(2.0))
_4TERM_U2 = (1.0 - math.sqrt(2.0)) / (2.0 * math.sqrt(2.0))


def parameter_shift_grad(circuit: CircuitIR, params, evaluate) -> np.ndarray:
    """Exact shift-rule gradient; evaluate maps a parameter vector to a
    scalar expectation.

    Plain rotation angles enter the expectation at frequency one, so
    [f(s + pi/2) - f(s - pi/2)] / 2 is their exact derivative.  A
    controlled rotation mixes frequencies 1/2 and 1, which the four-term
    rule u1*D(pi/2) + u2*D(3pi/2) resolves exactly (D(x) is the centered
    half-difference at shift x).  Valid on noisy evaluations too, since
    channels are linear in the input state.  Requires each slot to be
    owned by exactly one gate.
    """
    params = np.asarray(params, dtype=np.float64)
    owners: dict[int, bool] = {}
    for gate in circuit.gates:
        if gate.param_slot is None:
            continue
        for s in range(gate.param_slot, gate.param_slot + gate.kind.param_arity):
            if s in owners:
                raise ValueError(
                    f"parameter slot {s} is shared by multiple gates; "
                    "the shift rule needs sole ownership"
                )
            owners[s] = gate.kind.is_controlled

    def centered(base: np.ndarray, s: int, shift: float) -> float:
        up = base.copy()
        up[s] += shift
        down = base.copy()
        down[s] -= shift
        return (evaluate(up) - evaluate(down)) / 2.0

    grad = np.zeros(circuit.n_params)
    for s in range(circuit.n_params):
        if s not in owners:
            continue
        d1 = centered(params, s, math.pi / 2)
        if owners[s]:
            d2 = centered(params, s, 3 * math.pi / 2)
            grad[s] = _4TERM_U1 * d1 + _4TERM_U2 * d2
        else:
            grad[s] = d1
    return grad


def energy_parameter_shift(
    circuit: CircuitIR, params, hdiag: np.ndarray, noise=()
) -> np.ndarray:
    """Parameter-shift gradient of the (possibly noisy) energy."""

    def evaluate(theta):
        state = run_noisy(circuit, theta, noise) if noise else run_circuit(
            circuit, theta
        )
        return expectation_diag(state, hdiag)

    return parameter_shift_grad(circuit, params, evaluate)


# =============================================================================
# Objectives
# =============================================================================


class EnergyObjective:
    """Scaled energy of a diagonal Hamiltonian; lower is better, minimum 0.

    Search evaluates noiselessly; pass a noise spec only for evaluation
    runs (gradients then fall back to parameter shift).
    """

    def __init__(self, hamiltonian: DiagonalHamiltonian, noise=()):
        if hamiltonian.emax == hamiltonian.emin:
            raise ValueError("constant-diagonal Hamiltonian cannot be scaled")
        self.hamiltonian = hamiltonian
        self.noise = noise
        self._span = hamiltonian.emax - hamiltonian.emin

    def energy(self, circuit: CircuitIR, params) -> float:
        if self.noise:
            state = run_noisy(circuit, params, self.noise)
        else:
            state = run_circuit(circuit, params)
        return expectation_diag(state, self.hamiltonian.diag)

    def loss(self, circuit: CircuitIR, params) -> float:
        return scale_energy(self.energy(circuit, params), self.hamiltonian)

    def loss_and_grad(self, circuit: CircuitIR, params):
        if self.noise:
            loss = self.loss(circuit, params)
            grade = energy_parameter_shift(
                circuit, params, self.hamiltonian.diag, self.noise
            )
        else:
            energy, grade = adjoint_energy_grad(
                circuit, params, self.hamiltonian.diag
            )
            loss = scale_energy(energy, self.hamiltonian)
        return loss, grade / self._span


class FidelityObjective:
    """1 - fidelity against the fixed X-layer + QFT reference state."""

    def __init__(self, n_qubits: int, noise=()):
        self.n_qubits = n_qubits
        self.noise = noise
        self.ideal_state = run_circuit(ideal_scaffold(n_qubits))

    def fidelity(self, circuit: CircuitIR, params) -> float:
        if circuit.n_qubits != self.n_qubits:
            raise ValueError(
                f"circuit acts on {circuit.n_qubits} qubits, reference on "
                f"{self.n_qubits}"
            )
        if self.noise:
            state = run_noisy(circuit, params, self.noise)
        else:
            state = run_circuit(circuit, params)
        return fidelity(self.ideal_state, state)

    def loss(self, circuit: CircuitIR, params) -> float:
        return 1.0 - self.fidelity(circuit, params)

    def loss_and_grad(self, circuit: CircuitIR, params):
        if self.noise:
            loss = self.loss(circuit, params)
            grad = -parameter_shift_grad(
                circuit, params, lambda th: self.fidelity(circuit, th)
            )
        else:
            overlap, gradf = adjoint_overlap_grad(
                circuit, params, self.ideal_state
            )
            loss, grad = 1.0 - overlap, -gradf
        return loss, grad


def local_loss(
    k, theta, hamiltonian: DiagonalHamiltonian, pool: OperationPool,
    layout: BlockLayout, noise=(),
) -> float:
    """Scaled energy of the circuit assembled for structure k."""
    circuit = assemble_circuit(k, pool, layout)
    return EnergyObjective(hamiltonian, noise).loss(circuit, theta)


def grad_theta(
    k, theta, hamiltonian: DiagonalHamiltonian, pool: OperationPool,
    layout: BlockLayout,
) -> np.ndarray:
    """Adjoint gradient of the unscaled energy for structure k's circuit."""
    circuit = assemble_circuit(k, pool, layout)
    _, grad = adjoint_energy_grad(circuit, theta, hamiltonian.diag)
    return grad


# =============================================================================
# Shared gate parameters
# =============================================================================


class ParameterPool:
    """One persistent parameter vector per (block, placeholder, op).

    Sampled circuits gather their flat theta from these vectors in slot
    order (blocks outermost), so a structure re-sampled later warm-starts
    from wherever its ops' parameters last ended up.
    """

    def __init__(self, pool: OperationPool, num_placeholders: int,
                 num_blocks: int, rng):
        self.num_placeholders = num_placeholders
        self.num_blocks = num_blocks
        self._slots = [pool.slot_count(j) for j in range(len(pool))]
        self.vectors = {}
        for b in range(num_blocks):
            for i in range(num_placeholders):
                for j, ns in enumerate(self._slots):
                    self.vectors[(b, i, j)] = rng.normal(
                        0.0, THETA_INIT_SCALE, size=ns
                    )

    def gather(self, k) -> np.ndarray:
        """Flat parameter vector matching assemble_circuit's slot layout."""
        chunks = [
            self.vectors[(b, i, int(ki))]
            for b in range(self.num_blocks)
            for i, ki in enumerate(k)
        ]
        return np.concatenate(chunks) if chunks else np.zeros(0)

    def apply_grad(self, k, grad: np.ndarray, lr: float) -> None:
        """One descent step distributed back onto the (block, i, op) vectors."""
        offset = 0
        for b in range(self.num_blocks):
            for i, ki in enumerate(k):
                ns = self._slots[int(ki)]
                if ns:
                    self.vectors[(b, i, int(ki))] = (
                        self.vectors[(b, i, int(ki))]
                        - lr * grad[offset:offset + ns]
                    )
                offset += ns

    def copy(self) -> "ParameterPool":
        dup = object.__new__(ParameterPool)
        dup.num_placeholders = self.num_placeholders
        dup.num_blocks = self.num_blocks
        dup._slots = list(self._slots)
        dup.vectors = {key: vec.copy() for key, vec in self.vectors.items()}
        return dup


# =============================================================================
# Training loop
# =============================================================================


@dataclass(frozen=True)
class TrainRecord:
    step: int
    batch_loss: float
    argmax_energy: float
    alpha_hash: str
    encoder_loss: float | None


@dataclass
class SearchState:
    alpha: np.ndarray
    theta: ParameterPool
    encoder: EncoderState | None
    rng_sample: np.random.Generator
    pool: OperationPool
    objective: object
    step: int = 0
    last_f: np.ndarray | None = None


def alpha_fingerprint(alpha: np.ndarray) -> str:
    a = np.ascontiguousarray(alpha, dtype=np.float64)
    digest = hashlib.sha256()
    digest.update(str(a.shape).encode())
    digest.update(a.tobytes())
    return digest.hexdigest()[:16]


def init_search(cfg: SearchConfig, pool: OperationPool, objective) -> SearchState:
    """Fresh state: zero alpha, Normal(0, 0.1) thetas, zero-head encoder.

    Stream layout (see module docstring): child 0 encoder, child 1
    theta, child 2 sampling; the plain variant skips child 0 entirely.
    """
    children = np.random.SeedSequence(cfg.seed).spawn(3)
    p, l = cfg.num_placeholders, len(pool)
    encoder = None
    if cfg.is_self_attention:
        enc_rng = np.random.Generator(np.random.Philox(children[0]))
        encoder = init_encoder(cfg.encoder_config(), p, l, enc_rng)
    theta_rng = np.random.Generator(np.random.Philox(children[1]))
    theta = ParameterPool(pool, p, cfg.num_param_blocks, theta_rng)
    sample_rng = np.random.Generator(np.random.Philox(children[2]))
    return SearchState(
        alpha=np.zeros((p, l)),
        theta=theta,
        encoder=encoder,
        rng_sample=sample_rng,
        pool=pool,
        objective=objective,
    )


def enriched_alpha(alpha: np.ndarray, encoder: EncoderState | None,
                   cfg: SearchConfig) -> np.ndarray:
    """alpha + beta * F(alpha), with F's value held constant w.r.t. alpha.

    The plain variant, or a missing encoder, returns alpha unchanged.
    The forward here reflects the encoder's current weights; inside
    train_step the pre-update output from the same step is used instead
    so enrichment never sees the update it just triggered.
    """
    if not cfg.is_self_attention or encoder is None:
        return np.array(alpha, dtype=np.float64, copy=True)
    f, _ = encoder_forward(encoder.weights, cfg.encoder_config(), alpha)
    return np.asarray(alpha, dtype=np.float64) + cfg.beta * f


def _assembled(state: SearchState, cfg: SearchConfig, k) -> CircuitIR:
    return assemble_circuit(k, state.pool, cfg.layout)


def train_step(state: SearchState, cfg: SearchConfig) -> TrainRecord:
    """One full search step, mutating state.

    Order: encoder update (self-attention variants), enrichment, batch
    sampling, local losses with gate-parameter updates at the shared
    pre-step theta, alpha descent, logging.  The argmax-circuit loss in
    the record is evaluated after all updates of this step.
    """
    enc_cfg = cfg.encoder_config() if cfg.is_self_attention else None
    enc_loss = None
    f_out = None
    joint_cache = None
    if cfg.is_self_attention:
        if cfg.joint_encoder_grad:
            # Defer the weight update: the search gradient becomes part
            # of the cotangent, so forward once here and update after
            # grad_alpha is known.
            f_out, joint_cache = encoder_forward(
                state.encoder.weights, enc_cfg, state.alpha
            )
            if len(state.encoder.history) == enc_cfg.m:
                f_prev = state.encoder.history[0]
            else:
                f_prev = np.zeros_like(f_out)
            enc_loss = encoder_loss(f_out, f_prev)
        else:
            state.encoder, f_out, enc_loss = encoder_step(
                state.encoder, enc_cfg, state.alpha
            )
        alpha_prime = state.alpha + cfg.beta * f_out
    else:
        alpha_prime = state.alpha.copy()

    batch = sample_batch(alpha_prime, cfg.batch_size, state.rng_sample)

    losses = []
    grads = []
    for k in batch:
        circuit = _assembled(state, cfg, k)
        theta_k = state.theta.gather(k)
        loss_k, grad_k = state.objective.loss_and_grad(circuit, theta_k)
        losses.append(loss_k)
        grads.append(grad_k)

    weights = batch_weights(batch, alpha_prime)
    if cfg.theta_update == "per-sample":
        scales = np.ones(len(batch))
    else:
        scales = weights
    for k, grad_k, scale in zip(batch, grads, scales):
        state.theta.apply_grad(k, grad_k, cfg.lr_theta * scale)

    mean_loss = float(weights @ np.asarray(losses))
    g_alpha = grad_alpha(batch, losses, alpha_prime)

    if cfg.is_self_attention and cfg.joint_encoder_grad:
        f_prev = (state.encoder.history[0]
                  if len(state.encoder.history) == enc_cfg.m
                  else np.zeros_like(f_out))
        cotangent = encoder_loss_grad(f_out, f_prev) + cfg.beta * g_alpha
        enc_grads = encoder_backward(joint_cache, cotangent)
        new_w, new_m = apply_update(state.encoder, enc_grads)
        hist = state.encoder.history
        hist.append(f_out.copy())
        state.encoder = EncoderState(
            weights=new_w, cfg=state.encoder.cfg, moments=new_m,
            history=hist, step=state.encoder.step + 1,
        )

    state.alpha = state.alpha - cfg.lr_alpha * g_alpha
    state.last_f = f_out
    step_index = state.step
    state.step += 1

    post_prime = state.alpha + cfg.beta * f_out if f_out is not None \
        else state.alpha
    k_star = extract_structure(post_prime)
    argmax_loss = state.objective.loss(
        _assembled(state, cfg, k_star), state.theta.gather(k_star)
    )
    return TrainRecord(
        step=step_index,
        batch_loss=mean_loss,
        argmax_energy=argmax_loss,
        alpha_hash=alpha_fingerprint(state.alpha),
        encoder_loss=enc_loss,
    )


@dataclass(frozen=True)
class SearchResult:
    """Everything a run produced: the per-step log and the final pick."""

    records: tuple[TrainRecord, ...]
    k_star: tuple[int, ...]
    alpha: np.ndarray
    alpha_prime: np.ndarray
    state: SearchState

    @property
    def best_argmax_energy(self) -> float:
        return min(r.argmax_energy for r in self.records) if self.records \
            else math.inf


def run_search(cfg: SearchConfig, pool: OperationPool, objective,
               progress=None) -> SearchResult:
    """Full T-step search; the final structure is the argmax of the last
    enriched alpha (enrichment reuses the last step's encoder output)."""
    state = init_search(cfg, pool, objective)
    records = []
    for _ in range(cfg.steps):
        record = train_step(state, cfg)
        records.append(record)
        if progress is not None:
            progress(record)
    if state.last_f is not None:
        alpha_prime = state.alpha + cfg.beta * state.last_f
    else:
        alpha_prime = state.alpha.copy()
    k_star = extract_structure(alpha_prime)
    return SearchResult(
        records=tuple(records),
        k_star=k_star,
        alpha=state.alpha.copy(),
        alpha_prime=alpha_prime,
        state=state,
    )


# =============================================================================
# Fine-tuning and stability
# =============================================================================


def fine_tune(
    k_star, theta_init, objective, pool: OperationPool, layout: BlockLayout,
    iters: int, lr: float = 0.05,
) -> tuple[np.ndarray, list]:
    """Plain gradient descent on the fixed extracted circuit.

    Returns (final theta, loss history); the history holds the loss
    before each update plus the final value, iters + 1 entries total.
    """
    if isinstance(objective, DiagonalHamiltonian):
        objective = EnergyObjective(objective)
    circuit = assemble_circuit(k_star, pool, layout)
    theta = np.array(theta_init, dtype=np.float64).reshape(-1)
    if theta.size != circuit.n_params:
        raise ValueError(
            f"theta has {theta.size} entries, circuit wants {circuit.n_params}"
        )
    history = []
    for _ in range(iters):
        loss, grad = objective.loss_and_grad(circuit, theta)
        history.append(loss)
        theta = theta - lr * grad
    history.append(objective.loss(circuit, theta))
    return theta, history


def asp(history, epsilon: float):
    """Architecture stabilization point: the earliest index from which
    the history stays within epsilon of its minimum; None if it never
    settles (i.e. the final entries still stray)."""
    h = np.asarray(history, dtype=np.float64)
    if h.size == 0:
        raise ValueError("empty history")
    settled = np.abs(h - h.min()) <= epsilon
    unsettled = np.nonzero(~settled)[0]
    if unsettled.size == 0:
        return 0
    t = int(unsettled[-1]) + 1
    return None if t >= h.size else t
