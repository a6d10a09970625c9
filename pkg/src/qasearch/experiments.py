"""Experiment runners behind the command-line interface.

Each runner turns one ExperimentConfig into files under an output
directory: per-trial CSV logs, extracted circuit files, a versioned
summary.json, and rendered figures.  CSV bytes are deterministic for a
given config and seed; figures are a convenience rendering of the same
data.  Every file is written atomically (temp file + rename) so a
crashed or parallel run never leaves half a file.

Trials are independent and may run in parallel processes; results are
collected and written in seed order so the summary does not depend on
scheduling.
"""

from __future__ import annotations

import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, resolve_data_path
from .objective import (
    DiagonalHamiltonian,
    benchmark_graph,
    load_diag_hamiltonian,
    load_graph,
    maxcut_hamiltonian,
    scale_energy,
)
from .pools import (
    BlockLayout,
    OperationPool,
    assemble_circuit,
    build_pool,
    gate_counts,
    ideal_scaffold,
)
from .search import (
    EnergyObjective,
    FidelityObjective,
    SearchConfig,
    THETA_INIT_SCALE,
    adjoint_energy_grad,
    asp,
    fine_tune,
    run_search,
)
from .sim import CircuitIR, circuit_from_text, fidelity, run_circuit, run_noisy

SCHEMA_VERSION = 1

FLOAT_FMT = "%.12g"


class ReportError(Exception):
    """Missing, corrupt, or incompatible run summaries."""


# =============================================================================
# Atomic file helpers
# =============================================================================


def write_atomic(path: Path, data: str):
    """All-or-nothing text write via a same-directory temp file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if x is None:
        return ""
    return FLOAT_FMT % float(x)


def _csv(rows) -> str:
    return "".join(",".join(str(c) for c in row) + "\n" for row in rows)


def write_summary(outdir: Path, payload: dict):
    payload = dict(payload)
    payload["schema"] = SCHEMA_VERSION
    write_atomic(Path(outdir) / "summary.json",
                 json.dumps(payload, sort_keys=True, indent=2) + "\n")


# =============================================================================
# Problem construction
# =============================================================================


def build_hamiltonian(cfg: ExperimentConfig) -> DiagonalHamiltonian:
    if cfg.task == "maxcut":
        try:
            graph = benchmark_graph(cfg.graph)
        except ValueError:
            graph = load_graph(resolve_data_path(cfg.graph))
        return maxcut_hamiltonian(graph)
    if cfg.task == "jssp":
        return load_diag_hamiltonian(resolve_data_path(cfg.hamiltonian))
    raise ValueError(f"task {cfg.task!r} has no Hamiltonian")


def build_objective(cfg: ExperimentConfig, pool: OperationPool):
    if cfg.task == "fidelity":
        return FidelityObjective(cfg.n_qubits, noise=cfg.noise_search)
    return EnergyObjective(build_hamiltonian(cfg), noise=cfg.noise_search)


def make_pool(cfg: ExperimentConfig) -> OperationPool:
    return build_pool(cfg.pool_family, cfg.pool_size, cfg.n_qubits)


# =============================================================================
# Search command
# =============================================================================


def _trial_csv(records, self_attention: bool) -> str:
    rows = [("step", "batch_loss", "argmax_energy", "encoder_loss")]
    for r in records:
        enc = _fmt(r.encoder_loss) if self_attention else ""
        rows.append((r.step, _fmt(r.batch_loss), _fmt(r.argmax_energy), enc))
    return _csv(rows)


def _search_trial(cfg: ExperimentConfig, seed: int, outdir: str) -> dict:
    """One full search + fine-tune; writes the trial's files, returns
    its summary fragment."""
    out = Path(outdir)
    pool = make_pool(cfg)
    objective = build_objective(cfg, pool)
    scfg = SearchConfig(**{**asdict_shallow(cfg.search), "seed": seed})
    result = run_search(scfg, pool, objective)

    write_atomic(out / f"trial_{seed}.csv",
                 _trial_csv(result.records, scfg.is_self_attention))

    circuit = assemble_circuit(result.k_star, pool, cfg.search.layout)
    write_atomic(out / f"circuit_{seed}.txt", circuit.to_text() + "\n")

    theta = result.state.theta.gather(result.k_star)
    entry: dict = {
        "seed": seed,
        "k_star": list(result.k_star),
        "ops": [pool.labels[i] for i in result.k_star],
        "gate_counts": dict(zip(("total", "parameterized", "controlled"),
                                gate_counts(circuit))),
        "search_final_loss": result.records[-1].batch_loss
        if result.records else None,
    }

    history: list = []
    if cfg.task == "fidelity":
        entry["fidelity"] = 1.0 - objective.loss(circuit, theta)
    elif cfg.ft_iters > 0:
        ham = objective.hamiltonian
        theta, history = fine_tune(result.k_star, theta, ham, pool,
                                   cfg.search.layout, iters=cfg.ft_iters,
                                   lr=cfg.ft_lr)
        entry["initial_energy"] = history[0]
        entry["best_energy"] = min(history)
        entry["final_energy"] = history[-1]
        entry["asp"] = asp(history, cfg.search.asp_epsilon)
        rows = [("iter", "scaled_energy")]
        rows += [(i, _fmt(e)) for i, e in enumerate(history)]
        write_atomic(out / f"finetune_{seed}.csv", _csv(rows))
    entry["theta"] = [float(FLOAT_FMT % t) for t in theta]
    entry["_history"] = history
    entry["_records"] = [(r.step, r.batch_loss, r.argmax_energy,
                          r.encoder_loss) for r in result.records]
    return entry


def asdict_shallow(cfg: SearchConfig) -> dict:
    """SearchConfig fields without recursing into nested dataclasses."""
    return {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}


def _run_trials(fn, payload, seeds, outdir: str, jobs: int) -> list:
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(fn, payload, seed, outdir)
                       for seed in seeds]
            entries = [f.result() for f in futures]
    else:
        entries = [fn(payload, seed, outdir) for seed in seeds]
    return sorted(entries, key=lambda e: e["seed"])


def cmd_search(cfg: ExperimentConfig, outdir=None, jobs: int = 1,
               figures: bool = True) -> dict:
    out = Path(outdir or cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    entries = _run_trials(_search_trial, cfg, cfg.seeds, str(out), jobs)

    histories = {e["seed"]: e.pop("_history") for e in entries}
    records = {e["seed"]: e.pop("_records") for e in entries}
    payload = {
        "command": "search",
        "task": cfg.task,
        "variant": cfg.search.variant,
        "pool": f"{cfg.pool_family}-{cfg.pool_size}",
        "n_qubits": cfg.n_qubits,
        "trials": entries,
    }
    finals = [e["final_energy"] for e in entries if "final_energy" in e]
    if finals:
        payload["mean_final_energy"] = float(np.mean(finals))
        payload["best_final_energy"] = float(np.min(finals))
    fids = [e["fidelity"] for e in entries if "fidelity" in e]
    if fids:
        payload["mean_fidelity"] = float(np.mean(fids))
    write_summary(out, payload)

    if figures:
        from . import plotting
        plotting.search_figure(records, out / "search_curves.png")
        if any(histories.values()):
            plotting.finetune_figure(histories, out / "finetune_curves.png")
    return payload


# =============================================================================
# Evaluate command
# =============================================================================


def _descend(circuit: CircuitIR, theta0, ham: DiagonalHamiltonian,
             iters: int, lr: float):
    """Plain gradient descent on a fixed, already-built circuit."""
    theta = np.asarray(theta0, dtype=np.float64).copy()
    span = ham.emax - ham.emin
    history = []
    for _ in range(iters):
        energy, grad = adjoint_energy_grad(circuit, theta, ham.diag)
        history.append(scale_energy(energy, ham))
        theta -= lr * (grad / span if span > 0 else grad)
    energy, _ = adjoint_energy_grad(circuit, theta, ham.diag)
    history.append(scale_energy(energy, ham))
    return theta, history


def _evaluate_trial(payload, seed: int, outdir: str) -> dict:
    cfg, circuit_text = payload
    circuit = circuit_from_text(circuit_text)
    ham = build_hamiltonian(cfg)
    rng = np.random.default_rng(seed)
    theta0 = rng.normal(0.0, THETA_INIT_SCALE, size=circuit.n_params)
    theta, history = _descend(circuit, theta0, ham, cfg.ft_iters, cfg.ft_lr)

    entry = {
        "seed": seed,
        "initial_energy": history[0],
        "final_energy": history[-1],
        "best_energy": min(history),
        "asp": asp(history, cfg.search.asp_epsilon),
        "_history": history,
    }
    noisy = {}
    for spec in cfg.noise_eval:
        rho = run_noisy(circuit, theta, (spec,))
        energy = float(np.real(np.sum(ham.diag * np.diag(rho))))
        noisy[_noise_label(spec)] = scale_energy(energy, ham)
    if noisy:
        entry["noisy_final_energy"] = noisy
    return entry


def _noise_label(spec) -> str:
    return f"{spec.model}:{spec.channel}:{FLOAT_FMT % spec.probability}"


def cmd_evaluate(circuit_file, cfg: ExperimentConfig, outdir=None,
                 jobs: int = 1, figures: bool = True) -> dict:
    circuit_path = Path(circuit_file)
    if not circuit_path.is_file():
        raise FileNotFoundError(f"no such circuit file: {circuit_path}")
    circuit_text = circuit_path.read_text()
    circuit_from_text(circuit_text)  # parse errors surface before any work

    out = Path(outdir or cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    entries = _run_trials(_evaluate_trial, (cfg, circuit_text), cfg.seeds,
                          str(out), jobs)

    histories = np.array([e.pop("_history") for e in entries])
    mean = histories.mean(axis=0)
    std = histories.std(axis=0)
    rows = [("iter", "mean_energy", "std_energy")]
    rows += [(i, _fmt(m), _fmt(s)) for i, (m, s) in enumerate(zip(mean, std))]
    write_atomic(out / "trajectory.csv", _csv(rows))

    payload = {
        "command": "evaluate",
        "task": cfg.task,
        "circuit": circuit_path.name,
        "trials": entries,
        "mean_final_energy": float(mean[-1]),
        "mean_asp": asp(list(mean), cfg.search.asp_epsilon),
    }
    noisy_means = {}
    for spec in cfg.noise_eval:
        label = _noise_label(spec)
        vals = [e["noisy_final_energy"][label] for e in entries]
        noisy_means[label] = float(np.mean(vals))
    if noisy_means:
        payload["mean_noisy_final_energy"] = noisy_means
        rows = [("noise", "mean_final_energy")]
        rows += [(k, _fmt(v)) for k, v in sorted(noisy_means.items())]
        write_atomic(out / "noise_eval.csv", _csv(rows))
    write_summary(out, payload)

    if figures:
        from . import plotting
        plotting.trajectory_figure(mean, std, out / "trajectory.png")
    return payload


# =============================================================================
# Fidelity command
# =============================================================================


def _fidelity_trial(cfg: ExperimentConfig, seed: int, outdir: str) -> dict:
    out = Path(outdir)
    pool = make_pool(cfg)
    objective = build_objective(cfg, pool)
    scfg = SearchConfig(**{**asdict_shallow(cfg.search), "seed": seed})
    result = run_search(scfg, pool, objective)

    write_atomic(out / f"trial_{seed}.csv",
                 _trial_csv(result.records, scfg.is_self_attention))
    circuit = assemble_circuit(result.k_star, pool, cfg.search.layout)
    write_atomic(out / f"circuit_{seed}.txt", circuit.to_text() + "\n")

    theta = result.state.theta.gather(result.k_star)
    ideal = run_circuit(ideal_scaffold(cfg.n_qubits), np.zeros(0))
    fids = {}
    for spec in cfg.noise_eval:
        if spec.probability == 0.0:
            state = run_circuit(circuit, theta)
        else:
            state = run_noisy(circuit, theta, (spec,))
        fids[_noise_label(spec)] = fidelity(ideal, state)
    if not cfg.noise_eval:
        fids["noiseless"] = fidelity(ideal, run_circuit(circuit, theta))
    return {
        "seed": seed,
        "k_star": list(result.k_star),
        "ops": [pool.labels[i] for i in result.k_star],
        "gate_counts": dict(zip(("total", "parameterized", "controlled"),
                                gate_counts(circuit))),
        "fidelities": fids,
    }


def cmd_fidelity(cfg: ExperimentConfig, outdir=None, jobs: int = 1,
                 figures: bool = True) -> dict:
    if cfg.task != "fidelity":
        raise ValueError(f"fidelity command needs task=fidelity, got {cfg.task!r}")
    out = Path(outdir or cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    entries = _run_trials(_fidelity_trial, cfg, cfg.seeds, str(out), jobs)

    labels = list(entries[0]["fidelities"])
    rows = [tuple(["seed"] + labels)]
    for e in entries:
        rows.append(tuple([e["seed"]] + [_fmt(e["fidelities"][c])
                                         for c in labels]))
    means = [float(np.mean([e["fidelities"][c] for e in entries]))
             for c in labels]
    rows.append(tuple(["mean"] + [_fmt(m) for m in means]))
    write_atomic(out / "fidelity.csv", _csv(rows))

    payload = {
        "command": "fidelity",
        "task": cfg.task,
        "variant": cfg.search.variant,
        "pool": f"{cfg.pool_family}-{cfg.pool_size}",
        "n_qubits": cfg.n_qubits,
        "environment": [_noise_label(s) for s in cfg.noise_search] or ["ideal"],
        "trials": entries,
        "mean_fidelity": dict(zip(labels, means)),
    }
    write_summary(out, payload)

    if figures:
        from . import plotting
        per_circuit = {e["seed"]: [e["fidelities"][c] for c in labels]
                       for e in entries}
        plotting.fidelity_figure(labels, per_circuit, means,
                                 out / "fidelity.png")
    return payload


# =============================================================================
# Report command
# =============================================================================

_REPORT_COLUMNS = (
    "run", "command", "task", "variant", "pool", "trials",
    "mean_final_energy", "mean_fidelity", "gates", "param_gates",
    "controlled_gates", "mean_asp",
)


def _load_summary(run_dir: Path) -> dict:
    path = run_dir / "summary.json"
    if not path.is_file():
        raise ReportError(f"no summary.json under {run_dir}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ReportError(f"corrupt summary {path}: {exc}") from exc
    if payload.get("schema") != SCHEMA_VERSION:
        raise ReportError(
            f"{path}: schema {payload.get('schema')!r} is not "
            f"{SCHEMA_VERSION}; refusing to mix versions"
        )
    return payload


def _report_row(run_dir: Path, payload: dict) -> dict:
    trials = payload.get("trials", [])
    row = {c: "" for c in _REPORT_COLUMNS}
    row["run"] = run_dir.name
    row["command"] = payload.get("command", "")
    row["task"] = payload.get("task", "")
    row["variant"] = payload.get("variant", "")
    row["pool"] = payload.get("pool", "")
    row["trials"] = len(trials)
    if "mean_final_energy" in payload:
        row["mean_final_energy"] = _fmt(payload["mean_final_energy"])
    mf = payload.get("mean_fidelity")
    if isinstance(mf, dict):
        row["mean_fidelity"] = " ".join(
            f"{k}={_fmt(v)}" for k, v in mf.items())
    elif mf is not None:
        row["mean_fidelity"] = _fmt(mf)
    counts = [t["gate_counts"] for t in trials if "gate_counts" in t]
    if counts:
        row["gates"] = _fmt(np.mean([c["total"] for c in counts]))
        row["param_gates"] = _fmt(np.mean([c["parameterized"] for c in counts]))
        row["controlled_gates"] = _fmt(np.mean([c["controlled"] for c in counts]))
    asps = [t["asp"] for t in trials if t.get("asp") is not None]
    if asps:
        row["mean_asp"] = _fmt(np.mean(asps))
    return row


def cmd_report(run_dirs, outdir=None, figures: bool = True) -> list:
    dirs = [Path(d) for d in run_dirs]
    if not dirs:
        raise ReportError("no run directories given")
    rows = [_report_row(d, _load_summary(d)) for d in dirs]

    out = Path(outdir or ".")
    out.mkdir(parents=True, exist_ok=True)
    csv_rows = [_REPORT_COLUMNS]
    csv_rows += [tuple(r[c] for c in _REPORT_COLUMNS) for r in rows]
    write_atomic(out / "report.csv", _csv(csv_rows))
    write_atomic(out / "report.txt", _text_table(csv_rows))

    if figures:
        from . import plotting
        plotting.report_figure(rows, out / "report.png")
    return rows


def _text_table(rows) -> str:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(row, widths))
                     .rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
