"""Experiment configuration: one INI file per run.

A config names a task (maxcut, jssp, fidelity), a problem source, a
pool, search hyperparameters, trial seeds, and optional noise settings.
Parsing resolves everything down to frozen dataclasses and checks
referenced files up front, so a bad config fails before any trial
starts.  Errors carry file and line positions where they are known.

Packaged resources are referenced with a ``pkg:`` prefix, e.g.
``hamiltonian = pkg:jssp5.ham``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .encoder import OPTIMIZERS, EncoderConfig
from .pools import ENCODINGS, QFT_POSITIONS, BlockLayout
from .search import THETA_UPDATE_MODES, VARIANTS, SearchConfig
from .sim import CHANNEL_NAMES, NOISE_MODELS, NoiseSpec

TASKS = ("maxcut", "jssp", "fidelity")

POOL_FAMILIES = ("O1", "O2", "O3", "O4", "Of1", "Of2")


class ConfigError(Exception):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    outdir: str
    pool_family: str
    pool_size: int
    n_qubits: int
    search: SearchConfig
    seeds: tuple[int, ...]
    graph: str | None = None
    hamiltonian: str | None = None
    ft_iters: int = 200
    ft_lr: float = 0.2
    noise_search: tuple[NoiseSpec, ...] = ()
    noise_eval: tuple[NoiseSpec, ...] = ()
    source: str = "<config>"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if not self.seeds:
            raise ConfigError("at least one trial seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("trial seeds must be distinct")
        if self.ft_iters < 0:
            raise ConfigError("fine_tune iters must be >= 0")


def resolve_data_path(spec: str) -> Path:
    """Turn a path or a pkg:<name> reference into a real filesystem path."""
    if spec.startswith("pkg:"):
        name = spec[4:]
        root = resources.files("qasearch").joinpath("data")
        p = Path(str(root.joinpath(name)))
        if not p.is_file():
            raise ConfigError(f"packaged resource {name!r} not found")
        return p
    return Path(spec)


# =============================================================================
# INI parsing
# =============================================================================

# every key a section may carry; unknown keys are reported with their line
_KNOWN_KEYS = {
    "experiment": {"task", "output"},
    "problem": {"graph", "hamiltonian", "qubits"},
    "pool": {"family", "size"},
    "search": {
        "placeholders", "variant", "beta", "batch_size", "steps",
        "lr_alpha", "lr_theta", "theta_update", "blocks",
        "joint_encoder_grad", "encoding", "position", "asp_epsilon",
    },
    "encoder": {
        "d_encoder", "heads", "layers", "d_ff", "lag", "eta",
        "optimizer", "use_pe",
    },
    "trials": {"count", "seeds"},
    "fine_tune": {"iters", "lr"},
    "noise": {"search", "eval"},
}


def _key_line(text: str, section: str, key: str) -> int | None:
    """Best-effort line number of `key` inside `[section]`."""
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
        elif current == section and line and not line.startswith(("#", ";")):
            name = line.split("=", 1)[0].split(":", 1)[0].strip()
            if name == key:
                return lineno
    return None


class _Section:
    """One parsed section plus error reporting with positions."""

    def __init__(self, parser, text: str, source: str, name: str):
        self.name = name
        self.source = source
        self._text = text
        self._data = dict(parser[name]) if parser.has_section(name) else {}

    def fail(self, key: str, message: str):
        line = _key_line(self._text, self.name, key)
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{where}: [{self.name}] {key}: {message}")

    def _convert(self, key: str, conv, default):
        if key not in self._data:
            return default
        raw = self._data[key].strip()
        try:
            return conv(raw)
        except ConfigError:
            raise
        except Exception:
            self.fail(key, f"cannot parse {raw!r}")

    def get(self, key: str, default: str | None = None) -> str | None:
        v = self._data.get(key, default)
        return v.strip() if isinstance(v, str) else v

    def get_int(self, key: str, default: int) -> int:
        return self._convert(key, int, default)

    def get_float(self, key: str, default: float) -> float:
        return self._convert(key, float, default)

    def get_bool(self, key: str, default: bool) -> bool:
        def conv(raw: str) -> bool:
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        return self._convert(key, conv, default)

    def get_choice(self, key: str, choices, default: str) -> str:
        v = self.get(key, default)
        if v not in choices:
            self.fail(key, f"must be one of {tuple(choices)}, got {v!r}")
        return v


def _parse_noise_list(sec: _Section, key: str) -> tuple[NoiseSpec, ...]:
    """Semicolon-separated `model channel probability` triples."""
    raw = sec.get(key)
    if raw is None or raw.lower() in ("", "none"):
        return ()
    specs = []
    for chunk in raw.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split()
        if len(parts) != 3:
            sec.fail(key, f"expected 'model channel probability', got {chunk!r}")
        model, channel, prob = parts
        if model not in NOISE_MODELS:
            sec.fail(key, f"model must be one of {NOISE_MODELS}, got {model!r}")
        if channel not in CHANNEL_NAMES:
            sec.fail(key, f"channel must be one of {CHANNEL_NAMES}, got {channel!r}")
        try:
            p = float(prob)
        except ValueError:
            sec.fail(key, f"bad probability {prob!r}")
        try:
            specs.append(NoiseSpec(model, channel, p))
        except ValueError as exc:
            sec.fail(key, str(exc))
    return tuple(specs)


def _parse_seeds(sec: _Section) -> tuple[int, ...]:
    count = sec.get_int("count", 0)
    raw = sec.get("seeds")
    if raw:
        try:
            seeds = tuple(int(s) for s in raw.replace(",", " ").split())
        except ValueError:
            sec.fail("seeds", f"expected integers, got {raw!r}")
        if count and count != len(seeds):
            sec.fail("count", f"count={count} but {len(seeds)} seeds listed")
        return seeds
    if count < 1:
        sec.fail("count", "trials count must be >= 1 (or list seeds)")
    return tuple(range(count))


def load_config(path) -> ExperimentConfig:
    """Parse and validate one INI experiment file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, source=str(path))


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc

    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key in parser[section]:
            if key not in _KNOWN_KEYS[section]:
                line = _key_line(text, section, key)
                where = f"{source}:{line}" if line else source
                raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")

    sec = {name: _Section(parser, text, source, name) for name in _KNOWN_KEYS}

    exp = sec["experiment"]
    task = exp.get_choice("task", TASKS, "maxcut")
    outdir = exp.get("output") or "runs/" + task

    prob = sec["problem"]
    graph = prob.get("graph")
    hamiltonian = prob.get("hamiltonian")
    if task == "maxcut":
        if not graph:
            prob.fail("graph", "maxcut needs a graph name or file")
        n_qubits = _graph_qubits(prob, graph)
    elif task == "jssp":
        if not hamiltonian:
            prob.fail("hamiltonian", "jssp needs a Hamiltonian file")
        n_qubits = _hamiltonian_qubits(prob, hamiltonian)
    else:
        n_qubits = prob.get_int("qubits", 3)
        if n_qubits < 2:
            prob.fail("qubits", "fidelity task needs >= 2 qubits")

    pool = sec["pool"]
    family = pool.get_choice("family", POOL_FAMILIES,
                             "Of1" if task == "fidelity" else "O4")
    size = pool.get_int("size", 1)
    try:
        from .pools import build_pool
        build_pool(family, size, n_qubits)
    except ValueError as exc:
        pool.fail("size", str(exc))

    enc = sec["encoder"]
    encoder_cfg = EncoderConfig(
        d_encoder=enc.get_int("d_encoder", 16),
        h=enc.get_int("heads", 2),
        n_layers=enc.get_int("layers", 2),
        d_ff=enc.get_int("d_ff", 32),
        m=enc.get_int("lag", 1),
        eta=enc.get_float("eta", 1e-3),
        optimizer=enc.get_choice("optimizer", OPTIMIZERS, "sgd"),
        use_pe=enc.get_bool("use_pe", True),
    )

    srch = sec["search"]
    default_encoding = "x_qft" if task == "fidelity" else "h_layer"
    layout = BlockLayout(
        encoding=srch.get_choice("encoding", ENCODINGS, default_encoding),
        position=srch.get_choice("position", QFT_POSITIONS,
                                 "front" if task == "fidelity"
                                 else "back_and_front"),
        num_blocks=srch.get_int("blocks", 1),
    )
    try:
        search_cfg = SearchConfig(
            num_placeholders=srch.get_int("placeholders", 4),
            variant=srch.get_choice("variant", VARIANTS, "SA-DQAS-F1"),
            beta=srch.get_float("beta", 0.1),
            batch_size=srch.get_int("batch_size", 16),
            steps=srch.get_int("steps", 200),
            lr_alpha=srch.get_float("lr_alpha", 0.15),
            lr_theta=srch.get_float("lr_theta", 0.05),
            seed=0,
            asp_epsilon=srch.get_float("asp_epsilon", 0.01),
            num_param_blocks=srch.get_int("blocks", 1),
            layout=layout,
            encoder=encoder_cfg,
            theta_update=srch.get_choice("theta_update", THETA_UPDATE_MODES,
                                         "per-sample"),
            joint_encoder_grad=srch.get_bool("joint_encoder_grad", False),
        )
    except ValueError as exc:
        raise ConfigError(f"{source}: [search] {exc}") from exc

    ft = sec["fine_tune"]
    noise = sec["noise"]

    try:
        return ExperimentConfig(
            task=task,
            outdir=outdir,
            pool_family=family,
            pool_size=size,
            n_qubits=n_qubits,
            search=search_cfg,
            seeds=_parse_seeds(sec["trials"]),
            graph=graph,
            hamiltonian=hamiltonian,
            ft_iters=ft.get_int("iters", 300 if task == "jssp" else 200),
            ft_lr=ft.get_float("lr", 0.2),
            noise_search=_parse_noise_list(noise, "search"),
            noise_eval=_parse_noise_list(noise, "eval"),
            source=source,
        )
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def _graph_qubits(prob: _Section, graph: str) -> int:
    from .objective import benchmark_graph, load_graph

    try:
        return benchmark_graph(graph).n_nodes
    except ValueError:
        pass
    gpath = resolve_data_path(graph)
    if not gpath.is_file():
        prob.fail("graph", f"not a benchmark name and no such file: {graph!r}")
    try:
        return load_graph(gpath).n_nodes
    except ValueError as exc:
        prob.fail("graph", str(exc))


def _hamiltonian_qubits(prob: _Section, spec: str) -> int:
    from .objective import load_diag_hamiltonian

    hpath = resolve_data_path(spec)
    if not hpath.is_file():
        prob.fail("hamiltonian", f"no such file: {spec!r}")
    try:
        return load_diag_hamiltonian(hpath).n_qubits
    except ValueError as exc:
        prob.fail("hamiltonian", str(exc))
