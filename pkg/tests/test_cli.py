"""Command-line driver: every subcommand end to end on tiny problems."""

import json

import pytest

from qasearch.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from qasearch.sim import circuit_from_text

TRIANGLE = "nodes 3\nedge 0 1\nedge 1 2\nedge 0 2\n"

CONFIG_TEMPLATE = """\
[experiment]
task = maxcut
output = {out}

[problem]
graph = {graph}

[pool]
family = O3
size = 1

[search]
placeholders = 3
batch_size = 4
steps = 3

[trials]
count = 2

[fine_tune]
iters = 4

[noise]
eval = terminal BitFlip 0.2
"""

FIDELITY_CONFIG = """\
[experiment]
task = fidelity
output = {out}

[problem]
qubits = 3

[search]
placeholders = 3
batch_size = 4
steps = 2

[trials]
count = 2

[noise]
eval = terminal BitFlip 0.0; terminal BitFlip 0.2
"""


def make_search_setup(root):
    graph = root / "triangle.graph"
    graph.write_text(TRIANGLE)
    ini = root / "exp.ini"
    ini.write_text(
        CONFIG_TEMPLATE.format(out=root / "default_out", graph=graph)
    )
    return ini


@pytest.fixture(scope="module")
def search_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_search")
    ini = make_search_setup(root)
    out = root / "run_a"
    rc = main(["search", "--config", str(ini), "--out", str(out)])
    assert rc == EXIT_OK
    return ini, out


class TestSearchCommand:
    def test_outputs_exist(self, search_run):
        _, out = search_run
        for name in (
            "summary.json", "trial_0.csv", "trial_1.csv", "circuit_0.txt",
            "circuit_1.txt", "finetune_0.csv", "finetune_1.csv",
            "search_curves.png", "finetune_curves.png",
        ):
            assert (out / name).is_file(), name

    def test_trial_csv_shape(self, search_run):
        _, out = search_run
        lines = (out / "trial_0.csv").read_text().splitlines()
        assert lines[0] == "step,batch_loss,argmax_energy,encoder_loss"
        assert len(lines) == 1 + 3  # header + steps

    def test_circuit_file_parses(self, search_run):
        _, out = search_run
        circuit = circuit_from_text((out / "circuit_0.txt").read_text())
        assert circuit.n_qubits == 3

    def test_summary_content(self, search_run):
        _, out = search_run
        payload = json.loads((out / "summary.json").read_text())
        assert payload["schema"] == 1
        assert payload["command"] == "search"
        assert payload["pool"] == "O3-1"
        assert payload["n_qubits"] == 3
        assert len(payload["trials"]) == 2
        assert "mean_final_energy" in payload

    def test_reruns_are_byte_identical(self, search_run, tmp_path):
        ini, out = search_run
        again = tmp_path / "run_b"
        assert main(["search", "--config", str(ini), "--out", str(again)]) \
            == EXIT_OK
        for name in ("trial_0.csv", "trial_1.csv", "finetune_0.csv",
                     "circuit_0.txt", "summary.json"):
            assert (again / name).read_bytes() == (out / name).read_bytes()

    def test_parallel_jobs_match_serial(self, search_run, tmp_path):
        ini, out = search_run
        par = tmp_path / "run_par"
        assert main(["search", "--config", str(ini), "--out", str(par),
                     "--jobs", "2"]) == EXIT_OK
        assert (par / "trial_1.csv").read_bytes() \
            == (out / "trial_1.csv").read_bytes()

    def test_seed_flag_narrows_trials(self, tmp_path):
        ini = make_search_setup(tmp_path)
        out = tmp_path / "one_seed"
        assert main(["search", "--config", str(ini), "--out", str(out),
                     "--seed", "7", "--no-figures"]) == EXIT_OK
        assert (out / "trial_7.csv").is_file()
        assert not (out / "trial_0.csv").exists()

    def test_no_figures_flag(self, tmp_path):
        ini = make_search_setup(tmp_path)
        out = tmp_path / "plain"
        assert main(["search", "--config", str(ini), "--out", str(out),
                     "--no-figures"]) == EXIT_OK
        assert not list(out.glob("*.png"))


class TestEvaluateCommand:
    def test_trajectory_and_noise(self, search_run, tmp_path):
        ini, searched = search_run
        out = tmp_path / "eval"
        rc = main(["evaluate", str(searched / "circuit_0.txt"),
                   "--config", str(ini), "--out", str(out)])
        assert rc == EXIT_OK
        lines = (out / "trajectory.csv").read_text().splitlines()
        assert lines[0] == "iter,mean_energy,std_energy"
        assert len(lines) == 1 + 4 + 1  # header + iters + initial point
        noise = (out / "noise_eval.csv").read_text().splitlines()
        assert noise[0] == "noise,mean_final_energy"
        assert noise[1].startswith("terminal:BitFlip:0.2,")
        payload = json.loads((out / "summary.json").read_text())
        assert payload["command"] == "evaluate"
        assert "mean_noisy_final_energy" in payload
        assert (out / "trajectory.png").is_file()

    def test_missing_circuit_is_runtime_error(self, search_run, tmp_path,
                                              capsys):
        ini, _ = search_run
        rc = main(["evaluate", str(tmp_path / "ghost.txt"),
                   "--config", str(ini), "--out", str(tmp_path / "o")])
        assert rc == EXIT_RUNTIME
        assert "ghost.txt" in capsys.readouterr().err


@pytest.fixture(scope="module")
def fidelity_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_fid")
    ini = root / "fid.ini"
    ini.write_text(FIDELITY_CONFIG.format(out=root / "default_out"))
    out = root / "fid_out"
    rc = main(["fidelity", "--config", str(ini), "--out", str(out)])
    assert rc == EXIT_OK
    return ini, out


class TestFidelityCommand:
    def test_fidelity_table(self, fidelity_run):
        _, out = fidelity_run
        lines = (out / "fidelity.csv").read_text().splitlines()
        assert lines[0].startswith("seed,")
        assert len(lines) == 1 + 2 + 1  # header + seeds + mean row
        assert lines[-1].startswith("mean,")
        assert (out / "fidelity.png").is_file()

    def test_summary_mean_fidelities_in_range(self, fidelity_run):
        _, out = fidelity_run
        payload = json.loads((out / "summary.json").read_text())
        assert payload["command"] == "fidelity"
        means = payload["mean_fidelity"]
        assert set(means) == {
            "terminal:BitFlip:0", "terminal:BitFlip:0.2"
        }
        assert all(0.0 <= v <= 1.0 for v in means.values())

    def test_wrong_task_rejected(self, search_run, tmp_path, capsys):
        ini, _ = search_run
        rc = main(["fidelity", "--config", str(ini),
                   "--out", str(tmp_path / "x")])
        assert rc == EXIT_RUNTIME
        assert "task" in capsys.readouterr().err


class TestReportCommand:
    def test_aggregates_runs(self, search_run, tmp_path):
        _, searched = search_run
        out = tmp_path / "report"
        rc = main(["report", str(searched), "--out", str(out)])
        assert rc == EXIT_OK
        lines = (out / "report.csv").read_text().splitlines()
        assert lines[0].startswith("run,command,task,variant,pool,trials")
        assert len(lines) == 2
        assert lines[1].startswith(searched.name + ",search,maxcut")
        assert (out / "report.txt").read_text().count("\n") >= 3
        assert (out / "report.png").is_file()

    def test_missing_summary_is_runtime_error(self, tmp_path, capsys):
        empty = tmp_path / "empty_run"
        empty.mkdir()
        rc = main(["report", str(empty), "--out", str(tmp_path / "r")])
        assert rc == EXIT_RUNTIME
        assert "summary" in capsys.readouterr().err.lower()

    def test_corrupt_summary_schema(self, tmp_path, capsys):
        bad = tmp_path / "bad_run"
        bad.mkdir()
        (bad / "summary.json").write_text(
            json.dumps({"schema": 999, "command": "search"})
        )
        rc = main(["report", str(bad), "--out", str(tmp_path / "r2")])
        assert rc == EXIT_RUNTIME
        assert "schema" in capsys.readouterr().err.lower()


class TestErrorPaths:
    def test_config_error_exit_code(self, tmp_path, capsys):
        ini = tmp_path / "broken.ini"
        ini.write_text(CONFIG_TEMPLATE.format(
            out=tmp_path, graph="no_such_file.graph"
        ))
        rc = main(["search", "--config", str(ini)])
        assert rc == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_unknown_key_exit_code(self, tmp_path, capsys):
        graph = tmp_path / "g.graph"
        graph.write_text(TRIANGLE)
        ini = tmp_path / "typo.ini"
        ini.write_text(
            CONFIG_TEMPLATE.format(out=tmp_path, graph=graph)
            .replace("steps = 3", "steps = 3\nstepz = 3")
        )
        rc = main(["search", "--config", str(ini)])
        assert rc == EXIT_CONFIG
        err = capsys.readouterr().err
        assert "stepz" in err and "config error" in err

    def test_missing_required_flag(self):
        with pytest.raises(SystemExit):
            main(["search"])
