import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from bclab.cli import (ConfigError, ExperimentConfig, cmd_analyze, cmd_bc_check, cmd_simulate, cmd_sweep,
                       config_from_values, load_config, main, _observers)
from bclab.dynamics import RandomStreams, run
from bclab.experiments import map_jobs, thread_count
from bclab.invariants import CHECKS, run_all

SMALL = """
beta = 3
lambda = 2
n = 8
T = 0.03
sample_dt = 0.01
H = s:hermite-gauss:0, sdir:odd-gauss:1
checkpoint_every = 1
"""


@pytest.fixture
def small_cfg(tmp_path):
    f = tmp_path / "small.cfg"
    f.write_text(SMALL)
    return f


def _tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_config_defaults_and_hash():
    cfg = config_from_values({})
    assert cfg.axes["n"] == [16, 32, 64] and cfg.replicas == 16 and cfg.integrator.t_macro_max == 0.5
    assert cfg.hash() == config_from_values({}).hash()
    assert cfg.hash() != config_from_values({"seed": 1}).hash()
    assert len(cfg.hash()) == 64


@pytest.mark.parametrize("values,path", [
    ({"bogus": 1}, "config.bogus"), ({"beta": -1}, "model"), ({"exchange": "slow"}, "integrator"),
    ({"n_grid": [16, 2.5]}, "axes.n_grid"), ({"kappa_grid": 0.25}, "axes.kappa_grid"),
    ({"ell_grid": 0}, "axes.ell_grid"), ({"H": "nope"}, "observables.H"), ({"replicas": 0}, "run.replicas"),
    ({"seed": -3}, "run.seed"), ({"checkpoint_every": -1}, "run.checkpoint_every"),
])
def test_config_errors_name_the_field(values, path):
    with pytest.raises(ConfigError, match=path.replace(".", r"\.")):
        config_from_values(values)


def test_load_config_overrides(small_cfg):
    cfg = load_config(small_cfg, seed=11, replicas=2)
    assert (cfg.seed, cfg.replicas, cfg.params.n, cfg.params.lam) == (11, 2, 8, 2.0)
    assert cfg.test_functions == ["s:hermite-gauss:0", "sdir:odd-gauss:1"]


def test_simulate_is_byte_identical_on_rerun(tmp_path, small_cfg):
    cfg = load_config(small_cfg, seed=5, replicas=2)
    cmd_simulate(cfg, tmp_path / "a")
    cmd_simulate(cfg, tmp_path / "b")
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert a == b and "observations.jsonl" in a and "report.csv" in a
    summary = json.loads(a["summary.json"])
    assert summary["config_hash"] == cfg.hash() and summary["command"] == "simulate"
    cmd_simulate(load_config(small_cfg, seed=6, replicas=2), tmp_path / "c")
    assert _tree(tmp_path / "c")["observations.jsonl"] != a["observations.jsonl"]


def test_resume_after_interruption_matches(tmp_path, small_cfg):
    cfg = load_config(small_cfg, seed=5, replicas=3)
    cmd_simulate(cfg, tmp_path / "full")
    out = tmp_path / "cut"
    (out / "checkpoints").mkdir(parents=True)
    (out / "replicas").mkdir()

    class Stop(Exception):
        pass

    def stop(t, recs):
        if t >= 0.015:
            raise Stop

    with pytest.raises(Stop):
        run(cfg.params, cfg.integrator, _observers(cfg.test_functions, True), rng=RandomStreams(5, (0, 0, 1)),
            checkpoint_path=out / "checkpoints" / "replica_0001.json", checkpoint_every=1, on_record=stop)
    cmd_simulate(cfg, out, resume_run=True)
    assert _tree(out) == _tree(tmp_path / "full")


def test_analyze_summarises_jsonl(tmp_path, small_cfg):
    cfg = load_config(small_cfg, seed=5, replicas=3)
    cmd_simulate(cfg, tmp_path / "sim")
    rows = cmd_analyze([tmp_path / "sim" / "observations.jsonl"], tmp_path / "an")
    keyed = {(r["observer"], r["t"], r["field"]): r for r in rows}
    t_end = max(r["t"] for r in rows)
    assert t_end == pytest.approx(0.03)
    row = keyed[("moments", t_end, "mean")]
    assert row["count"] == 3
    finals = [json.loads(line) for line in (tmp_path / "sim" / "observations.jsonl").read_text().splitlines()]
    means = [f["mean"] for f in finals if f["observer"] == "moments" and f["t"] == t_end]
    assert row["mean"] == pytest.approx(np.mean(means))
    assert ("s:hermite-gauss:0", t_end, "terms.bath_term") in keyed
    assert (tmp_path / "an" / "analysis.csv").exists()


def test_sweep_and_bc_check_small(tmp_path):
    cfg = config_from_values({"beta": 3, "lambda": 2, "T": 0.02, "n_grid": [8, 16], "kappa_grid": [0.5, 1],
                              "delta_grid": [-2, 0, 2], "replicas": 2})
    rows = cmd_sweep(cfg, tmp_path / "sw")
    assert [r["regime"] for r in rows] == ["SBE(S_0)+BC", "SBE(S_Dir)+BC", "SBE(S)", "OU(S_0)+BC", "OU(S_Dir)+BC",
                                           "OU(S)"]
    assert [r["bc_expected"] for r in rows] == [True, True, False] * 2
    first = (tmp_path / "sw" / "sweep.csv").read_bytes()
    cmd_sweep(cfg, tmp_path / "sw")
    assert (tmp_path / "sw" / "sweep.csv").read_bytes() == first
    rep = cmd_bc_check(cfg, tmp_path / "bc")
    assert rep.target == cfg.params.delta - 1 and len(rep.means) == 2
    assert json.loads((tmp_path / "bc" / "summary.json").read_text())["regime"] == "SBE(S_Dir)+BC"


def test_main_exit_codes(tmp_path, small_cfg, capsys):
    assert main(["simulate", "--config", str(small_cfg), "--replicas", "1", "--out", str(tmp_path / "o")]) == 0
    assert main(["simulate", "--config", str(small_cfg), "--seed", "-1", "--out", str(tmp_path / "o")]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["selftest", "--criteria", "nonsense"]) == 2
    assert "error:" in capsys.readouterr().err


def test_selftest_runs_every_invariant_quickly(tmp_path):
    results = run_all()
    assert len(results) == len(CHECKS)
    failed = [r for r in results if not r["pass"]]
    assert not failed, failed
    assert sum(r["seconds"] for r in results) < 60
    assert main(["selftest", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "selftest.json").read_text())["pass"] is True


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "bclab", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("bclab ")


def _square(x):
    return x * x


def test_pool_size_from_environment(monkeypatch):
    monkeypatch.setenv("BCL_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.setenv("BCL_THREADS", "0")
    with pytest.raises(ValueError):
        thread_count()
    monkeypatch.delenv("BCL_THREADS")
    assert thread_count() >= 1


def test_pool_results_keep_job_order():
    jobs = list(range(7))
    assert map_jobs(_square, jobs, threads=1) == map_jobs(_square, jobs, threads=2) == [j * j for j in jobs]


def test_parallel_simulation_matches_serial(tmp_path, small_cfg, monkeypatch):
    cfg = load_config(small_cfg, seed=2, replicas=3)
    monkeypatch.setenv("BCL_THREADS", "1")
    cmd_simulate(cfg, tmp_path / "serial")
    monkeypatch.setenv("BCL_THREADS", "2")
    cmd_simulate(cfg, tmp_path / "pool")
    assert _tree(tmp_path / "serial") == _tree(tmp_path / "pool")
