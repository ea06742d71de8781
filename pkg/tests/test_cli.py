"""End-to-end checks of the command line and the verification pipeline on small configs."""

import json

import numpy as np
import pytest

from wkbtorus import io
from wkbtorus.cli import main
from wkbtorus.config import config_from_dict
from wkbtorus.errors import GridError
from wkbtorus.grid import make_grid
from wkbtorus.measures import GridMeasure, ParticleMeasure, advect_density_upwind
from wkbtorus.pipeline import CRITERIA, THM1_CRITERIA, THM2_CRITERIA, Context, emit_artifacts, run_all

# coarse grids and two hbars; criteria 3, 4 and 8 need the reference sizes
SMALL = {
    "classical_points": 256, "quantum_points": 1024, "hbars": [0.125, 0.0625],
    "times": [0.0, 0.5, 1.0], "particles": 512, "energy_hbar": 0.125,
    "ot": {"atoms": 12, "path_nodes": 32, "cconv_samples": 8, "cconv_targets": 64,
           "cconv_times": [1.0]},
    "cross_solver": {"levels": [64, 128, 256], "particles": [256, 512, 1024]},
    "residuals": {"time_samples": 16, "refine": 2},
}
ZERO = dict(SMALL, potential={"name": "zero"}, sigma0={"kind": "uniform"})


def write_config(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def run(tmp_path, *args, data=SMALL, out="out"):
    cfg = write_config(tmp_path, data)
    return main(list(args) + ["--config", cfg, "--out", str(tmp_path / out), "--quiet"])


class TestVerify:
    def test_thm1_passes_on_enabled(self, tmp_path):
        data = dict(SMALL, criteria=[1, 2, 5, 7, 9, 10])
        assert run(tmp_path, "verify-thm1", data=data) == 0
        man = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert all(s["status"] == "ok" for s in man["stages"])
        assert "criteria.csv" in man["files"] and "weakkam_field.csv" in man["files"]

    def test_thm1_fails_when_a_criterion_fails(self, tmp_path):
        # coarse hbars cannot meet the pairing and Husimi tolerances
        assert run(tmp_path, "verify-thm1") == 1

    def test_thm2(self, tmp_path):
        assert run(tmp_path, "verify-thm2", data=dict(SMALL, criteria=[6])) == 0
        assert run(tmp_path, "verify-thm2", data=dict(SMALL, criteria=[6, 8]), out="o2") == 1

    def test_zero_potential_passes(self, tmp_path):
        assert run(tmp_path, "verify-thm1", data=ZERO) == 0
        assert run(tmp_path, "verify-thm2", data=ZERO, out="o2") == 0

    def test_deterministic_manifest(self, tmp_path):
        data = dict(SMALL, criteria=[1, 2, 9])
        run(tmp_path, "verify-thm1", data=data, out="a")
        run(tmp_path, "verify-thm1", data=data, out="b")
        ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
        mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
        assert ma["hash"] == mb["hash"]
        for f in ma["files"]:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_partial_failure_recorded(self, tmp_path):
        # hbar far too small for the quantum grid: only the quantum stages fail
        assert run(tmp_path, "verify-thm1", data=dict(SMALL, hbars=[1e-3])) == 1
        man = json.loads((tmp_path / "out" / "manifest.json").read_text())
        status = {s["stage"]: s["status"] for s in man["stages"]}
        assert status["quantum"] == "failed"
        assert status["weak_kam"] == status["classical_flow"] == status["displacement"] == "ok"
        rep = json.loads((tmp_path / "out" / "report.json").read_text())
        assert "ResolutionError" in json.dumps(rep["stages"])
        assert rep["criteria"]["3"]["passed"] is False

    def test_missing_output_dir_created(self, tmp_path):
        out = tmp_path / "deep" / "er"
        cfg = write_config(tmp_path, dict(SMALL, criteria=[10]))
        assert main(["verify-thm1", "--config", cfg, "--out", str(out), "--quiet"]) == 0
        assert (out / "manifest.json").exists()

    def test_bad_config_exit_2(self, tmp_path, capsys):
        assert run(tmp_path, "weakkam", data={"nope": 1}) == 2
        assert "ConfigError" in capsys.readouterr().err


@pytest.fixture(scope="module")
def report():
    return run_all(config_from_dict(SMALL))


class TestReport:
    def test_every_criterion_once(self, report):
        assert sorted(report.criteria) == sorted(CRITERIA)
        assert set(THM1_CRITERIA) | set(THM2_CRITERIA) == set(CRITERIA)
        assert len(report.summary_lines()) == 10

    def test_numbers_traceable(self, report, tmp_path):
        emit_artifacts(report, tmp_path)
        crit = (tmp_path / "criteria.csv").read_text()
        r1 = report.criteria[1]
        assert io.FMT % r1.values["residual"] in crit

    def test_single_hbar_note(self):
        rep = run_all(config_from_dict(dict(SMALL, hbars=[0.0625], criteria=[3, 4])))
        assert any("one entry" in n for n in rep.notes)
        assert 4 in rep.criteria and rep.criteria[4].values

    def test_mismatched_grids(self):
        ctx = Context(config_from_dict(SMALL))
        with pytest.raises(GridError, match="solve S\\+ on the density grid"):
            advect_density_upwind(GridMeasure.uniform(make_grid(1, 64)), ctx.S)


class TestSubcommands:
    def test_weakkam(self, tmp_path):
        assert run(tmp_path, "weakkam") == 0
        rep = json.loads((tmp_path / "out" / "weakkam.json").read_text())
        assert rep["c0"] == 1.0 and rep["residual"] < 1e-2
        header, data = io.read_table(tmp_path / "out" / "weakkam.csv")
        assert header == ["x", "S", "dS0", "mask"] and len(data) == 256

    def test_flow(self, tmp_path):
        assert run(tmp_path, "flow", "--x", "1.0", "--p", "0.5", "--t", "0.5") == 0
        header, data = io.read_table(tmp_path / "out" / "trajectory.csv")
        assert header == ["t", "x", "p0", "H"]
        assert data.shape[0] == 501
        assert np.ptp(data[:, -1]) < 1e-6

    def test_schrod(self, tmp_path):
        assert run(tmp_path, "schrod", "--hbar", "0.125") == 0
        rep = json.loads((tmp_path / "out" / "schrod.json").read_text())
        assert rep["norm_drift"] < 1e-10
        header, data = io.read_table(tmp_path / "out" / "density.csv")
        assert header == ["t", "x", "density"] and len(data) == 3 * 1024

    def test_wigner(self, tmp_path):
        assert run(tmp_path, "wigner", "--hbar", "0.125") == 0
        assert (tmp_path / "out" / "pairings.csv").exists()
        assert (tmp_path / "out" / "husimi_marginal_t1.csv").exists()

    def test_measure_and_ot(self, tmp_path):
        mu = ParticleMeasure.uniform(np.linspace(1.0, 5.0, 6))
        nu = ParticleMeasure.uniform(np.linspace(1.5, 5.5, 6))
        io.measure_to_csv(mu, tmp_path / "mu.csv")
        io.measure_to_csv(nu, tmp_path / "nu.csv")
        assert run(tmp_path, "measure", "--mu", str(tmp_path / "mu.csv"),
                   "--nu", str(tmp_path / "nu.csv")) == 0
        rep = json.loads((tmp_path / "out" / "measure.json").read_text())
        assert rep["w1"] == pytest.approx(0.5) and rep["method"] == "exact"
        assert run(tmp_path, "ot", "--mu", str(tmp_path / "mu.csv"), "--t", "1.0") == 0
        rep = json.loads((tmp_path / "out" / "ot.json").read_text())
        assert rep["gap_graph"] >= -1e-8
        assert run(tmp_path, "ot", "--mu", str(tmp_path / "mu.csv"),
                   "--nu", str(tmp_path / "nu.csv")) == 0
        header, data = io.read_table(tmp_path / "out" / "plan.csv")
        assert data[:, 2].sum() == pytest.approx(1.0)

    def test_missing_file_exit_2(self, tmp_path):
        assert run(tmp_path, "measure", "--mu", "nope.csv", "--nu", "nope.csv") == 2
