import json

import numpy as np
import pytest

from wkbtorus import io
from wkbtorus.config import ExperimentConfig, config_from_dict, load_config
from wkbtorus.errors import ConfigError
from wkbtorus.grid import ScalarField, VectorField, make_grid
from wkbtorus.measures import GridMeasure, ParticleMeasure, PhaseParticleMeasure


class TestConfig:
    def test_defaults(self):
        cfg = load_config(None)
        assert cfg.dim == 1 and cfg.quantum_points == 4096
        assert cfg.weak_kam.dt == 0.1
        assert cfg.hbars == [2.0**-k for k in range(3, 8)]
        assert np.allclose(cfg.sigma0_center, [np.pi])

    def test_overrides(self):
        cfg = load_config(None, seed=7, output="x")
        assert cfg.seed == 7 and cfg.output == "x"
        assert "output" not in cfg.report_dict()

    def test_nested_and_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"potential": {"name": "zero"}, "weak_kam": {"dt": 0.2}}))
        cfg = load_config(p)
        assert cfg.potential_obj.dim == 1
        assert cfg.weak_kam.dt == 0.2

    @pytest.mark.parametrize("data", [
        {"typo": 1},
        {"weak_kam": {"dtt": 0.1}},
        {"dim": 3},
        {"classical_points": 100},
        {"classical_points": 1024, "quantum_points": 8192, "hbars": []},
        {"times": [0.5, 0.25]},
        {"sigma0": {"kind": "gaussian"}},
        {"criteria": [11]},
        {"potential": {"name": "quartic"}},
        {"weak_kam": {"dt": 2.0}},
        {"cross_solver": {"levels": [64], "particles": [1, 2]}},
    ])
    def test_rejected(self, data):
        with pytest.raises(ConfigError):
            config_from_dict(data).potential_obj

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_two_mode_is_1d(self):
        with pytest.raises(ConfigError):
            config_from_dict({"dim": 2, "potential": {"name": "two-mode"}}).potential_obj

    def test_round_trip(self):
        cfg = ExperimentConfig()
        assert config_from_dict(cfg.to_dict()) == cfg


class TestIO:
    def test_field_csv(self, tmp_path):
        g = make_grid(1, 8)
        f = ScalarField(g, np.sin(g.axis))
        header, data = io.read_table(io.field_to_csv(f, tmp_path / "f.csv"))
        assert header == ["x", "value"]
        assert np.array_equal(data[:, 1], f.values)

    def test_field_json_round_trip(self):
        g = make_grid(2, 8)
        v = VectorField(g, np.arange(128, dtype=float).reshape(2, 8, 8))
        back = io.field_from_json(json.loads(json.dumps(io.field_to_json(v))))
        assert np.array_equal(back.components, v.components)

    @pytest.mark.parametrize("mu", [
        ParticleMeasure([0.1, 2.0, 5.0], [0.2, 0.3, 0.5]),
        PhaseParticleMeasure([[0.1, 0.2], [3.0, 4.0]], [[1.0, -1.0], [0.5, 0.0]], [0.25, 0.75], 2),
        GridMeasure.normalized(make_grid(1, 16), np.arange(16.0) + 1),
    ])
    def test_measure_round_trips(self, mu, tmp_path):
        back = io.measure_from_csv(io.measure_to_csv(mu, tmp_path / "m.csv"))
        again = io.measure_from_json(json.loads(json.dumps(io.measure_to_json(mu))))
        for b in (back, again):
            assert type(b) is type(mu)
            if isinstance(mu, GridMeasure):
                assert np.allclose(b.density, mu.density, rtol=1e-15)
            else:
                assert np.array_equal(b.points, mu.points)
                assert np.allclose(b.weights, mu.weights, rtol=1e-15)

    def test_json_numpy(self, tmp_path):
        p = io.write_json(tmp_path / "a" / "b.json", {"x": np.float64(1.5), "y": np.arange(2),
                                                     "z": np.bool_(True)})
        assert json.loads(p.read_text()) == {"x": 1.5, "y": [0, 1], "z": True}

    def test_rows_format(self, tmp_path):
        p = io.write_rows(tmp_path / "r.csv", [{"a": 1, "b": 0.1, "c": True, "d": "s"}])
        assert p.read_text() == "a,b,c,d\n1,0.10000000000000001,true,s\n"
