import json

import numpy as np
import pytest

from gfurn import cli
from gfurn.config import build_rule, experiment_config, initial_composition, parse_config_text
from gfurn.exceptions import ConfigError
from gfurn.rules import NonhomogeneousRule

RPW_CFG = """\
schema_version = 1
[rule]
kind = rpw
p1 = 0.7
p2 = 0.6
[experiment]
horizons = [64, 256]
replicates = 60
seed = 4
"""


class TestParsing:
    def test_sections_equal_dotted_keys(self):
        a = parse_config_text(RPW_CFG)
        b = parse_config_text("schema_version = 1\nrule.kind = rpw\nrule.p1 = 0.7\nrule.p2 = 0.6\n"
                              "experiment.horizons = [64, 256]\nexperiment.replicates = 60\n"
                              "experiment.seed = 4\n")
        assert a == b
        assert a["experiment.horizons"] == [64, 256] and a["rule.kind"] == "rpw"

    def test_comments_and_case(self):
        flat = parse_config_text("# comment\n; other\nrule.Kind = x\n")
        assert flat == {"rule.Kind": "x"}

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            parse_config_text("[experiment]\nexperiment.tolerance = 0.1\n")

    def test_schema_version(self):
        with pytest.raises(ConfigError):
            parse_config_text("schema_version = 2\n")

    def test_duplicates(self):
        with pytest.raises(ConfigError):
            parse_config_text("rule.p1 = 0.5\n[rule]\np1 = 0.6\n")
        with pytest.raises(ConfigError):
            parse_config_text("urn.Y0 = 1\nurn.Y0 = 2\n")

    def test_syntax_error(self):
        with pytest.raises(ConfigError):
            parse_config_text("no delimiter here\n")


class TestRules:
    def test_rpw(self):
        r = build_rule({"kind": "rpw", "p1": 0.7, "p2": 0.6})
        assert np.allclose(r.H, [[0.7, 0.3], [0.4, 0.6]])

    def test_homogeneous(self):
        r = build_rule({"kind": "homogeneous",
                        "row1": [[[1, 0], 0.5], [[0, 1], 0.5]],
                        "row2": [[[2, 0], 0.25], [[0, 2], 0.75]]})
        assert np.allclose(r.H, [[0.5, 0.5], [0.5, 1.5]])

    def test_deterministic_and_multinomial(self):
        assert np.allclose(build_rule({"kind": "deterministic", "H": [[0, 1], [1, 0]]}).H,
                           [[0, 1], [1, 0]])
        m = build_rule({"kind": "multinomial", "v": [0.2, 0.8]})
        assert np.allclose(m.H, [[0.2, 0.8], [0.2, 0.8]])

    def test_nonhomogeneous(self):
        r = build_rule({"kind": "nonhomogeneous", "base.kind": "rpw", "base.p1": 0.6,
                        "base.p2": 0.6, "E": [[0.1, -0.1], [0, 0]], "alpha": 0.8})
        assert isinstance(r, NonhomogeneousRule)

    def test_errors(self):
        with pytest.raises(ConfigError):
            build_rule({"kind": "bogus"})
        with pytest.raises(ConfigError):
            build_rule({"kind": "deterministic"})
        with pytest.raises(ConfigError):
            build_rule({"kind": "homogeneous"})
        with pytest.raises(ConfigError):
            build_rule({"kind": "homogeneous", "row1": [1, 2]})

    def test_initial_composition(self):
        assert np.all(initial_composition({}, 3) == 1)
        with pytest.raises(ConfigError):
            initial_composition({"urn.Y0": [1, 2]}, 3)

    def test_experiment_overrides(self):
        flat = parse_config_text(RPW_CFG)
        cfg = experiment_config(flat, seed=9, threads=2, deterministic=True)
        assert cfg.master_seed == 9 and cfg.threads == 2 and cfg.deterministic
        assert experiment_config(flat).master_seed == 4
        with pytest.raises(ConfigError):
            experiment_config({"rule.kind": "rpw", "rule.p1": 0.6, "rule.p2": 0.6})


@pytest.fixture
def write(tmp_path):
    def _write(name, text):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return _write


class TestCli:
    def test_analyze(self, write, capsys):
        path = write("h.csv", "0.7,0.3\n0.4,0.6\n")
        assert cli.main(["analyze", path]) == 0
        d = json.loads(capsys.readouterr().out)
        assert d["regime"] == "subcritical" and d["rho"] == pytest.approx(0.3)

    def test_analyze_supercritical_is_validation_error(self, write, capsys):
        path = write("h.csv", "0.9,0.1\n0.1,0.9\n")
        assert cli.main(["analyze", path]) == 2
        assert "rho" in capsys.readouterr().err

    def test_missing_file(self, capsys):
        assert cli.main(["gamma", "/nonexistent/config"]) == 2

    def test_gamma(self, write, tmp_path):
        path = write("c.cfg", RPW_CFG)
        out = tmp_path / "g.json"
        assert cli.main(["gamma", path, "--out", str(out)]) == 0
        d = json.loads(out.read_text())
        assert d["regime"] == "subcritical" and np.array(d["gamma"]).shape == (4, 4)

    def test_gamma_critical(self, write, capsys):
        path = write("c.cfg", "rule.kind = rpw\nrule.p1 = 0.75\nrule.p2 = 0.75\n")
        assert cli.main(["gamma", path]) == 0
        assert json.loads(capsys.readouterr().out)["regime"] == "critical"

    def test_simulate(self, write, capsys):
        path = write("c.cfg", RPW_CFG + "[simulate]\nn = 20\n")
        assert cli.main(["simulate", path, "--seed", "3"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 22
        assert cli.main(["simulate", path, "--seed", "3"]) == 0
        assert capsys.readouterr().out.splitlines() == lines

    def test_rpw(self, capsys):
        assert cli.main(["rpw", "--p1", "0.5", "--p2", "0.5", "--a1", "0", "--a2", "0"]) == 0
        d = json.loads(capsys.readouterr().out)
        assert json.dumps(d)
        assert cli.main(["rpw", "--p1", "0.9", "--p2", "0.9"]) == 2

    def test_limit(self, write, capsys):
        path = write("c.cfg", RPW_CFG + "[limit]\npaths = 20000\ngrid_points = 257\n")
        code = cli.main(["limit", path, "--seed", "1"])
        d = json.loads(capsys.readouterr().out)
        assert code == 0 and d["comparison"]["verdict"] == "PASS"

    def test_mc_pass_and_fail(self, write, tmp_path, capsys):
        csv_path = tmp_path / "s.csv"
        path = write("c.cfg", RPW_CFG + f"tolerance = 0.5\n[output]\ncsv = {csv_path}\n")
        assert cli.main(["mc", path]) == 0
        assert json.loads(capsys.readouterr().out)["verdict"] == "PASS"
        assert csv_path.read_text().startswith("horizon,component")
        tight = write("t.cfg", RPW_CFG + "tolerance = 1e-6\n")
        assert cli.main(["mc", tight]) == 3

    def test_mc_regime_mismatch(self, write):
        path = write("c.cfg", RPW_CFG + "regime = critical\n")
        assert cli.main(["mc", path]) == 2

    def test_numeric_failure_exit(self, write, monkeypatch):
        from gfurn.exceptions import NumericalError

        def boom(*a, **k):
            raise NumericalError("forced")
        monkeypatch.setattr(cli, "theoretical_gamma", boom)
        assert cli.main(["gamma", write("c.cfg", RPW_CFG)]) == 4

    def test_mc_byte_identical_across_threads(self, write, tmp_path):
        path = write("c.cfg", RPW_CFG)
        outs = []
        for threads in ("1", "4"):
            out = tmp_path / f"r{threads}.json"
            cli.main(["mc", path, "--deterministic", "--threads", threads, "--out", str(out)])
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
