import json

import numpy as np
import pytest

from gfurn.exceptions import (
    HorizonTooShort,
    RegimeMismatch,
    ShapeMismatch,
    ValidationError,
)
from gfurn.harness import (
    ExperimentConfig,
    checkpoints,
    compare,
    fluctuation_scale,
    lil_envelope,
    lil_envelope_value,
    mc_experiment,
    normality_check,
)
from gfurn.rules import PowerDecay, RpwParams, deterministic_rule, nonhomogeneous_wrapper, rpw_rule
from gfurn.spectral import CRITICAL, SUBCRITICAL

SIGMA = np.array([[2.0, 0.5], [0.5, 1.0]])


class TestCompare:
    def test_identical(self):
        v = compare(SIGMA, SIGMA, 0.01)
        assert v.passed and v.frobenius_rel == 0 and v.max_entry_rel == 0

    def test_scaled(self):
        v = compare(1.04 * SIGMA, SIGMA, 0.05)
        assert v.passed and v.frobenius_rel == pytest.approx(0.04)
        assert np.allclose(v.entry_rel, 0.04)
        w = compare(1.2 * SIGMA, SIGMA, 0.05)
        assert not w.passed and w.label == "FAIL"

    def test_null_entries(self):
        T = np.diag([1.0, 0.0])
        v = compare(np.array([[1.0, 1e-3], [1e-3, 1e-3]]), T, 0.05)
        assert np.isnan(v.entry_rel[1, 1]) and np.isnan(v.entry_rel[0, 1])
        assert v.entry_abs[1, 1] == pytest.approx(1e-3)
        d = v.to_dict()
        assert d["entry_rel"][1][1] is None and d["verdict"] == "PASS"
        json.dumps(d)

    def test_zero_theory(self):
        v = compare(np.full((2, 2), 1e-3), np.zeros((2, 2)), 0.01)
        assert v.passed and v.frobenius_rel == pytest.approx(2e-3)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            compare(np.eye(2), np.eye(3), 0.1)


class TestNormality:
    def test_gaussian_not_rejected(self, rng):
        X = rng.multivariate_normal(np.zeros(2), SIGMA, size=5000)
        res = normality_check(X, SIGMA)
        assert res["rank"] == 2 and not res["rejected"]

    def test_degenerate_direction(self, rng):
        z = rng.standard_normal(4000)
        X = np.column_stack([z, -z])
        res = normality_check(X, np.array([[1.0, -1.0], [-1.0, 1.0]]))
        assert res["rank"] == 1 and not res["rejected"]

    def test_wrong_law_rejected(self, rng):
        X = rng.exponential(size=(5000, 1)) - 1.0
        assert normality_check(X, np.eye(1))["rejected"]

    def test_zero_covariance(self):
        assert normality_check(np.zeros((10, 2)), np.zeros((2, 2))) is None


def test_fluctuation_scale():
    assert fluctuation_scale(100, SUBCRITICAL) == pytest.approx(0.1)
    assert fluctuation_scale(100, CRITICAL, 1) == pytest.approx(0.1 / np.log(100) ** 0.5)
    assert fluctuation_scale(100, CRITICAL, 2) == pytest.approx(0.1 / np.log(100) ** 1.5)


class TestConfigValidation:
    def test_bad_values(self):
        rule = rpw_rule(RpwParams(0.6, 0.6))
        with pytest.raises(ValidationError):
            ExperimentConfig(rule, [1, 1], [10], replicates=1)
        with pytest.raises(ValidationError):
            ExperimentConfig(rule, [1, 1], [10, 10], replicates=5)
        with pytest.raises(ValidationError):
            ExperimentConfig(rule, [1, 1], [10], replicates=5, tolerance=0)


class TestExperiment:
    def test_deterministic_rule_null_block(self):
        v = np.array([0.3, 0.7])
        cfg = ExperimentConfig(deterministic_rule(np.outer([1, 1], v)), v, [200, 800],
                               replicates=2000, master_seed=3)
        rep = mc_experiment(cfg)
        assert np.abs(rep.theoretical[:2, :2]).max() < 1e-15
        for C in rep.covariances:
            assert np.abs(C[:2, :2]).max() < 1e-20
        assert rep.passed

    def test_means_near_zero(self):
        cfg = ExperimentConfig(rpw_rule(RpwParams(0.6, 0.5)), [1.0, 1.0], [300, 3000],
                               replicates=4000, master_seed=5, tolerance=0.1)
        rep = mc_experiment(cfg)
        assert rep.mean_z[-1] < 4.0
        assert rep.passed
        assert not rep.normality[-1]["rejected"]

    def test_regime_mismatch(self):
        cfg = ExperimentConfig(rpw_rule(RpwParams(0.75, 0.75)), [1.0, 1.0], [100], replicates=10,
                               regime=SUBCRITICAL)
        with pytest.raises(RegimeMismatch):
            mc_experiment(cfg)

    def test_json_and_csv(self):
        cfg = ExperimentConfig(rpw_rule(RpwParams(0.6, 0.6)), [1.0, 1.0], [50, 100],
                               replicates=50, deterministic=True)
        rep = mc_experiment(cfg)
        d = json.loads(rep.to_json())
        assert "wall_clock_seconds" not in d and d["verdict"] in ("PASS", "FAIL")
        assert len(d["horizons"]) == 2
        lines = rep.to_csv().splitlines()
        assert lines[0] == "horizon,component,empirical,theoretical,rel_err"
        assert len(lines) == 1 + 2 * 10
        cfg.deterministic = False
        assert "wall_clock_seconds" in json.loads(mc_experiment(cfg).to_json())

    def test_reproducible_and_thread_independent(self):
        base = dict(rule=rpw_rule(RpwParams(0.7, 0.6)), Y0=[1.0, 2.0], horizons=[64, 256],
                    replicates=80, master_seed=11, deterministic=True)
        a = mc_experiment(ExperimentConfig(**base, threads=1)).to_json()
        b = mc_experiment(ExperimentConfig(**base, threads=3)).to_json()
        assert a == b
        c = mc_experiment(ExperimentConfig(**{**base, "master_seed": 12})).to_json()
        assert a != c

    def test_nonhomogeneous_diagnostics_inline(self):
        base = rpw_rule(RpwParams(0.6, 0.6))
        E = np.array([[0.2, -0.2], [-0.1, 0.1]])
        rule = nonhomogeneous_wrapper(base, PowerDecay(base.H, E, 0.9))
        cfg = ExperimentConfig(rule, [2.0, 2.0], [50, 200], replicates=40, deterministic=True)
        d = json.loads(mc_experiment(cfg).to_json())
        diag = d["assumption_diagnostics"]
        assert 0 < diag["growth_exponent"] < 0.5
        assert np.all(np.diff(diag["partial_sums"]) > 0)
        json.dumps(d, allow_nan=False)


class TestEnvelope:
    def test_envelope_values(self):
        assert lil_envelope_value(3.0) == pytest.approx(np.sqrt(6.0))
        n = 1e6
        assert lil_envelope_value(n) == pytest.approx(np.sqrt(2 * n * np.log(np.log(n))))
        c = lil_envelope_value(n, critical=True)
        assert c == pytest.approx(np.sqrt(2 * n * np.log(n)))  # log log log 1e6 < 1

    def test_checkpoints(self):
        pts = checkpoints(10**5, per_decade=50, start=10)
        assert pts[0] == 10 and pts[-1] == 10**5 and 150 <= pts.size <= 201
        assert np.all(np.diff(pts) > 0)

    def test_degenerate_urn_has_zero_envelope(self):
        # every row adds v, so Y_n - Y_0 = n v exactly
        v = np.array([0.25, 0.75])
        cfg = ExperimentConfig(deterministic_rule(np.outer([1, 1], v)), v, [10], replicates=3)
        rep = lil_envelope(cfg, ("Y", 1), n_max=(10**3, 10**5))
        assert np.all(rep.sups < 1e-12)  # zero up to float accumulation

    def test_horizon_too_short(self):
        cfg = ExperimentConfig(rpw_rule(RpwParams(0.6, 0.6)), [1.0, 1.0], [10], replicates=3)
        with pytest.raises(HorizonTooShort):
            lil_envelope(cfg, n_max=(10**3, 10**4))
        with pytest.raises(ValidationError):
            lil_envelope(cfg, component=("Z", 0))

    def test_envelope_bounded_small(self):
        cfg = ExperimentConfig(rpw_rule(RpwParams(0.7, 0.7)), [1.0, 1.0], [10], replicates=40)
        rep = lil_envelope(cfg, ("Y", 1), n_max=(10**3, 10**4), min_horizon=10**4)
        assert rep.sups.shape == (2, 40)
        assert np.all(rep.sups[1] >= rep.sups[0])
        assert 0.2 < rep.medians[-1] < 3.0
