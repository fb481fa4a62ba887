import io

import numpy as np
import pytest

from gfurn.exceptions import InsufficientReplicates, MissingLog, NonpositiveInitialCount
from gfurn.rules import (
    PowerDecay,
    RpwParams,
    deterministic_rule,
    homogeneous_rule,
    multinomial_rule,
    nonhomogeneous_wrapper,
    rpw_rule,
)
from gfurn.spectral import spectral_analyze
from gfurn.urn import (
    Trajectory,
    conditional_cov_check,
    decompose,
    init_urn,
    martingale_tracks,
    replicate_trajectories,
    run,
    simulate,
    simulate_endpoints,
    step,
)

RPW = rpw_rule(RpwParams(0.5, 0.5))


class TestInit:
    def test_two_colors(self):
        s = init_urn([1, 1], RPW, 0)
        assert s.a == 2 and s.m == 0 and s.N.tolist() == [0, 0]

    def test_three_colors(self):
        assert init_urn([1, 1, 1], multinomial_rule([0.2, 0.3, 0.5]), 0).a == 3

    def test_nonpositive(self):
        with pytest.raises(NonpositiveInitialCount):
            init_urn([0, 1], RPW, 0)


class TestStep:
    def test_forced_deterministic(self):
        rule = deterministic_rule([[1.0, 0.0], [0.0, 1.0]])
        s = init_urn([2, 1], rule, 0)
        s = step(s, forced_type=0)
        assert s.Y.tolist() == [3.0, 1.0] and s.N.tolist() == [1, 0]

    def test_rpw_total_grows_by_one(self):
        traj = simulate(RPW, [1, 1], 500, 7)
        assert np.array_equal(traj.a, 2.0 + np.arange(501))

    def test_multinomial_two_step_enumeration(self):
        v = np.array([0.3, 0.7])
        rule = multinomial_rule(v)
        # all outcomes of two one-hot additions, weighted by v
        expect = sum(v[i] * v[j] * (np.eye(2)[i] + np.eye(2)[j]) for i in range(2) for j in range(2))
        assert np.allclose(expect, 2 * v)
        ends = np.array([simulate(rule, [1, 1], 2, s).final()[0] - 1 for s in range(20000)])
        assert np.allclose(ends.sum(axis=1), 2)
        se = ends.std(axis=0) / np.sqrt(len(ends))
        assert np.all(np.abs(ends.mean(axis=0) - expect) < 4 * se)


class TestRun:
    def test_empty(self):
        traj = simulate(RPW, [1, 1], 0, 3)
        Y, N = traj.final()
        assert Y.tolist() == [1.0, 1.0] and N.tolist() == [0, 0]
        assert decompose(traj, spectral_analyze(RPW.H)).y_residual == 0.0

    def test_same_seed_bit_identical(self):
        a = simulate(RPW, [1, 1], 3000, 42)
        b = simulate(RPW, [1, 1], 3000, 42)
        assert np.array_equal(a.draws, b.draws) and np.array_equal(a.rows, b.rows)
        c = simulate(RPW, [1, 1], 3000, 43)
        assert not np.array_equal(a.draws, c.draws)

    @pytest.mark.parametrize("rule", [RPW, rpw_rule(RpwParams(d1=([0, 0.3, 1], [0.2, 0.3, 0.5]),
                                                             d2=([0.5, 1.0], [0.4, 0.6]))),
                                      homogeneous_rule([([[2, 0, 1], [0, 1, 2]], [0.4, 0.6]),
                                                        ([[1, 1, 1]], [1.0]),
                                                        ([[0, 3, 0], [3, 0, 0]], [0.5, 0.5])])])
    def test_compiled_and_python_paths_agree(self, rule):
        Y0 = np.ones(rule.dim)
        fast = simulate(rule, Y0, 2000, 9)
        state = init_urn(Y0, rule, 9)
        draws = []
        for _ in range(2000):
            state = step(state)
            draws.append(state.last[0])
        assert draws == fast.draws.tolist()
        assert np.array_equal(state.Y, fast.final()[0])
        assert np.array_equal(state.N, fast.final()[1])

    def test_allocation_concentrates(self):
        fails = 0
        for seed in range(100):
            _, N = simulate(RPW, [1, 1], 10**4, seed).final()
            fails += not (0.4 < N[0] / 1e4 < 0.6)
        assert fails <= 2

    def test_checkpoint_stride(self):
        traj = run(init_urn([1, 1], RPW, 5), 1000, stride=64)
        assert traj.ck_steps[-1] == 1000 and traj.ck_steps[1] == 64
        assert traj.replay_matches_checkpoints()


class TestMartingales:
    def test_deterministic_m2_zero(self):
        traj = simulate(deterministic_rule([[0.2, 0.8], [0.6, 0.4]]), [1, 1], 300, 1)
        _, M2 = martingale_tracks(traj)
        assert np.all(M2 == 0)

    def test_single_color_m1_zero(self):
        rule = homogeneous_rule([([[1.0]], [1.0])])
        M1, _ = martingale_tracks(simulate(rule, [1.0], 50, 0))
        assert np.all(M1 == 0)

    def test_increments_mean_zero(self):
        trajs = list(replicate_trajectories(rpw_rule(RpwParams(0.7, 0.4)), [1, 1], 20, 10**4, 3))
        inc1 = np.array([np.diff(martingale_tracks(t)[0], axis=0) for t in trajs])
        inc2 = np.array([np.diff(martingale_tracks(t)[1], axis=0) for t in trajs])
        for inc in (inc1, inc2):
            m = inc.mean(axis=0)
            se = inc.std(axis=0, ddof=1) / np.sqrt(inc.shape[0])
            assert np.all(np.abs(m) <= 4 * se + 1e-15)

    def test_missing_log(self):
        traj = Trajectory(Y0=np.ones(2), draws=None, rows=None, H=RPW.H, V=RPW.V)
        with pytest.raises(MissingLog):
            martingale_tracks(traj)


class TestDecompose:
    @pytest.mark.parametrize("p", [0.5, 0.7])
    def test_rpw_exact(self, p):
        rule = rpw_rule(RpwParams(p, p))
        S = spectral_analyze(rule.H)
        for seed in range(5):
            r = decompose(simulate(rule, [1, 1], 1000, seed), S)
            assert r.y_residual <= 1e-8 and r.n_residual <= 1e-8

    def test_scaled_three_color_rule(self):
        rule = homogeneous_rule([([[2, 0, 1], [0, 1, 2]], [0.4, 0.6]),
                                 ([[1, 1, 1]], [1.0]),
                                 ([[0, 3, 0], [1, 0, 2], [3, 0, 0]], [0.2, 0.5, 0.3])])
        S = spectral_analyze(rule.H)
        r = decompose(simulate(rule, [1, 2, 3], 10**4, 0), S)
        assert r.y_residual <= 1e-8 and r.n_residual <= 1e-8

    def test_nonhomogeneous(self):
        base = rpw_rule(RpwParams(0.6, 0.6))
        E = np.array([[0.2, -0.2], [-0.2, 0.2]])
        rule = nonhomogeneous_wrapper(base, PowerDecay(base.H, E, 0.6))
        r = decompose(simulate(rule, [1, 1], 2000, 4), spectral_analyze(base.H))
        assert r.y_residual <= 1e-8 and r.n_residual <= 1e-8

    def test_fixed_point(self):
        v = np.array([0.3, 0.7])
        rule = deterministic_rule(np.outer([1, 1], v))
        traj = simulate(rule, v, 200, 0)
        n = np.arange(201)[:, None]
        assert np.allclose(traj.Y, n * v + v, atol=1e-12)
        r = decompose(traj, spectral_analyze(rule.H), keep_paths=True)
        assert r.y_residual <= 1e-10


class TestPersistence:
    def test_conservation_general_rule(self):
        rule = homogeneous_rule([([[2, 0], [0, 2]], [0.5, 0.5]), ([[1, 1]], [1.0])])
        traj = simulate(rule, [1, 1], 1000, 3)
        assert traj.a[-1] - traj.a[0] - traj.rows.sum() == 0.0

    def test_save_load_replay(self, tmp_path):
        rule = rpw_rule(RpwParams(0.7, 0.7))
        S = spectral_analyze(rule.H)
        traj = simulate(rule, [1, 1], 1500, 8)
        traj.save(tmp_path / "t.npz")
        back = Trajectory.load(tmp_path / "t.npz")
        assert back.replay_matches_checkpoints()
        assert decompose(back, S) == decompose(traj, S)

    def test_csv(self):
        traj = simulate(RPW, [1, 1], 5, 0)
        lines = traj.to_csv().strip().splitlines()
        assert lines[0] == "m,drawn_type,D_1,D_2,Y_1,Y_2,N_1,N_2,a"
        assert len(lines) == 7
        last = lines[-1].split(",")
        assert float(last[-1]) == 7.0
        buf = io.StringIO()
        traj.to_csv(buf)
        assert buf.getvalue().strip().splitlines() == lines


def test_lemma_rate_slope():
    """|Y_n/a_n - v| decays like n**-0.5 for rho = 0."""
    ns = [10**3, 10**4, 10**5]
    Y, _ = simulate_endpoints(RPW, [1, 1], ns, 200, 17)
    err = np.linalg.norm(Y / Y.sum(axis=2, keepdims=True) - 0.5, axis=2).mean(axis=0)
    slope = np.polyfit(np.log(ns), np.log(err), 1)[0]
    assert slope <= -0.5 + 0.1


def test_endpoints_independent_of_threads():
    a = simulate_endpoints(RPW, [1, 1], [10, 100], 50, 5, threads=1)
    b = simulate_endpoints(RPW, [1, 1], [10, 100], 50, 5, threads=4)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    traj = simulate(RPW, [1, 1], 100, np.random.Generator(np.random.Philox(
        np.random.SeedSequence(5, spawn_key=(3,)))))
    assert np.array_equal(a[0][3, 1], traj.final()[0])


class TestCovCheck:
    def test_deterministic_m2_zero(self):
        rule = deterministic_rule([[0.2, 0.8], [0.6, 0.4]])
        rep = conditional_cov_check(replicate_trajectories(rule, [1, 1], 100, 5, 0))
        assert np.all(rep.m2_realized == 0) and np.all(rep.cross_mean == 0)

    def test_needs_two(self):
        with pytest.raises(InsufficientReplicates):
            conditional_cov_check(replicate_trajectories(RPW, [1, 1], 10, 1, 0))

    def test_orthogonality_and_rates(self):
        rep = conditional_cov_check(replicate_trajectories(RPW, [1, 1], 500, 400, 2))
        assert rep.max_cross_z < 4
        assert rep.m1_rel_error < 0.05
        assert rep.m2_rel_error < 0.05
        assert np.allclose(rep.m2_conditional, rep.sigma2)
