from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from dpdgd.analysis import (
    MissingPerAgentData,
    NotAStrictSaddle,
    assert_contraction,
    compute_metrics,
    consensus_error,
    escape_iterations_vs_stepsize,
    min_eigvec,
    mirror_noise,
    run_coupling_experiment,
)
from dpdgd.optimizer import RunConfig, StepsizeSchedule, mixing_update, run

PAPER_SCHEDULE = StepsizeSchedule.piecewise_paper(0.02, 500, 1.0)


class TestConsensusError:
    def test_identical_agents(self):
        assert consensus_error(np.ones((4, 3))) == 0.0

    def test_hand_computed(self):
        assert consensus_error(np.array([[0.0], [2.0]])) == pytest.approx(np.sqrt(2.0), abs=1e-15)

    def test_matches_stacked_oracle(self, rng):
        x = rng.standard_normal((6, 3)) * 4
        xbar = x.mean(axis=0)
        oracle = np.linalg.norm((x - xbar[None, :]).ravel())
        assert abs(consensus_error(x) - oracle) <= 1e-12


class TestComputeMetrics:
    def test_rows_match_trace(self, paper_problem, rpc5):
        cfg = RunConfig(problem=paper_problem, weights=rpc5, schedule=PAPER_SCHEDULE,
                        noise_variance=0.5, iterations=30, seed=2,
                        record_every=10, record_state=True)
        trace = run(cfg)
        rows = compute_metrics(trace, paper_problem)
        for rec, row in zip(trace.records, rows):
            assert row.k == rec.k
            assert row.consensus_error == pytest.approx(rec.consensus_error, abs=1e-15)
            assert row.opt_error_mean == pytest.approx(rec.opt_error_mean, abs=1e-15)
            assert row.grad_norm_mean >= 0.0

    def test_needs_states(self, paper_problem, rpc5):
        cfg = RunConfig(problem=paper_problem, weights=rpc5, schedule=PAPER_SCHEDULE,
                        noise_variance=0.5, iterations=10, seed=2, record_every=5)
        with pytest.raises(MissingPerAgentData):
            compute_metrics(run(cfg), paper_problem)


class TestContraction:
    def _trace(self, paper_problem, rpc5, **kw):
        cfg = RunConfig(problem=paper_problem, weights=rpc5, schedule=PAPER_SCHEDULE,
                        noise_variance=kw.get("variance", 0.5),
                        iterations=kw.get("iterations", 150), seed=kw.get("seed", 13),
                        record_every=kw.get("record_every", 1), record_state=True)
        return run(cfg)

    def test_holds_on_valid_trace(self, paper_problem, rpc5):
        report = assert_contraction(self._trace(paper_problem, rpc5), rpc5)
        assert report.ok
        assert report.pairs_checked == 150

    def test_averaging_matrix_trivial(self, paper_problem, complete5):
        cfg = RunConfig(problem=paper_problem, weights=complete5, schedule=PAPER_SCHEDULE,
                        noise_variance=0.5, iterations=20, seed=1,
                        record_every=1, record_state=True)
        report = assert_contraction(run(cfg), complete5)
        assert report.ok  # eta = 0: disagreement is wiped every step

    def test_corrupted_trace_reports_violation(self, paper_problem, rpc5):
        trace = self._trace(paper_problem, rpc5)
        trace.records[5] = dataclasses.replace(trace.records[5], gn_norm=0.0)
        report = assert_contraction(trace, rpc5)
        assert not report.ok
        assert report.violations[0].k == trace.records[5].k

    def test_requires_dense_recording(self, paper_problem, rpc5):
        with pytest.raises(MissingPerAgentData):
            assert_contraction(self._trace(paper_problem, rpc5, record_every=2), rpc5)
        cfg = RunConfig(problem=paper_problem, weights=rpc5, schedule=PAPER_SCHEDULE,
                        noise_variance=0.5, iterations=10, seed=1, record_every=1)
        with pytest.raises(MissingPerAgentData):
            assert_contraction(run(cfg), rpc5)


class TestMinEigvec:
    def test_picks_most_negative_direction(self):
        e1 = min_eigvec(np.diag([1.0, -2.0, 3.0]))
        assert np.allclose(np.abs(e1), [0.0, 1.0, 0.0])

    def test_sign_canonicalized(self):
        h = np.diag([-1.0, 5.0])
        e1 = min_eigvec(h)
        assert e1[0] > 0.0
        assert np.linalg.norm(e1) == pytest.approx(1.0, abs=1e-10)


class TestMirrorNoise:
    def test_flips_only_e1_component(self, rng):
        e1 = rng.standard_normal(3)
        e1 /= np.linalg.norm(e1)
        n = rng.standard_normal((5, 3))
        m = mirror_noise(n, e1)
        # e1 components negate, orthogonal components survive untouched
        assert np.abs(m @ e1 + n @ e1).max() <= 1e-12
        perp = (n - (n @ e1)[:, None] * e1[None, :]) - (m - (m @ e1)[:, None] * e1[None, :])
        assert np.abs(perp).max() <= 1e-12
        # the aggregate flips too
        assert np.abs(m.mean(0) @ e1 + n.mean(0) @ e1) <= 1e-12

    def test_one_step_difference_is_mixed_mirrored_noise(self, paper_problem, complete5, rng):
        # first-step hand expansion: x'1 - x''1 = -lam * W (N' - N'')
        saddle = paper_problem.refined_saddle()
        x0 = np.tile(saddle, (5, 1))
        e1 = min_eigvec(paper_problem.aggregated_hessian(saddle))
        n = rng.standard_normal((5, 2)) * 0.7
        lam = 0.02
        g = paper_problem.agent_gradients(x0)
        xa = mixing_update(complete5.w, x0, g + n, lam)
        xb = mixing_update(complete5.w, x0, g + mirror_noise(n, e1), lam)
        expected = -lam * complete5.w @ (n - mirror_noise(n, e1))
        assert np.abs((xa - xb) - expected).max() <= 1e-12


class TestCouplingExperiment:
    def test_zero_variance_never_escapes(self, paper_problem, complete5):
        res = run_coupling_experiment(
            paper_problem, complete5, paper_problem.refined_saddle(), PAPER_SCHEDULE,
            variance=0.0, runs=3, horizon=400, escape_radius=0.5, seed=77,
        )
        assert res.escape_count == 0
        assert res.iterations_to_escape == [None, None, None]

    def test_noise_escapes_quickly(self, paper_problem, complete5):
        res = run_coupling_experiment(
            paper_problem, complete5, paper_problem.refined_saddle(), PAPER_SCHEDULE,
            variance=0.5, runs=10, horizon=1000, escape_radius=0.5, seed=42,
        )
        assert res.escape_count == 10
        assert all(it is not None and it < 400 for it in res.iterations_to_escape)
        assert np.linalg.norm(res.e1) == pytest.approx(1.0, abs=1e-10)

    def test_rejects_non_saddle_start(self, paper_problem, complete5):
        with pytest.raises(NotAStrictSaddle):
            run_coupling_experiment(
                paper_problem, complete5, paper_problem.refined_minimum(), PAPER_SCHEDULE,
                variance=0.5, runs=2, horizon=100, escape_radius=0.5, seed=1,
            )

    def test_deterministic(self, paper_problem, complete5):
        kw = dict(variance=0.5, runs=4, horizon=600, escape_radius=0.5, seed=9)
        a = run_coupling_experiment(paper_problem, complete5,
                                    paper_problem.refined_saddle(), PAPER_SCHEDULE, **kw)
        b = run_coupling_experiment(paper_problem, complete5,
                                    paper_problem.refined_saddle(), PAPER_SCHEDULE, **kw)
        assert a.iterations_to_escape == b.iterations_to_escape


class TestEscapeGrid:
    def test_grid_shape_and_determinism(self, paper_problem, complete5):
        kw = dict(variances=[0.0, 0.5], stepsizes=[0.01, 0.02], runs=4,
                  horizon=800, escape_radius=0.5, seed=11)
        saddle = paper_problem.refined_saddle()
        a = escape_iterations_vs_stepsize(paper_problem, complete5, saddle, **kw)
        b = escape_iterations_vs_stepsize(paper_problem, complete5, saddle, **kw)
        assert a == b
        assert len(a) == 4
        # zero-variance column fully censored
        censored = [r for r in a if r["variance"] == 0.0]
        assert all(r["median_escape_iteration"] is None and r["escapes"] == 0 for r in censored)

    def test_larger_stepsize_escapes_no_slower(self, paper_problem, complete5):
        saddle = paper_problem.refined_saddle()
        rows = escape_iterations_vs_stepsize(
            paper_problem, complete5, saddle, variances=[0.5], stepsizes=[0.01, 0.02],
            runs=10, horizon=1500, escape_radius=0.5, seed=5,
        )
        med = {r["stepsize"]: r["median_escape_iteration"] for r in rows}
        assert med[0.01] is not None and med[0.02] is not None
        # doubling the stable stepsize must not slow escape by more than 1.5x
        assert med[0.02] <= 1.5 * med[0.01]
