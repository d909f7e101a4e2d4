"""Generators, trials, sweeps, the scalar recursion study, persistence."""

import dataclasses
import json
import math

import numpy as np
import pytest

from fedsam.algorithms import OFF_POLICY_TD_TABULAR, ON_POLICY_TD_LFA, Q_LEARNING, theory_constants
from fedsam.harness import (
    Cell,
    ExperimentSpec,
    GeneratorParams,
    generate_instance,
    iid_scalar_validation,
    iid_second_moment_exact,
    instance_from_files,
    k_trend_z,
    load_results,
    persist,
    run_trial,
    spearman_trend,
    speedup_slope,
    sub_instance,
    sweep,
)
from fedsam.mdp import policy_transition_matrix, stationary_distribution

SMALL = GeneratorParams(n_states=4, n_actions=2, branching=2, gamma=0.6, d=2, n_step=1, n_agents=4)


def small_spec(**kw) -> ExperimentSpec:
    base = dict(
        name="unit",
        kind=Q_LEARNING,
        params=SMALL,
        n_agents_grid=[1, 4],
        sync_periods=[1, 8],
        alpha_grid=[0.1],
        horizon=200,
        replications=3,
        master_seed=5,
    )
    base.update(kw)
    return ExperimentSpec(**base)


def trial_key(t):
    d = dataclasses.asdict(t)
    d.pop("wall_ms")
    return d


class TestGenerator:
    def test_generated_chains_are_ergodic_for_all_seeds(self):
        for seed in range(100):
            inst = generate_instance(OFF_POLICY_TD_TABULAR, SMALL, seed=seed)
            for behavior in inst.behaviors:
                mu = stationary_distribution(policy_transition_matrix(inst.mdp, behavior))
                assert mu.min() > 0

    def test_features_have_full_rank_for_all_seeds(self):
        for seed in range(100):
            inst = generate_instance(ON_POLICY_TD_LFA, SMALL, seed=seed)
            assert np.linalg.matrix_rank(inst.features.phi, tol=1e-10) == SMALL.d

    def test_importance_ratios_bounded_by_coverage_floor(self):
        params = GeneratorParams(n_states=4, n_actions=4, branching=2, gamma=0.6, eps_cov=0.05, n_agents=6)
        for seed in range(20):
            inst = generate_instance(OFF_POLICY_TD_TABULAR, params, seed=seed)
            tc = theory_constants(inst)
            assert tc.imax <= 1.0 / 0.05
            for behavior in inst.behaviors:
                assert behavior.probs.min() > 0

    def test_agents_get_distinct_behaviors(self):
        inst = generate_instance(OFF_POLICY_TD_TABULAR, SMALL, seed=3)
        probs = [b.probs.tobytes() for b in inst.behaviors]
        assert len(set(probs)) == len(probs)

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError, match="d must not exceed"):
            GeneratorParams(n_states=3, d=5).validate()

    def test_round_trip_through_files(self, tmp_path):
        inst = generate_instance(OFF_POLICY_TD_TABULAR, SMALL, seed=9)
        (tmp_path / "mdp.json").write_text(inst.mdp.to_json())
        policies = {
            "target": inst.target.probs.tolist(),
            "behaviors": [b.probs.tolist() for b in inst.behaviors],
        }
        (tmp_path / "policies.json").write_text(json.dumps(policies))
        clone = instance_from_files(
            OFF_POLICY_TD_TABULAR, tmp_path / "mdp.json", tmp_path / "policies.json",
            n_step=SMALL.n_step,
        )
        assert np.array_equal(clone.mdp.transition, inst.mdp.transition)
        assert np.array_equal(clone.fixed_point, inst.fixed_point)


class TestRunTrial:
    def test_zero_step_size_keeps_initial_error(self):
        inst = generate_instance(Q_LEARNING, SMALL, seed=1)
        cell = Cell(n_agents=4, sync_period=4, alpha=0.0, horizon=50)
        result = run_trial(inst, cell, replication=0, master_seed=2)
        init_err = float(np.abs(inst.flat_fixed_point()).max())
        assert result.mse == init_err**2
        assert result.final_sq_error == init_err**2

    def test_same_cell_and_seed_reproduce_identically(self):
        inst = generate_instance(Q_LEARNING, SMALL, seed=1)
        cell = Cell(n_agents=4, sync_period=2, alpha=0.1, horizon=150)
        a = run_trial(inst, cell, replication=3, master_seed=7)
        b = run_trial(inst, cell, replication=3, master_seed=7)
        assert trial_key(a) == trial_key(b)

    def test_divergence_recorded_not_raised(self):
        inst = generate_instance(Q_LEARNING, SMALL, seed=1)
        cell = Cell(n_agents=2, sync_period=1, alpha=1e6, horizon=200)
        result = run_trial(inst, cell, replication=0, master_seed=3)
        assert result.status == "diverged"
        assert math.isnan(result.mse)

    def test_single_node_five_state_td_converges(self):
        params = GeneratorParams(n_states=5, n_actions=2, branching=2, gamma=0.3, d=2, n_step=1, n_agents=1)
        inst = generate_instance(OFF_POLICY_TD_TABULAR, params, seed=2024)
        cell = Cell(n_agents=1, sync_period=1, alpha=0.01, horizon=200_000)
        result = run_trial(inst, cell, replication=0, master_seed=11, checkpoint_stride=5000)
        assert result.status == "ok"
        assert result.final_sq_error <= 0.05**2
        assert not result.late_blowup()

    def test_late_blowup_flag(self):
        inst = generate_instance(Q_LEARNING, SMALL, seed=1)
        cell = Cell(n_agents=1, sync_period=1, alpha=0.05, horizon=2000)
        result = run_trial(inst, cell, replication=0, master_seed=5, checkpoint_stride=50)
        assert not result.late_blowup()
        rising = dataclasses.replace(
            result, error_series=list(np.linspace(0.1, 2.0, len(result.error_series)))
        )
        assert rising.late_blowup()


class TestSweep:
    def test_single_cell_single_rep_reduces_to_trial(self):
        spec = small_spec(n_agents_grid=[2], sync_periods=[4], replications=1)
        result = sweep(spec)
        assert len(result.trials) == 1
        st = result.cell_stats[0]
        assert st.mean_mse == result.trials[0].mse
        assert st.se_mse == 0.0
        assert not st.invalid

    def test_diverged_majority_marks_cell_invalid(self):
        spec = small_spec(alpha_grid=[1e6], n_agents_grid=[2], sync_periods=[1], replications=4)
        result = sweep(spec)
        assert all(st.invalid for st in result.cell_stats)
        assert all(t.status == "diverged" for t in result.trials)

    def test_row_count_is_cells_times_replications(self):
        spec = small_spec()
        result = sweep(spec)
        assert len(result.trials) == len(spec.cells()) * spec.replications

    def test_parallel_equals_sequential(self, tmp_path):
        spec = small_spec()
        res_seq = sweep(spec, workers=1)
        res_par = sweep(spec, workers=4)
        p1 = persist(res_seq, tmp_path / "seq", name="x")
        p2 = persist(res_par, tmp_path / "par", name="x")
        for key in ("meta", "results", "series"):
            assert p1[key].read_bytes() == p2[key].read_bytes()

    def test_k_rule_resolves_to_t_over_n(self):
        spec = small_spec(sync_periods="T_over_N", n_agents_grid=[1, 4], horizon=200)
        cells = spec.cells()
        assert {(c.n_agents, c.sync_period) for c in cells} == {(1, 200), (4, 50)}

    def test_unknown_spec_keys_rejected(self):
        with pytest.raises(ValueError, match="unknown experiment keys"):
            ExperimentSpec.from_dict({"nme": "typo"})
        with pytest.raises(ValueError, match="unknown generator keys"):
            ExperimentSpec.from_dict({"params": {"n_state": 3}})


class TestTrendEstimators:
    def test_speedup_slope_exact_on_inverse_law(self):
        ns = [1, 2, 4, 8, 16]
        mses = [3.7 / n for n in ns]
        slope, half = speedup_slope(ns, mses)
        assert abs(slope + 1.0) <= 1e-10
        assert half <= 1e-10

    def test_speedup_slope_reports_uncertainty(self):
        slope, half = speedup_slope([1, 2, 4, 8], [1.0, 0.6, 0.2, 0.151])
        assert half > 0

    def test_spearman_monotone(self):
        rho, z = spearman_trend([1, 2, 3, 4, 5], [2, 4, 5, 9, 11])
        assert rho == pytest.approx(1.0, abs=1e-12)
        assert z == pytest.approx(2.0, abs=1e-12)

    def test_spearman_handles_ties(self):
        rho, _ = spearman_trend([1, 1, 2, 2], [3, 3, 5, 5])
        assert rho == pytest.approx(1.0, abs=1e-12)

    def test_k_trend_on_sweep(self):
        spec = small_spec(
            n_agents_grid=[4], sync_periods=[1, 16], alpha_grid=[0.4], horizon=256, replications=20
        )
        result = sweep(spec)
        rho, z = k_trend_z(result, 4, 0.4)
        assert -1.0 <= rho <= 1.0

    def test_k_curve_sorted_by_sync_period(self):
        from fedsam.harness import k_curve

        spec = small_spec(
            n_agents_grid=[4], sync_periods=[16, 1, 4], alpha_grid=[0.2], horizon=64, replications=2
        )
        result = sweep(spec)
        curve = k_curve(result, 4, 0.2)
        assert [st.sync_period for st in curve] == [1, 4, 16]


class TestIidScalarValidation:
    def test_t_zero_is_exact(self):
        report = iid_scalar_validation(ts=(0,), replications=1000, seed=1)
        assert report.empirical[0] == 1.0
        assert report.exact[0] == 1.0
        assert report.max_std_dev == 0.0

    def test_steady_state_arithmetic(self):
        # alpha sigma^2 / (2 - alpha) at alpha=0.1, sigma=1
        assert iid_second_moment_exact(0.1, 1.0, 1.0, 10**9) == pytest.approx(
            0.1 / 1.9, abs=1e-12
        )
        assert 0.1 / 1.9 == pytest.approx(0.05263157894736842, abs=1e-17)

    def test_finite_time_value_matches_closed_form(self):
        # t = 50: (1 - tail) 0.9^100 + tail
        tail = 0.1 / 1.9
        expected = (1 - tail) * 0.9**100 + tail
        assert iid_second_moment_exact(0.1, 1.0, 1.0, 50) == pytest.approx(expected, abs=1e-15)
        report = iid_scalar_validation(ts=(50,), replications=30_000, seed=2)
        assert abs(report.empirical[0] - expected) <= 3 * report.std_errors[0]

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            iid_scalar_validation(alpha=1.5)


class TestPersistence:
    def test_round_trip_reproduces_trials(self, tmp_path):
        spec = small_spec(checkpoint_stride=20)
        result = sweep(spec)
        persist(result, tmp_path, name="rt")
        meta, trials = load_results(tmp_path, "rt")
        assert meta["spec"] == spec.to_dict()
        originals = sorted(
            result.trials,
            key=lambda t: (t.n_agents, t.sync_period, t.alpha, t.horizon, t.replication),
        )
        assert len(trials) == len(originals)
        for loaded, orig in zip(trials, originals):
            assert loaded.mse == orig.mse
            assert loaded.final_sq_error == orig.final_sq_error
            assert loaded.t_hat == orig.t_hat
            assert loaded.checkpoint_ts == orig.checkpoint_ts
            assert loaded.error_series == orig.error_series
            assert loaded.omega_series == orig.omega_series

    def test_rerun_writes_identical_bytes(self, tmp_path):
        spec = small_spec()
        p1 = persist(sweep(spec), tmp_path / "a", name="d")
        p2 = persist(sweep(spec), tmp_path / "b", name="d")
        for key in ("meta", "results", "series"):
            assert p1[key].read_bytes() == p2[key].read_bytes()

    def test_results_row_count(self, tmp_path):
        spec = small_spec()
        paths = persist(sweep(spec), tmp_path, name="rows")
        rows = paths["results"].read_text().strip().split("\n")
        assert len(rows) - 1 == len(spec.cells()) * spec.replications


class TestSubInstance:
    def test_restriction_keeps_oracle_and_beta(self):
        inst = generate_instance(ON_POLICY_TD_LFA, SMALL, seed=4)
        small = sub_instance(inst, 2)
        assert small.n_agents == 2
        assert np.array_equal(small.fixed_point, inst.fixed_point)
        assert small.beta == inst.beta

    def test_cannot_grow(self):
        inst = generate_instance(Q_LEARNING, SMALL, seed=4)
        with pytest.raises(ValueError):
            sub_instance(inst, 10)
