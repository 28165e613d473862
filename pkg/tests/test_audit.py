"""Trajectory verification: consistency, passivity, regulation, comparison."""

import numpy as np
import pytest

from phconv import audit
from phconv.errors import AuditError, ComparisonError
from phconv.plant import GridProfile, GridSegment, LoadProfile
from phconv.scenario_io import free_decay_scenario
from phconv.sim_engine import (ControllerConfig, Scenario, TrajectoryRecord,
                               run_scenario)
from conftest import short_scenario


@pytest.fixture(scope="module")
def free_decay(plant):
    return run_scenario(free_decay_scenario(plant, duration=0.2))


class TestEnergyConsistency:

    def test_free_dissipative_decay_self_consistency(self, free_decay):
        rep = audit.energy_consistency_check(free_decay.trajectory)
        assert rep.max_rel_mismatch <= 1e-4

    def test_constant_trajectory_hits_floor_normalization(self, steady_run):
        """At equilibrium both sides are ~0; the mismatch is measured
        against the floor rate, not 0/0."""
        rep = audit.energy_consistency_check(steady_run.trajectory)
        assert rep.peak_rate >= 1e-5 * 500e3 * 0.999
        assert rep.max_rel_mismatch <= 1e-4

    def test_corrupted_sample_is_flagged(self, plant):
        res = run_scenario(short_scenario(plant, duration=0.02))
        traj = res.trajectory
        k = traj.n_records // 2
        # a 1 % bump in one stored-energy sample breaks the local balance
        cols = {n: v.copy() for n, v in traj.columns.items()}
        cols["energy_cl"][k] *= 1.01
        bad = TrajectoryRecord(cols, dict(traj.meta))
        rep = audit.energy_consistency_check(bad)
        flagged = rep.flagged_indices(1e-4)
        assert rep.max_rel_mismatch > 1e-2
        assert any(abs(int(j) - k) <= 1 for j in flagged)

    def test_too_short_trajectory_rejected(self, plant):
        res = run_scenario(short_scenario(plant, duration=0.0))
        with pytest.raises(AuditError):
            audit.energy_consistency_check(res.trajectory)

    def test_event_windows_are_excluded(self, plant):
        load = LoadProfile.from_steps([(0.0, 0.8), (0.01, 1.2)], s_base=plant.s_base)
        sc = Scenario(name="step", duration=0.03, plant=plant,
                      control=ControllerConfig(kind="ph"),
                      grid=GridProfile.steady(60.0), load=load, decimation=1)
        res = run_scenario(sc)
        assert res.consistency.n_excluded > 0
        assert res.consistency.max_rel_mismatch <= 1e-4


class TestPassivity:

    def test_supply_bound_holds_on_steady_run(self, steady_run):
        rep = audit.passivity_check(steady_run.trajectory)
        assert rep.passed
        assert rep.n_violations == 0

    def test_zero_supply_run_has_monotone_storage(self, free_decay):
        ok, worst = audit.storage_monotone_check(free_decay.trajectory,
                                                 rel_tol=1e-9)
        assert ok
        rep = audit.passivity_check(free_decay.trajectory)
        assert rep.n_violations == 0

    def test_violations_are_reported_not_raised(self, steady_run):
        cols = {n: v.copy() for n, v in steady_run.trajectory.columns.items()}
        cols["hdot_cl"] = cols["hdot_cl"] + cols["p_supply"].max() + 10e3
        bad = TrajectoryRecord(cols, dict(steady_run.trajectory.meta))
        rep = audit.passivity_check(bad)
        assert not rep.passed
        assert rep.n_violations == bad.n_records
        assert rep.max_excess > 0

    def test_loop_dissipation_series_are_nonnegative(self, steady_run):
        rep = audit.passivity_check(steady_run.trajectory)
        assert np.all(rep.diss_voltage_loop >= 0.0)
        assert np.all(rep.diss_current_loop >= 0.0)

    def test_pi_run_has_no_controller_series(self, plant):
        res = run_scenario(short_scenario(plant, duration=0.01, controller="pi"))
        rep = audit.passivity_check(res.trajectory)
        assert rep.diss_voltage_loop is None and rep.diss_current_loop is None


class TestRegulation:

    def test_constant_voltage(self, steady_run):
        rep = audit.regulation_metrics(steady_run.trajectory, band=0.02)
        assert rep.max_deviation == pytest.approx(0.0, abs=1e-6)
        assert rep.recovered and rep.recovery_time == 0.0

    def test_deviation_and_recovery_bookkeeping(self):
        t = np.linspace(0.0, 1.0, 101)
        v = np.ones_like(t)
        v[(t >= 0.5) & (t < 0.6)] = 0.96      # 4 % dip after the event
        cols = {"t": t, "v_dc_pu": v}
        traj = TrajectoryRecord(cols, {"scenario": "synthetic"})
        rep = audit.regulation_metrics(traj, band=0.02, event_times=(0.5,))
        assert rep.max_deviation == pytest.approx(0.04)
        assert rep.undershoot == pytest.approx(0.04)
        assert rep.overshoot == 0.0
        assert rep.recovered
        assert rep.recovery_time == pytest.approx(0.1, abs=0.011)

    def test_unrecovered_is_marked(self):
        t = np.linspace(0.0, 1.0, 11)
        v = np.full_like(t, 0.9)
        traj = TrajectoryRecord({"t": t, "v_dc_pu": v}, {})
        rep = audit.regulation_metrics(traj, band=0.02)
        assert not rep.recovered and rep.recovery_time is None

    def test_empty_trajectory_is_wellformed(self, plant):
        res = run_scenario(short_scenario(plant, duration=0.0))
        rep = audit.regulation_metrics(res.trajectory, band=0.02)
        assert np.isnan(rep.max_deviation) and not rep.recovered


class TestCompareRuns:

    def test_identical_runs_have_zero_deltas(self, plant, steady_run):
        table = audit.compare_runs(steady_run, steady_run)
        for name, (a, b, d) in table.rows.items():
            if not np.isnan(d):
                assert d == 0.0
        assert "max_dev_pu" in table.as_text()

    def test_scenario_mismatch_rejected(self, plant, steady_run):
        other = run_scenario(
            short_scenario(plant, duration=0.01).__class__(
                **{**short_scenario(plant, duration=0.01).__dict__,
                   "name": "other"}))
        with pytest.raises(ComparisonError):
            audit.compare_runs(steady_run, other)

    def test_diverged_baseline_still_renders(self, plant):
        """A PI run pushed past its feasibility is marked unrecovered but
        the comparison table still renders."""
        load = LoadProfile.from_steps([(0.0, 1.0), (0.005, 6.0)],
                                      s_base=plant.s_base)
        sc_ph = Scenario(name="stress", duration=0.08, plant=plant,
                         control=ControllerConfig(kind="ph"),
                         grid=GridProfile.steady(60.0), load=load, decimation=5)
        sc_pi = Scenario(name="stress", duration=0.08, plant=plant,
                         control=ControllerConfig(kind="pi"),
                         grid=GridProfile.steady(60.0), load=load, decimation=5)
        r_ph = run_scenario(sc_ph, with_audit=False)
        r_pi = run_scenario(sc_pi, with_audit=False)
        table = audit.compare_runs(r_ph, r_pi)
        text = table.as_text()
        assert "max_dev_pu" in text and "stress" in text
