"""Trajectory verification: energy-balance consistency, passivity margins
and voltage-regulation metrics.

The checks run on completed trajectories (all functions are pure).  The
consistency check compares the centered finite difference of the stored
closed-loop energy against the analytic energy rate; records whose
difference stencil touches an input discontinuity, or falls inside the
controller settle window right after one, are excluded from the metric
(the finite difference is not a valid derivative estimate across a
kink) and counted separately.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import AuditError, ComparisonError
from .sim_engine import RunResult, TrajectoryRecord

DEFAULT_SETTLE_WINDOW = 2e-3  # [s], used if the trajectory meta lacks one


# ---------------------------------------------------------------------------
# Energy-balance consistency
# ---------------------------------------------------------------------------

@dataclass
class ConsistencyReport:
    """Finite-difference vs analytic energy-rate comparison."""

    max_rel_mismatch: float      # max |fd - analytic| / peak |analytic|
    peak_rate: float             # normalization, max |analytic| on checked records [W]
    n_checked: int
    n_excluded: int
    worst_time: float
    mismatch: np.ndarray = field(repr=False)   # absolute mismatch per interior record [W]
    checked: np.ndarray = field(repr=False)    # mask of records that entered the metric

    def flagged_indices(self, tol_rel: float) -> np.ndarray:
        """Interior record indices whose mismatch exceeds tol_rel * peak."""
        bad = self.mismatch > tol_rel * max(self.peak_rate, 1e-30)
        return np.nonzero(bad & self.checked)[0] + 1


def _excluded_mask(t: np.ndarray, events: Sequence[float], kinks: Sequence[float],
                   settle: float) -> np.ndarray:
    """True where a centered stencil at t[k] is invalid.

    Around a value discontinuity the analytic rate jumps and the fast
    controller modes ring, so the window extends one stencil before and
    ``settle`` after the event.  Around a slope kink only the stencil
    width itself is excluded.
    """
    if len(t) < 3:
        return np.zeros(len(t), dtype=bool)
    dt = np.median(np.diff(t))
    out = np.zeros(len(t), dtype=bool)
    for te in events:
        out |= (t >= te - 2.0 * dt) & (t <= te + settle)
    for tk in kinks:
        out |= np.abs(t - tk) <= 2.0 * dt
    return out


def energy_consistency_check(traj: TrajectoryRecord,
                             settle_window: Optional[float] = None,
                             rate_floor: Optional[float] = None) -> ConsistencyReport:
    """Check that d(energy_cl)/dt matches the analytic rate.

    The mismatch is normalized by the peak analytic rate over the
    checked records, floored at 1e-5 of the power base: a settled
    trajectory has rates near zero where the residual is the integrator
    bias (fourth order in the step), not an accounting error.  On a
    smooth trajectory the mismatch is the second-order stencil error
    and shrinks at least fourfold when the record spacing halves.
    """
    if traj.n_records < 3:
        raise AuditError("need at least 3 records for a centered difference")
    t = traj.t
    h_cl = traj["energy_cl"]
    rate = traj["hdot_cl"]
    fd = (h_cl[2:] - h_cl[:-2]) / (t[2:] - t[:-2])
    mismatch = np.abs(fd - rate[1:-1])

    settle = settle_window if settle_window is not None else \
        traj.meta.get("settle_window", DEFAULT_SETTLE_WINDOW)
    excluded = _excluded_mask(t, traj.meta.get("event_times", ()),
                              traj.meta.get("kink_times", ()), settle)
    checked = ~excluded[1:-1]
    n_checked = int(np.sum(checked))
    if n_checked == 0:
        raise AuditError("all records fall in exclusion windows")

    floor = rate_floor if rate_floor is not None else \
        1e-5 * traj.meta.get("s_base", 1.0)
    peak = float(np.max(np.abs(rate[1:-1][checked])))
    denom = max(peak, floor)
    rel = mismatch[checked] / denom
    worst = int(np.argmax(rel))
    return ConsistencyReport(
        max_rel_mismatch=float(np.max(rel)),
        peak_rate=denom,
        n_checked=n_checked,
        n_excluded=int(traj.n_records - 2 - n_checked),
        worst_time=float(t[1:-1][checked][worst]),
        mismatch=mismatch,
        checked=checked,
    )


# ---------------------------------------------------------------------------
# Passivity
# ---------------------------------------------------------------------------

@dataclass
class PassivityReport:
    """Supply-rate bound check plus the emitted energy-rate series.

    The bound checked is ``hdot_cl <= supply + tol_abs`` at every
    record, with the exact analytic rate.  For runs under the
    energy-shaping controller the schematic loop-dissipation series
    (voltage-loop and current-loop squares) are attached as well; for
    the PI baseline only the physical terms apply and the controller
    series are None.
    """

    n_records: int
    n_violations: int
    max_excess: float            # worst hdot_cl - supply [W] (negative = margin)
    tol_abs: float               # [W]
    violation_times: np.ndarray = field(repr=False)
    margin: np.ndarray = field(repr=False)          # supply - hdot_cl [W]
    diss_voltage_loop: Optional[np.ndarray] = field(default=None, repr=False)
    diss_current_loop: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return self.n_violations == 0


def passivity_check(traj: TrajectoryRecord, tol_abs: Optional[float] = None) -> PassivityReport:
    """Count records where stored energy grows faster than the supply rate."""
    tol = tol_abs if tol_abs is not None else 1e-6 * traj.meta.get("s_base", 1.0)
    supply = traj["p_supply"]
    hdot_cl = traj["hdot_cl"]
    excess = hdot_cl - supply
    bad = excess > tol
    diss_v = diss_i = None
    gains = traj.meta.get("ph_gains")
    if gains is not None:
        e_v = traj["v_dc"] - gains["v_dc_ref"]
        ei_a = traj["i_a"] - traj["iref_filt_a"]
        ei_b = traj["i_b"] - traj["iref_filt_b"]
        diss_v = gains["k_v"] * e_v ** 2
        diss_i = gains["k_i"] * gains["l_f"] * (ei_a ** 2 + ei_b ** 2)
    return PassivityReport(
        n_records=traj.n_records,
        n_violations=int(np.sum(bad)),
        max_excess=float(np.max(excess)) if len(excess) else 0.0,
        tol_abs=tol,
        violation_times=traj.t[bad],
        margin=-excess,
        diss_voltage_loop=diss_v,
        diss_current_loop=diss_i,
    )


def storage_monotone_check(traj: TrajectoryRecord, rel_tol: float = 1e-9):
    """Verify the closed-loop storage never increases (zero-supply runs).

    Returns ``(ok, worst_rel_increase)`` where the increase per record
    pair is measured relative to the stored energy at the earlier
    record.
    """
    h_cl = traj["energy_cl"]
    if len(h_cl) < 2:
        return True, 0.0
    inc = np.diff(h_cl)
    ref = np.maximum(h_cl[:-1], 1e-30)
    worst = float(np.max(inc / ref))
    return worst <= rel_tol, worst


# ---------------------------------------------------------------------------
# Regulation metrics
# ---------------------------------------------------------------------------

@dataclass
class RegulationReport:
    """DC-bus voltage regulation summary, all deviations in p.u."""

    max_deviation: float         # max |v_dc - nominal| [p.u.]
    overshoot: float             # max positive deviation [p.u.]
    undershoot: float            # max negative deviation magnitude [p.u.]
    band: float                  # band used for recovery [p.u.]
    recovery_time: Optional[float]  # [s] from last event to permanent re-entry
    recovered: bool

    def row(self) -> dict:
        return {
            "max_dev_pu": self.max_deviation,
            "overshoot_pu": self.overshoot,
            "undershoot_pu": self.undershoot,
            "band_pu": self.band,
            "recovery_s": self.recovery_time if self.recovered else float("nan"),
            "recovered": float(self.recovered),
        }


def regulation_metrics(traj: TrajectoryRecord, band: float,
                       nominal: float = 1.0,
                       event_times: Sequence[float] = ()) -> RegulationReport:
    """Deviation and recovery of the per-unit DC voltage.

    Recovery is measured from the last input event (t = 0 if there is
    none) to the first time after which the voltage stays inside
    ``nominal +/- band`` for the rest of the record.
    """
    if traj.n_records == 0:
        return RegulationReport(float("nan"), float("nan"), float("nan"),
                                band, None, False)
    t = traj.t
    dev = traj["v_dc_pu"] - nominal
    max_dev = float(np.max(np.abs(dev)))
    overshoot = float(max(np.max(dev), 0.0))
    undershoot = float(max(np.max(-dev), 0.0))
    outside = np.abs(dev) > band
    if not np.any(outside):
        t_entry = t[0]
    elif outside[-1]:
        return RegulationReport(max_dev, overshoot, undershoot, band, None, False)
    else:
        t_entry = t[np.nonzero(outside)[0][-1] + 1]
    t_event = max((te for te in event_times if te <= t[-1]), default=t[0])
    return RegulationReport(
        max_dev, overshoot, undershoot, band,
        recovery_time=float(max(0.0, t_entry - t_event)),
        recovered=True,
    )


# ---------------------------------------------------------------------------
# Side-by-side comparison
# ---------------------------------------------------------------------------

_COMPARE_METRICS = ("max_dev_pu", "overshoot_pu", "undershoot_pu", "recovery_s")


@dataclass
class ComparisonTable:
    scenario: str
    label_a: str
    label_b: str
    rows: dict          # metric -> (value_a, value_b, delta)

    def as_text(self) -> str:
        w = 16
        lines = [
            f"scenario: {self.scenario}",
            f"{'metric':<{w}}{self.label_a:>{w}}{self.label_b:>{w}}{'delta':>{w}}",
        ]
        for name, (a, b, d) in self.rows.items():
            lines.append(f"{name:<{w}}{a:>{w}.6g}{b:>{w}.6g}{d:>{w}.6g}")
        return "\n".join(lines)


def compare_runs(run_a: RunResult, run_b: RunResult,
                 band: float = 0.02) -> ComparisonTable:
    """Paired regulation metrics of two runs of the same scenario."""
    name_a = run_a.trajectory.meta.get("scenario")
    name_b = run_b.trajectory.meta.get("scenario")
    if name_a != name_b:
        raise ComparisonError(
            f"cannot compare different scenarios: {name_a!r} vs {name_b!r}"
        )
    rows = {}
    rep_a = regulation_metrics(run_a.trajectory, band,
                               event_times=run_a.scenario.event_times).row()
    rep_b = regulation_metrics(run_b.trajectory, band,
                               event_times=run_b.scenario.event_times).row()
    for mname in _COMPARE_METRICS:
        a, b = rep_a[mname], rep_b[mname]
        rows[mname] = (a, b, b - a)
    rows["failed"] = (float(not run_a.ok), float(not run_b.ok),
                      float(run_a.ok) - float(run_b.ok))
    return ComparisonTable(
        scenario=name_a,
        label_a=run_a.trajectory.meta.get("controller", "a"),
        label_b=run_b.trajectory.meta.get("controller", "b"),
        rows=rows,
    )
