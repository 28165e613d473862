"""Deterministic fixed-step integration of the closed loop.

One scenario is integrated with classical RK4 at a fixed step; events
(load steps, grid sags) enter purely through the time-varying profiles,
which are sampled at the RK4 sub-stage times.  The integration loop
works on plain float tuples for speed and records raw states; every
derived quantity (node voltage, converter command, energies, energy
rates, flags) is recomputed afterwards in one vectorized pass over the
records using the same module-level formulas, so the audit can
cross-check the loop against the analytic model.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import controllers, ph_core, plant
from .controllers import PhControllerGains, PiControllerGains
from .errors import GridCollapseError, PhconvError, ScenarioError
from .ph_core import EnergyState
from .plant import GridProfile, LoadProfile, PlantParams

log = logging.getLogger("phconv")


# ---------------------------------------------------------------------------
# Scenario definition
# ---------------------------------------------------------------------------

def default_ph_gains(params: PlantParams, h: float) -> PhControllerGains:
    """Default energy-shaping gains tied to the plant and step size."""
    return PhControllerGains(
        tau_d=10.0 * h,
        v_dc_ref=params.v_base_dc,
        v_ac_min=0.05 * params.nominal_peak,
    )


def default_pi_gains(params: PlantParams) -> PiControllerGains:
    return PiControllerGains(v_dc_ref=params.v_base_dc)


@dataclass(frozen=True)
class ControllerConfig:
    """Which controller closes the loop and with what gains.

    kind is "ph" (energy shaping), "pi" (cascaded-PI baseline) or
    "none" (converter gated off, e = 0; used for free-decay audits).

    tau_meas is the time constant of the AC-voltage measurement
    conditioning filter [s].  The filter runs in the synchronous frame
    of the known grid angle, so it passes the rotating fundamental with
    zero steady-state error while cutting the fast feedback path from
    the converter voltage back into the reference generator (the node
    voltage responds algebraically to e in the reduced model, and an
    unfiltered measurement would close that path with gain above one).
    None resolves to max(1 ms, 10 * tau_d).
    """

    kind: str = "ph"
    ph: Optional[PhControllerGains] = None
    pi: Optional[PiControllerGains] = None
    tau_meas: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("ph", "pi", "none"):
            raise ScenarioError(f"unknown controller kind {self.kind!r}")


@dataclass(frozen=True)
class Scenario:
    """A complete, self-contained simulation case."""

    name: str
    duration: float                  # [s]
    plant: PlantParams
    control: ControllerConfig
    grid: GridProfile
    load: LoadProfile
    h: float = 10e-6                 # integration step [s]
    decimation: int = 10             # record every decimation-th step
    init: object = "equilibrium"     # "equilibrium" | "cold" | EnergyState

    def __post_init__(self):
        if self.h <= 0:
            raise ScenarioError("step size must be positive")
        if self.duration < 0 or (0 < self.duration < self.h):
            raise ScenarioError("duration must be 0 or at least one step")
        if int(self.decimation) < 1:
            raise ScenarioError("decimation must be a positive integer")
        if isinstance(self.init, str) and self.init not in ("equilibrium", "cold"):
            raise ScenarioError(f"unknown init mode {self.init!r}")

    def resolved_ph_gains(self) -> PhControllerGains:
        return self.control.ph if self.control.ph is not None \
            else default_ph_gains(self.plant, self.h)

    def resolved_pi_gains(self) -> PiControllerGains:
        return self.control.pi if self.control.pi is not None \
            else default_pi_gains(self.plant)

    def resolved_tau_meas(self) -> float:
        if self.control.tau_meas is not None:
            return self.control.tau_meas
        tau_d = self.resolved_ph_gains().tau_d if self.control.kind == "ph" \
            else 10.0 * self.h
        return max(1.5e-4, 1.5 * tau_d)

    @property
    def event_times(self) -> tuple[float, ...]:
        """Times where an input is discontinuous in value."""
        ev = set(self.grid.event_times)
        if self.load.kind == "steps":
            ev.update(self.load.event_times)
        return tuple(sorted(t for t in ev if 0.0 < t <= self.duration))

    @property
    def kink_times(self) -> tuple[float, ...]:
        """Times where an input is continuous but has a slope break."""
        if self.load.kind == "sampled":
            return tuple(t for t in self.load.times if 0.0 < t <= self.duration)
        return ()


# Fixed trajectory column schema; the CSV writer and the schema test
# both key off this list.
COLUMN_ORDER = [
    "t",
    "flux_a", "flux_b", "q_dc",
    "ctl_int_v", "ctl_int_ia", "ctl_int_ib",
    "iref_filt_a", "iref_filt_b", "vac_meas_a", "vac_meas_b",
    "vg_a", "vg_b", "vac_a", "vac_b", "e_a", "e_b",
    "i_a", "i_b", "iref_a", "iref_b",
    "v_dc", "v_dc_pu", "i_conv", "i_load", "i_conv_ref", "p_ref", "p_load",
    "energy_ac", "energy_dc", "energy_ctl", "energy_tot", "energy_cl",
    "p_supply", "p_diss_grid", "p_diss_filter", "p_conv_loss", "p_load_draw",
    "hdot_tot", "hdot_ctl", "hdot_cl",
    "flag_cpl_clamp", "flag_ref_limit",
]


class TrajectoryRecord:
    """Column-oriented record of one run.

    ``columns`` maps each name in COLUMN_ORDER to an equal-length float
    array; ``meta`` carries the scenario context the audit needs
    (controller kind, gains, bases, event times).
    """

    def __init__(self, columns: dict, meta: dict):
        self.columns = columns
        self.meta = meta
        n = {len(v) for v in columns.values()}
        if len(n) > 1:
            raise ScenarioError("trajectory columns have unequal lengths")
        ts = columns.get("t")
        if ts is not None and len(ts) > 1 and np.any(np.diff(ts) <= 0):
            raise ScenarioError("trajectory time must be strictly increasing")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    @property
    def t(self) -> np.ndarray:
        return self.columns["t"]

    @property
    def n_records(self) -> int:
        return len(self.columns["t"])

    def thinned(self, stride: int) -> "TrajectoryRecord":
        """Every stride-th record (last record kept), same schema."""
        if stride <= 1:
            return self
        n = self.n_records
        idx = list(range(0, n, stride))
        if idx and idx[-1] != n - 1:
            idx.append(n - 1)
        cols = {k: v[idx] for k, v in self.columns.items()}
        return TrajectoryRecord(cols, dict(self.meta))


# ---------------------------------------------------------------------------
# Generic RK4
# ---------------------------------------------------------------------------

def rk4_step(f, x, t, h):
    """One classical 4th-order Runge-Kutta step for dx/dt = f(t, x).

    x may be a numpy array or a tuple of floats; the result has the
    same type.  Deterministic: identical inputs give identical output.
    """
    if isinstance(x, np.ndarray):
        k1 = f(t, x)
        k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = f(t + h, x + h * k3)
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    k1 = f(t, x)
    x2 = tuple(xi + 0.5 * h * ki for xi, ki in zip(x, k1))
    k2 = f(t + 0.5 * h, x2)
    x3 = tuple(xi + 0.5 * h * ki for xi, ki in zip(x, k2))
    k3 = f(t + 0.5 * h, x3)
    x4 = tuple(xi + h * ki for xi, ki in zip(x, k3))
    k4 = f(t + h, x4)
    return tuple(
        xi + (h / 6.0) * (a + 2.0 * b + 2.0 * c + d)
        for xi, a, b, c, d in zip(x, k1, k2, k3, k4)
    )


# ---------------------------------------------------------------------------
# Closed-loop right-hand side (scalar hot path)
# ---------------------------------------------------------------------------

# raw state layouts; vf_d/vf_q are the synchronous-frame components of
# the conditioned AC voltage measurement
STATE_NAMES = {
    "ph": ("flux_a", "flux_b", "q_dc", "ctl_int_v", "ctl_int_ia", "ctl_int_ib",
           "iref_filt_a", "iref_filt_b", "vf_d", "vf_q"),
    "pi": ("flux_a", "flux_b", "q_dc", "ctl_int_v", "ctl_int_ia", "ctl_int_ib",
           "vf_d", "vf_q"),
    "none": ("flux_a", "flux_b", "q_dc"),
}


def build_closed_loop_rhs(sc: Scenario) -> Callable:
    """Return f(t, x_tuple) -> dx_tuple for the scenario's closed loop.

    The returned closure inlines the controller and plant algebra on
    plain floats; a test pins it against the module-level operations.
    Raises GridCollapseError from inside when the reference-generation
    guard trips (the run loop turns that into a flagged partial run).
    """
    p = sc.plant
    l_tot, r_tot, r_g, r_f, l_f = p.l_tot, p.r_tot, p.r_g, p.r_f, p.l_f
    c_dc, eta, v_dc_min = p.c_dc, p.eta, p.v_dc_min
    mu = p.l_g / l_tot
    peak = p.nominal_peak
    two_pi = 2.0 * math.pi
    cos, sin = math.cos, math.sin

    # grid segments as flat lists with a monotone cursor; a held lookup
    # (step-end stage) keeps the cursor so boundary events are sampled
    # left-continuously and never straddle an integration step
    gseg = sc.grid.segments
    g_t = [s.start for s in gseg]
    g_amp = [s.amplitude * peak for s in gseg]
    g_w = [two_pi * s.freq_hz for s in gseg]
    g_th0 = list(sc.grid._theta0)
    n_g = len(gseg)
    g_cur = [0]

    # load breakpoints with a monotone cursor
    l_t = list(sc.load.times)
    l_p = list(sc.load.powers)
    n_l = len(l_t)
    l_cur = [0]
    load_is_steps = sc.load.kind == "steps"

    def grid_at(t, hold=False):
        k = g_cur[0]
        if not hold:
            while k + 1 < n_g and t >= g_t[k + 1]:
                k += 1
            g_cur[0] = k
        th = g_th0[k] + g_w[k] * (t - g_t[k])
        a = g_amp[k]
        return a * cos(th), a * sin(th), th, g_w[k]

    def load_at(t, hold=False):
        k = l_cur[0]
        if not hold:
            while k + 1 < n_l and t >= l_t[k + 1]:
                k += 1
            l_cur[0] = k
        if load_is_steps or k + 1 >= n_l:
            return l_p[k]
        if t <= l_t[0]:
            return l_p[0]
        t0, t1 = l_t[k], l_t[k + 1]
        return l_p[k] + (l_p[k + 1] - l_p[k]) * (t - t0) / (t1 - t0)

    kind = sc.control.kind

    if kind == "ph":
        g = sc.resolved_ph_gains()
        k_v, k_i, a_v, m_i = g.k_v, g.k_i, g.a_v, g.m_i
        q_ref, tau_d, v_ref = g.q_ref, g.tau_d, g.v_dc_ref
        vac_min_sq = g.v_ac_min * g.v_ac_min
        tau_m = sc.resolved_tau_meas()
        two_m_eta = 2.0 - eta

        def rhs(t, x, hold=False):
            fa, fb, q, zv, zia, zib, za, zb, vfd, vfq = x
            vga, vgb, th, w = grid_at(t, hold)
            p_load = load_at(t, hold)
            ia = fa / l_tot
            ib = fb / l_tot
            v_dc = q / c_dc
            v_dc_c = v_dc if v_dc > v_dc_min else v_dc_min
            i_load = p_load / v_dc_c
            # outer loop and required node power
            e_v = v_dc - v_ref
            i_conv_ref = i_load - (k_v * e_v + a_v * zv) / v_dc_c
            p_cmd = two_m_eta * v_dc_c * i_conv_ref + r_f * (ia * ia + ib * ib)
            # conditioned node-voltage measurement back in the stationary frame
            c, s = cos(th), sin(th)
            vma = c * vfd - s * vfq
            vmb = s * vfd + c * vfq
            vn2 = vfd * vfd + vfq * vfq
            if vn2 < vac_min_sq:
                raise GridCollapseError(
                    f"AC voltage magnitude below guard at t = {t:.6f} s"
                )
            irefa = (p_cmd * vma - q_ref * vmb) / vn2
            irefb = (p_cmd * vmb + q_ref * vma) / vn2
            # carrier-lead compensated, filtered reference; dz is exact
            lead = w * tau_d
            dza = (irefa - lead * irefb - za) / tau_d
            dzb = (irefb + lead * irefa - zb) / tau_d
            # inner loop tracking the filtered reference
            ea = vma - l_f * (dza - k_i * (ia - za)) - r_f * ia + l_f * m_i * zia
            eb = vmb - l_f * (dzb - k_i * (ib - zb)) - r_f * ib + l_f * m_i * zib
            # plant
            dfa = vga - ea - r_tot * ia
            dfb = vgb - eb - r_tot * ib
            i_conv = (ea * ia + eb * ib) / (two_m_eta * v_dc_c)
            vaca = vga - r_g * ia - mu * dfa
            vacb = vgb - r_g * ib - mu * dfb
            return (
                dfa, dfb, i_conv - i_load,
                e_v, ia - irefa, ib - irefb,
                dza, dzb,
                (c * vaca + s * vacb - vfd) / tau_m,
                (-s * vaca + c * vacb - vfq) / tau_m,
            )

        return rhs

    if kind == "pi":
        g = sc.resolved_pi_gains()
        kp_v, ki_v, kp_i, ki_i = g.kp_v, g.ki_v, g.kp_i, g.ki_i
        i_lim, v_ref = g.i_limit, g.v_dc_ref
        tau_m = sc.resolved_tau_meas()
        two_m_eta = 2.0 - eta

        def rhs(t, x, hold=False):
            fa, fb, q, zv, zd, zq, vfd, vfq = x
            vga, vgb, th, w = grid_at(t, hold)
            p_load = load_at(t, hold)
            ia = fa / l_tot
            ib = fb / l_tot
            v_dc = q / c_dc
            v_dc_c = v_dc if v_dc > v_dc_min else v_dc_min
            i_load = p_load / v_dc_c
            c, s = cos(th), sin(th)
            i_d = c * ia + s * ib
            i_q = -s * ia + c * ib
            err_v = v_ref - v_dc
            i_d_raw = kp_v * err_v + ki_v * zv
            if i_d_raw > i_lim:
                i_d_ref, d_zv = i_lim, 0.0
            elif i_d_raw < -i_lim:
                i_d_ref, d_zv = -i_lim, 0.0
            else:
                i_d_ref, d_zv = i_d_raw, err_v
            err_d = i_d_ref - i_d
            err_q = -i_q
            e_d = vfd + w * l_f * i_q - (kp_i * err_d + ki_i * zd)
            e_q = vfq - w * l_f * i_d - (kp_i * err_q + ki_i * zq)
            ea = c * e_d - s * e_q
            eb = s * e_d + c * e_q
            dfa = vga - ea - r_tot * ia
            dfb = vgb - eb - r_tot * ib
            i_conv = (ea * ia + eb * ib) / (two_m_eta * v_dc_c)
            vaca = vga - r_g * ia - mu * dfa
            vacb = vgb - r_g * ib - mu * dfb
            return (
                dfa, dfb, i_conv - i_load,
                d_zv, err_d, err_q,
                (c * vaca + s * vacb - vfd) / tau_m,
                (-s * vaca + c * vacb - vfq) / tau_m,
            )

        return rhs

    # converter gated off: e = 0, DC port carries no current
    def rhs(t, x, hold=False):
        fa, fb, q = x
        vga, vgb, _, _ = grid_at(t, hold)
        p_load = load_at(t, hold)
        v_dc = q / c_dc
        v_dc_c = v_dc if v_dc > v_dc_min else v_dc_min
        return (
            vga - r_tot * fa / l_tot,
            vgb - r_tot * fb / l_tot,
            -p_load / v_dc_c,
        )

    return rhs


# ---------------------------------------------------------------------------
# Equilibrium initializer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InitReport:
    mode: str
    iterations: int = 0
    residual: float = 0.0      # fixed-point displacement [p.u. of current base]
    converged: bool = True
    current_amplitude: float = 0.0  # |i_f| at the solved operating point [A]


def _phasor_to_frame(z: complex, theta: float) -> tuple[float, float]:
    w = z * complex(math.cos(theta), math.sin(theta))
    return w.real, w.imag


def equilibrium_initializer(sc: Scenario) -> tuple[tuple, InitReport]:
    """Steady-state initial condition for the scenario's first operating point.

    Solves the rotating-frame fixed point (DC bus at its reference,
    converter current matching the load draw through the conversion
    bookkeeping, current reference aligned per the active controller) by
    phasor iteration, then populates the controller filter states with
    their lagged steady values.  The reported residual is the final
    fixed-point displacement in per-unit of the AC current base.

    Falls back to a cold start (zero current, nominal DC charge) with a
    logged warning if the iteration does not converge in 100 rounds.
    """
    p = sc.plant
    kind = sc.control.kind
    theta0 = float(sc.grid.angle(0.0))
    omega = 2.0 * math.pi * float(sc.grid.frequency(0.0))
    g_amp = float(sc.grid.amplitude(0.0)) * p.nominal_peak
    p0 = float(sc.load.power(0.0))
    i_base_ac = p.s_base / p.nominal_peak

    if kind == "none":
        q0 = p.c_dc * p.v_base_dc
        return (0.0, 0.0, q0), InitReport(mode="equilibrium")

    if kind == "pi":
        gains = sc.resolved_pi_gains()
        v_ref = gains.v_dc_ref
        i_load0 = p0 / v_ref
        rhs_power = (2.0 - p.eta) * v_ref * i_load0
        if p.r_tot > 0:
            disc = g_amp * g_amp - 4.0 * p.r_tot * rhs_power
            if disc < 0:
                log.warning("equilibrium infeasible for PI run; cold start")
                return _cold_start(sc), InitReport(mode="cold", converged=False)
            i_mag = (g_amp - math.sqrt(disc)) / (2.0 * p.r_tot)
        else:
            i_mag = rhs_power / g_amp if g_amp > 0 else 0.0
        i_ph = complex(i_mag, 0.0)  # aligned with the grid d-axis
        v_ac_ph = g_amp - complex(p.r_g, omega * p.l_g) * i_ph
        x0 = (
            *(p.l_tot * np.array(_phasor_to_frame(i_ph, theta0))),
            p.c_dc * v_ref,
            i_mag / gains.ki_v if gains.ki_v > 0 else 0.0,
            p.r_f * i_mag / gains.ki_i if gains.ki_i > 0 else 0.0,
            0.0,
            v_ac_ph.real, v_ac_ph.imag,  # synchronous-frame filter state
        )
        return tuple(float(v) for v in x0), InitReport(
            mode="equilibrium", iterations=1, residual=0.0, converged=True,
            current_amplitude=i_mag,
        )

    gains = sc.resolved_ph_gains()
    v_ref = gains.v_dc_ref
    i_load0 = p0 / v_ref

    i_ph = complex((2.0 - p.eta) * p0 / max(g_amp, 1e-9), 0.0)
    residual = math.inf
    iterations = 0
    for iterations in range(1, 101):
        v_ac_ph = g_amp - complex(p.r_g, omega * p.l_g) * i_ph
        p_cmd = (2.0 - p.eta) * v_ref * i_load0 + p.r_f * abs(i_ph) ** 2
        iref_ph = v_ac_ph * complex(p_cmd, gains.q_ref) / abs(v_ac_ph) ** 2
        # carrier-lead compensation cancels the reference-filter lag, so
        # the tracked (filtered) reference settles on the raw reference;
        # relax the update for unconditional convergence
        i_new = 0.5 * (i_ph + iref_ph)
        residual = abs(i_new - i_ph) / i_base_ac
        i_ph = i_new
        if residual < 1e-12:
            break
    if not residual < 1e-6:
        log.warning(
            "equilibrium iteration did not converge (residual %.2e p.u.); "
            "falling back to cold start", residual,
        )
        return _cold_start(sc), InitReport(
            mode="cold", iterations=iterations, residual=residual, converged=False,
        )

    v_ac_ph = g_amp - complex(p.r_g, omega * p.l_g) * i_ph
    x0 = (
        *(p.l_tot * np.array(_phasor_to_frame(i_ph, theta0))),
        p.c_dc * v_ref,
        0.0, 0.0, 0.0,
        *_phasor_to_frame(i_ph, theta0),    # filtered reference = settled current
        v_ac_ph.real, v_ac_ph.imag,         # synchronous-frame filter state
    )
    return tuple(float(v) for v in x0), InitReport(
        mode="equilibrium", iterations=iterations, residual=residual,
        converged=True, current_amplitude=abs(i_ph),
    )


def _cold_start(sc: Scenario) -> tuple:
    """Zero current, nominal DC charge, quiescent controller states.

    The voltage-filter state starts at the unloaded grid amplitude in
    the synchronous frame (d-axis aligned by construction).
    """
    p = sc.plant
    q0 = p.c_dc * p.v_base_dc
    g_amp = float(sc.grid.amplitude(0.0)) * p.nominal_peak
    if sc.control.kind == "ph":
        return (0.0, 0.0, q0, 0.0, 0.0, 0.0, 0.0, 0.0, g_amp, 0.0)
    if sc.control.kind == "pi":
        return (0.0, 0.0, q0, 0.0, 0.0, 0.0, g_amp, 0.0)
    return (0.0, 0.0, q0)


def _initial_state(sc: Scenario) -> tuple[tuple, InitReport]:
    if isinstance(sc.init, EnergyState):
        st = sc.init
        g_amp = float(sc.grid.amplitude(0.0)) * sc.plant.nominal_peak
        i0 = (st.flux[0] / sc.plant.l_tot, st.flux[1] / sc.plant.l_tot)
        if sc.control.kind == "ph":
            x0 = (*st.flux, st.q_dc, st.int_v, *st.int_i, *i0, g_amp, 0.0)
        elif sc.control.kind == "pi":
            x0 = (*st.flux, st.q_dc, st.int_v, *st.int_i, g_amp, 0.0)
        else:
            x0 = (*st.flux, st.q_dc)
        return x0, InitReport(mode="explicit")
    if sc.init == "cold":
        return _cold_start(sc), InitReport(mode="cold")
    return equilibrium_initializer(sc)


# ---------------------------------------------------------------------------
# Vectorized trajectory outputs
# ---------------------------------------------------------------------------

def _trajectory_columns(sc: Scenario, ts: np.ndarray, xs: np.ndarray) -> dict:
    """Recompute all derived quantities over the recorded states."""
    p = sc.plant
    kind = sc.control.kind
    m = len(ts)
    z = np.zeros(m)

    vg = plant.grid_voltage(ts, sc.grid, p.nominal_peak)
    flux_a, flux_b, q = xs[:, 0], xs[:, 1], xs[:, 2]
    ia, ib = flux_a / p.l_tot, flux_b / p.l_tot
    i_sq = ia * ia + ib * ib
    v_dc = q / p.c_dc
    v_dc_c = np.maximum(v_dc, p.v_dc_min)
    p_load = np.asarray(sc.load.power(ts), dtype=float)
    if p_load.shape == ():
        p_load = np.full(m, float(p_load))
    i_load = p_load / v_dc_c
    flag_clamp = (v_dc < p.v_dc_min).astype(float)

    if kind == "ph":
        g = sc.resolved_ph_gains()
        int_v, int_ia, int_ib = xs[:, 3], xs[:, 4], xs[:, 5]
        zf_a, zf_b = xs[:, 6], xs[:, 7]
        vf_d, vf_q = xs[:, 8], xs[:, 9]
        th = np.asarray(sc.grid.angle(ts), dtype=float)
        c, s = np.cos(th), np.sin(th)
        vm_a = c * vf_d - s * vf_q
        vm_b = s * vf_d + c * vf_q
        e_v = v_dc - g.v_dc_ref
        i_conv_ref = i_load - (g.k_v * e_v + g.a_v * int_v) / v_dc_c
        p_ref = (2.0 - p.eta) * v_dc_c * i_conv_ref + p.r_f * i_sq
        vn2 = vm_a * vm_a + vm_b * vm_b
        vn2_safe = np.maximum(vn2, 1e-12)
        iref_a = (p_ref * vm_a - g.q_ref * vm_b) / vn2_safe
        iref_b = (p_ref * vm_b + g.q_ref * vm_a) / vn2_safe
        lead = 2.0 * math.pi * np.asarray(sc.grid.frequency(ts), dtype=float) * g.tau_d
        dref_a = (iref_a - lead * iref_b - zf_a) / g.tau_d
        dref_b = (iref_b + lead * iref_a - zf_b) / g.tau_d
        e_a = vm_a - p.l_f * (dref_a - g.k_i * (ia - zf_a)) - p.r_f * ia \
            + p.l_f * g.m_i * int_ia
        e_b = vm_b - p.l_f * (dref_b - g.k_i * (ib - zf_b)) - p.r_f * ib \
            + p.l_f * g.m_i * int_ib
        energy_ctl = 0.5 * g.a_v * int_v ** 2 \
            + 0.5 * p.l_f * g.m_i * (int_ia ** 2 + int_ib ** 2)
        hdot_ctl = g.a_v * int_v * e_v \
            + p.l_f * g.m_i * (int_ia * (ia - iref_a) + int_ib * (ib - iref_b))
        flag_limit = z
    elif kind == "pi":
        g = sc.resolved_pi_gains()
        int_v, int_d, int_q = xs[:, 3], xs[:, 4], xs[:, 5]
        vf_d, vf_q = xs[:, 6], xs[:, 7]
        zf_a = zf_b = z
        th = np.asarray(sc.grid.angle(ts), dtype=float)
        w = 2.0 * math.pi * np.asarray(sc.grid.frequency(ts), dtype=float)
        c, s = np.cos(th), np.sin(th)
        vm_a = c * vf_d - s * vf_q
        vm_b = s * vf_d + c * vf_q
        i_d = c * ia + s * ib
        i_q = -s * ia + c * ib
        err_v = g.v_dc_ref - v_dc
        i_d_raw = g.kp_v * err_v + g.ki_v * int_v
        i_d_ref = np.clip(i_d_raw, -g.i_limit, g.i_limit)
        flag_limit = (np.abs(i_d_raw) > g.i_limit).astype(float)
        u_d = g.kp_i * (i_d_ref - i_d) + g.ki_i * int_d
        u_q = g.kp_i * (-i_q) + g.ki_i * int_q
        e_d = vf_d + w * p.l_f * i_q - u_d
        e_q = vf_q - w * p.l_f * i_d - u_q
        e_a = c * e_d - s * e_q
        e_b = s * e_d + c * e_q
        iref_a = c * i_d_ref
        iref_b = s * i_d_ref
        p_ref = vf_d * i_d_ref
        i_conv_ref = p_ref / ((2.0 - p.eta) * v_dc_c)
        energy_ctl = z
        hdot_ctl = z
    else:
        int_v = int_ia = int_ib = zf_a = zf_b = z
        int_d = int_q = z
        vm_a, vm_b = vg[0], vg[1]
        e_a = e_b = z
        iref_a = iref_b = z
        i_conv_ref = z
        p_ref = z
        energy_ctl = z
        hdot_ctl = z
        flag_limit = z

    dflux_a = vg[0] - e_a - p.r_tot * ia
    dflux_b = vg[1] - e_b - p.r_tot * ib
    mu = p.l_g / p.l_tot
    vac_a = vg[0] - p.r_g * ia - mu * dflux_a
    vac_b = vg[1] - p.r_g * ib - mu * dflux_b
    bridge = e_a * ia + e_b * ib
    i_conv = bridge / ((2.0 - p.eta) * v_dc_c)

    energy_ac = (flux_a ** 2 + flux_b ** 2) / (2.0 * p.l_tot)
    energy_dc = q * q / (2.0 * p.c_dc)
    energy_tot = energy_ac + energy_dc
    energy_cl = energy_tot + energy_ctl

    supply = vg[0] * ia + vg[1] * ib
    p_rg = p.r_g * i_sq
    p_rf = p.r_f * i_sq
    conv_loss = bridge - v_dc * i_conv
    load_draw = v_dc * i_load
    hdot_tot = supply - p_rg - p_rf - conv_loss - load_draw
    hdot_cl = hdot_tot + hdot_ctl

    if kind == "pi":
        ctl_ia, ctl_ib = int_d, int_q
    else:
        ctl_ia, ctl_ib = int_ia, int_ib

    return {
        "t": ts,
        "flux_a": flux_a, "flux_b": flux_b, "q_dc": q,
        "ctl_int_v": int_v, "ctl_int_ia": ctl_ia, "ctl_int_ib": ctl_ib,
        "iref_filt_a": zf_a, "iref_filt_b": zf_b,
        "vac_meas_a": vm_a, "vac_meas_b": vm_b,
        "vg_a": vg[0], "vg_b": vg[1], "vac_a": vac_a, "vac_b": vac_b,
        "e_a": e_a, "e_b": e_b,
        "i_a": ia, "i_b": ib, "iref_a": iref_a, "iref_b": iref_b,
        "v_dc": v_dc, "v_dc_pu": v_dc / p.v_base_dc,
        "i_conv": i_conv, "i_load": i_load, "i_conv_ref": i_conv_ref,
        "p_ref": p_ref, "p_load": p_load,
        "energy_ac": energy_ac, "energy_dc": energy_dc,
        "energy_ctl": energy_ctl, "energy_tot": energy_tot,
        "energy_cl": energy_cl,
        "p_supply": supply, "p_diss_grid": p_rg, "p_diss_filter": p_rf,
        "p_conv_loss": conv_loss, "p_load_draw": load_draw,
        "hdot_tot": hdot_tot, "hdot_ctl": hdot_ctl, "hdot_cl": hdot_cl,
        "flag_cpl_clamp": flag_clamp, "flag_ref_limit": flag_limit,
    }


# ---------------------------------------------------------------------------
# Run driver
# ---------------------------------------------------------------------------

def _settle_window(sc: Scenario) -> float:
    """Time for the fast loop modes to ring down after an input step [s].

    Used by the audit to size exclusion windows around discontinuities:
    a centered difference over the record spacing cannot resolve modes
    faster than a few hundred hertz, so records are skipped until those
    modes have decayed.  The slower measurement-filter mode is
    resolvable and needs no exclusion.
    """
    if sc.control.kind == "ph":
        g = sc.resolved_ph_gains()
        return 8.0 * max(g.tau_d, 1.0 / g.k_i)
    if sc.control.kind == "pi":
        g = sc.resolved_pi_gains()
        return 8.0 * sc.plant.l_f / max(g.kp_i, 1e-9)
    return 2e-3


def _gain_meta(sc: Scenario) -> Optional[dict]:
    if sc.control.kind != "ph":
        return None
    g = sc.resolved_ph_gains()
    return {"k_v": g.k_v, "k_i": g.k_i, "a_v": g.a_v, "m_i": g.m_i,
            "v_dc_ref": g.v_dc_ref, "l_f": sc.plant.l_f, "tau_d": g.tau_d}


@dataclass
class RunResult:
    scenario: Scenario
    trajectory: TrajectoryRecord
    init: InitReport
    failure: Optional[str] = None
    regulation: object = None     # audit.RegulationReport
    passivity: object = None      # audit.PassivityReport
    consistency: object = None    # audit.ConsistencyReport

    @property
    def ok(self) -> bool:
        return self.failure is None


def run_scenario(sc: Scenario, with_audit: bool = True) -> RunResult:
    """Integrate one scenario and (optionally) audit the trajectory.

    Returns a RunResult whose trajectory is partial (truncated at the
    last recorded state) with ``failure`` set if a guard tripped or the
    integration produced non-finite values.  Two calls with the same
    scenario produce bit-identical trajectories.
    """
    rhs = build_closed_loop_rhs(sc)
    x0, init_report = _initial_state(sc)
    d = len(x0)
    h = sc.h
    n = int(round(sc.duration / h))
    dec = int(sc.decimation)

    # a zero-duration scenario yields an empty (but well-formed) trajectory
    rec_ks = list(range(0, n + 1, dec)) if n > 0 else []
    if rec_ks and rec_ks[-1] != n:
        rec_ks.append(n)
    m = len(rec_ks)
    ts = np.empty(m)
    xs = np.empty((m, d))

    failure = None
    x = tuple(float(v) for v in x0)
    r = 0
    next_rec = rec_ks[0] if rec_ks else -1
    half = 0.5 * h
    sixth = h / 6.0
    try:
        for k in range(n + 1):
            if k == next_rec:
                ts[r] = k * h
                xs[r] = x
                r += 1
                next_rec = rec_ks[r] if r < m else -1
            if k == n:
                break
            # classical RK4 with stage times formed as exact multiples of
            # the half-step, so input events land on the same float
            # instants for a run at h and a run at h/2
            t0 = k * h
            tm = (2 * k + 1) * half
            t1 = (k + 1) * h
            k1 = rhs(t0, x)
            k2 = rhs(tm, tuple(xi + half * ki for xi, ki in zip(x, k1)))
            k3 = rhs(tm, tuple(xi + half * ki for xi, ki in zip(x, k2)))
            k4 = rhs(t1, tuple(xi + h * ki for xi, ki in zip(x, k3)), True)
            x = tuple(
                xi + sixth * (a + 2.0 * (b + c) + d)
                for xi, a, b, c, d in zip(x, k1, k2, k3, k4)
            )
            if any(v != v for v in x):  # NaN guard
                raise ScenarioError(
                    f"integration produced non-finite state at t = {t1:.6f} s"
                )
            if x[2] <= 0.0:
                raise ScenarioError(
                    f"DC link charge became non-positive at t = {t1:.6f} s"
                )
    except PhconvError as exc:
        failure = str(exc)

    ts, xs = ts[:r], xs[:r]
    columns = _trajectory_columns(sc, ts, xs) if r else {k: np.empty(0) for k in COLUMN_ORDER}
    meta = {
        "scenario": sc.name,
        "controller": sc.control.kind,
        "h": h,
        "duration": sc.duration,
        "s_base": sc.plant.s_base,
        "v_base_dc": sc.plant.v_base_dc,
        "event_times": sc.event_times,
        "kink_times": sc.kink_times,
        "settle_window": _settle_window(sc),
        "ph_gains": _gain_meta(sc),
        "failure": failure,
    }
    traj = TrajectoryRecord(columns, meta)
    result = RunResult(scenario=sc, trajectory=traj, init=init_report,
                       failure=failure)

    if with_audit and r >= 3:
        from . import audit  # deferred: audit depends on this module's types
        result.regulation = audit.regulation_metrics(
            traj, band=0.02, event_times=sc.event_times)
        result.passivity = audit.passivity_check(traj)
        result.consistency = audit.energy_consistency_check(traj)
    return result
