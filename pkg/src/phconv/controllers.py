"""Converter control laws: the energy-shaping two-loop controller and a
cascaded-PI baseline.

The energy-shaping controller chains an outer DC-voltage loop (virtual
conductance plus load-current feedforward), a power-projection current
reference aligned with the measured AC node voltage, and an inner
damping-injection current loop.  The current reference is low-pass
filtered before tracking so that its derivative is available exactly
(the filter state's own derivative); the inner-loop error with respect
to the filtered reference then decays exactly exponentially.

All functions accept scalars or numpy arrays so the same code serves
the scalar integration loop and the vectorized trajectory post-pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GridCollapseError, ParameterError, SingularityError
from .plant import PlantParams


@dataclass(frozen=True)
class PhControllerGains:
    """Gains of the energy-shaping controller.

    k_v      outer-loop virtual conductance scale [A]; the correction
             current is k_v * (v_dc - v_dc_ref) / v_dc
    k_i      inner-loop damping / error decay rate [1/s]
    a_v      voltage-loop integral weight [A/(V*s)], 0 disables
    m_i      current-loop integral weight [1/s^2], 0 disables
    q_ref    reactive power reference [var], typically zero
    tau_d    reference low-pass time constant [s]
    v_dc_ref DC bus reference [V]
    v_ac_min guard on the AC voltage magnitude used for the power
             projection [V]; below it the run aborts
    """

    k_v: float = 2000.0
    k_i: float = 4000.0
    a_v: float = 0.0
    m_i: float = 0.0
    q_ref: float = 0.0
    tau_d: float = 1e-4
    v_dc_ref: float = 800.0
    v_ac_min: float = 19.6  # 0.05 * nominal peak of the default plant

    def __post_init__(self):
        if self.k_v <= 0 or self.k_i <= 0:
            raise ParameterError("k_v and k_i must be positive")
        if self.a_v < 0 or self.m_i < 0:
            raise ParameterError("integral weights must be nonnegative")
        if self.tau_d <= 0:
            raise ParameterError("tau_d must be positive")
        if self.v_dc_ref <= 0 or self.v_ac_min <= 0:
            raise ParameterError("references and guards must be positive")


@dataclass(frozen=True)
class PiControllerGains:
    """Cascaded-PI baseline gains (outer voltage PI feeding dq current PIs)."""

    kp_v: float = 6.0       # [A/V]
    ki_v: float = 450.0     # [A/(V*s)]
    kp_i: float = 0.075     # [V/A]
    ki_i: float = 40.0      # [V/(A*s)]
    i_limit: float = 3000.0  # current reference clamp [A]
    v_dc_ref: float = 800.0

    def __post_init__(self):
        if min(self.kp_v, self.ki_v, self.kp_i, self.ki_i) < 0:
            raise ParameterError("PI gains must be nonnegative")
        if self.i_limit <= 0:
            raise ParameterError("current limit must be positive")


# ---------------------------------------------------------------------------
# Energy-shaping loops
# ---------------------------------------------------------------------------

def outer_voltage_loop(v_dc, v_dc_ref, i_load, k_v, a_v=0.0, int_v=0.0,
                       v_dc_min=1e-6):
    """DC-current command of the outer loop [A].

    ``i_conv_ref = i_load - (k_v (v_dc - v_dc_ref) + a_v int_v) / v_dc``

    The first term feeds the measured load current forward; the second
    is a virtual conductance on the voltage error (plus an optional
    integral part).  With the converter tracking this command exactly,
    the DC-link energy rate is ``v_dc * (i_conv - i_load)
    = -k_v (v_dc - v_dc_ref)`` and the shifted storage
    ``C/2 (v_dc - v_dc_ref)^2`` decays as ``-(k_v / v_dc) e_v^2``.

    Raises SingularityError if v_dc is below the guard.
    """
    if np.any(np.asarray(v_dc) < v_dc_min):
        raise SingularityError("v_dc below division guard in outer loop")
    return i_load - (k_v * (v_dc - v_dc_ref) + a_v * int_v) / v_dc


def required_node_power(i_conv_ref, v_dc, i_f, r_f, eta):
    """Active power to request at the AC node for a DC-current command [W].

    Works back through the conversion bookkeeping: the bridge must
    absorb ``(2 - eta) * v_dc * i_conv_ref`` (see
    `ph_core.dc_port_current`) and the filter resistance dissipates
    ``r_f |i_f|^2`` on the way, so::

        p_ref = (2 - eta) * v_dc * i_conv_ref + r_f * |i_f|^2
    """
    ia, ib = i_f[0], i_f[1]
    return (2.0 - eta) * v_dc * i_conv_ref + r_f * (ia * ia + ib * ib)


def dvoc_current_reference(p_ref, q_ref, v_ac, v_ac_min):
    """Current reference from instantaneous power projections [A].

    ``i_ref = (p_ref / |v_ac|^2) v_ac + (q_ref / |v_ac|^2) J v_ac`` with
    ``J = [[0, -1], [1, 0]]``, so that ``v_ac . i_ref = p_ref`` and
    ``(J v_ac) . i_ref = q_ref`` exactly.

    Raises GridCollapseError when |v_ac| is below the guard; a deeper
    collapse is outside the averaged model's validity.
    """
    va, vb = v_ac[0], v_ac[1]
    n2 = va * va + vb * vb
    if np.any(np.asarray(n2) < v_ac_min * v_ac_min):
        raise GridCollapseError(
            "AC node voltage below reference-generation guard"
        )
    return np.array([(p_ref * va - q_ref * vb) / n2,
                     (p_ref * vb + q_ref * va) / n2])


def inner_current_loop(i_f, i_f_ref, di_f_ref_dt, v_ac, r_f, l_f, k_i,
                       m_i=0.0, int_i=(0.0, 0.0)):
    """Converter voltage from the damping-injection current loop [V].

    ``e = v_ac - L_f (di_ref/dt - k_i (i_f - i_ref)) - R_f i_f
    [+ L_f m_i int_i]``

    Substituted into the filter loop equation this gives
    ``d(i_f - i_ref)/dt = -k_i (i_f - i_ref)`` when ``di_f_ref_dt`` is
    the exact derivative of ``i_f_ref``: an exponentially stable error
    system with decay rate k_i.
    """
    ea = v_ac[0] - l_f * (di_f_ref_dt[0] - k_i * (i_f[0] - i_f_ref[0])) \
        - r_f * i_f[0] + l_f * m_i * int_i[0]
    eb = v_ac[1] - l_f * (di_f_ref_dt[1] - k_i * (i_f[1] - i_f_ref[1])) \
        - r_f * i_f[1] + l_f * m_i * int_i[1]
    return np.array([ea, eb])


@dataclass(frozen=True)
class PhControllerState:
    """Dynamic state owned by the energy-shaping controller."""

    int_v: float = 0.0                       # voltage-loop integral [V*s]
    int_i: tuple[float, float] = (0.0, 0.0)  # current-loop integral [A*s]
    ref_filt: tuple[float, float] = (0.0, 0.0)  # filtered current reference [A]
    v_meas: tuple[float, float] = (0.0, 0.0)    # measured AC node voltage [V]


@dataclass(frozen=True)
class PhControlOutput:
    e: tuple[float, float]          # converter voltage command [V]
    i_f_ref: tuple[float, float]    # raw power-projection reference [A]
    i_conv_ref: float               # outer-loop DC current command [A]
    p_ref: float                    # requested AC node power [W]
    d_int_v: float
    d_int_i: tuple[float, float]
    d_ref_filt: tuple[float, float]


def ph_controller_step(v_dc, i_f, i_load, state: PhControllerState,
                       gains: PhControllerGains, plant: PlantParams,
                       omega: float) -> PhControlOutput:
    """One evaluation of the energy-shaping controller.

    Chains outer loop -> required power -> current reference -> filtered
    derivative -> inner loop, and returns every intermediate for the
    audit trail.  The AC voltage input is the controller's own
    conditioned measurement ``state.v_meas``; the measurement filter
    dynamics live in the simulation loop, which closes that path once
    the true node voltage is known.

    The inner loop tracks the *filtered* reference ``state.ref_filt``,
    whose derivative ``(cmd - ref_filt) / tau_d`` is exact, so the
    tracking error decays at exactly k_i.  Before filtering, the
    reference gets a phase lead of ``omega * tau_d`` (a 90-degree
    rotation scaled by the known carrier advance over one filter lag),
    which cancels the filter's steady-state rotation at the grid
    frequency; the filtered reference then equals the raw reference
    exactly in sinusoidal steady state.
    """
    v_dc_c = max(v_dc, plant.v_dc_min)
    e_v = v_dc - gains.v_dc_ref
    i_conv_ref = i_load - (gains.k_v * e_v + gains.a_v * state.int_v) / v_dc_c
    p_ref = required_node_power(i_conv_ref, v_dc_c, i_f, plant.r_f, plant.eta)
    i_f_ref = dvoc_current_reference(p_ref, gains.q_ref, state.v_meas,
                                     gains.v_ac_min)
    lead = omega * gains.tau_d
    cmd_a = i_f_ref[0] - lead * i_f_ref[1]
    cmd_b = i_f_ref[1] + lead * i_f_ref[0]
    d_ref_a = (cmd_a - state.ref_filt[0]) / gains.tau_d
    d_ref_b = (cmd_b - state.ref_filt[1]) / gains.tau_d
    e = inner_current_loop(i_f, state.ref_filt, (d_ref_a, d_ref_b),
                           state.v_meas, plant.r_f, plant.l_f, gains.k_i,
                           gains.m_i, state.int_i)
    return PhControlOutput(
        e=(float(e[0]), float(e[1])),
        i_f_ref=(float(i_f_ref[0]), float(i_f_ref[1])),
        i_conv_ref=float(i_conv_ref),
        p_ref=float(p_ref),
        d_int_v=e_v,
        d_int_i=(i_f[0] - float(i_f_ref[0]), i_f[1] - float(i_f_ref[1])),
        d_ref_filt=(d_ref_a, d_ref_b),
    )


# ---------------------------------------------------------------------------
# Cascaded-PI baseline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PiControllerState:
    int_v: float = 0.0                       # outer voltage PI integral [V*s]
    int_dq: tuple[float, float] = (0.0, 0.0)  # inner current PI integrals [A*s]
    v_meas: tuple[float, float] = (0.0, 0.0)  # measured AC node voltage [V]


@dataclass(frozen=True)
class PiControlOutput:
    e: tuple[float, float]
    i_dq_ref: tuple[float, float]
    d_int_v: float
    d_int_dq: tuple[float, float]
    ref_limited: bool


def pi_controller_step(v_dc, i_f, state: PiControllerState,
                       gains: PiControllerGains, theta: float, omega: float,
                       l_f: float) -> PiControlOutput:
    """One evaluation of the cascaded-PI baseline in the dq frame.

    theta and omega come from an ideal angle oracle (the known grid
    phase integral); no PLL is modeled.  The outer PI turns the voltage
    error into a d-axis current reference (clamped to the limit with
    the integrator frozen while clamped); the inner PIs act on the dq
    current errors with standard cross-coupling feedforward; the result
    rotates back to the stationary frame.
    """
    c, s = math.cos(theta), math.sin(theta)
    # measured quantities into dq
    i_d = c * i_f[0] + s * i_f[1]
    i_q = -s * i_f[0] + c * i_f[1]
    vm_d = c * state.v_meas[0] + s * state.v_meas[1]
    vm_q = -s * state.v_meas[0] + c * state.v_meas[1]

    err_v = gains.v_dc_ref - v_dc
    i_d_raw = gains.kp_v * err_v + gains.ki_v * state.int_v
    limited = abs(i_d_raw) > gains.i_limit
    i_d_ref = max(-gains.i_limit, min(gains.i_limit, i_d_raw))
    i_q_ref = 0.0
    d_int_v = 0.0 if limited else err_v  # anti-windup: freeze while clamped

    err_d = i_d_ref - i_d
    err_q = i_q_ref - i_q
    u_d = gains.kp_i * err_d + gains.ki_i * state.int_dq[0]
    u_q = gains.kp_i * err_q + gains.ki_i * state.int_dq[1]
    # e = v_meas - omega L_f J i - u, J i = (-i_q, i_d)
    e_d = vm_d + omega * l_f * i_q - u_d
    e_q = vm_q - omega * l_f * i_d - u_q

    return PiControlOutput(
        e=(c * e_d - s * e_q, s * e_d + c * e_q),
        i_dq_ref=(i_d_ref, i_q_ref),
        d_int_v=d_int_v,
        d_int_dq=(err_d, err_q),
        ref_limited=limited,
    )
