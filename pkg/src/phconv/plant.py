"""Physical model: grid source, lumped series RL, averaged converter and
constant-power load.

The grid-side and filter-side inductors carry the same current (no AC
shunt capacitor), so the two fluxes are simulated as one lumped flux
over ``L_tot = L_g + L_f`` with ``R_tot = R_g + R_f``; the internal node
voltage ``v_ac`` is recovered algebraically and satisfies both loop
equations exactly (see `ac_node_voltage`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ph_core
from .errors import ParameterError, ProfileError, ScenarioError
from .ph_core import EnergyState


@dataclass(frozen=True)
class PlantParams:
    """Physical constants and base quantities.

    Defaults describe a 480 Vac / 800 Vdc, 500 kW rack feeder with about
    5 % combined series reactance (grid 1.5 %, filter 3.7 % on the base
    impedance nominal_peak^2 / s_base), an R/X ratio of 0.13 and a 10 mF
    DC link.  All values are in SI units; per-unit conversion happens
    only at I/O boundaries.
    """

    r_g: float = 0.6e-3      # grid-side series resistance [ohm]
    l_g: float = 12e-6       # grid-side series inductance [H]
    r_f: float = 1.5e-3      # filter resistance [ohm]
    l_f: float = 30e-6       # filter inductance [H]
    c_dc: float = 10e-3      # DC-link capacitance [F]
    eta: float = 0.98        # conversion efficiency, (0, 1]
    v_base_ac: float = 480.0   # line-to-line rms [V]
    v_base_dc: float = 800.0   # DC bus nominal [V]
    s_base: float = 500e3      # power base [W]
    f_nom: float = 60.0        # nominal grid frequency [Hz]
    v_dc_min: float = 80.0     # DC division guard [V], 0.1 * v_base_dc

    def __post_init__(self):
        if self.l_g <= 0 or self.l_f <= 0 or self.c_dc <= 0:
            raise ParameterError("inductances and capacitance must be positive")
        if self.r_g < 0 or self.r_f < 0:
            raise ParameterError("resistances must be nonnegative")
        if not 0.0 < self.eta <= 1.0:
            raise ParameterError(f"eta must be in (0, 1], got {self.eta}")
        if self.v_dc_min <= 0:
            raise ParameterError("v_dc_min must be positive")
        if self.v_base_ac <= 0 or self.v_base_dc <= 0 or self.s_base <= 0:
            raise ParameterError("base quantities must be positive")

    @property
    def l_tot(self) -> float:
        return self.l_g + self.l_f

    @property
    def r_tot(self) -> float:
        return self.r_g + self.r_f

    @property
    def nominal_peak(self) -> float:
        """Nominal alpha/beta voltage amplitude: per-phase peak of the
        line-to-line rms base, ``v_base_ac * sqrt(2/3)`` [V]."""
        return self.v_base_ac * math.sqrt(2.0 / 3.0)

    @property
    def i_base_dc(self) -> float:
        return self.s_base / self.v_base_dc


# ---------------------------------------------------------------------------
# Grid profile
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSegment:
    start: float            # segment start time [s]
    amplitude: float        # multiplier on the nominal peak [p.u.]
    freq_hz: float          # [Hz]
    phase_offset: float = 0.0  # added phase jump at segment entry [rad]


@dataclass(frozen=True)
class GridProfile:
    """Piecewise-constant amplitude/frequency profile of the grid source.

    The electrical angle integrates ``2*pi*f`` continuously across
    segment boundaries; a segment's ``phase_offset`` is the only way to
    introduce a phase jump.  The last segment extends to the end of the
    run.
    """

    segments: tuple[GridSegment, ...]
    # cumulative angle at each segment start, filled in __post_init__
    _theta0: tuple[float, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise ScenarioError("grid profile needs at least one segment")
        if segs[0].start != 0.0:
            raise ScenarioError("grid profile must start at t = 0")
        starts = [s.start for s in segs]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ScenarioError("grid segments must be sorted and non-overlapping")
        if any(s.amplitude < 0 for s in segs):
            raise ScenarioError("grid amplitude multipliers must be nonnegative")
        theta0 = []
        theta = 0.0
        for k, s in enumerate(segs):
            theta += s.phase_offset
            theta0.append(theta)
            if k + 1 < len(segs):
                theta += 2.0 * math.pi * s.freq_hz * (segs[k + 1].start - s.start)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "_theta0", tuple(theta0))

    @classmethod
    def steady(cls, freq_hz: float = 60.0, amplitude: float = 1.0) -> "GridProfile":
        return cls((GridSegment(0.0, amplitude, freq_hz),))

    @property
    def event_times(self) -> tuple[float, ...]:
        return tuple(s.start for s in self.segments[1:])

    def segment_index(self, t):
        starts = np.array([s.start for s in self.segments])
        return np.minimum(np.searchsorted(starts, t, side="right") - 1,
                          len(self.segments) - 1)

    def angle(self, t):
        """Electrical angle theta(t) [rad], continuous within segments."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ScenarioError("grid profile sampled at negative time")
        k = self.segment_index(t)
        starts = np.array([s.start for s in self.segments])
        freqs = np.array([s.freq_hz for s in self.segments])
        th0 = np.array(self._theta0)
        out = th0[k] + 2.0 * math.pi * freqs[k] * (t - starts[k])
        return out if out.shape else float(out)

    def amplitude(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ScenarioError("grid profile sampled at negative time")
        k = self.segment_index(t)
        amps = np.array([s.amplitude for s in self.segments])
        out = amps[k]
        return out if out.shape else float(out)

    def frequency(self, t):
        t = np.asarray(t, dtype=float)
        k = self.segment_index(t)
        freqs = np.array([s.freq_hz for s in self.segments])
        out = freqs[k]
        return out if out.shape else float(out)


def grid_voltage(t, profile: GridProfile, nominal_peak: float):
    """Balanced grid source in the alpha/beta frame at time t.

    Returns ``A(t) * nominal_peak * (cos theta, sin theta)``; with array
    input the result has shape (2, len(t)).
    """
    th = profile.angle(t)
    a = profile.amplitude(t) * nominal_peak
    return np.array([a * np.cos(th), a * np.sin(th)])


# ---------------------------------------------------------------------------
# Load profile
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LoadProfile:
    """Demanded load power versus time [W].

    ``kind`` is "steps" (zero-order hold between breakpoints, the value
    at or after the last breakpoint holds) or "sampled" (piecewise
    linear between samples, held flat outside the sampled range).
    """

    times: tuple[float, ...]
    powers: tuple[float, ...]   # [W]
    kind: str = "steps"

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        powers = tuple(float(p) for p in self.powers)
        if len(times) != len(powers) or not times:
            raise ProfileError("load profile needs equally many times and powers")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ProfileError("load profile times must be strictly increasing")
        if any(p < 0 for p in powers):
            raise ProfileError("load power must be nonnegative")
        if self.kind not in ("steps", "sampled"):
            raise ProfileError(f"unknown load profile kind {self.kind!r}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "powers", powers)

    @classmethod
    def constant(cls, power: float) -> "LoadProfile":
        return cls((0.0,), (power,), "steps")

    @classmethod
    def from_steps(cls, steps, s_base: float = 1.0) -> "LoadProfile":
        """Build a ZOH profile from (time, power) pairs; powers scale by s_base."""
        ts, ps = zip(*steps)
        return cls(tuple(ts), tuple(p * s_base for p in ps), "steps")

    @property
    def event_times(self) -> tuple[float, ...]:
        """Times where the input is non-smooth (value or slope)."""
        return tuple(self.times[1:]) if len(self.times) > 1 else ()

    def power(self, t):
        """Demanded power at time t [W]; scalar or array."""
        t_arr = np.asarray(t, dtype=float)
        times = np.array(self.times)
        powers = np.array(self.powers)
        if self.kind == "steps":
            k = np.maximum(np.searchsorted(times, t_arr, side="right") - 1, 0)
            out = powers[k]
        else:
            out = np.interp(t_arr, times, powers)
        return out if out.shape else float(out)


# ---------------------------------------------------------------------------
# Algebraic maps and derivatives
# ---------------------------------------------------------------------------

def cpl_current(p_load: float, v_dc: float, v_dc_min: float):
    """Constant-power load current ``i = P / v`` with a division guard.

    Returns ``(i_load, clamped)``; the flag is True where the guard was
    active.  The incremental conductance ``d i/d v = -P/v^2`` is
    negative for any positive power, which is what makes this load
    non-passive.
    """
    if np.any(np.asarray(p_load) < 0):
        raise ParameterError("load power must be nonnegative")
    v = np.maximum(v_dc, v_dc_min)
    clamped = v_dc < v_dc_min
    return p_load / v, clamped


def ac_node_voltage(flux, e, v_g, params: PlantParams):
    """Voltage of the node between the line impedance and the filter.

    Derived by eliminating di/dt between the two loop equations of the
    lumped model::

        v_ac = v_g - R_g i - (L_g / L_tot)(v_g - e - R_tot i)

    The returned value satisfies both the grid-side and filter-side
    loop equations with the shared current (checked in tests).
    Accepts (2,) vectors or (2, n) arrays.
    """
    flux = np.asarray(flux, dtype=float)
    i = flux / params.l_tot
    mu = params.l_g / params.l_tot
    dflux = np.asarray(v_g, dtype=float) - np.asarray(e, dtype=float) - params.r_tot * i
    return np.asarray(v_g) - params.r_g * i - mu * dflux


def converter_dc_current(e, i_f, v_dc, eta, v_dc_min):
    """DC-side current of the averaged converter (see `ph_core.dc_port_current`)."""
    if np.any(np.asarray(eta) <= 0):
        raise ParameterError("eta must be positive")
    return ph_core.dc_port_current(e, i_f, v_dc, eta, v_dc_min)


@dataclass(frozen=True)
class PlantDerivatives:
    """Plant state derivatives plus the algebraic outputs they used."""

    d_flux: tuple[float, float]   # [V]
    d_q_dc: float                 # [A]
    v_g: tuple[float, float]      # [V]
    v_ac: tuple[float, float]     # [V]
    i_f: tuple[float, float]      # [A]
    i_conv: float                 # [A]
    i_load: float                 # [A]
    cpl_clamped: bool


def plant_derivatives(state: EnergyState, e, p_load: float, grid: GridProfile,
                      t: float, params: PlantParams) -> PlantDerivatives:
    """Time derivative of the plant block for a given converter voltage.

    d(flux)/dt = v_g(t) - e - R_tot i     (lumped series loop)
    d(q_dc)/dt = i_conv - i_load          (DC-link charge balance)
    """
    v_g = grid_voltage(t, grid, params.nominal_peak)
    ia = state.flux[0] / params.l_tot
    ib = state.flux[1] / params.l_tot
    dfa = v_g[0] - e[0] - params.r_tot * ia
    dfb = v_g[1] - e[1] - params.r_tot * ib
    v_dc = state.q_dc / params.c_dc
    i_load, clamped = cpl_current(p_load, v_dc, params.v_dc_min)
    i_conv = converter_dc_current(e, (ia, ib), v_dc, params.eta, params.v_dc_min)
    mu = params.l_g / params.l_tot
    v_ac = (v_g[0] - params.r_g * ia - mu * dfa,
            v_g[1] - params.r_g * ib - mu * dfb)
    return PlantDerivatives(
        d_flux=(dfa, dfb),
        d_q_dc=i_conv - i_load,
        v_g=(float(v_g[0]), float(v_g[1])),
        v_ac=v_ac,
        i_f=(ia, ib),
        i_conv=float(i_conv),
        i_load=float(i_load),
        cpl_clamped=bool(clamped),
    )
