"""Energy-structure core: storage functions, structure matrices and the
analytic energy balance.

The model stores energy in three places: the lumped series inductor
(magnetic, alpha/beta flux), the DC-link capacitor (electric, charge) and
the controller integrators (artificial).  Everything downstream -- the
plant derivatives, the controller dissipation identities and the
trajectory audit -- is checked against the closed-form energy rate
implemented here, so this module is deliberately free of simulation
state: all functions are pure and accept scalars or numpy arrays.

Power convention: all AC-side powers are alpha/beta dot products
(``v[0]*i[0] + v[1]*i[1]``), and the converter transfers exactly that
bridge power to the DC side minus a loss proportional to the DC-side
throughput, ``(1 - eta) * v_dc * i_conv``.  This makes the total energy
rate an exact identity (see `energy_rate_analytic`), which is what the
audit relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StructureError

DEFAULT_TOL_PSD = 1e-9  # dimensionless, relative to the matrix norm


# ---------------------------------------------------------------------------
# Structure matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhStructure:
    """Constant structure matrices (J, R, G) of one storage block.

    J must be skew-symmetric (lossless internal routing), R symmetric
    positive semidefinite (damping), and G maps the m port inputs onto
    the n states.  Construction only checks shapes; numerical validity
    is the job of `validate_structure`.
    """

    j: np.ndarray  # n x n interconnection
    r: np.ndarray  # n x n dissipation
    g: np.ndarray  # n x m input map

    def __post_init__(self):
        j = np.atleast_2d(np.asarray(self.j, dtype=float))
        r = np.atleast_2d(np.asarray(self.r, dtype=float))
        g = np.atleast_2d(np.asarray(self.g, dtype=float))
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "g", g)
        n = j.shape[0]
        if j.shape != (n, n) or r.shape != (n, n):
            raise StructureError(
                f"J and R must be square and equally sized, got {j.shape} and {r.shape}"
            )
        if g.shape[0] != n:
            raise StructureError(
                f"G has {g.shape[0]} rows, expected {n} to match J"
            )

    @property
    def n(self) -> int:
        return self.j.shape[0]

    @property
    def m(self) -> int:
        return self.g.shape[1]


@dataclass(frozen=True)
class StructureReport:
    """Result of a structure validation pass."""

    skew_defect: float      # max |J + J^T| entry
    min_damping_eig: float  # smallest eigenvalue of (R + R^T)/2
    tol: float
    passed: bool

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return (
            f"structure {status}: skew defect {self.skew_defect:.3e}, "
            f"min damping eigenvalue {self.min_damping_eig:.3e} (tol {self.tol:.1e})"
        )


def validate_structure(s: PhStructure, tol_psd: float = DEFAULT_TOL_PSD) -> StructureReport:
    """Check skew-symmetry of J and positive semidefiniteness of R.

    Passes iff the worst skew defect ``max|J + J^T|`` is at most
    ``tol_psd`` and the smallest eigenvalue of the symmetrized R is at
    least ``-tol_psd``.
    """
    defect = float(np.max(np.abs(s.j + s.j.T))) if s.n else 0.0
    r_sym = 0.5 * (s.r + s.r.T)
    min_eig = float(np.min(np.linalg.eigvalsh(r_sym))) if s.n else 0.0
    passed = defect <= tol_psd and min_eig >= -tol_psd
    return StructureReport(defect, min_eig, tol_psd, passed)


def series_ac_structure(r_total: float) -> PhStructure:
    """Structure of the lumped series AC branch (2 flux states).

    Input ports are the grid voltage and the converter voltage, entering
    with opposite signs.
    """
    i2 = np.eye(2)
    return PhStructure(j=np.zeros((2, 2)), r=r_total * i2, g=np.hstack([i2, -i2]))


def dc_link_structure() -> PhStructure:
    """Structure of the DC-link charge state (converter in, load out)."""
    return PhStructure(j=np.zeros((1, 1)), r=np.zeros((1, 1)), g=np.array([[1.0, -1.0]]))


# ---------------------------------------------------------------------------
# Energy state and storage functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyState:
    """The energy-carrying state: lumped flux, DC charge, integrators.

    flux    alpha/beta flux linkage of the lumped series inductor [V*s]
    q_dc    DC-link capacitor charge [C]; must stay positive
    int_v   voltage-loop integral state [V*s]
    int_i   alpha/beta current-loop integral state [A*s]
    """

    flux: tuple[float, float]
    q_dc: float
    int_v: float = 0.0
    int_i: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        vals = (*self.flux, self.q_dc, self.int_v, *self.int_i)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("energy state entries must be finite")


@dataclass(frozen=True)
class EnergyBreakdown:
    """Stored energy split by location [J].

    ac       magnetic energy of the lumped series inductor (grid + filter)
    dc       electric energy of the DC-link capacitor
    ctl      artificial energy of the controller integrators
    tot      ac + dc (physical storage)
    cl       tot + ctl (closed-loop storage)
    """

    ac: float
    dc: float
    ctl: float

    @property
    def tot(self) -> float:
        return self.ac + self.dc

    @property
    def cl(self) -> float:
        return self.tot + self.ctl


def hamiltonian_total(state: EnergyState, params, gains=None) -> EnergyBreakdown:
    """Evaluate all storage functions at one state.

    Parameters
    ----------
    state : EnergyState
    params : object with ``l_tot``, ``l_f`` and ``c_dc`` attributes [H, H, F]
    gains : object with ``a_v`` and ``m_i`` attributes, or None for a run
        without controller storage.

    The grid and filter inductances share one current, so their energies
    are reported jointly as ``ac``.  The controller current-integral
    weight is ``l_f * m_i`` so that the artificial energy is in joules
    for a rate-like gain ``m_i`` [1/s^2].
    """
    fa, fb = state.flux
    ac = (fa * fa + fb * fb) / (2.0 * params.l_tot)
    dc = state.q_dc * state.q_dc / (2.0 * params.c_dc)
    if gains is None:
        ctl = 0.0
    else:
        za, zb = state.int_i
        ctl = 0.5 * gains.a_v * state.int_v ** 2 \
            + 0.5 * params.l_f * gains.m_i * (za * za + zb * zb)
    return EnergyBreakdown(ac=ac, dc=dc, ctl=ctl)


def hamiltonian_gradient(state: EnergyState, params, gains=None) -> np.ndarray:
    """Gradient of the closed-loop storage w.r.t. (flux, q_dc, int_v, int_i)."""
    fa, fb = state.flux
    a_v = gains.a_v if gains is not None else 0.0
    m_i = gains.m_i if gains is not None else 0.0
    za, zb = state.int_i
    return np.array([
        fa / params.l_tot,
        fb / params.l_tot,
        state.q_dc / params.c_dc,
        a_v * state.int_v,
        params.l_f * m_i * za,
        params.l_f * m_i * zb,
    ])


# ---------------------------------------------------------------------------
# DC port and analytic energy rate
# ---------------------------------------------------------------------------

def dc_port_current(e, i_f, v_dc, eta, v_dc_min):
    """Current the converter injects into the DC link [A].

    The bridge absorbs the dot-product power ``e . i_f`` at its AC
    terminals and delivers ``v_dc * i_conv`` to the DC link; the
    difference is the conversion loss, accounted as
    ``(1 - eta) * v_dc * i_conv`` (loss proportional to DC-side
    throughput), hence::

        i_conv = (e . i_f) / ((2 - eta) * max(v_dc, v_dc_min))

    At eta = 1 this is the ideal lossless bridge.  Accepts scalars or
    arrays (broadcast on the trailing shape of v_dc).
    """
    ea, eb = e[0], e[1]
    ia, ib = i_f[0], i_f[1]
    v = np.maximum(v_dc, v_dc_min)
    return (ea * ia + eb * ib) / ((2.0 - eta) * v)


@dataclass(frozen=True)
class EnergyRateTerms:
    """The five named terms of the total energy rate [W].

    supply       v_g . i_f, instantaneous power drawn from the grid
    grid_r       R_g |i_f|^2, line resistance dissipation
    filter_r     R_f |i_f|^2, filter resistance dissipation
    conv_loss    conversion loss, (1 - eta) v_dc i_conv when unclamped
    load_draw    v_dc i_load, power extracted by the load
    """

    supply: float
    grid_r: float
    filter_r: float
    conv_loss: float
    load_draw: float

    @property
    def total(self) -> float:
        return self.supply - self.grid_r - self.filter_r - self.conv_loss - self.load_draw


def energy_rate_analytic(state: EnergyState, v_g, e, p_load: float, params) -> EnergyRateTerms:
    """Closed-form rate of the physical stored energy at one state.

    The returned terms sum exactly (to roundoff) to the time derivative
    of ``hamiltonian_total(...).tot`` along the simulated dynamics; the
    audit module checks that identity on every trajectory.

    Raises SingularityError when the DC voltage is below the division
    guard (strict mode; the simulation loop clamps and flags instead).
    """
    from .errors import SingularityError

    v_dc = state.q_dc / params.c_dc
    if v_dc < params.v_dc_min:
        raise SingularityError(
            f"v_dc = {v_dc:.3f} V below guard {params.v_dc_min:.3f} V"
        )
    ia = state.flux[0] / params.l_tot
    ib = state.flux[1] / params.l_tot
    i_sq = ia * ia + ib * ib
    supply = v_g[0] * ia + v_g[1] * ib
    i_conv = dc_port_current(e, (ia, ib), v_dc, params.eta, params.v_dc_min)
    i_load = p_load / v_dc
    bridge = e[0] * ia + e[1] * ib
    return EnergyRateTerms(
        supply=supply,
        grid_r=params.r_g * i_sq,
        filter_r=params.r_f * i_sq,
        conv_loss=bridge - v_dc * i_conv,  # == (1 - eta) v_dc i_conv unclamped
        load_draw=v_dc * i_load,
    )
