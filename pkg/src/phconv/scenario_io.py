"""Scenario configuration, profile files and trajectory serialization.

Configs are sectioned key-value text (INI syntax) with units embedded in
the key names so a value can never be silently misread.  Parsing is
strict: unknown sections or keys are rejected, and every substituted
default is logged.  Load profiles travel as ``time_s,power_kw`` CSV.
Trajectory and report CSVs use a fixed, documented column order with
12-significant-digit floats, so identical runs serialize byte-identically.
"""

from __future__ import annotations

import configparser
import csv
import logging
import math
from decimal import Decimal
from pathlib import Path

import numpy as np

from .controllers import PhControllerGains, PiControllerGains
from .errors import ConfigError, PhconvError, ProfileError
from .plant import GridProfile, GridSegment, LoadProfile, PlantParams
from .sim_engine import (COLUMN_ORDER, ControllerConfig, Scenario,
                         TrajectoryRecord, default_ph_gains)

log = logging.getLogger("phconv")

FLOAT_FMT = "{:.12g}"

# keys whose values must be strictly positive / nonnegative; violations
# are reported by key name at parse time
_POSITIVE_KEYS = {
    ("plant", "l_g_mh"), ("plant", "l_f_mh"), ("plant", "c_dc_mf"),
    ("plant", "eta"), ("plant", "v_base_ac_v"), ("plant", "v_base_dc_v"),
    ("plant", "s_base_kw"), ("plant", "f_nom_hz"), ("plant", "v_dc_min_v"),
    ("controller", "k_v_a"), ("controller", "k_i_per_s"),
    ("controller", "tau_d_us"), ("controller", "tau_meas_us"),
    ("controller", "v_dc_ref_v"), ("controller", "v_ac_min_v"),
    ("controller", "i_limit_a"),
    ("sim", "duration_s"), ("sim", "step_us"), ("sim", "decimation"),
}
_NONNEG_KEYS = {
    ("plant", "r_g_mohm"), ("plant", "r_f_mohm"),
    ("controller", "a_v"), ("controller", "m_i"),
    ("controller", "kp_v_a_per_v"), ("controller", "ki_v_a_per_vs"),
    ("controller", "kp_i_v_per_a"), ("controller", "ki_i_v_per_as"),
}


# ---------------------------------------------------------------------------
# Config schema
# ---------------------------------------------------------------------------

# section -> key -> (kind, default or None when derived elsewhere)
_SCHEMA = {
    "scenario": {
        "name": ("str", "scenario"),
    },
    "plant": {
        "r_g_mohm": ("float", 0.6),
        "l_g_mh": ("float", 0.012),
        "r_f_mohm": ("float", 1.5),
        "l_f_mh": ("float", 0.03),
        "c_dc_mf": ("float", 10.0),
        "eta": ("float", 0.98),
        "v_base_ac_v": ("float", 480.0),
        "v_base_dc_v": ("float", 800.0),
        "s_base_kw": ("float", 500.0),
        "f_nom_hz": ("float", 60.0),
        "v_dc_min_v": ("float", None),      # 0.1 * v_base_dc_v
    },
    "controller": {
        "kind": ("str", "ph"),
        "k_v_a": ("float", 2000.0),
        "k_i_per_s": ("float", 4000.0),
        "a_v": ("float", 0.0),
        "m_i": ("float", 0.0),
        "q_ref_var": ("float", 0.0),
        "tau_d_us": ("float", None),        # 10 * step
        "tau_meas_us": ("float", None),     # max(150 us, 1.5 * tau_d)
        "v_dc_ref_v": ("float", None),      # v_base_dc_v
        "v_ac_min_v": ("float", None),      # 0.05 * nominal peak
        "kp_v_a_per_v": ("float", 6.0),
        "ki_v_a_per_vs": ("float", 450.0),
        "kp_i_v_per_a": ("float", 0.075),
        "ki_i_v_per_as": ("float", 40.0),
        "i_limit_a": ("float", 3000.0),
    },
    "grid": {
        # each segment: start_s amplitude_pu freq_hz phase_rad
        "segments": ("str", "0 1.0 60 0"),
    },
    "load": {
        "kind": ("str", "steps"),           # steps | csv | synthetic
        "steps": ("str", "0 1.0"),          # pairs: t_s p_pu
        "csv_path": ("str", ""),
        "synthetic_seed": ("int", 20),
    },
    "sim": {
        "duration_s": ("float", 2.0),
        "step_us": ("float", 10.0),
        "decimation": ("int", 10),
        "init": ("str", "equilibrium"),
    },
    "output": {
        "dir": ("str", "out"),
        "plots": ("str", "vdc,hdot,load"),
        "write_passivity": ("bool", True),
    },
}


# unit suffix embedded in a key name -> decimal exponent from display
# units to SI; the shift happens exactly in decimal so a serialize/parse
# round trip reproduces values bit-for-bit
_UNIT_EXP = {"_mohm": -3, "_mh": -3, "_mf": -3, "_kw": 3, "_us": -6}


def _unit_exp(key: str) -> int:
    for suffix, exp in _UNIT_EXP.items():
        if key.endswith(suffix):
            return exp
    return 0


def _to_si(display: str, exp: int) -> float:
    return float(Decimal(display).scaleb(exp))


def _to_display(si: float, exp: int) -> str:
    return str(Decimal(repr(si)).scaleb(-exp))


def _coerce(raw: str, kind: str, where: str, exp: int = 0):
    try:
        if kind == "float":
            return _to_si(raw.strip(), exp)
        if kind == "int":
            return int(raw)
        if kind == "bool":
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return raw.strip()
    except (ValueError, ArithmeticError) as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind}") from exc


def _read_config_text(text: str, source: str = "<string>") -> dict:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    values = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            kind, _ = _SCHEMA[section][key]
            val = _coerce(raw, kind, f"[{section}] {key}", _unit_exp(key))
            if (section, key) in _POSITIVE_KEYS and not val > 0:
                raise ConfigError(
                    f"{source}: [{section}] {key} must be positive, got {val}")
            if (section, key) in _NONNEG_KEYS and val < 0:
                raise ConfigError(
                    f"{source}: [{section}] {key} must be nonnegative, got {val}")
            values[(section, key)] = val
    return values


def _get(values: dict, section: str, key: str):
    """Configured value in SI units, falling back to the schema default."""
    kind, default = _SCHEMA[section][key]
    if (section, key) in values:
        return values[(section, key)]
    if default is not None:
        log.info("config: [%s] %s not set, using default %r", section, key, default)
        if kind == "float":
            return _to_si(repr(float(default)), _unit_exp(key))
    return default


def _parse_grid(values: dict) -> GridProfile:
    spec = _get(values, "grid", "segments")
    segments = []
    for part in spec.replace("\n", ";").split(";"):
        part = part.strip()
        if not part:
            continue
        fields = part.split()
        if len(fields) not in (3, 4):
            raise ConfigError(
                f"[grid] segments: expected 'start_s amp_pu freq_hz [phase_rad]', got {part!r}"
            )
        start, amp, freq = (float(f) for f in fields[:3])
        phase = float(fields[3]) if len(fields) == 4 else 0.0
        segments.append(GridSegment(start, amp, freq, phase))
    return GridProfile(tuple(segments))


def _parse_load(values: dict, s_base: float, duration: float) -> LoadProfile:
    kind = _get(values, "load", "kind")
    if kind == "steps":
        pairs = []
        spec = _get(values, "load", "steps")
        for part in spec.replace("\n", ";").split(";"):
            part = part.strip()
            if not part:
                continue
            fields = part.split()
            if len(fields) != 2:
                raise ConfigError(
                    f"[load] steps: expected 't_s p_pu' pairs, got {part!r}"
                )
            pairs.append((float(fields[0]), float(fields[1])))
        return LoadProfile.from_steps(pairs, s_base=s_base)
    if kind == "csv":
        path = _get(values, "load", "csv_path")
        if not path:
            raise ConfigError("[load] csv_path is required when kind = csv")
        return ingest_load_profile(path)
    if kind == "synthetic":
        seed = _get(values, "load", "synthetic_seed")
        return synthetic_server_hall_profile(seed, s_base, duration)
    raise ConfigError(f"[load] kind must be steps|csv|synthetic, got {kind!r}")


def parse_config_text(text: str, source: str = "<string>") -> Scenario:
    """Build a fully validated Scenario from config text."""
    values = _read_config_text(text, source)
    try:
        return _build_scenario(values)
    except ConfigError:
        raise
    except (ValueError, PhconvError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def _build_scenario(values: dict) -> Scenario:
    v_base_dc = _get(values, "plant", "v_base_dc_v")
    plant = PlantParams(
        r_g=_get(values, "plant", "r_g_mohm"),
        l_g=_get(values, "plant", "l_g_mh"),
        r_f=_get(values, "plant", "r_f_mohm"),
        l_f=_get(values, "plant", "l_f_mh"),
        c_dc=_get(values, "plant", "c_dc_mf"),
        eta=_get(values, "plant", "eta"),
        v_base_ac=_get(values, "plant", "v_base_ac_v"),
        v_base_dc=v_base_dc,
        s_base=_get(values, "plant", "s_base_kw"),
        f_nom=_get(values, "plant", "f_nom_hz"),
        v_dc_min=_get(values, "plant", "v_dc_min_v") or 0.1 * v_base_dc,
    )

    h = _get(values, "sim", "step_us")
    duration = _get(values, "sim", "duration_s")

    kind = _get(values, "controller", "kind")
    tau_d = _get(values, "controller", "tau_d_us")
    tau_d = tau_d if tau_d is not None else 10.0 * h
    tau_meas = _get(values, "controller", "tau_meas_us")
    ph = PhControllerGains(
        k_v=_get(values, "controller", "k_v_a"),
        k_i=_get(values, "controller", "k_i_per_s"),
        a_v=_get(values, "controller", "a_v"),
        m_i=_get(values, "controller", "m_i"),
        q_ref=_get(values, "controller", "q_ref_var"),
        tau_d=tau_d,
        v_dc_ref=_get(values, "controller", "v_dc_ref_v") or plant.v_base_dc,
        v_ac_min=_get(values, "controller", "v_ac_min_v") or 0.05 * plant.nominal_peak,
    )
    pi = PiControllerGains(
        kp_v=_get(values, "controller", "kp_v_a_per_v"),
        ki_v=_get(values, "controller", "ki_v_a_per_vs"),
        kp_i=_get(values, "controller", "kp_i_v_per_a"),
        ki_i=_get(values, "controller", "ki_i_v_per_as"),
        i_limit=_get(values, "controller", "i_limit_a"),
        v_dc_ref=_get(values, "controller", "v_dc_ref_v") or plant.v_base_dc,
    )
    control = ControllerConfig(kind=kind, ph=ph, pi=pi, tau_meas=tau_meas)

    return Scenario(
        name=_get(values, "scenario", "name"),
        duration=duration,
        plant=plant,
        control=control,
        grid=_parse_grid(values),
        load=_parse_load(values, plant.s_base, duration),
        h=h,
        decimation=_get(values, "sim", "decimation"),
        init=_get(values, "sim", "init"),
    )


def parse_config(path) -> Scenario:
    """Parse a scenario config file (see `serialize_config` for the format)."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"), source=str(p))


def output_options(path) -> dict:
    """The [output] section of a config file, with defaults."""
    p = Path(path)
    values = _read_config_text(p.read_text(encoding="utf-8"), source=str(p)) \
        if p.is_file() else {}
    plots = [s.strip() for s in str(_get(values, "output", "plots")).split(",") if s.strip()]
    return {
        "dir": _get(values, "output", "dir"),
        "plots": plots,
        "write_passivity": _get(values, "output", "write_passivity"),
    }


def serialize_config(sc: Scenario) -> str:
    """Render a Scenario back into config text (inverse of `parse_config`).

    Floats use shortest exact representation so a serialize/parse round
    trip reproduces the Scenario value-for-value.
    """
    p = sc.plant
    g = sc.resolved_ph_gains()
    pi = sc.resolved_pi_gains()

    def f(key, si_value):
        return _to_display(float(si_value), _unit_exp(key))

    segs = "; ".join(
        f"{repr(s.start)} {repr(s.amplitude)} {repr(s.freq_hz)} {repr(s.phase_offset)}"
        for s in sc.grid.segments
    )
    pairs = {
        "plant": [
            ("r_g_mohm", p.r_g), ("l_g_mh", p.l_g), ("r_f_mohm", p.r_f),
            ("l_f_mh", p.l_f), ("c_dc_mf", p.c_dc), ("eta", p.eta),
            ("v_base_ac_v", p.v_base_ac), ("v_base_dc_v", p.v_base_dc),
            ("s_base_kw", p.s_base), ("f_nom_hz", p.f_nom),
            ("v_dc_min_v", p.v_dc_min),
        ],
        "controller": [
            ("k_v_a", g.k_v), ("k_i_per_s", g.k_i), ("a_v", g.a_v),
            ("m_i", g.m_i), ("q_ref_var", g.q_ref), ("tau_d_us", g.tau_d),
            ("tau_meas_us", sc.resolved_tau_meas()),
            ("v_dc_ref_v", g.v_dc_ref), ("v_ac_min_v", g.v_ac_min),
            ("kp_v_a_per_v", pi.kp_v), ("ki_v_a_per_vs", pi.ki_v),
            ("kp_i_v_per_a", pi.kp_i), ("ki_i_v_per_as", pi.ki_i),
            ("i_limit_a", pi.i_limit),
        ],
    }
    lines = ["[scenario]", f"name = {sc.name}", "", "[plant]"]
    lines += [f"{k} = {f(k, v)}" for k, v in pairs["plant"]]
    lines += ["", "[controller]", f"kind = {sc.control.kind}"]
    lines += [f"{k} = {f(k, v)}" for k, v in pairs["controller"]]
    lines += ["", "[grid]", f"segments = {segs}", "", "[load]"]
    if sc.load.kind == "steps":
        steps = "; ".join(
            f"{repr(t)} {repr(pw / p.s_base)}"
            for t, pw in zip(sc.load.times, sc.load.powers)
        )
        lines += ["kind = steps", f"steps = {steps}"]
    else:
        # sampled profiles round-trip through their CSV file
        lines += ["kind = csv", "csv_path = load_profile.csv"]
    lines += [
        "",
        "[sim]",
        f"duration_s = {f('duration_s', sc.duration)}",
        f"step_us = {f('step_us', sc.h)}",
        f"decimation = {sc.decimation}",
        f"init = {sc.init if isinstance(sc.init, str) else 'equilibrium'}",
        "",
    ]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Load profile CSV
# ---------------------------------------------------------------------------

LOAD_HEADER = ["time_s", "power_kw"]


def ingest_load_profile(path) -> LoadProfile:
    """Read a ``time_s,power_kw`` CSV into a linearly interpolated profile.

    Rejects a wrong header, non-monotone times, negative powers and
    malformed rows, naming the offending row.
    """
    p = Path(path)
    if not p.is_file():
        raise ProfileError(f"load profile file not found: {p}")
    times, powers = [], []
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != LOAD_HEADER:
            raise ProfileError(
                f"{p}: expected header '{','.join(LOAD_HEADER)}', got {header!r}"
            )
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ProfileError(f"{p}: row {ln}: expected 2 fields, got {len(row)}")
            try:
                t, pw = float(row[0]), float(row[1])
            except ValueError as exc:
                raise ProfileError(f"{p}: row {ln}: {exc}") from exc
            if times and t <= times[-1]:
                raise ProfileError(f"{p}: row {ln}: time_s must be strictly increasing")
            if pw < 0:
                raise ProfileError(f"{p}: row {ln}: power_kw must be nonnegative")
            times.append(t)
            powers.append(pw * 1e3)
    if not times:
        raise ProfileError(f"{p}: no data rows")
    return LoadProfile(tuple(times), tuple(powers), "sampled")


def write_load_profile(profile: LoadProfile, path) -> Path:
    """Write a profile as ``time_s,power_kw`` CSV (LF endings, 12 digits)."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(LOAD_HEADER) + "\n")
        for t, pw in zip(profile.times, profile.powers):
            fh.write(f"{FLOAT_FMT.format(t)},{FLOAT_FMT.format(pw * 1e-3)}\n")
    return p


def synthetic_server_hall_profile(seed: int, s_base: float, duration: float,
                                  floor_pu: float = 0.5, ceil_pu: float = 1.05,
                                  max_step_pu: float = 0.15,
                                  dwell_s: tuple = (0.01, 0.04)) -> LoadProfile:
    """Seeded stand-in for a measured compute-hall load trace.

    A bounded random walk of power steps: dwell times are drawn from
    ``dwell_s`` and each step moves at most ``max_step_pu``, staying in
    ``[floor_pu, ceil_pu]``.  Step times snap to a 0.1 ms grid so they
    land on integration-step boundaries at the standard step sizes.
    Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    t, level = 0.0, 0.8
    times, powers = [0.0], [level * s_base]
    while True:
        t += float(rng.uniform(*dwell_s))
        # snap onto the exact floats of the integration grid (multiples
        # of 10 us), so a step boundary is a step boundary at any
        # power-of-two refinement of the standard step
        t_snap = (round(t / 1e-4) * 10) * 1e-5
        if t_snap >= duration:
            break
        level = float(np.clip(level + rng.uniform(-max_step_pu, max_step_pu),
                              floor_pu, ceil_pu))
        times.append(t_snap)
        powers.append(level * s_base)
    return LoadProfile(tuple(times), tuple(powers), "steps")


# ---------------------------------------------------------------------------
# Built-in study scenarios
# ---------------------------------------------------------------------------

DEMO_NAMES = ("normal", "ocp", "sag")


def demo_scenario(name: str, controller: str = "ph", seed: int = 20,
                  h: float = 10e-6, duration: float = 2.0,
                  plant: PlantParams = None) -> Scenario:
    """One of the three built-in case studies.

    normal  load step 1.0 -> 1.5 p.u. at t = 0.5 s, ideal grid
    ocp     seeded synthetic compute-hall load trace, ideal grid
    sag     20 % grid voltage sag from t = 0.5 s (cleared at 1.0 s),
            constant 1.0 p.u. load

    Demo scenarios record every step; file emission thins them back to
    the standard spacing.
    """
    p = plant if plant is not None else PlantParams()
    grid = GridProfile.steady(p.f_nom)
    if name == "normal":
        load = LoadProfile.from_steps([(0.0, 1.0), (0.5, 1.5)], s_base=p.s_base)
    elif name == "ocp":
        load = synthetic_server_hall_profile(seed, p.s_base, duration)
    elif name == "sag":
        load = LoadProfile.constant(1.0 * p.s_base)
        grid = GridProfile((
            GridSegment(0.0, 1.0, p.f_nom),
            GridSegment(0.5, 0.8, p.f_nom),
            GridSegment(1.0, 1.0, p.f_nom),
        ))
    else:
        raise ConfigError(f"unknown demo {name!r}; choose from {DEMO_NAMES}")
    return Scenario(
        name=f"{name}-{controller}",
        duration=duration,
        plant=p,
        control=ControllerConfig(kind=controller),
        grid=grid,
        load=load,
        h=h,
        decimation=1,
    )


def free_decay_scenario(plant: PlantParams = None, duration: float = 0.3,
                        current_pu: float = 0.6) -> Scenario:
    """Zero grid, zero load, converter gated off, energized initial state.

    Used by the passivity audit: with no external supply the stored
    energy must be non-increasing along the whole trajectory.
    """
    from .ph_core import EnergyState

    p = plant if plant is not None else PlantParams()
    i0 = current_pu * p.s_base / p.nominal_peak
    return Scenario(
        name="free-decay",
        duration=duration,
        plant=p,
        control=ControllerConfig(kind="none"),
        grid=GridProfile((GridSegment(0.0, 0.0, p.f_nom),)),
        load=LoadProfile.constant(0.0),
        init=EnergyState(flux=(p.l_tot * i0, 0.0), q_dc=p.c_dc * p.v_base_dc),
        h=10e-6,
        decimation=1,
    )


# ---------------------------------------------------------------------------
# Trajectory and report CSV
# ---------------------------------------------------------------------------

def emit_trajectory_csv(traj: TrajectoryRecord, path, thin: int = 1) -> Path:
    """Write the trajectory with the fixed column schema.

    Floats carry 12 significant digits and lines end in LF, so repeated
    runs of the same scenario produce byte-identical files.  An empty
    trajectory writes the header only.
    """
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    out = traj.thinned(thin) if thin > 1 else traj
    if out.n_records == 0:
        log.warning("trajectory is empty; writing header-only CSV to %s", p)
    cols = [out.columns[name] for name in COLUMN_ORDER]
    with p.open("w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(COLUMN_ORDER) + "\n")
        fmt = FLOAT_FMT.format
        for k in range(out.n_records):
            fh.write(",".join(fmt(col[k]) for col in cols) + "\n")
    return p


def read_trajectory_csv(path, s_base: float = None) -> TrajectoryRecord:
    """Load a trajectory CSV written by `emit_trajectory_csv`.

    The scenario context (event times, gains) is not stored in the CSV;
    re-audits may pass it explicitly.
    """
    p = Path(path)
    if not p.is_file():
        raise ProfileError(f"trajectory file not found: {p}")
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != COLUMN_ORDER:
            raise ProfileError(f"{p}: unexpected trajectory schema")
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.array(rows) if rows else np.empty((0, len(COLUMN_ORDER)))
    columns = {name: data[:, k] for k, name in enumerate(COLUMN_ORDER)}
    meta = {"scenario": p.stem, "controller": "unknown"}
    if s_base is not None:
        meta["s_base"] = s_base
    return TrajectoryRecord(columns, meta)


PASSIVITY_COLUMNS = [
    "t", "p_supply", "p_diss_grid", "p_diss_filter", "p_conv_loss",
    "p_load_draw", "hdot_tot", "hdot_ctl", "hdot_cl", "fd_hdot_cl",
    "residual", "margin", "diss_voltage_loop", "diss_current_loop",
]


def emit_passivity_csv(traj: TrajectoryRecord, report, path) -> Path:
    """Per-record energy-rate series next to the finite-difference check."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    n = traj.n_records
    fd = np.full(n, math.nan)
    hdot = traj["hdot_cl"]
    if n >= 3:
        t = traj.t
        fd[1:-1] = (traj["energy_cl"][2:] - traj["energy_cl"][:-2]) / (t[2:] - t[:-2])
    residual = fd - hdot
    diss_v = report.diss_voltage_loop if report.diss_voltage_loop is not None \
        else np.full(n, math.nan)
    diss_i = report.diss_current_loop if report.diss_current_loop is not None \
        else np.full(n, math.nan)
    series = {
        "t": traj.t, "p_supply": traj["p_supply"],
        "p_diss_grid": traj["p_diss_grid"], "p_diss_filter": traj["p_diss_filter"],
        "p_conv_loss": traj["p_conv_loss"], "p_load_draw": traj["p_load_draw"],
        "hdot_tot": traj["hdot_tot"], "hdot_ctl": traj["hdot_ctl"],
        "hdot_cl": hdot, "fd_hdot_cl": fd, "residual": residual,
        "margin": report.margin, "diss_voltage_loop": diss_v,
        "diss_current_loop": diss_i,
    }
    fmt = FLOAT_FMT.format
    with p.open("w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(PASSIVITY_COLUMNS) + "\n")
        for k in range(n):
            fh.write(",".join(fmt(series[c][k]) for c in PASSIVITY_COLUMNS) + "\n")
    return p


def emit_summary_csv(rows: list, path) -> Path:
    """One metrics row per run: regulation, passivity and consistency."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        raise ProfileError("no summary rows to write")
    keys = list(rows[0].keys())
    fmt = FLOAT_FMT.format
    with p.open("w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(keys) + "\n")
        for row in rows:
            fh.write(",".join(
                fmt(row[k]) if isinstance(row[k], float) else str(row[k])
                for k in keys) + "\n")
    return p


def summary_row(result) -> dict:
    """Flatten one RunResult into a summary CSV row."""
    reg = result.regulation
    pas = result.passivity
    con = result.consistency
    return {
        "scenario": result.trajectory.meta.get("scenario", ""),
        "controller": result.trajectory.meta.get("controller", ""),
        "records": result.trajectory.n_records,
        "failure": result.failure or "",
        "max_dev_pu": reg.max_deviation if reg else math.nan,
        "overshoot_pu": reg.overshoot if reg else math.nan,
        "undershoot_pu": reg.undershoot if reg else math.nan,
        "recovery_s": (reg.recovery_time if reg and reg.recovered else math.nan),
        "passivity_violations": float(pas.n_violations) if pas else math.nan,
        "passivity_max_excess_w": pas.max_excess if pas else math.nan,
        "consistency_max_rel": con.max_rel_mismatch if con else math.nan,
        "flag_cpl_clamp": float(np.any(result.trajectory["flag_cpl_clamp"] > 0))
        if result.trajectory.n_records else math.nan,
    }
