"""Static figure rendering for run reports.

One chart per SVG file, axes in per-unit and seconds.  Output is kept
deterministic (fixed hash salt, no embedded date) so figures regenerate
identically for identical runs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .sim_engine import TrajectoryRecord  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "phconv"

_SAVE_KW = {"format": "svg", "metadata": {"Date": None}}


def _new_axis(ylabel: str, title: str):
    fig, ax = plt.subplots(figsize=(7.0, 3.2))
    ax.set_xlabel("time [s]")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    return fig, ax


def _finish(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def plot_dc_voltage(traj: TrajectoryRecord, path) -> Path:
    """DC bus voltage in per-unit versus time."""
    fig, ax = _new_axis("DC bus voltage [p.u.]",
                        str(traj.meta.get("scenario", "run")))
    ax.plot(traj.t, traj["v_dc_pu"], lw=0.9)
    ax.axhline(1.0, color="k", lw=0.6, alpha=0.4)
    return _finish(fig, Path(path))


def plot_energy_rate(traj: TrajectoryRecord, path) -> Path:
    """Stored-energy rate (closed loop and physical) in per-unit power."""
    s_base = traj.meta.get("s_base", 1.0)
    fig, ax = _new_axis("stored-energy rate [p.u.]",
                        str(traj.meta.get("scenario", "run")))
    ax.plot(traj.t, traj["hdot_cl"] / s_base, lw=0.9, label="closed loop")
    ax.plot(traj.t, traj["hdot_tot"] / s_base, lw=0.7, alpha=0.6,
            label="physical", ls="--")
    ax.legend(loc="best", fontsize=8)
    return _finish(fig, Path(path))


def plot_load(traj: TrajectoryRecord, path) -> Path:
    """Demanded load power in per-unit versus time."""
    s_base = traj.meta.get("s_base", 1.0)
    fig, ax = _new_axis("load power [p.u.]",
                        str(traj.meta.get("scenario", "run")))
    ax.plot(traj.t, traj["p_load"] / s_base, lw=0.9)
    return _finish(fig, Path(path))


def plot_currents(traj: TrajectoryRecord, path) -> Path:
    """Series current magnitude and its reference."""
    fig, ax = _new_axis("current magnitude [A]",
                        str(traj.meta.get("scenario", "run")))
    i_mag = (traj["i_a"] ** 2 + traj["i_b"] ** 2) ** 0.5
    iref_mag = (traj["iref_a"] ** 2 + traj["iref_b"] ** 2) ** 0.5
    ax.plot(traj.t, i_mag, lw=0.9, label="|i_f|")
    ax.plot(traj.t, iref_mag, lw=0.7, ls="--", alpha=0.7, label="|i_ref|")
    ax.legend(loc="best", fontsize=8)
    return _finish(fig, Path(path))


_PLOTTERS = {
    "vdc": ("_vdc.svg", plot_dc_voltage),
    "hdot": ("_hdot.svg", plot_energy_rate),
    "load": ("_load.svg", plot_load),
    "current": ("_current.svg", plot_currents),
}


def render_standard_plots(traj: TrajectoryRecord, out_dir, stem: str,
                          which=("vdc", "hdot", "load")) -> list:
    """Render the selected charts as ``<stem><suffix>.svg`` files."""
    out = Path(out_dir)
    written = []
    for name in which:
        if name not in _PLOTTERS:
            raise ValueError(f"unknown plot {name!r}; choose from {sorted(_PLOTTERS)}")
        suffix, fn = _PLOTTERS[name]
        written.append(fn(traj, out / f"{stem}{suffix}"))
    return written
