"""Command-line entry point.

Subcommands: ``run`` (one scenario from a config), ``compare`` (both
controllers on the same scenario), ``sweep`` (grid over config overrides),
``audit`` (re-check an existing trajectory CSV) and ``demo`` (the three
built-in case studies).  ``--check`` turns the report into a gate: the
process exits 2 when a regulation band, the passivity bound or the
energy-balance consistency fails, so the case studies run headlessly in CI.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import audit, plots, scenario_io
from .errors import PhconvError
from .sim_engine import RunResult, Scenario, run_scenario

log = logging.getLogger("phconv")

# demo name -> (regulation band [p.u.], recovery band [p.u.], recovery window [s])
_DEMO_BANDS = {
    "normal": (0.02, 0.005, 0.2),
    "ocp": (0.01, None, None),
    "sag": (0.02, None, None),
}
CONSISTENCY_TOL = 1e-4
FILE_THIN = 10  # demo trajectories are written at every 10th record


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors, per the CLI contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="phconv",
                     description="Grid-tied converter simulation and energy audit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        if config_required:
            p.add_argument("--config", required=True, help="scenario config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--check", action="store_true",
                       help="gate on regulation/passivity/consistency (exit 2 on failure)")
        p.add_argument("--seed", type=int, default=20,
                       help="seed for the synthetic load generator")
        p.add_argument("--step-us", type=float, default=None,
                       help="override integration step [us]")
        p.add_argument("--duration-s", type=float, default=None,
                       help="override run duration [s]")
        p.add_argument("--no-plots", action="store_true", help="skip SVG rendering")

    p_run = sub.add_parser("run", help="run one scenario from a config file")
    common(p_run, config_required=True)
    p_run.add_argument("--controller", choices=("ph", "pi"), default=None,
                       help="override the configured controller")

    p_cmp = sub.add_parser("compare", help="run PH and PI on the same scenario")
    g = p_cmp.add_mutually_exclusive_group(required=True)
    g.add_argument("--config", help="scenario config file")
    g.add_argument("--demo", choices=scenario_io.DEMO_NAMES, help="built-in scenario")
    common(p_cmp)

    p_sweep = sub.add_parser("sweep", help="grid over config overrides")
    common(p_sweep, config_required=True)
    p_sweep.add_argument("--set", action="append", default=[], metavar="SEC.KEY=V1,V2",
                         help="values to sweep, e.g. controller.k_v_a=500,2000")
    p_sweep.add_argument("--workers", type=int, default=1,
                         help="parallel worker processes")

    p_aud = sub.add_parser("audit", help="re-audit an existing trajectory CSV")
    p_aud.add_argument("--trajectory", required=True, help="trajectory CSV path")
    p_aud.add_argument("--s-base-kw", type=float, default=500.0,
                       help="power base for tolerances [kW]")
    p_aud.add_argument("--band", type=float, default=0.02,
                       help="regulation band [p.u.]")
    p_aud.add_argument("--events", default="",
                       help="comma-separated input event times [s]")
    p_aud.add_argument("--check", action="store_true",
                       help="exit 2 when a check fails")

    p_demo = sub.add_parser("demo", help="run a built-in case study")
    p_demo.add_argument("name", choices=scenario_io.DEMO_NAMES)
    p_demo.add_argument("--controller", choices=("ph", "pi"), default="ph")
    common(p_demo)

    return parser


# ---------------------------------------------------------------------------
# Shared run/report plumbing
# ---------------------------------------------------------------------------

def _apply_overrides(sc_args, sc: Scenario) -> Scenario:
    from dataclasses import replace

    changes = {}
    if sc_args.step_us is not None:
        changes["h"] = sc_args.step_us * 1e-6
    if sc_args.duration_s is not None:
        changes["duration"] = sc_args.duration_s
    return replace(sc, **changes) if changes else sc


def _emit_outputs(result: RunResult, out_dir: Path, stem: str, thin: int,
                  make_plots: bool, plot_names=("vdc", "hdot", "load")) -> None:
    traj = result.trajectory
    scenario_io.emit_trajectory_csv(traj, out_dir / f"{stem}_trajectory.csv", thin=thin)
    if result.passivity is not None:
        scenario_io.emit_passivity_csv(traj.thinned(thin), audit.passivity_check(traj.thinned(thin)),
                                       out_dir / f"{stem}_passivity.csv")
    scenario_io.emit_summary_csv([scenario_io.summary_row(result)],
                                 out_dir / f"{stem}_summary.csv")
    if make_plots and traj.n_records:
        plots.render_standard_plots(traj.thinned(thin), out_dir, stem, plot_names)


def _print_report(result: RunResult) -> None:
    meta = result.trajectory.meta
    print(f"scenario {meta.get('scenario')} ({meta.get('controller')}): "
          f"{result.trajectory.n_records} records")
    if result.failure:
        print(f"  RUN INCOMPLETE: {result.failure}")
    if result.regulation:
        r = result.regulation
        rec = f"{r.recovery_time:.4f} s" if r.recovered else "unrecovered"
        print(f"  v_dc deviation: max {r.max_deviation * 100:.3f} % "
              f"(+{r.overshoot * 100:.3f} / -{r.undershoot * 100:.3f}), "
              f"recovery to +/-{r.band * 100:.1f} %: {rec}")
    if result.passivity:
        p = result.passivity
        print(f"  passivity: {p.n_violations} violating records "
              f"(worst excess {p.max_excess:.3e} W, tol {p.tol_abs:.1e} W)")
    if result.consistency:
        c = result.consistency
        print(f"  energy balance: max relative mismatch {c.max_rel_mismatch:.3e} "
              f"({c.n_checked} records checked, {c.n_excluded} near events excluded)")


def _check_gate(result: RunResult, band: float, recovery: tuple = None,
                hdot_signature: tuple = None, consistency_tol: float = None) -> list:
    """Evaluate the pass/fail gates; returns a list of failure strings."""
    fails = []
    if result.failure:
        fails.append(f"run incomplete: {result.failure}")
        return fails
    traj = result.trajectory
    reg = audit.regulation_metrics(traj, band,
                                   event_times=result.scenario.event_times)
    if reg.max_deviation > band:
        fails.append(f"regulation: max |v_dc - 1| = {reg.max_deviation:.4f} p.u. "
                     f"exceeds band {band}")
    if recovery is not None:
        r_band, r_window = recovery
        rec = audit.regulation_metrics(traj, r_band,
                                       event_times=result.scenario.event_times)
        if not rec.recovered or rec.recovery_time > r_window:
            got = f"{rec.recovery_time:.3f} s" if rec.recovered else "never"
            fails.append(f"recovery to +/-{r_band} p.u. took {got} "
                         f"(limit {r_window} s)")
    if hdot_signature is not None:
        t_event, window, settle_tol = hdot_signature
        t = traj.t
        hdot = traj["hdot_cl"]
        win = (t >= t_event) & (t <= t_event + window)
        if not np.any(hdot[win] < 0.0):
            fails.append("energy-rate signature: no negative excursion after the event")
        tail = t >= t[-1] - 0.2
        worst_tail = float(np.max(np.abs(hdot[tail])))
        if worst_tail >= settle_tol:
            fails.append(f"energy-rate signature: |Hdot| = {worst_tail:.3e} W "
                         f"not settled below {settle_tol:.3e} W")
    if result.passivity and result.passivity.n_violations:
        fails.append(f"passivity: {result.passivity.n_violations} records exceed "
                     f"the supply-rate bound")
    if consistency_tol is not None and result.consistency:
        if result.consistency.max_rel_mismatch > consistency_tol:
            fails.append(f"energy balance: mismatch "
                         f"{result.consistency.max_rel_mismatch:.3e} exceeds "
                         f"{consistency_tol:.1e}")
    return fails


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_demo(args) -> int:
    sc = scenario_io.demo_scenario(args.name, controller=args.controller,
                                   seed=args.seed)
    sc = _apply_overrides(args, sc)
    result = run_scenario(sc)
    out = Path(args.out)
    stem = sc.name
    _emit_outputs(result, out, stem, FILE_THIN, not args.no_plots)
    _print_report(result)
    print(f"outputs written to {out}/{stem}_*")
    if not args.check:
        return 0 if result.ok else 1
    band, r_band, r_window = _DEMO_BANDS[args.name]
    recovery = (r_band, r_window) if r_band is not None else None
    # energy-rate signature only applies when the load step is in horizon
    signature = (0.5, 0.05, 1e-3 * sc.plant.s_base) \
        if args.name == "normal" and sc.duration >= 0.55 else None
    fails = _check_gate(result, band, recovery, signature, CONSISTENCY_TOL)
    for f in fails:
        print(f"CHECK FAILED: {f}")
    if not fails:
        print("all checks passed")
    return 2 if fails else 0


def _cmd_run(args) -> int:
    sc = scenario_io.parse_config(args.config)
    if args.controller:
        from dataclasses import replace
        sc = replace(sc, control=replace(sc.control, kind=args.controller))
    sc = _apply_overrides(args, sc)
    result = run_scenario(sc)
    opts = scenario_io.output_options(args.config)
    out = Path(args.out if args.out != "out" else opts["dir"])
    _emit_outputs(result, out, sc.name, 1, not args.no_plots, tuple(opts["plots"]))
    _print_report(result)
    if not args.check:
        return 0 if result.ok else 1
    tol = CONSISTENCY_TOL if sc.decimation == 1 else None
    if tol is None:
        log.info("decimation > 1: consistency reported but not gated")
    fails = _check_gate(result, 0.02, consistency_tol=tol)
    for f in fails:
        print(f"CHECK FAILED: {f}")
    return 2 if fails else 0


def _cmd_compare(args) -> int:
    from dataclasses import replace

    if args.demo:
        base = scenario_io.demo_scenario(args.demo, seed=args.seed)
    else:
        base = scenario_io.parse_config(args.config)
    base = _apply_overrides(args, base)
    out = Path(args.out)
    results = {}
    for kind in ("ph", "pi"):
        sc = replace(base, control=replace(base.control, kind=kind))
        results[kind] = run_scenario(sc)
        _emit_outputs(results[kind], out, f"{base.name}_{kind}",
                      FILE_THIN if base.decimation == 1 else 1, not args.no_plots)
        _print_report(results[kind])
    table = audit.compare_runs(results["ph"], results["pi"])
    print()
    print(table.as_text())
    rows = [scenario_io.summary_row(results["ph"]),
            scenario_io.summary_row(results["pi"])]
    scenario_io.emit_summary_csv(rows, out / f"{base.name}_compare.csv")
    return 0


def _sweep_variant(payload):
    """Worker: parse an overridden config and run it (picklable top-level fn)."""
    text, overrides, label = payload
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(text)
    for (section, key), value in overrides.items():
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, value)
    buf = []
    for section in cp.sections():
        buf.append(f"[{section}]")
        buf.extend(f"{k} = {v}" for k, v in cp.items(section))
        buf.append("")
    sc = scenario_io.parse_config_text("\n".join(buf), source=f"sweep:{label}")
    from dataclasses import replace
    sc = replace(sc, name=f"{sc.name}@{label}")
    result = run_scenario(sc)
    row = scenario_io.summary_row(result)
    row["variant"] = label
    return row


def _cmd_sweep(args) -> int:
    import itertools

    text = Path(args.config).read_text(encoding="utf-8")
    axes = []
    for spec in args.set:
        try:
            target, values = spec.split("=", 1)
            section, key = target.strip().split(".", 1)
        except ValueError:
            raise PhconvError(
                f"--set expects SECTION.KEY=V1,V2,... got {spec!r}") from None
        axes.append([((section.strip(), key.strip()), v.strip())
                     for v in values.split(",")])
    if not axes:
        raise PhconvError("sweep needs at least one --set axis")
    jobs = []
    for combo in itertools.product(*axes):
        overrides = dict(combo)
        label = ",".join(f"{sec}.{key}={val}" for (sec, key), val in combo)
        jobs.append((text, overrides, label))
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_sweep_variant, jobs))
    else:
        rows = [_sweep_variant(j) for j in jobs]
    rows.sort(key=lambda r: r["variant"])
    out = Path(args.out)
    path = scenario_io.emit_summary_csv(rows, out / "sweep_metrics.csv")
    for row in rows:
        print(f"{row['variant']}: max_dev={row['max_dev_pu']:.4f} p.u., "
              f"violations={row['passivity_violations']:.0f}, "
              f"failure={row['failure'] or 'none'}")
    print(f"sweep metrics written to {path}")
    return 0


def _cmd_audit(args) -> int:
    traj = scenario_io.read_trajectory_csv(args.trajectory,
                                           s_base=args.s_base_kw * 1e3)
    events = tuple(float(v) for v in args.events.split(",") if v.strip())
    traj.meta["event_times"] = events
    reg = audit.regulation_metrics(traj, args.band, event_times=events)
    pas = audit.passivity_check(traj)
    con = audit.energy_consistency_check(traj)
    rec = f"{reg.recovery_time:.4f} s" if reg.recovered else "unrecovered"
    print(f"regulation: max dev {reg.max_deviation * 100:.3f} %, recovery {rec}")
    print(f"passivity: {pas.n_violations} violating records "
          f"(worst excess {pas.max_excess:.3e} W)")
    print(f"energy balance: max relative mismatch {con.max_rel_mismatch:.3e}")
    if not args.check:
        return 0
    bad = (reg.max_deviation > args.band or pas.n_violations > 0)
    if bad:
        print("CHECK FAILED")
    return 2 if bad else 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {
        "run": _cmd_run,
        "compare": _cmd_compare,
        "sweep": _cmd_sweep,
        "audit": _cmd_audit,
        "demo": _cmd_demo,
    }
    try:
        return handlers[args.command](args)
    except PhconvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
