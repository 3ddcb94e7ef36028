"""Command-line driver: ``swe run | eoc | check-operators | check-equivalence | gen-mesh``."""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import cases
from .io import ConfigError, format_eoc_table, parse_config, write_field_snapshot, write_report
from .limiting import ElementIndicatorLimiter, FCTLimiter, FixedBlend, random_nodal_alpha
from .operators import sbp
from .semidiscretization import BlendField, NonFiniteStateError
from .time_integration import StageFailure, TimeControls, integrate


def build_case(cfg):
    """Instantiate the case named in ``cfg`` with its solver and time options applied."""
    if cfg.case == "manufactured":
        side = int(round(np.sqrt(cfg.elements[0])))
        case = cases.manufactured_case(side, cfg.N, dt=cfg.dt or 5e-4, t_end=cfg.t_end)
    elif cfg.case == "wb":
        case = cases.well_balanced_case(cfg.seed, cfg.flux, cfg.formula, cfg.t_end, cfg.cfl or 0.9, cfg.N)
    elif cfg.case == "dam2d":
        case = cases.circular_dam_break_case(cfg.formula, cfg.t_end, cfg.cfl or 0.4, N=cfg.N)
    else:
        case = cases.channel_case(cfg.N, cfg.t_end, cfg.limiter, cfg.mesh, cfg.cfl or 0.225)
    case.variant = cfg.flux
    case.formula = cfg.formula
    wet = cfg.case == "channel"
    E, n = case.mesh.n_elements, case.mesh.N + 1
    if cfg.limiter == "fct":
        case.limiter = FCTLimiter(positivity=wet, wet_dry=wet)
    elif cfg.limiter == "element":
        case.limiter = ElementIndicatorLimiter(wet_dry=wet)
    elif cfg.limiter == "frozen-random":
        case.limiter = FixedBlend(BlendField.from_nodal(random_nodal_alpha(cfg.seed, E, n)))
    else:
        case.limiter = None
    steps = cfg.max_steps if cfg.max_steps is not None else 10**9
    case.controls = TimeControls(t_end=cfg.t_end, dt=cfg.dt, cfl=cfg.cfl, max_steps=steps)
    return case


def run(cfg, out=None):
    """Run one case and write snapshots, gauges and ``report.txt``; returns the exit status."""
    out = out or sys.stdout
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    case = build_case(cfg)
    sd = case.semidiscretization()
    mesh = case.mesh
    report = {
        "case": cfg.case, "flux": cfg.flux, "formula": cfg.formula, "limiter": cfg.limiter,
        "N": mesh.N, "elements": mesh.n_elements, "time_mode": case.controls.mode,
    }
    gauges = cases.GaugeRecorder(mesh, case.gauges) if case.gauges else None
    min_depth = [float(case.u0[..., 0].min())]
    extra = {}

    def rhs(u, t, dt=None):
        min_depth[0] = min(min_depth[0], float(u[..., 0].min()))
        return sd(u, t, dt)

    def alpha_nodes():
        alpha = sd.last_alpha if sd.last_alpha is not None else getattr(case.limiter, "alpha", None)
        return None if alpha is None else alpha.node_max()

    def snapshot(step, t, u):
        write_field_snapshot(outdir / f"snapshot_{step:06d}.txt", u, case.b, mesh, t, alpha_nodes())

    def callback(step, t, u):
        min_depth[0] = min(min_depth[0], float(u[..., 0].min()))
        if cfg.every and step % cfg.every == 0:
            snapshot(step, t, u)
        if gauges is not None and step % cfg.gauge_every == 0:
            gauges.record(u, case.b, t)
        if cfg.case == "dam2d" and step == 20:
            side = int(round(np.sqrt(mesh.n_elements)))
            extra["swap_symmetry_defect_step20"] = cases.swap_symmetry_defect(u, mesh, side)
            extra["point_reflection_defect_step20"] = cases.point_reflection_defect(u, mesh, side)
        return False

    snapshot(0, 0.0, case.u0)
    if gauges is not None:
        gauges.record(case.u0, case.b, 0.0)
    try:
        res = integrate(rhs, case.u0, case.controls, case.dt_fn(), callback, stage_filter=case.stage_filter)
    except (StageFailure, NonFiniteStateError) as exc:
        print(f"error: solver aborted: {exc}", file=sys.stderr)
        report["status"] = f"failed: {exc}"
        write_report(outdir / "report.txt", report)
        return 2
    u, t = res.u, res.t
    if not (cfg.every and res.steps % cfg.every == 0):
        snapshot(res.steps, t, u)
    if gauges is not None:
        if not gauges.times or gauges.times[-1] != t:
            gauges.record(u, case.b, t)
        gauges.write_csv(outdir / "gauges.csv")
        report["gauge_csv"] = str(outdir / "gauges.csv")
    report.update(status="ok", steps=res.steps, t=float(t), min_depth_all_stages=min_depth[0])
    if cfg.case == "wb":
        report["max_abs_H_minus_H0"] = float(np.abs(u[..., 0] + case.b - 0.45).max())
        report["max_abs_hv"] = float(np.abs(u[..., 1:]).max())
    if cfg.case == "manufactured":
        err = cases.l2_error(u, case.exact, mesh, t)
        report.update(l2_h=float(err[0]), l2_hv1=float(err[1]), l2_hv2=float(err[2]))
    report.update(extra)
    stats = getattr(case.limiter, "stats", None)
    if stats is not None:
        report.update(bound_checks=stats.checks, bound_violations=stats.violations,
                      max_bound_excess=stats.max_excess)
    write_report(outdir / "report.txt", report)
    for k, v in report.items():
        print(f"{k} = {v}", file=out)
    return 0


def eoc(cfg, out=None):
    """Convergence study over ``case.elements``; writes ``eoc.txt``."""
    out = out or sys.stdout
    if cfg.case != "manufactured":
        raise ConfigError("case.name: the eoc command needs case = manufactured")
    sides = [int(round(np.sqrt(n))) for n in cfg.elements]
    elements, errors, orders = cases.convergence_study(sides, cfg.N, cfg.dt or 5e-4, cfg.t_end, cfg.formula)
    table = format_eoc_table(elements, errors, orders)
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "eoc.txt").write_text(table + "\n")
    print(table, file=out)
    return 0


def check_operators(max_degree=7, tol=1e-13, out=None):
    out = out or sys.stdout
    worst = 0.0
    for N in range(1, max_degree + 1):
        d = sbp(N).sbp_defect()
        worst = max(worst, d)
        print(f"N = {N}: SBP defect {d:.3e}", file=out)
    ok = worst <= tol
    print(f"{'PASS' if ok else 'FAIL'}: largest defect {worst:.3e} (tolerance {tol:g})", file=out)
    return 0 if ok else 1


def check_equivalence(n_states=100, seed=0, tol=1e-12, out=None):
    out = out or sys.stdout
    errs = cases.equivalence_sweep(n_states, seed)
    for (mesh, formula), e in errs.items():
        print(f"{mesh:12s} {formula:12s} relative max error {e:.3e}", file=out)
    worst = max(errs.values())
    ok = worst <= tol
    print(f"{'PASS' if ok else 'FAIL'}: largest error {worst:.3e} (tolerance {tol:g})", file=out)
    return 0 if ok else 1


def gen_mesh(kind, path, out=None):
    out = out or sys.stdout
    if kind != "channel":
        raise ConfigError(f"unknown mesh kind {kind!r}; only 'channel' is available")
    cases.write_channel_mesh(path)
    print(f"wrote {path}", file=out)
    return 0


def _parser():
    p = argparse.ArgumentParser(prog="swe", description="DGSEM shallow water solver with subcell limiting")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run one case"), ("eoc", "manufactured-solution convergence study")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("config", nargs="?", help="INI configuration file")
        s.add_argument("--case", help="case name when no file is given (manufactured, wb, dam2d, channel)")
        s.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a configuration entry (repeatable)")
        s.add_argument("-o", "--output", help="output directory")
    s = sub.add_parser("check-operators", help="verify the SBP identities for N = 1..7")
    s.add_argument("--max-degree", type=int, default=7)
    s = sub.add_parser("check-equivalence", help="compare staggered assembly with the direct DGSEM")
    s.add_argument("--states", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s = sub.add_parser("gen-mesh", help="write a mesh file")
    s.add_argument("kind", choices=["channel"])
    s.add_argument("-o", "--output", default="channel.mesh")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command in ("run", "eoc"):
            overrides = list(args.set)
            if args.case:
                overrides.insert(0, f"case.name={args.case}")
            if args.output:
                overrides.append(f"output.directory={args.output}")
            if args.config is None and not args.case:
                raise ConfigError("give a configuration file or --case")
            cfg = parse_config(args.config, overrides)
            return run(cfg) if args.command == "run" else eoc(cfg)
        if args.command == "check-operators":
            return check_operators(args.max_degree)
        if args.command == "check-equivalence":
            return check_equivalence(args.states, args.seed)
        return gen_mesh(args.kind, args.output)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
