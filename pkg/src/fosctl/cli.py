"""Command-line front end.

Exit codes: 0 success (a diverged run is still a success), 1 configuration
error, 2 no feasible window found, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import warnings

import numpy as np

from . import config as cfgmod
from .errors import FosError, InfeasibleUpTo, SingularAggregateMatrix, DimensionMismatch
from .frac_core import gl_coefficients, phi_tail
from .mpc_ref import MpcConfig, MpcReference
from .sim_engine import Scenario, run, ultimate_sup
from .synthesis import find_min_v, scan_v, synthesize
from .svgplot import write_svg

log = logging.getLogger("fosctl")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_RUNTIME = 0, 1, 2, 3


def fmt(x) -> str:
    """17 significant digits: round-trips every double."""
    return "%.17g" % x


def csv_header(n, m, p, tracking):
    cols = ["k"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{i + 1}" for i in range(m)]
    cols += [f"w_{i + 1}" for i in range(p)]
    if tracking:
        cols += [f"xr_{i + 1}" for i in range(n)] + [f"ur_{i + 1}" for i in range(m)]
        cols += [f"e_{i + 1}" for i in range(n)]
    return cols + ["norm_x", "norm_e", "bound"]


def write_csv(path, traj):
    n, m = traj.states.shape[1], traj.inputs.shape[1]
    p = traj.disturbances.shape[1]
    tracking = traj.ref_states is not None
    errors = traj.errors if traj.errors is not None else traj.states
    bound = traj.bound if traj.bound is not None else float("nan")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(csv_header(n, m, p, tracking))
        for k in range(len(traj.states)):
            row = [str(k)] + [fmt(v) for v in traj.states[k]] + [fmt(v) for v in traj.inputs[k]]
            row += [fmt(v) for v in traj.disturbances[k]]
            if tracking:
                row += [fmt(v) for v in traj.ref_states[k]] + [fmt(v) for v in traj.ref_inputs[k]]
                row += [fmt(v) for v in errors[k]]
            row += [fmt(np.linalg.norm(traj.states[k])), fmt(np.linalg.norm(errors[k])), fmt(bound)]
            wr.writerow(row)


def write_plots(path, traj):
    t = traj.times
    panels = []
    for i in range(traj.states.shape[1]):
        series = [(f"x_{i + 1}", t, traj.states[:, i], False)]
        if traj.ref_states is not None:
            series.append((f"xr_{i + 1}", t, traj.ref_states[:, i], True))
        panels.append((f"state x_{i + 1}", series))
    errors = traj.errors if traj.errors is not None else traj.states
    panels.append(("error norm", [("|e|", t, np.linalg.norm(errors, axis=1), False)]))
    write_svg(path, panels)


def table_text(rows) -> str:
    head = f"{'v':>4} {'psi(v)':>12} {'c_psi':>12} {'c_psi*psi':>12} {'feasible':>9} {'c_gamma':>12} {'d':>12}"
    lines = [head]
    for r in rows:
        lines.append(f"{r['v']:>4} {r['psi']:>12.5g} {r['c_psi']:>12.5g} {r['condition']:>12.5g} "
                     f"{'yes' if r['feasible'] else 'no':>9} {r['c_gamma']:>12.5g} {r['d']:>12.5g}")
    return "\n".join(lines)


def _load(args):
    cfg = cfgmod.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg["scenario"]["seed"] = args.seed
    if getattr(args, "horizon", None) is not None:
        cfg["scenario"]["horizon"] = args.horizon
    if getattr(args, "v", None) is not None:
        cfg["analysis"]["v"] = args.v
    return cfg


def cmd_analyze(args) -> int:
    cfg = _load(args)
    model = cfgmod.build_model(cfg)
    params = cfgmod.build_params(cfg)
    a = cfg["analysis"]
    v_min = v_max = a["v"] if a["v"] is not None else None
    if v_max is None:
        v_min, v_max = 1, a["v_max"]
    scan = scan_v(model, params, v_max, v_min=v_min)
    text = table_text(scan.table)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["v", "psi", "c_psi", "condition", "feasible", "c_gamma", "d"])
            for r in scan.table:
                wr.writerow([r["v"], fmt(r["psi"]), fmt(r["c_psi"]), fmt(r["condition"]),
                             int(r["feasible"]), fmt(r["c_gamma"]), fmt(r["d"])])
    if scan.v_star is None:
        print(f"no feasible v in [{v_min}, {v_max}]")
        return EXIT_INFEASIBLE
    print(f"smallest feasible v: {scan.v_star}")
    return EXIT_OK


def _synthesis_for(cfg, model, params):
    v = cfg["analysis"]["v"]
    if v is None:
        _, res = find_min_v(model, params, cfg["analysis"]["v_max"])
        return res
    return synthesize(model, v, params)


def _mpc(cfg, syn):
    mc = cfg["mpc"]
    mcfg = MpcConfig.from_synthesis(syn, cfgmod.make_target(mc["target"]), horizon=mc["horizon"],
                                    c_le=mc["c_le"], c_s=mc["c_s"], w_track=mc["w_track"],
                                    w_input=mc["w_input"], tracked=mc["tracked"])
    return MpcReference(mcfg)


def _scenario(cfg, model, syn, force_mpc=False):
    s = cfg["scenario"]
    ref = s["reference"]
    kind = "track-vapprox" if force_mpc else s["kind"]
    x0 = s["x0"] if s["x0"] is not None else [0.0] * model.n
    reference = None
    ctrl = None
    if kind == "track-vapprox" and (force_mpc or ref["source"] == "mpc"):
        ctrl = _mpc(cfg, syn)
        reference = ctrl
    elif kind in ("track-fos", "track-vapprox") and ref["u_r"] is not None:
        u_r = np.asarray(ref["u_r"], float)
        reference = (lambda k, c=u_r.reshape(model.m): c) if u_r.size == model.m else u_r
    return Scenario(kind, model, syn, s["horizon"], x0, disturbance=s["disturbance"],
                    seed=s["seed"], reference=reference, ref_x0=ref["x0"]), ctrl


def _simulate(args, force_mpc=False) -> int:
    cfg = _load(args)
    model = cfgmod.build_model(cfg)
    params = cfgmod.build_params(cfg)
    try:
        syn = _synthesis_for(cfg, model, params)
    except InfeasibleUpTo as exc:
        print(table_text(exc.table))
        print(f"no feasible v <= {exc.v_max}")
        return EXIT_INFEASIBLE
    sc, ctrl = _scenario(cfg, model, syn, force_mpc)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        traj = run(sc)
    out = cfg["output"]
    os.makedirs(out["dir"], exist_ok=True)
    base = os.path.join(out["dir"], out["prefix"])
    if out["csv"]:
        write_csv(base + ".csv", traj)
    if out["svg"]:
        write_plots(base + ".svg", traj)
    status = "diverged" if traj.diverged else "ok"
    norms = traj.error_norms if traj.errors is not None else traj.state_norms
    lines = [
        f"status: {status}",
        f"kind: {sc.kind}",
        f"v: {syn.v}",
        f"feasible: {syn.feasible}",
        f"condition c_psi*psi: {fmt(syn.condition_value)}",
        f"steps: {traj.K}",
        f"final_norm_x: {fmt(traj.state_norms[-1])}",
        f"sup_norm_x: {fmt(np.max(traj.state_norms))}",
        f"sup_norm_e_trailing_half: {fmt(ultimate_sup(norms))}",
        f"gamma(b_w): {fmt(syn.gamma(model.b_w))}",
    ]
    if "d" in traj.extra:
        lines += [f"d: {fmt(traj.extra['d'])}", f"gamma(b_w)+d: {fmt(traj.bound)}",
                  f"b_xr: {fmt(traj.extra['b_xr'])}", f"b_ur: {fmt(traj.extra['b_ur'])}"]
    if ctrl is not None:
        lines.append(f"mpc_stalls: {ctrl.stalls}")
    summary = "\n".join(lines) + "\n"
    with open(base + "_summary.txt", "w", encoding="utf-8") as fh:
        fh.write(summary)
    sys.stdout.write(summary)
    return EXIT_OK


def cmd_simulate(args) -> int:
    return _simulate(args)


def cmd_mpc_track(args) -> int:
    return _simulate(args, force_mpc=True)


def cmd_coeffs(args) -> int:
    orders = args.orders
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        wr = csv.writer(out, lineterminator="\n")
        if args.phi:
            wr.writerow(["v"] + [f"phi_{a:g}" for a in orders])
            for v in range(args.J + 1):
                wr.writerow([v] + [fmt(phi_tail(a, v)) for a in orders])
        else:
            tables = [gl_coefficients(a, args.J) for a in orders]
            wr.writerow(["j"] + [f"c_{a:g}" for a in orders])
            for j in range(args.J + 1):
                wr.writerow([j] + [fmt(t[j]) for t in tables])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fosctl", description=__doc__.splitlines()[0])
    ap.add_argument("--verbose", "-V", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_overrides(p):
        p.add_argument("config", help="YAML configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--v", type=int)
        p.add_argument("--horizon", type=int)
        return p

    p = with_overrides(sub.add_parser("analyze", help="scan the feasibility condition over v"))
    p.add_argument("--out", help="write the scan table as CSV")
    p.set_defaults(func=cmd_analyze)
    p = with_overrides(sub.add_parser("simulate", help="run the configured scenario"))
    p.set_defaults(func=cmd_simulate)
    p = with_overrides(sub.add_parser("mpc-track", help="track an MPC-generated reference"))
    p.set_defaults(func=cmd_mpc_track)
    p = sub.add_parser("coeffs", help="dump GL coefficients or phi tails")
    p.add_argument("--orders", type=float, nargs="+", default=[0.5, 1.0, 1.7, 2.5])
    p.add_argument("--J", type=int, default=20, help="largest index j (or v with --phi)")
    p.add_argument("--phi", action="store_true", help="dump phi_a(v) instead of c_j^a")
    p.add_argument("--out")
    p.set_defaults(func=cmd_coeffs)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (cfgmod.ConfigError, SingularAggregateMatrix, DimensionMismatch, OSError) as exc:
        msg = str(exc)
        if isinstance(exc, SingularAggregateMatrix) and "singular aggregate matrix" not in msg:
            msg = "singular aggregate matrix: " + msg
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (FosError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        # invalid analysis parameters surface as plain ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
