"""Command line entry point ``wkbtorus``.

Every subcommand reads the JSON experiment config (``--config``, defaults
otherwise) and writes tidy CSV plus a JSON report under ``--out``.
``verify-thm1`` and ``verify-thm2`` exit with status 0 only if every
enabled acceptance criterion passes.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, pipeline
from .config import load_config
from .errors import WkbTorusError
from .grid import TWO_PI, as_points
from .hamiltonian import ham_eval, trajectory
from .measures import (
    GridMeasure,
    PhaseParticleMeasure,
    graph_distance_report,
    grid_to_particles,
    project,
    sinkhorn,
    w1_circle,
)
from .schrodinger import energy, propagate_samples
from .transport import cost_matrix, displacement_check, kantorovich
from .wigner import (
    classical_pairing,
    husimi,
    husimi_position_marginal,
    pairing,
    shell_profile,
    symbol_battery,
)

log = logging.getLogger("wkbtorus")


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--seed", type=int, help="sampling seed (overrides config)")
    common.add_argument("--quiet", action="store_true", help="only print errors")

    ap = argparse.ArgumentParser(prog="wkbtorus", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("weakkam", parents=[common], help="solve for S+ and write it")
    p = sub.add_parser("flow", parents=[common], help="Hamiltonian trajectory")
    p.add_argument("--x", required=True, help="initial position, comma separated")
    p.add_argument("--p", required=True, help="initial momentum, comma separated")
    p.add_argument("--t", type=float, default=1.0)
    p = sub.add_parser("schrod", parents=[common], help="propagate the WKB state")
    p.add_argument("--hbar", type=float, help="default: smallest hbar in the config")
    p = sub.add_parser("wigner", parents=[common], help="pairings and Husimi fields")
    p.add_argument("--hbar", type=float, help="default: smallest hbar in the config")
    p = sub.add_parser("measure", parents=[common], help="distances between measures")
    p.add_argument("--mu", required=True)
    p.add_argument("--nu", required=True)
    p = sub.add_parser("ot", parents=[common], help="cost matrix, plan and displacement check")
    p.add_argument("--mu", required=True, help="source particle measure (CSV)")
    p.add_argument("--nu", help="target measure (CSV); default: flowed source")
    p.add_argument("--t", type=float, default=1.0)
    sub.add_parser("verify-thm1", parents=[common], help="classical limit, quantum and transport criteria (1-5, 7, 9, 10)")
    sub.add_parser("verify-thm2", parents=[common], help="pushforward cross-check criteria (6, 8)")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, output=args.out)
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, args, out)
    except (WkbTorusError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def _say(args, text):
    if not args.quiet:
        print(text)


def cmd_weakkam(cfg, args, out):
    ctx = pipeline.Context(cfg)
    S = ctx.S
    pipeline.write_weakkam_csv(S, out / "weakkam.csv")
    rep = {"c0": S.c0, "residual": S.residual, "iterations": S.iterations,
           "final_change": S.final_change, "drift_per_step": S.drift_per_step,
           "excluded_nodes": int((~S.diff_mask).sum()), "points_per_dim": S.grid.n}
    io.write_json(out / "weakkam.json", rep)
    _say(args, f"c0={S.c0:.6g} residual={S.residual:.3e} iterations={S.iterations}")
    return 0


def cmd_flow(cfg, args, out):
    V = cfg.potential_obj
    x = as_points(_floats(args.x), cfg.dim)
    p = as_points(_floats(args.p), cfg.dim)
    ts, X, P = trajectory(x, p, args.t, V, cfg.mass, cfg.flow_step)
    X, P = X[:, 0, :], P[:, 0, :]
    H = ham_eval(np.mod(X, TWO_PI), P, V, cfg.mass)
    names = ["x", "y"][: cfg.dim]
    io.write_table(out / "trajectory.csv", ["t"] + names + [f"p{i}" for i in range(cfg.dim)] + ["H"],
                   [ts] + [X[:, i] for i in range(cfg.dim)] + [P[:, i] for i in range(cfg.dim)]
                   + [H])
    _say(args, f"{len(ts)} samples, energy drift {np.ptp(H):.3e}")
    return 0


def cmd_schrod(cfg, args, out):
    ctx = pipeline.Context(cfg)
    hb = args.hbar or min(cfg.hbars)
    psi0 = ctx.wkb(hb).psi
    states = propagate_samples(psi0, cfg.times, cfg.schrodinger_dt, ctx.V)
    rows = []
    nodes = psi0.grid.nodes()
    for t, psi in zip(cfg.times, states):
        d = np.abs(psi.values.ravel()) ** 2
        for j in range(len(d)):
            row = {"t": t}
            row.update({n: nodes[j, i] for i, n in enumerate(["x", "y"][: cfg.dim])})
            row["density"] = d[j]
            rows.append(row)
    io.write_rows(out / "density.csv", rows)
    e = [energy(p, ctx.V) for p in states]
    rep = {"hbar": hb, "times": cfg.times,
           "norm_drift": max(abs(p.norm() - 1.0) for p in states),
           "energy_drift": float(max(e) - min(e)), "energies": e}
    io.write_json(out / "schrod.json", rep)
    _say(args, f"norm drift {rep['norm_drift']:.2e}, energy drift {rep['energy_drift']:.2e}")
    return 0


def cmd_wigner(cfg, args, out):
    ctx = pipeline.Context(cfg)
    hb = args.hbar or min(cfg.hbars)
    st = ctx.wkb(hb)
    prof = shell_profile(ctx.V, ctx.m, ctx.S.c0)
    battery = symbol_battery(cfg.dim, prof)
    _, om0, path = pipeline._classical_paths(ctx, cfg.times)
    states = propagate_samples(st.psi, cfg.times, cfg.schrodinger_dt, ctx.V)
    rows, hrows = [], []
    for t, psi, om in zip(cfg.times, states, path):
        for s in battery:
            q, c = pairing(psi, s), classical_pairing(s, om)
            rows.append({"hbar": hb, "t": t, "symbol": s.name, "quantum": q, "classical": c,
                         "gap": abs(q - c)})
        H = husimi(psi, prof.support_radius + 8 * np.sqrt(hb))
        if cfg.dim == 1:
            for j, p in enumerate(H.momenta[:, 0]):
                for i, x in enumerate(H.grid.axis):
                    hrows.append({"t": t, "x": x, "p": p, "husimi": H.values[i, j]})
        marg = husimi_position_marginal(H)
        io.measure_to_csv(marg, out / f"husimi_marginal_t{t:g}.csv")
    io.write_rows(out / "pairings.csv", rows)
    if hrows:
        io.write_rows(out / "husimi.csv", hrows)
    _say(args, f"max pairing gap {max(r['gap'] for r in rows):.3e} at hbar={hb:g}")
    return 0


def _w1(mu, nu):
    a = project(mu) if isinstance(mu, PhaseParticleMeasure) else mu
    b = project(nu) if isinstance(nu, PhaseParticleMeasure) else nu
    dim = a.grid.dim if isinstance(a, GridMeasure) else a.dim
    if dim == 1:
        return w1_circle(a, b), "exact"
    pa = grid_to_particles(a, 512) if isinstance(a, GridMeasure) else a
    pb = grid_to_particles(b, 512) if isinstance(b, GridMeasure) else b
    d = np.mod(pa.points[:, None, :] - pb.points[None, :, :] + np.pi, TWO_PI) - np.pi
    cost, _ = sinkhorn(pa.weights, pb.weights, np.linalg.norm(d, axis=-1))
    return cost, "entropic"


def cmd_measure(cfg, args, out):
    mu = io.measure_from_csv(args.mu)
    nu = io.measure_from_csv(args.nu)
    w, method = _w1(mu, nu)
    rep = {"w1": w, "method": method}
    if isinstance(mu, PhaseParticleMeasure) or isinstance(nu, PhaseParticleMeasure):
        S = pipeline.Context(cfg).S
        for name, m in (("mu", mu), ("nu", nu)):
            if isinstance(m, PhaseParticleMeasure):
                g = graph_distance_report(m, S)
                rep[f"graph_distance_{name}"] = g.distance
                rep[f"exit_mass_{name}"] = g.exit_mass
    io.write_json(out / "measure.json", rep)
    _say(args, f"W1 = {w:.6g} ({method})")
    return 0


def cmd_ot(cfg, args, out):
    ctx = pipeline.Context(cfg)
    mu = io.measure_from_csv(args.mu)
    if isinstance(mu, GridMeasure):
        mu = grid_to_particles(mu, cfg.ot.atoms, cfg.seed)
    if isinstance(mu, PhaseParticleMeasure):
        mu = project(mu)
    if args.nu:
        nu = io.measure_from_csv(args.nu)
        nu = project(nu) if isinstance(nu, PhaseParticleMeasure) else nu
        C = cost_matrix(mu.points, nu.points, args.t, cfg.ot.path_nodes, ctx.V, ctx.m,
                        cfg.ot.winding_range)
        cost, plan = kantorovich(mu.weights, nu.weights, C)
        rep = {"t": args.t, "optimal_cost": cost, "method": plan.method}
    else:
        d = displacement_check(mu, ctx.S, args.t, ctx.V, ctx.m, cfg.ot.path_nodes,
                               cfg.flow_step, cfg.ot.winding_range)
        C, plan = d.costs, d.plan
        rep = {k: getattr(d, k) for k in ("t", "flow_action", "graph_cost", "optimal_cost",
                                          "gap_flow", "gap_graph", "rel_gap_flow",
                                          "rel_gap_graph", "mask_exits")}
    if C is not None:
        n, k = C.values.shape
        ii, jj = np.meshgrid(np.arange(n), np.arange(k), indexing="ij")
        io.write_table(out / "cost_matrix.csv", ["i", "j", "cost"],
                       [ii.ravel(), jj.ravel(), C.values.ravel()])
        io.write_table(out / "plan.csv", ["i", "j", "weight"],
                       [ii.ravel(), jj.ravel(), plan.weights.ravel()])
    io.write_json(out / "ot.json", rep)
    _say(args, f"optimal cost {rep['optimal_cost']:.6g}")
    return 0


def _verify(run, ids, cfg, args, out):
    report = run(cfg)
    manifest = pipeline.emit_artifacts(report, out)
    for line in report.summary_lines():
        _say(args, line)
    for s in report.stages:
        if s["status"] != "ok":
            print(f"stage {s['stage']} {s['status']}: {s['error']}", file=sys.stderr)
    _say(args, f"manifest hash {manifest['hash']}")
    return 0 if report.all_passed([i for i in cfg.criteria if i in ids]) else 1


def cmd_verify1(cfg, args, out):
    return _verify(pipeline.run_thm1, pipeline.THM1_CRITERIA, cfg, args, out)


def cmd_verify2(cfg, args, out):
    return _verify(pipeline.run_thm2, pipeline.THM2_CRITERIA, cfg, args, out)


_COMMANDS = {
    "weakkam": cmd_weakkam, "flow": cmd_flow, "schrod": cmd_schrod, "wigner": cmd_wigner,
    "measure": cmd_measure, "ot": cmd_ot, "verify-thm1": cmd_verify1, "verify-thm2": cmd_verify2,
}


if __name__ == "__main__":
    sys.exit(main())
