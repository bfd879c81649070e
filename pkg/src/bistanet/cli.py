"""Command-line interface: ``bistanet <subcommand> ...``.

Exit codes: 0 success, 2 validation error, 3 non-convergence, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import DriveSchedule, Pulse, SimOptions, simulate
from .errors import (BistanetError, InfeasibleTargetError, IntegrationError, LawDomainError, LawError,
                     NetworkValidationError, SingularSystemError, TrajectoryNotConvergedError)
from .generators import four_node, gen_disordered, gen_lattice
from .global_learning import train_global
from .law import DEFAULT_LAW, law_from_dict
from .local_learning import train_local
from .network import read_network_file, write_network_file
from .scenarios import (Scenario, builtin_names, global_lattice_setup, load_scenario, local_setup,
                        run_scenario)
from .stability import assess
from .steady import enumerate_equilibria, pressures_flux_bc, pressures_mixed_bc

EXIT_OK, EXIT_VALIDATION, EXIT_NONCONVERGED, EXIT_NUMERICAL = 0, 2, 3, 4


class NonConvergence(Exception):
    pass


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _clamps(items):
    out = {}
    for item in items or []:
        node, _, val = item.partition("=")
        out[int(node)] = float(val)
    return out


def _pulses(items):
    out = []
    for item in items or []:
        node, t0, t1, rate = item.split(":")
        out.append(Pulse(int(node), float(t0), float(t1), float(rate)))
    return out


def _load_config(path):
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _network_and_law(args):
    net, law = read_network_file(args.network)
    if getattr(args, "law", None):
        law = law_from_dict(json.loads(Path(args.law).read_text()))
    return net, law or DEFAULT_LAW


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(args, name, rows=None, header=None, doc=None):
    """Write ``doc`` as JSON or ``rows`` as CSV (per ``--format``) under ``--out-dir``."""
    out = _out_dir(args)
    if args.format == "json" or rows is None:
        path = out / f"{name}.json"
        path.write_text(json.dumps(doc if doc is not None else [dict(zip(header, r)) for r in rows], indent=2))
    else:
        path = out / f"{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
    print(f"wrote {path}")
    return path


# -- subcommands ----------------------------------------------------------------------

def cmd_gen(args):
    cfg = _load_config(args.config)
    kind = args.kind or cfg.get("kind", "lattice")
    if kind == "lattice":
        net = gen_lattice(args.rows, args.cols, args.full)
    elif kind == "disordered":
        net = gen_disordered(args.n, args.seed, r_min=args.r_min, r_connect=args.r_connect, k_max=args.k_max,
                             resistance_scale=args.resistance_scale)
    else:
        net = four_node(*(_floats(args.resistances) if args.resistances else [1.0] * 4))
    path = _out_dir(args) / args.output
    write_network_file(path, net, DEFAULT_LAW)
    print(f"wrote {path} ({net.n} nodes, {net.m} tubes)")


def cmd_simulate(args):
    net, law = _network_and_law(args)
    v0 = np.full(net.n, args.v0) if args.v0_list is None else np.array(_floats(args.v0_list))
    sched = DriveSchedule(_clamps(args.clamp), _pulses(args.pulse))
    opts = SimOptions(t_max=args.t_max, rtol=args.rtol, atol=args.atol, tol_flux=args.tol_flux)
    tr = simulate(net, law, sched, v0, opts)
    out = _out_dir(args)
    tr.to_csv(out / "trajectory.csv")
    if args.flux:
        tr.flux_to_csv(out / "edge_flux.csv", net)
    print(f"status {tr.status}; steady time {tr.steady_time}; final binary "
          f"{''.join(str(int(b)) for b in law.binary(tr.v[-1]))}")
    print(f"wrote {out / 'trajectory.csv'}")
    if tr.steady_time is None:
        raise NonConvergence("no steady state before t_max")


def cmd_steady(args):
    net, law = _network_and_law(args)
    W = net.laplacian()
    clamps = _clamps(args.clamp)
    flux = _clamps(args.flux)
    if clamps:
        sol = pressures_mixed_bc(W, clamps, flux or None)
        p = sol.p
    else:
        q = np.zeros(net.n)
        for k, val in flux.items():
            q[k] = val
        p = pressures_flux_bc(W, q)
    rows = [[k, repr(float(x))] for k, x in enumerate(p)]
    _emit(args, "steady_pressures", rows, ["node", "pressure"])


def cmd_stability(args):
    law = law_from_dict(json.loads(Path(args.law).read_text())) if args.law else DEFAULT_LAW
    v = np.array(_floats(args.volumes))
    rep = assess(v, law, clamped=[int(x) for x in _floats(args.clamped)] if args.clamped else ())
    print(json.dumps(rep.to_dict(), indent=2))


def cmd_enumerate(args):
    net, law = _network_and_law(args)
    clamps = _clamps(args.clamp)
    if clamps:
        eqs = enumerate_equilibria(law, W=net.laplacian(), p_bc=clamps)
    else:
        if args.total_volume is None:
            raise ValueError("closed enumeration needs --total-volume")
        eqs = enumerate_equilibria(law, total_volume=args.total_volume, n=net.n)
    _emit(args, "equilibria", doc=[e.to_dict() for e in eqs])
    print(f"{len(eqs)} equilibria, {sum(e.label == 'stable' for e in eqs)} stable")


def _scenario_from_args(args, kind):
    if args.config:
        sc = Scenario.from_dict(_load_config(args.config))
    else:
        sc = load_scenario(args.scenario)
    if sc.kind != kind:
        raise ValueError(f"scenario kind {sc.kind!r} is not {kind!r}")
    if args.seed is not None:
        sc.seed = args.seed
    return sc


def cmd_train_global(args):
    sc = _scenario_from_args(args, "global")
    net, law, tasks, v0, cfg, designated = global_lattice_setup(sc, sc.seed)
    if args.max_iter is not None:
        cfg.max_iter = args.max_iter
    res = train_global(net, law, tasks, v0, cfg, out_dir=_out_dir(args))
    print(f"designated node {designated}: {res.status} after {res.iterations} iterations, loss {res.final_loss:.6g}")
    if res.status != "converged":
        raise NonConvergence(res.status)


def cmd_train_local(args):
    sc = _scenario_from_args(args, "local")
    net, law, tasks, cfg = local_setup(sc)
    if args.max_iter is not None:
        cfg.max_iter = args.max_iter
    res = train_local(net, law, tasks, cfg)
    out = _out_dir(args)
    res.write_error_csv(out / "error_history.csv")
    write_network_file(out / "trained_network.json", res.net, law)
    print(f"{res.status} after {res.iterations} iterations, error {res.final_error:.6g}, "
          f"{res.clip_events} conductance clip events")
    if res.status != "converged":
        raise NonConvergence(res.status)


def cmd_scenario(args):
    if args.list:
        print("\n".join(builtin_names()))
        return
    sc = Scenario.from_dict(_load_config(args.config)) if args.config else load_scenario(args.name)
    if args.seed is not None:
        sc.seed = args.seed
    res = run_scenario(sc, Path(args.out_dir) / sc.name, threads=args.threads)
    print("\n".join(res.lines()))
    if res.status in ("max_iter", "not converged"):
        raise NonConvergence(res.status)


def cmd_inspect(args):
    net, law = _network_and_law(args)
    W = net.laplacian()
    lam = np.linalg.eigvalsh(W)
    deg = np.bincount(net.edges.ravel(), minlength=net.n)
    info = {"nodes": net.n, "tubes": net.m, "counts": net.counts(),
            "mean_degree": float(deg.mean()), "max_degree": int(deg.max()),
            "conductance_range": [float(net.conductance.min()), float(net.conductance.max())],
            "algebraic_connectivity": float(lam[1]) if net.n > 1 else 0.0,
            "law": law.to_dict()}
    print(json.dumps(info, indent=2))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration / scenario file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out-dir", default="out")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    p = argparse.ArgumentParser(prog="bistanet", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a network file")
    g.add_argument("kind", nargs="?", choices=("lattice", "disordered", "four-node"))
    g.add_argument("--rows", type=int, default=5)
    g.add_argument("--cols", type=int, default=5)
    g.add_argument("--full", action="store_true", help="connect every pair of lattice nodes")
    g.add_argument("--n", type=int, default=150)
    g.add_argument("--r-min", type=float, default=1.0)
    g.add_argument("--r-connect", type=float, default=3.0)
    g.add_argument("--k-max", type=int, default=5)
    g.add_argument("--resistance-scale", type=float, default=1.0)
    g.add_argument("--resistances", help="R1,R2,R3,R4 for four-node")
    g.add_argument("--output", default="network.json")
    g.set_defaults(func=cmd_gen)

    def net_args(sp):
        sp.add_argument("network", help="network JSON file")
        sp.add_argument("--law", help="law JSON block overriding the file's law")

    s = sub.add_parser("simulate", parents=[common], help="integrate the network dynamics")
    net_args(s)
    s.add_argument("--v0", type=float, default=1.0, help="uniform initial volume")
    s.add_argument("--v0-list", help="comma-separated initial volumes")
    s.add_argument("--clamp", action="append", metavar="NODE=P")
    s.add_argument("--pulse", action="append", metavar="NODE:T0:T1:RATE")
    s.add_argument("--t-max", type=float, default=2000.0)
    s.add_argument("--rtol", type=float, default=1e-6)
    s.add_argument("--atol", type=float, default=1e-8)
    s.add_argument("--tol-flux", type=float, default=1e-6)
    s.add_argument("--flux", action="store_true", help="also write per-tube flux snapshots")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("steady", parents=[common], help="steady pressures")
    net_args(s)
    s.add_argument("--clamp", action="append", metavar="NODE=P")
    s.add_argument("--flux", action="append", metavar="NODE=Q")
    s.set_defaults(func=cmd_steady)

    s = sub.add_parser("stability", parents=[common], help="classify a volume vector")
    s.add_argument("volumes", help="comma-separated volumes")
    s.add_argument("--law")
    s.add_argument("--clamped", help="comma-separated pressure-clamped nodes")
    s.set_defaults(func=cmd_stability)

    s = sub.add_parser("enumerate", parents=[common], help="list equilibria")
    net_args(s)
    s.add_argument("--clamp", action="append", metavar="NODE=P")
    s.add_argument("--total-volume", type=float)
    s.set_defaults(func=cmd_enumerate)

    for name, func in (("train-global", cmd_train_global), ("train-local", cmd_train_local)):
        s = sub.add_parser(name, parents=[common], help=f"{name.split('-')[1]} training from a scenario")
        s.add_argument("--scenario", default="lattice_global" if name == "train-global" else "fig4a")
        s.add_argument("--max-iter", type=int)
        s.set_defaults(func=func)

    s = sub.add_parser("scenario", parents=[common], help="run a catalog scenario")
    s.add_argument("name", nargs="?", default="four_node_equal_ratios")
    s.add_argument("--list", action="store_true")
    s.set_defaults(func=cmd_scenario)

    s = sub.add_parser("inspect", parents=[common], help="summarize a network file")
    net_args(s)
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except NonConvergence as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except TrajectoryNotConvergedError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (IntegrationError, LawDomainError, SingularSystemError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (NetworkValidationError, LawError, InfeasibleTargetError, ValueError, OSError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except BistanetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
