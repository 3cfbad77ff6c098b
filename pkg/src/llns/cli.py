"""Command line entry point: ``llns {simulate,ensemble,diagnose,residual,shell}``."""
import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from llns import harness
from llns.besov import besov_norm, increment_exponent, lizorkin_exponent, structure_function, uniformity_report
from llns.config import ConfigError, load_config
from llns.integrator import BlowUpError, run
from llns.noise import RngStream
from llns.residual import ResidualProbe, dealias_constant, default_test_functions, rate_fit
from llns.shell import ShellBlowUp


def _u64(text):
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _parser():
    ap = argparse.ArgumentParser(prog="llns", description="Truncated fluctuating Navier-Stokes experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "single trajectory (first viscosity, member 0)",
        "ensemble": "full sweep over viscosities and members",
        "diagnose": "Besov and structure-function reports from a stored sweep",
        "residual": "Euler-residual breakdown over the viscosity ladder",
        "shell": "shell-model ensembles and KS report",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, type=Path, help="JSON experiment config")
        p.add_argument("--seed", type=_u64, default=None, help="override the config seed (u64)")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--resume", action="store_true", help="continue an existing output directory")
        if name == "diagnose":
            p.add_argument("--run", type=Path, default=None,
                           help="stored sweep directory (default: --out)")
    return ap


def _prepare_out(out, resume, marker):
    if (out / marker).exists() and not resume:
        raise FileExistsError(f"{out} already holds results; pass --resume to reuse it")
    out.mkdir(parents=True, exist_ok=True)


def cmd_simulate(cfg, args):
    member_dir = args.out / "member_0000"
    _prepare_out(args.out, args.resume, "member_0000")
    if args.resume and harness.member_complete(member_dir):
        print(f"{member_dir} already complete")
        return 0
    traj = harness.simulate_member(cfg, cfg.nus[0], 0)
    harness._atomic_write(args.out / "config.json", cfg.to_json() + "\n")
    files = harness.write_member(traj, cfg, member_dir)
    harness._atomic_write(member_dir / "DONE.json",
                          json.dumps({"files": dict(sorted(files.items())), "nu": cfg.nus[0], "member": 0},
                                     indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(traj)} snapshots to {member_dir}")
    return 0


def cmd_ensemble(cfg, args):
    manifest = harness.run_sweep(cfg, args.out, resume=args.resume)
    print(f"sweep {manifest.experiment_id}: {len(manifest.nus)} viscosities x {manifest.members} members, "
          f"hash {manifest.params_hash[:12]}")
    return 0


BESOV_HEADER = ("nu", "m", "member", "t", "besov_norm", "lizorkin_exponent", "increment_exponent")
SF_HEADER = ("nu", "member", "order", "r", "S")
UNIFORMITY_HEADER = ("nu", "sigma", "p", "r", "mean_sq", "se_sq", "flat")


def cmd_diagnose(cfg, args):
    run_dir = args.run or args.out
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    dc = cfg.diagnose
    args.out.mkdir(parents=True, exist_ok=True)
    besov_rows, sf_rows, ensembles = [], [], {}
    for i, nu in enumerate(manifest["nus"]):
        m = manifest["cutoffs"][i]
        members = []
        for member in range(manifest["members"]):
            times, fields = harness.load_member(run_dir, i, member)
            if not fields:
                continue
            members.append((times, fields))
            for t, u in zip(times, fields):
                besov_rows.append([nu, m, member, t, besov_norm(u, dc.sigma, dc.p),
                                   lizorkin_exponent(u, dc.p), increment_exponent(u, dc.p)])
            table = structure_function(fields[-1], dc.orders)
            for order in table.orders:
                for r, val in zip(table.r, table[order]):
                    sf_rows.append([nu, member, order, r, val])
        ensembles[nu] = members
    harness.write_csv(args.out / "besov.csv", BESOV_HEADER, besov_rows)
    harness.write_csv(args.out / "structure_functions.csv", SF_HEADER, sf_rows)
    reports, flat = uniformity_report({k: v for k, v in ensembles.items() if v}, dc.sigma, dc.p, dc.r)
    harness.write_csv(args.out / "uniformity.csv", UNIFORMITY_HEADER,
                      ([rep.nu, rep.sigma, rep.p, rep.r, rep.mean_sq, rep.se_sq, int(flat)] for rep in reports))
    print(f"diagnosed {sum(len(v) for v in ensembles.values())} members; uniform bound flat: {flat}")
    return 0


RESIDUAL_HEADER = ("nu", "m", "k", "component", "t", "dealias_gap", "viscous", "noise", "force_gap",
                   "total", "closure_error")
RATE_HEADER = ("term", "slope", "expected")


def cmd_residual(cfg, args):
    _prepare_out(args.out, args.resume, "residual.csv")
    rc = cfg.residual
    phis = default_test_functions(cfg.d, rc.kmax)
    rows, per_nu, ks = [], [], []
    for nu in cfg.nus:
        p = harness.params_for(cfg, nu)
        if rc.t is not None:
            p = replace(p, t_end=rc.t)
        probe = ResidualProbe(p, phis)
        u0 = harness.sample_initial(cfg.initial, p.grid, p.m)
        traj = run(u0, p, RngStream(int(cfg.seed), 0), cfg.sample_every, observers=[probe])
        sums = {"viscous": 0.0, "noise": 0.0}
        for i, phi in enumerate(phis):
            b = probe.breakdown(i, sigma=rc.sigma)
            err = abs(b.total - b.closure_sum) / max(abs(b.total), 1e-300)
            rows.append([nu, p.m, " ".join(map(str, phi.k)), phi.component, b.t, abs(b.dealias_gap),
                         abs(b.viscous), abs(b.noise), abs(b.force_gap), abs(b.total), err])
            sums["viscous"] += abs(b.viscous)
            sums["noise"] += abs(b.noise)
        per_nu.append((nu, sums, p.kappa))
        ks.append(dealias_constant(traj.times, traj.snapshots, p.m, rc.sigma))
    harness.write_csv(args.out / "residual.csv", RESIDUAL_HEADER, rows)
    rates = []
    if len(cfg.nus) >= 2:
        nus = [r[0] for r in per_nu]
        rates.append(["viscous", rate_fit(nus, [r[1]["viscous"] for r in per_nu]), 1.0])
        if cfg.noise:
            rates.append(["noise", rate_fit(nus, [r[1]["noise"] for r in per_nu]), per_nu[0][2]])
    rates += [[f"dealias_K_nu_{nu!r}", k, ""] for nu, k in zip(cfg.nus, ks)]
    harness.write_csv(args.out / "residual_rates.csv", RATE_HEADER, rates)
    print(f"residual breakdown for {len(phis)} test functions at {len(cfg.nus)} viscosities")
    return 0


def cmd_shell(cfg, args):
    _, reports = harness.run_shell_sweep(cfg, args.out, resume=args.resume)
    for name, rep in reports.items():
        print(f"{name}: KS {np.round(rep.distances, 3).tolist()} trend {rep.trend}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "ensemble": cmd_ensemble, "diagnose": cmd_diagnose,
            "residual": cmd_residual, "shell": cmd_shell}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.command == "shell" and cfg.model != "shell":
            raise ConfigError("the shell command needs model 'shell'")
        if args.command != "shell" and cfg.model != "pde":
            raise ConfigError(f"the {args.command} command needs model 'pde'")
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, FileExistsError, FileNotFoundError, BlowUpError, ShellBlowUp, RuntimeError) as exc:
        print(f"llns {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
