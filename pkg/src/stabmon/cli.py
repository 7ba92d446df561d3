"""Command-line entry point: ``stabmon <subcommand> [options]``.

Exit codes: 0 success, 2 invalid input, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .ensemble import EnsembleResult, run_ensemble, suppression_metric
from .export import export, load_config, write_table
from .gadgets import build_bs_gadget, build_zz_gadget, residual_table
from .scenarios import REGISTRY, Scenario, get_scenario
from .sde import NumericalAbort

log = logging.getLogger("stabmon")

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 2, 3

DEFAULTS = {
    "zz-demo": "zz_demo_plus",
    "bacon-shor": "bs_sectors_pp",
    "noise-suite": "oneoverf",
    "gadget-run": "gadget_full_nonoise",
}
NOISE_STEMS = ("oneoverf", "constant", "whitenoise", "tracedist_1f", "tracedist_const", "onresonance")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", help="registered scenario name (see list-scenarios)")
    p.add_argument("--config", type=Path, help="INI file with scenario settings")
    p.add_argument("--n", type=int, help="number of trajectories")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--dt", type=float, help="time step in units of 1/k")
    p.add_argument("--t-final", type=float, help="total time in units of 1/k")
    p.add_argument("--lambda", dest="lam", type=float, help="measurement rate")
    p.add_argument("--k", type=float, help="detection Hamiltonian strength")
    p.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    p.add_argument("--workers", type=int, help="worker processes (default 1)")
    p.add_argument("--scheme", choices=("kraus", "ito"), help="integration scheme")
    p.add_argument("--smoke", action="store_true", help="use the scenario's small smoke variant")
    p.add_argument("--records", type=int, default=0, help="keep full records of the first R trajectories")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stabmon", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("zz-demo", "Z1Z2 readout with one monitor"),
        ("bacon-shor", "Bacon-Shor sector readout and error detection"),
        ("gadget-run", "full eight-qubit two-local construction"),
    ):
        _common(sub.add_parser(name, help=help_))
    p = sub.add_parser("noise-suite", help="with/without detection pairs and suppression verdicts")
    _common(p)
    p.add_argument("--t-star", type=float, help="comparison time (default: final time)")
    p = sub.add_parser("gadget-verify", help="effective-Hamiltonian residual table")
    p.add_argument("--k", type=float, default=1.0, help="base strength K")
    p.add_argument("--eps", type=float, nargs="+", default=[0.2, 0.1, 0.05])
    p.add_argument("--orders", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--gadget", choices=("zz", "bs", "both"), default="both")
    p.add_argument("--out", type=Path, default=Path("results"))
    sub.add_parser("list-scenarios", help="print the scenario registry")
    return parser


def resolve(args, default: str) -> tuple[Scenario, int, int]:
    """Scenario after config file and command-line overrides, plus seed and workers."""
    run: dict[str, int] = {}
    if args.config is not None:
        scenario, run = load_config(args.config)
        if args.scenario is not None and args.scenario != scenario.name:
            raise ValueError("--scenario conflicts with the config file")
    else:
        scenario = get_scenario(args.scenario or default)
    if args.smoke:
        scenario = scenario.smoke()
    scenario = scenario.override(
        n=args.n, dt=args.dt, t_final=args.t_final, lam=args.lam, k=args.k, scheme=args.scheme
    )
    seed = args.seed if args.seed is not None else run.get("seed", 0)
    workers = args.workers if args.workers is not None else run.get("workers", 1)
    return scenario, seed, workers


def _summary(res: EnsembleResult) -> None:
    t = res.times[-1]
    print(f"{res.scenario.name}: N={res.n} (excluded {len(res.excluded)}), t={t:g}, "
          f"{res.metadata['runtime_s']:.1f} s")
    for name in res.mean:
        if name.startswith("decision_") or name == "est_sector":
            continue
        m, s = res.at(name, t)
        print(f"  {name:>12s} = {m:+.4f} +- {s:.4f}")


def _run_one(scenario: Scenario, seed: int, workers: int, out: Path, records: int) -> EnsembleResult:
    res = run_ensemble(scenario, scenario.n, seed, workers, keep_records=records)
    export(res, out / scenario.name)
    _summary(res)
    return res


def cmd_run(args, default: str) -> int:
    scenario, seed, workers = resolve(args, default)
    _run_one(scenario, seed, workers, args.out, args.records)
    return EXIT_OK


def cmd_noise_suite(args) -> int:
    stem = args.scenario or DEFAULTS["noise-suite"]
    if args.config is not None:
        raise ValueError("noise-suite runs registered pairs; use the other subcommands with --config")
    if stem not in NOISE_STEMS:
        raise ValueError(f"noise-suite expects one of {', '.join(NOISE_STEMS)}")
    if stem == "onresonance":
        names = ("onresonance_meas", "onresonance_no_meas")
    elif stem.startswith("tracedist"):
        names = (stem, f"{stem}_off")
    else:
        names = (f"{stem}_on", f"{stem}_off")
    results = []
    for name in names:
        args.scenario = name
        scenario, seed, workers = resolve(args, name)
        results.append(_run_one(scenario, seed, workers, args.out, args.records))
    on, off = results
    t_star = args.t_star if args.t_star is not None else float(on.times[-1])
    rows = []
    for name in on.mean:
        if name not in ("S_z", "S_x", "D"):
            continue
        # a smaller trace distance is the protected side
        verdict = suppression_metric(off, on, name, t_star) if name == "D" else suppression_metric(on, off, name, t_star)
        m_on, s_on = on.at(name, t_star)
        m_off, s_off = off.at(name, t_star)
        rows.append([name, t_star, m_on, s_on, m_off, s_off, int(verdict)])
        print(f"  {name} at t={t_star:g}: {m_on:.4f} vs {m_off:.4f} -> {'separated' if verdict else 'not separated'}")
    path = args.out / f"{stem}_suppression.csv"
    write_table(path, ["observable", "t_star", "mean_on", "stderr_on", "mean_off", "stderr_off", "verdict"], rows)
    return EXIT_OK


def cmd_gadget_verify(args) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    builders = {"zz": build_zz_gadget, "bs": build_bs_gadget}
    chosen = builders if args.gadget == "both" else {args.gadget: builders[args.gadget]}
    for tag, build in chosen.items():
        spec = build(args.k, max(args.eps))
        rows = residual_table(spec, eps_values=tuple(args.eps), orders=tuple(args.orders))
        path = args.out / f"gadget_{tag}.csv"
        write_table(path, ["epsilon", "order", "residual", "converge_ratio"], rows)
        print(f"{tag}: wrote {len(rows)} rows to {path}")
        for eps, order, res, ratio in rows:
            print(f"  eps={eps:<6g} order={order} residual={res:.3e} converge_ratio={ratio:.3f}")
    return EXIT_OK


def cmd_list() -> int:
    for name, s in REGISTRY.items():
        print(f"{name:22s} N={s.n:<5d} T={s.t_final:<6g} {s.description}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "list-scenarios":
            return cmd_list()
        if args.command == "gadget-verify":
            return cmd_gadget_verify(args)
        if args.command == "noise-suite":
            return cmd_noise_suite(args)
        return cmd_run(args, DEFAULTS[args.command])
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (ValueError, KeyError, TypeError, FileNotFoundError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
