"""Command-line interface.

Subcommands: synth (offline design), run (online execution), compare
(switching vs forced-topology baselines), plot (re-render figures from an
exported trace directory).

Exit codes: 0 success, 2 configuration error, 3 fatal synthesis
infeasibility, 4 runtime numerical failure.
"""

import argparse
import os
import sys

from .config import ConfigError, echo_config, load_config
from .driver import FatalSynthesisError, NumericalAbortError, run, synthesize_all
from .store import load_gains, save_gains, StoreError
from .trace import export_trace, metrics
from . import plots

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SYNTH = 3
EXIT_RUNTIME = 4


def _progress(idx, rec):
    status = "certified" if rec.feasible else f"dropped ({rec.reason})"
    links = ",".join(f"{i + 1}-{j + 1}" for i, j in rec.topology.links) or "none"
    print(f"  topology {idx} [links: {links}] {status}")


def _load_or_synthesize(args, config, out_dir):
    if args.gains:
        return load_gains(args.gains)
    print("no gain store given; synthesizing all topologies")
    store = synthesize_all(config, progress=_progress)
    path = os.path.join(out_dir, "gains.json")
    save_gains(store, path)
    print(f"gain store written to {path}")
    return store


def _print_metrics(label, m):
    print(f"{label:>16}: J_x={m.J_x:.6g}  J_e={m.J_e:.6g}  "
          f"comm={m.comm_cost:.6g}  J_total={m.J_total:.6g}")


def cmd_synth(args):
    config = load_config(args.config)
    store = synthesize_all(config, progress=_progress)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    save_gains(store, args.out)
    echo_config(config, os.path.join(out_dir, "resolved_config.yaml"))
    certified = sorted(store.certified())
    print(f"certified topologies: {certified} "
          f"({len(certified)}/{store.n_topologies})")
    print(f"gain store written to {args.out}")
    return EXIT_OK


def cmd_run(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = _override_seed(config, args.seed)
    os.makedirs(args.out, exist_ok=True)
    store = _load_or_synthesize(args, config, args.out)
    try:
        trace = run(config, store, forced_topology=args.topology)
    except NumericalAbortError as err:
        export_trace(err.trace, args.out)
        echo_config(config, os.path.join(args.out, "resolved_config.yaml"))
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    export_trace(trace, args.out)
    echo_config(config, os.path.join(args.out, "resolved_config.yaml"))
    _print_metrics("run", metrics(trace))
    if not args.no_plots:
        for path in plots.plot_result_dir(args.out, store.n_topologies):
            print(f"wrote {path}")
    print(f"trace written to {args.out}")
    return EXIT_OK


def cmd_compare(args):
    config = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    store = _load_or_synthesize(args, config, args.out)
    grand = store.n_topologies - 1
    cases = [("coalitional", None), ("forced_full", grand), ("forced_empty", 0)]
    results = []
    for label, forced in cases:
        if forced is not None and forced not in store.certified():
            print(f"{label}: topology {forced} not certified, skipped")
            continue
        sub = os.path.join(args.out, label)
        try:
            trace = run(config, store, forced_topology=forced)
        except NumericalAbortError as err:
            export_trace(err.trace, sub)
            print(f"error in {label}: {err}", file=sys.stderr)
            return EXIT_RUNTIME
        export_trace(trace, sub)
        if not args.no_plots:
            plots.plot_result_dir(sub, store.n_topologies)
        results.append((label, metrics(trace)))
    echo_config(config, os.path.join(args.out, "resolved_config.yaml"))
    print(f"{'case':>16}  {'J_x':>12}  {'J_e':>10}  {'comm':>10}  {'J_total':>12}")
    for label, m in results:
        print(f"{label:>16}  {m.J_x:>12.6g}  {m.J_e:>10.6g}  "
              f"{m.comm_cost:>10.6g}  {m.J_total:>12.6g}")
    return EXIT_OK


def cmd_plot(args):
    steps = os.path.join(args.out, "steps.csv")
    if not os.path.exists(steps):
        print(f"error: {steps} not found", file=sys.stderr)
        return EXIT_CONFIG
    for path in plots.plot_result_dir(args.out):
        print(f"wrote {path}")
    return EXIT_OK


def _override_seed(config, seed):
    from dataclasses import replace
    resolved = dict(config.resolved)
    resolved["seed"] = seed
    return replace(config, seed=seed, resolved=resolved)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="coalctrl",
        description="Topology-switching coalitional control toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="offline design of all topologies")
    p_synth.add_argument("--config", required=True)
    p_synth.add_argument("--out", required=True, help="gain store file to write")
    p_synth.set_defaults(func=cmd_synth)

    p_run = sub.add_parser("run", help="online closed-loop execution")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--gains", help="gain store from `synth` (else re-solve)")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--topology", type=int, default=None,
                       help="force a fixed topology index (supervisor bypassed)")
    p_run.add_argument("--no-plots", action="store_true")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare",
                           help="switching vs forced full/empty topology runs")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--gains")
    p_cmp.add_argument("--out", required=True)
    p_cmp.add_argument("--no-plots", action="store_true")
    p_cmp.set_defaults(func=cmd_compare)

    p_plot = sub.add_parser("plot", help="re-render figures from a trace directory")
    p_plot.add_argument("--out", required=True,
                        help="directory holding steps.csv/switches.csv")
    p_plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, StoreError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FatalSynthesisError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SYNTH
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
