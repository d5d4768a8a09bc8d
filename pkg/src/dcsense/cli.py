"""Command-line entry point: ``dcsense {generate,run,filters,common}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import harness
from .channel import (ChannelRealization, apply_channel, estimate_filters, pilot_signals,
                      random_filters)
from .common import common_eq9_closed, common_eq10_closed, common_via_solver
from .jsm import draw_sensing_matrix
from .operators import OperatorError, build_operators
from .scenario import GenerationError, generate_group, scenario_from_json

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3


def _amplitudes(text: str):
    lo, hi = (float(x) for x in text.split(","))
    return lo, hi


def _add_scenario_args(p):
    p.add_argument("--scenario", help="scenario JSON (otherwise one is generated)")
    p.add_argument("--n", type=int, default=64, help="frequency bins")
    p.add_argument("--j", type=int, default=4, help="sensors in the group")
    p.add_argument("--k-common", type=int, default=6)
    p.add_argument("--k-inn", type=int, default=1)
    p.add_argument("--amplitudes", type=_amplitudes, default=(0.5, 2.0),
                   metavar="LO,HI", help="edge magnitude range")
    p.add_argument("--smoothing-len", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-tries", type=int, default=1000,
                   help="rejection-sampling budget per component")


def _scenario(args):
    if args.scenario:
        sc = scenario_from_json(args.scenario)
        return sc, build_operators(sc.n, int(sc.generator_params.get("smoothing_len", 3)))
    ops = build_operators(args.n, args.smoothing_len)
    sc = generate_group(args.n, args.j, args.k_common, args.k_inn, args.amplitudes,
                        args.seed, ops=ops, max_tries=args.max_tries)
    return sc, ops


def _emit(payload, out):
    text = json.dumps(payload, indent=2) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_generate(args) -> int:
    sc, _ = _scenario(args)
    _emit(sc.to_json(), args.out)
    return EXIT_OK


def cmd_common(args) -> int:
    sc, ops = _scenario(args)
    results = [common_eq9_closed(sc.psds, ops), common_eq10_closed(sc.psds, ops)]
    if args.solver:
        results += [common_via_solver(sc.psds, ops, "eq9"),
                    common_via_solver(sc.psds, ops, "eq10")]
    payload = {
        "n": sc.n,
        "j": sc.j_sensors,
        "objectives": {r.method: r.objective for r in results},
        "z_c_opt": {r.method: r.z_c_opt.tolist() for r in results},
        "z_common_truth": sc.z_common.tolist(),
    }
    _emit(payload, args.out)
    return EXIT_OK


def cmd_filters(args) -> int:
    sc, ops = _scenario(args)
    w = max(1, int(round(args.rate * sc.n)))
    phis = [draw_sensing_matrix(w, sc.n, "gaussian", [args.seed, 2, jj])
            for jj in range(sc.j_sensors)]
    z_c = common_eq10_closed(sc.psds, ops).z_c_opt
    filters = random_filters([w] * sc.j_sensors, args.sigma_beta, [args.seed, 3])
    y_c = pilot_signals(phis, z_c, ops)
    r_c = apply_channel(y_c, ChannelRealization(tuple(filters), args.noise_sigma),
                        [args.seed, 4])
    est = estimate_filters(y_c, [r_c[i * w:(i + 1) * w] for i in range(sc.j_sensors)])
    sensors = []
    for jj, (f, e) in enumerate(zip(filters, est)):
        spec = np.abs(np.fft.fft(y_c[jj]))
        sensors.append({
            "sensor": jj,
            "beta_true": f.beta.tolist(),
            "beta_est": e.beta.tolist(),
            "relative_error": float(np.linalg.norm(e.beta - f.beta) / f.energy),
            "pilot_spectrum_ratio": float(spec.min() / spec.max()),
        })
    _emit({"w": w, "sigma_beta": args.sigma_beta, "noise_sigma": args.noise_sigma,
           "sensors": sensors}, args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    overrides = {"seed": args.seed, "workers": args.workers}
    if args.methods:
        overrides["methods"] = harness.parse_methods(args.methods)
    if args.no_timing:
        overrides["timing"] = False
    cfg = harness.load_config(args.config, **overrides)
    res = harness.run_experiment(cfg)
    harness.emit_csv(res, args.out)
    if args.summary:
        for (method, rho, sb), agg in res.aggregates().items():
            print(f"{method:26s} rho={rho:<6g} sigma_beta={sb:<5g} "
                  f"mse={agg['mean_mse']:.4g} time={agg['mean_time_s']:.4g}s "
                  f"f1={agg['support_f1']:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcsense", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a group scenario as JSON")
    _add_scenario_args(p)
    p.add_argument("--out", help="output path (default stdout)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="run an experiment config and write CSV")
    p.add_argument("config", help="INI config file")
    p.add_argument("--seed", type=int, help="override [grid] seed")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--methods", help="comma-separated subset of methods")
    p.add_argument("--workers", type=int, help="parallel work units")
    p.add_argument("--no-timing", action="store_true",
                   help="skip wall-clock timing (mean_time_s = nan; output is reproducible)")
    p.add_argument("--summary", action="store_true", help="print aggregates")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("filters", help="pilot-based filter estimation demo")
    _add_scenario_args(p)
    p.add_argument("--rate", type=float, default=0.25, help="sensing rate w/N")
    p.add_argument("--sigma-beta", type=float, default=0.2)
    p.add_argument("--noise-sigma", type=float, default=1e-3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_filters)

    p = sub.add_parser("common", help="optimal common component as JSON")
    _add_scenario_args(p)
    p.add_argument("--solver", action="store_true",
                   help="also solve both programs with the generic solver")
    p.add_argument("--out")
    p.set_defaults(func=cmd_common)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GenerationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (harness.ConfigError, OperatorError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
