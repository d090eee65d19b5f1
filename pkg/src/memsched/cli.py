"""Command-line harness: ``run``, ``compare``, ``gen-trace`` and ``calibrate``.

Exit status: 0 on success, 2 for invalid input (spec, trace, parameters),
3 for runtime failures (livelock, I/O).  Diagnostics go to stderr and are
controlled by ``MEMSCHED_LOG`` (off, info, debug); stdout carries data only.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import yaml

from .errors import CalibrationError, ConfigError, LivelockError, TraceParseError
from .policies import POLICY_CODES
from .results import COLUMNS, KEY_COLUMNS, METRICS, normalize, report_rows, sort_rows, write_csv
from .rl import calibrate_thresholds
from .spec import SCHEMA_VERSION, SyntheticWorkload, load_specs
from .workload import write_trace

log = logging.getLogger("memsched")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


def _setup_logging():
    level = os.environ.get("MEMSCHED_LOG", "off").lower()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.handlers[:] = [handler]
    log.propagate = False
    log.setLevel({"info": logging.INFO, "debug": logging.DEBUG}.get(level, logging.CRITICAL + 1))


def _cells(specs, policies, seeds_override):
    for spec in specs:
        seeds = seeds_override or spec.repetitions
        for policy in policies:
            for seed in seeds:
                yield spec, policy, seed


def _run_cell(cell):
    spec, policy, seed = cell
    log.info("running %s policy=%s seed=%d", spec.name, policy, seed)
    report = spec.simulation(policy=policy, seed=seed).run()
    return report_rows(report, experiment=spec.name)


def _run_all(cells, jobs):
    cells = list(cells)
    if jobs > 1 and len(cells) > 1:
        # The compiled kernel releases the GIL, so threads run cells in parallel.
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]
    return sort_rows([row for rows in results for row in rows])


def _seeds(args):
    return [args.seed] if args.seed is not None else None


def cmd_run(args):
    specs = load_specs(args.spec)
    if len(specs) != 1:
        raise ConfigError("experiments", "run takes a single experiment; use compare for batches")
    spec = specs[0]
    policy = args.policies[0] if args.policies else spec.config.policy
    _check_policies([policy])
    rows = _run_all(_cells(specs, [policy], _seeds(args)), args.jobs)
    write_csv(args.out, rows, COLUMNS)
    return EXIT_OK


def _check_policies(policies):
    for p in policies:
        if p not in POLICY_CODES:
            raise ConfigError("policies", f"unknown policy {p!r}; expected {sorted(POLICY_CODES)}")


def normalized_path(out):
    root, ext = os.path.splitext(out)
    return f"{root}.normalized{ext or '.csv'}"


def cmd_compare(args):
    policies = args.policies or ["FCFS", "FR-FCFS", "CADS"]
    _check_policies(policies)
    if len(set(policies)) < 2:
        raise ConfigError("policies", "compare needs >=2 policies")
    specs = load_specs(args.spec)
    rows = _run_all(_cells(specs, policies, _seeds(args)), args.jobs)
    write_csv(args.out, rows, KEY_COLUMNS + METRICS)
    baseline = "FCFS" if "FCFS" in policies else policies[0]
    write_csv(normalized_path(args.out), sort_rows(normalize(rows, baseline)), KEY_COLUMNS + METRICS)
    return EXIT_OK


def cmd_gen_trace(args):
    spec = load_specs(args.spec)[0]
    if not isinstance(spec.workload, SyntheticWorkload):
        raise ConfigError(f"{spec.name}.workload", "gen-trace needs a synthetic workload")
    seed = args.seed if args.seed is not None else spec.repetitions[0]
    length = args.length if args.length is not None else spec.workload.length
    if length < 0:
        raise ConfigError("length", f"must be >= 0, got {length}")
    from .workload import gen_synthetic
    trace = gen_synthetic(spec.workload.params, seed, length, spec.config.geometry)
    n = write_trace(trace, args.out)
    print(n)
    return EXIT_OK


def cmd_calibrate(args):
    specs = load_specs(args.spec)
    spec = specs[0]
    mode = args.mode or spec.config.rule_table.mode
    seeds = _seeds(args) or spec.repetitions
    pooled = []
    for seed in seeds:
        sim = spec.simulation(policy="FR-FCFS", seed=seed, sample=True)
        sim.run()
        pooled.append(sim.starvation_samples())
    samples = np.concatenate(pooled) if pooled else np.zeros(0)
    if samples.size < 4:
        # Cores that never wait have zero starvation.
        log.warning("only %d starvation samples; padding with zeros", samples.size)
        samples = np.concatenate([samples, np.zeros(4 - samples.size)])
    table = calibrate_thresholds(samples, mode)
    doc = {"schema_version": SCHEMA_VERSION, "experiment": spec.name,
           "samples": int(samples.size), **table.to_dict()}
    with open(args.out, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
    log.info("thresholds %s (%s, degenerate=%s)", table.thresholds, mode, table.degenerate)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="memsched", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, policies=False):
        sp.add_argument("--spec", required=True, help="experiment spec file (YAML)")
        sp.add_argument("--out", required=True, help="output file")
        sp.add_argument("--seed", type=int, help="run only this seed")
        sp.add_argument("--jobs", type=int, default=1, help="parallel simulations")
        if policies:
            sp.add_argument("--policies", type=lambda s: [x.strip() for x in s.split(",") if x.strip()],
                            help="comma-separated list of FCFS, FR-FCFS, CADS")

    sp = sub.add_parser("run", help="run one experiment and write its metrics CSV")
    common(sp, policies=True)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="run policies on identical workloads, write long and normalised CSVs")
    common(sp, policies=True)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("gen-trace", help="write a synthetic trace file")
    common(sp)
    sp.add_argument("--length", type=int, help="instructions per core")
    sp.set_defaults(func=cmd_gen_trace)

    sp = sub.add_parser("calibrate", help="derive reward thresholds from an FR-FCFS run")
    common(sp)
    sp.add_argument("--mode", choices=["percentile", "equal-width"])
    sp.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("memsched: --jobs must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except (ConfigError, TraceParseError, CalibrationError) as e:
        print(f"memsched: {e}", file=sys.stderr)
        return EXIT_INVALID
    except LivelockError as e:
        print(f"memsched: livelock: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(f"memsched: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
