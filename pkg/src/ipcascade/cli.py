"""Command-line front end.

Subcommands: fit, generate, analyze, anomaly, alloc, zoom.  Options may come
from a plain key = value config file (--config); command-line flags win.
Every run writes its resolved configuration to <out>/run_config.json.

Exit codes: 0 success, 1 usage or parse error, 2 insufficient data.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import allocation, anomaly, fitting, moments
from .addrspace import (
    AddressParseError,
    AddressSet,
    AddressUniverse,
    CapacityMap,
    parse_addresses,
    parse_prefix,
)
from .cascade import (
    CascadeSpec,
    CriticalRanges,
    GeneratorModel,
    InfeasibleSplitError,
    critical_q_range,
    default_q_grid,
    generate,
)
from .masstree import build_mass_tree, zoom_path
from .moments import UnusableLevelError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NO_DATA = 2

DEFAULT_QGRID = (-2.0, 4.0, 0.25)


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    universe: AddressUniverse
    levels: tuple
    q_grid: tuple
    fit_levels: tuple
    reserved_path: str
    sigma: float
    n: int
    seed: int
    lag: int
    slots: int
    out_dir: Path

    def as_dict(self):
        return {
            "universe": self.universe.family,
            "bits": self.universe.effective_bits,
            "levels": list(self.levels),
            "qgrid": list(self.q_grid),
            "fit_levels": list(self.fit_levels),
            "reserved": self.reserved_path,
            "sigma": self.sigma,
            "n": self.n,
            "seed": self.seed,
            "lag": self.lag,
            "slots": self.slots,
            "out": str(self.out_dir),
        }


def _parse_pair(text, name):
    parts = text.split(":")
    if len(parts) != 2:
        raise CliError(f"{name} must look like LO:HI", EXIT_USAGE)
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise CliError(f"{name} must be integers LO:HI", EXIT_USAGE) from None


def _parse_qgrid(text):
    parts = text.split(":")
    if len(parts) != 3:
        raise CliError("--qgrid must look like LO:HI:STEP", EXIT_USAGE)
    try:
        lo, hi, step = (float(p) for p in parts)
    except ValueError:
        raise CliError("--qgrid values must be numbers", EXIT_USAGE) from None
    if step <= 0 or hi < lo:
        raise CliError("--qgrid needs LO <= HI and STEP > 0", EXIT_USAGE)
    return lo, hi, step


def _read_config_file(path):
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config file: {exc}", EXIT_USAGE) from None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliError(f"config line {line_no}: expected key = value", EXIT_USAGE)
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _resolve_config(args):
    base = {}
    if args.config:
        base = _read_config_file(args.config)

    def pick(flag_value, key, default):
        if flag_value is not None:
            return flag_value
        if key in base:
            return base[key]
        return default

    family = str(pick(args.universe, "universe", "v4"))
    if family not in ("v4", "v6"):
        raise CliError(f"unknown universe {family!r}", EXIT_USAGE)
    bits = pick(args.bits, "bits", 32 if family == "v4" else 64)
    try:
        universe = AddressUniverse(family, int(bits))
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None

    default_levels = "8:16" if family == "v4" else "20:44"
    levels = _parse_pair(str(pick(args.levels, "levels", default_levels)), "--levels")
    fit_levels = _parse_pair(
        str(pick(args.fit_levels, "fit_levels", default_levels)), "--fit-levels"
    )
    qgrid = str(pick(args.qgrid, "qgrid", None) or "")
    q_grid = _parse_qgrid(qgrid) if qgrid else DEFAULT_QGRID
    out_dir = Path(pick(args.out, "out", "."))
    return RunConfig(
        universe=universe,
        levels=levels,
        q_grid=q_grid,
        fit_levels=fit_levels,
        reserved_path=pick(args.reserved, "reserved", None),
        sigma=float(pick(args.sigma, "sigma", 1.61)),
        n=int(pick(args.n, "n", 0)),
        seed=int(pick(args.seed, "seed", 0)),
        lag=int(pick(args.lag, "lag", 10)),
        slots=int(pick(args.slots, "slots", 0)),
        out_dir=out_dir,
    )


def _prepare_out(config):
    config.out_dir.mkdir(parents=True, exist_ok=True)
    (config.out_dir / "run_config.json").write_text(
        json.dumps(config.as_dict(), indent=2) + "\n"
    )


def _load_addresses(path, universe):
    try:
        with open(path) as handle:
            aset = parse_addresses(handle, universe)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_USAGE) from None
    except AddressParseError as exc:
        raise CliError(f"{path}: {exc}", EXIT_USAGE) from None
    return aset


def _capacity_map(config):
    if config.reserved_path:
        try:
            with open(config.reserved_path) as handle:
                return CapacityMap.from_lines(handle, config.universe)
        except OSError as exc:
            raise CliError(f"cannot read {config.reserved_path}: {exc}", EXIT_USAGE) from None
        except AddressParseError as exc:
            raise CliError(f"{config.reserved_path}: {exc}", EXIT_USAGE) from None
    if config.universe.family == "v4":
        return CapacityMap.default_v4_reserved()
    return CapacityMap.empty(config.universe)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def _q_values(config):
    lo, hi, step = config.q_grid
    return np.arange(lo, hi + step / 2, step)


def cmd_fit(args, config):
    aset = _load_addresses(args.addresses, config.universe)
    if len(aset) == 0:
        raise CliError("no addresses in input", EXIT_NO_DATA)
    lo, hi = config.fit_levels
    tree = build_mass_tree(aset, (max(lo - 1, 0), hi))
    weights = fitting.compute_weights(tree, (lo, hi))
    try:
        cleaned = fitting.preprocess(weights, (lo, hi))
        result = fitting.fit_sigma(cleaned, method=args.method)
    except fitting.InsufficientDataError as exc:
        raise CliError(str(exc), EXIT_NO_DATA) from None
    _prepare_out(config)
    _write_csv(
        config.out_dir / "weights.csv",
        ("level", "parent_count", "w"),
        ((sw.level, sw.parent_count, repr(sw.w)) for sw in weights),
    )
    report = {
        "sigma": result.sigma_hat,
        "samples": result.samples,
        "level_min": result.level_min,
        "level_max": result.level_max,
        "method": result.method,
    }
    (config.out_dir / "fit.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report))
    return EXIT_OK


def cmd_generate(args, config):
    if config.n < 1:
        raise CliError("--n must be a positive address count", EXIT_USAGE)
    capacity = _capacity_map(config)
    spec = CascadeSpec(
        generator=GeneratorModel(config.sigma),
        total_mass=config.n,
        universe=config.universe,
        capacity=capacity,
        seed=config.seed,
    )
    try:
        aset, spill = generate(spec)
    except InfeasibleSplitError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    _prepare_out(config)
    (config.out_dir / "addresses.txt").write_text(aset.format())
    _write_csv(config.out_dir / "spillover.csv", ("level", "spilled", "total"), spill.rows())
    print(f"wrote {len(aset)} addresses")
    return EXIT_OK


def cmd_analyze(args, config):
    aset = _load_addresses(args.addresses, config.universe)
    if len(aset) == 0:
        raise CliError("no addresses in input", EXIT_NO_DATA)
    lo, hi = config.levels
    tree = build_mass_tree(aset, (lo, hi + 1))
    q_values = _q_values(config)
    try:
        table = moments.partition_function(tree, q_values, range(lo, hi + 1))
        estimate = moments.tau_tilde_avg(tree, q_values, range(lo, hi + 1))
        report = moments.generalized_dimensions(estimate)
    except (UnusableLevelError, KeyError) as exc:
        raise CliError(str(exc), EXIT_NO_DATA) from None
    ranges = None
    if args.sigma is not None and float(args.sigma) > 0:
        ranges = critical_q_range(GeneratorModel(float(args.sigma)))
        estimate.critical_ranges = ranges
    window = ranges.gaussianity if ranges else (-0.5, 1.7)
    linearity = moments.linearity_test(estimate, q_window=window)
    _prepare_out(config)
    _write_csv(config.out_dir / "partition.csv", ("q", "level", "log2_Z"), table.rows())
    _write_csv(
        config.out_dir / "structure.csv",
        ("q", "tau", "variance", "ci_lo", "ci_hi"),
        estimate.rows(),
    )
    payload = report.as_dict()
    payload["linearity"] = {
        "is_linear": linearity.is_linear,
        "max_residual": linearity.max_residual,
        "q_window": list(linearity.q_window),
    }
    if ranges:
        payload["critical_ranges"] = {
            "consistency": list(ranges.consistency),
            "gaussianity": list(ranges.gaussianity),
        }
    (config.out_dir / "dimensions.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(json.dumps(payload))
    return EXIT_OK


def cmd_anomaly(args, config):
    baseline = _load_addresses(args.baseline, config.universe)
    if len(baseline) == 0:
        raise CliError("empty baseline", EXIT_NO_DATA)
    generator = GeneratorModel(config.sigma)
    q_grid = default_q_grid(generator)
    if args.experiment:
        k_list = [int(k) for k in args.experiment.split(",") if k]
        seeds = [config.seed + i for i in range(args.seeds)]
        try:
            rows = anomaly.lag_sweep(
                baseline,
                k_list,
                seeds,
                slots=config.slots or None,
                q_grid=q_grid,
                levels=config.levels,
            )
        except ValueError as exc:
            raise CliError(str(exc), EXIT_NO_DATA) from None
        _prepare_out(config)
        (config.out_dir / "experiment.json").write_text(json.dumps(rows, indent=2) + "\n")
        print(json.dumps(rows))
        return EXIT_OK

    slots = config.slots or len(baseline)
    detector_config = anomaly.DetectorConfig(
        universe=config.universe,
        slots=slots,
        lag=config.lag,
        q_grid=q_grid,
        levels=config.levels,
        seed=config.seed,
    )
    state = anomaly.detector_init(detector_config)
    anomaly.preload(state, baseline.addresses)
    _prepare_out(config)
    writer = csv.writer(sys.stdout)
    writer.writerow(("index", "address", "score", "warming"))
    for index, raw in enumerate(sys.stdin):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            event = parse_addresses([line], config.universe)
        except AddressParseError as exc:
            raise CliError(str(exc), EXIT_USAGE) from None
        if len(event) == 0:
            continue
        score = anomaly.observe(state, int(event.addresses[0]))
        writer.writerow((index, line, repr(score.score), int(score.warming)))
    return EXIT_OK


def cmd_alloc(args, config):
    records = []
    try:
        with open(args.records) as handle:
            reader = csv.reader(handle)
            for row_no, row in enumerate(reader, start=1):
                if not row or row[0].startswith("#"):
                    continue
                if row_no == 1 and row[0].strip().lower() == "prefix":
                    continue
                if len(row) < 2:
                    raise CliError(f"records line {row_no}: expected prefix,label", EXIT_USAGE)
                prefix = parse_prefix(row[0], config.universe, row_no)
                records.append(allocation.PrefixRecord(prefix, row[1].strip()))
    except OSError as exc:
        raise CliError(f"cannot read {args.records}: {exc}", EXIT_USAGE) from None
    except AddressParseError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    if not records:
        raise CliError("no records in input", EXIT_NO_DATA)
    tree = allocation.build_inclusion_tree(records)
    degrees, depths = allocation.width_depth_stats(tree)
    _prepare_out(config)
    _write_csv(config.out_dir / "degree.csv", ("degree", "parents"), sorted(degrees.items()))
    _write_csv(config.out_dir / "depth.csv", ("depth", "records"), sorted(depths.items()))
    agg_rows = []
    for node in tree.walk():
        if node.is_leaf or not any(child.is_leaf for child in node.children):
            continue
        try:
            aggs = allocation.approx_max_aggregates(tree, node.record, threshold=args.threshold)
        except ValueError:
            continue
        for prefix, cov in aggs:
            agg_rows.append((str(node.record.prefix), str(prefix), repr(cov)))
    _write_csv(
        config.out_dir / "aggregates.csv",
        ("parent_prefix", "aggregate_prefix", "percent_covered"),
        agg_rows,
    )
    print(f"{len(records)} records, {len(tree.roots)} roots, {len(agg_rows)} aggregates")
    return EXIT_OK


def cmd_zoom(args, config):
    aset = _load_addresses(args.addresses, config.universe)
    if len(aset) == 0:
        raise CliError("no addresses in input", EXIT_NO_DATA)
    try:
        target_set = parse_addresses([args.target], config.universe)
    except AddressParseError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    target = int(target_set.addresses[0])
    lo, hi = config.levels
    levels = range(lo, hi + 1)
    tree = build_mass_tree(aset, (lo, hi + args.sub_bits))
    try:
        rows = zoom_path(tree, target, levels, sub_bits=args.sub_bits)
    except KeyError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    _prepare_out(config)
    _write_csv(
        config.out_dir / "zoom.csv",
        ("level", "bin_prefix", "count"),
        ((level, str(prefix), count) for level, prefix, count in rows),
    )
    print(f"wrote {len(rows)} zoom bins")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="ipcascade", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--universe", choices=("v4", "v6"))
    common.add_argument("--bits", type=int)
    common.add_argument("--levels", help="analysis band LO:HI")
    common.add_argument("--fit-levels", dest="fit_levels", help="fit band LO:HI (child levels)")
    common.add_argument("--qgrid", help="q grid LO:HI:STEP")
    common.add_argument("--sigma", type=float)
    common.add_argument("--n", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--reserved", help="reserved-range file (one CIDR per line)")
    common.add_argument("--lag", type=int)
    common.add_argument("--slots", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--config", help="key = value config file; flags win")

    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("fit", parents=[common], help="fit the cascade generator")
    p.add_argument("addresses")
    p.add_argument("--method", choices=("interval", "moment"), default="interval")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("generate", parents=[common], help="synthesize a cascade address set")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("analyze", parents=[common], help="structure function and dimensions")
    p.add_argument("addresses")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("anomaly", parents=[common], help="streaming scores or lag experiment")
    p.add_argument("baseline")
    p.add_argument("--stream", action="store_true")
    p.add_argument("--experiment", help="comma-separated lag list, e.g. 2,5,10")
    p.add_argument("--seeds", type=int, default=10)
    p.set_defaults(func=cmd_anomaly)

    p = sub.add_parser("alloc", parents=[common], help="allocation-record analytics")
    p.add_argument("records")
    p.add_argument("--threshold", type=float, default=0.51)
    p.set_defaults(func=cmd_alloc)

    p = sub.add_parser("zoom", parents=[common], help="zoom-in histograms toward a target")
    p.add_argument("addresses")
    p.add_argument("target")
    p.add_argument("--sub-bits", dest="sub_bits", type=int, default=4)
    p.set_defaults(func=cmd_zoom)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        config = _resolve_config(args)
        return args.func(args, config)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
