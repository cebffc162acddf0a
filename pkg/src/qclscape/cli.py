"""Command-line entry point: ``qclscape <command> [options]``.

Exit codes: 0 success, 2 configuration/domain error, 3 IO error,
4 numerical failure. The default output directory comes from
``QCLSCAPE_OUT`` (falling back to the current directory).
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ansatz import LAYOUTS, build_ansatz
from .connectivity import (
    AMS,
    NEB_PROFILES,
    BatchObjective,
    build_ams,
    classify_connected,
    full_loss,
    neb_run,
    pair_seed,
    write_neb,
)
from .errors import ConfigurationError, NumericalError
from .harness import SweepGrid, generate_dataset, load_records, split, summarize, sweep
from .landscape import cut_1d, cut_2d, dropout_curve, plane_basis, write_curve, write_cut, write_grid

OUT_ENV = "QCLSCAPE_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
REPORT_COLUMNS = ("layout", "depth", "optimizer", "n", "median", "lowest_bin", "n_occ", "mean_steps",
                  "n_below_range", "n_above_range")

log = logging.getLogger("qclscape")


def _fmt(v):
    return format(float(v), ".17g")


def out_dir(args):
    d = Path(args.out_dir or os.environ.get(OUT_ENV) or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def write_manifest(args, directory, config_path=None):
    """Manifest keyed by a hash of the command line; identical invocations share one file."""
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out_dir")}
    blob = json.dumps({"params": params, "version": __version__}, sort_keys=True, default=str)
    exp_id = f"{args.command}-{hashlib.sha256(blob.encode()).hexdigest()[:12]}"
    manifest = {
        "experiment_id": exp_id,
        "command": args.command,
        "config_path": str(config_path) if config_path else None,
        "output_dir": str(directory),
        "seed": args.seed,
        "tool_version": __version__,
        "params": params,
    }
    path = directory / "manifests" / f"{exp_id}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    _dump_json(manifest, path)
    return manifest


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=str)
        fh.write("\n")


def _target(args, directory, default):
    return Path(args.out) if args.out else directory / default


def load_theta(value, name):
    """A parameter vector given inline as JSON or as a path to a JSON file."""
    if value is None:
        raise ConfigurationError(f"{name}: missing parameter vector")
    text = Path(value).read_text() if os.path.isfile(value) else value
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{name}: not valid JSON ({exc.msg} at line {exc.lineno})") from exc
    if isinstance(obj, dict):
        obj = obj.get("center", obj.get("theta_final"))
    theta = np.asarray(obj, dtype=float)
    if theta.ndim != 1:
        raise ConfigurationError(f"{name}: expected a flat list of numbers")
    return theta


def load_config(path):
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _problem(args):
    spec = build_ansatz(args.layout, args.depth, args.n_qubits, encoding=args.encoding)
    data = split(generate_dataset(args.data_seed), 0.8, args.split_seed)
    return spec, data


def _check_len(spec, *thetas):
    for name, theta in thetas:
        if len(theta) != spec.param_count:
            raise ConfigurationError(
                f"{name}: has {len(theta)} parameters, circuit {spec.layout}/D={spec.depth} needs {spec.param_count}"
            )


def _endpoints(args, spec):
    if args.ams:
        ams = AMS.from_json(json.loads(Path(args.ams).read_text()))
        try:
            i, j = (int(v) for v in args.pair.split(","))
            a, b = ams.centers[i], ams.centers[j]
        except (AttributeError, ValueError) as exc:
            raise ConfigurationError("pair: expected two comma-separated AMS indices, e.g. --pair 0,1") from exc
        except IndexError as exc:
            raise ConfigurationError(f"pair: AMS file has only {len(ams)} centers") from exc
    else:
        a, b = load_theta(args.theta_a, "theta_a"), load_theta(args.theta_b, "theta_b")
        i, j = 0, 1
    _check_len(spec, ("theta_a", a), ("theta_b", b))
    return a, b, (i, j)


# -- commands -----------------------------------------------------------------


def cmd_gen_data(args):
    directory = out_dir(args)
    write_manifest(args, directory)
    ds = generate_dataset(args.seed)
    data = split(ds, 0.8, args.split_seed)
    labels = np.empty(len(ds.xs), dtype=object)
    labels[data.train_idx] = "train"
    labels[data.test_idx] = "test"
    target = _target(args, directory, "data.csv")
    with open(target, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "split"])
        for x, y, s in zip(ds.xs, ds.ys, labels):
            w.writerow([_fmt(x), _fmt(y), s])
    print(f"wrote {len(ds.xs)} rows ({len(data.train_idx)} train / {len(data.test_idx)} test) to {target}")


def cmd_sweep(args):
    obj = load_config(args.config)
    if not isinstance(obj, dict):
        raise ConfigurationError(f"{args.config}: top level must be a JSON object")
    obj.setdefault("seeds", [args.seed])
    grid = SweepGrid.from_dict(obj)
    configs = grid.configs()
    if args.dry_run:
        print(f"{len(configs)} runs")
        return
    directory = out_dir(args)
    write_manifest(args, directory, args.config)
    target = _target(args, directory, "records.jsonl")
    records, failures = sweep(grid, target, jobs=args.jobs)
    print(f"{len(records)} records in {target}; {len(failures)} failures")
    if failures:
        raise NumericalError(f"{len(failures)} runs failed; see {target}.failures.jsonl")


def cmd_report(args):
    records = load_records(args.records)
    rows = summarize(records, (args.hist_lo, args.hist_hi), args.bins)
    directory = out_dir(args)
    write_manifest(args, directory)
    target = _target(args, directory, "report.csv")
    with open(target, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], (str, int)) else _fmt(r[c]) for c in REPORT_COLUMNS])
    print(f"{'layout':<7}{'D':>3} {'optimizer':<10}{'n':>5}{'median':>10}{'bin mid':>10}{'occ':>5}{'steps':>8}")
    for r in rows:
        print(f"{r['layout']:<7}{r['depth']:>3} {r['optimizer']:<10}{r['n']:>5}{r['median']:>10.4f}"
              f"{r['lowest_bin']:>10.5f}{r['n_occ']:>5}{r['mean_steps']:>8.1f}")


def cmd_ams(args):
    records = load_records(args.records)
    keys = {(r.config.layout, r.config.depth, r.config.n_qubits, r.config.encoding) for r in records}
    if args.layout or args.depth:
        records = [r for r in records
                   if (not args.layout or r.config.layout == args.layout)
                   and (not args.depth or r.config.depth == args.depth)]
        keys = {(r.config.layout, r.config.depth, r.config.n_qubits, r.config.encoding) for r in records}
    if len(keys) != 1:
        raise ConfigurationError(f"records: mix {len(keys)} circuits; select one with --layout and --depth")
    layout, depth, n_qubits, encoding = keys.pop()
    spec = build_ansatz(layout, depth, n_qubits, encoding=encoding)
    c = records[0].config
    data = split(generate_dataset(c.data_seed), 0.8, c.split_seed)
    directory = out_dir(args)
    write_manifest(args, directory)
    ams = build_ams(records, full_loss(spec, data.test), (args.hist_lo, args.hist_hi), args.bins,
                    args.bandwidth, args.wrap)
    target = _target(args, directory, "ams.json")
    _dump_json(ams.to_json(), target)
    print(f"n_p={ams.n_p} n_c={ams.n_c} |AMS|={len(ams)} (bandwidth {ams.bandwidth:.4g}) -> {target}")


def cmd_neb(args):
    spec, data = _problem(args)
    a, b, (i, j) = _endpoints(args, spec)
    directory = out_dir(args)
    write_manifest(args, directory)
    objective = BatchObjective(spec, data.train, args.batch_size)
    result = neb_run(
        a, b, objective, full_loss(spec, data.train), args.profile, args.k, args.lr,
        pair_seed(args.seed, i, j), full_loss(spec, data.test) if args.with_test else None,
        args.pivots, args.steps,
    )
    prefix = _target(args, directory, f"neb_{i}_{j}")
    extra = {
        "pair": [i, j],
        "seed": args.seed,
        "batch_size": args.batch_size,
        "epsilon_conn": args.epsilon,
        "connected": bool(classify_connected(result.best_metrics, args.epsilon)),
        "circuit": spec.to_dict(),
    }
    write_neb(result, f"{prefix}.csv", f"{prefix}.json", extra)
    m0, m1 = result.initial_metrics, result.best_metrics
    print(f"max train loss {m0.max_loss:.4f} -> {m1.max_loss:.4f}; AUC {m0.auc:.4f} -> {m1.auc:.4f}; "
          f"connected={extra['connected']} -> {prefix}.csv")


def cmd_cut1d(args):
    spec, data = _problem(args)
    a, b, _ = _endpoints(args, spec)
    directory = out_dir(args)
    write_manifest(args, directory)
    cut = cut_1d(spec, a, b, args.points, data)
    target = _target(args, directory, "cut1d.csv")
    write_cut(cut, target)
    print(f"max train loss {cut.train_loss.max():.4f} over {args.points} points -> {target}")


def cmd_cut2d(args):
    spec, data = _problem(args)
    a, b, _ = _endpoints(args, spec)
    c = load_theta(args.theta_c, "theta_c")
    _check_len(spec, ("theta_c", c))
    basis = plane_basis(a, b, c)
    directory = out_dir(args)
    write_manifest(args, directory)
    grid = cut_2d(spec, basis, data, resolution=args.resolution, with_test=args.with_test)
    prefix = _target(args, directory, "cut2d")
    write_grid(grid, f"{prefix}.csv", f"{prefix}.json", {"seed": args.seed, "circuit": spec.to_dict()})
    print(f"{grid.losses.size} grid points, min train loss {grid.losses.min():.4f} -> {prefix}.csv")


def cmd_dropout(args):
    spec, data = _problem(args)
    a, b, _ = _endpoints(args, spec)
    try:
        indices = [int(v) for v in args.indices.split(",") if v.strip()] if args.indices else []
    except ValueError as exc:
        raise ConfigurationError(f"indices: expected comma-separated integers, got {args.indices!r}") from exc
    bad = [i for i in indices if not 0 <= i < spec.param_count]
    if bad:
        raise ConfigurationError(f"indices: {bad} out of range for {spec.param_count} parameters")
    directory = out_dir(args)
    write_manifest(args, directory)
    curve = dropout_curve(spec, a, b, indices, args.points, data, args.split)
    target = _target(args, directory, "dropout.csv")
    write_curve(curve, target)
    print(f"max loss change {curve.max_loss_change:+.4f} with indices {indices} -> {target}")


# -- parser -------------------------------------------------------------------


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output file (or prefix for multi-file outputs)")
    p.add_argument("--out-dir", help=f"output directory (default ${OUT_ENV} or .)")


def _circuit(p):
    p.add_argument("--layout", choices=LAYOUTS, default="cycle")
    p.add_argument("--depth", type=int, default=1)
    p.add_argument("--n-qubits", type=int, default=3)
    p.add_argument("--encoding", default="rz-ry")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=0)


def _pair(p, third=False):
    p.add_argument("--theta-a", help="JSON list or path to a JSON file")
    p.add_argument("--theta-b", help="JSON list or path to a JSON file")
    if third:
        p.add_argument("--theta-c", help="JSON list or path to a JSON file")
    p.add_argument("--ams", help="AMS JSON file; use with --pair")
    p.add_argument("--pair", help="two AMS indices, e.g. 0,3")


def _hist(p):
    p.add_argument("--hist-lo", type=float, default=0.007)
    p.add_argument("--hist-hi", type=float, default=0.16)
    p.add_argument("--bins", type=int, default=50)


def build_parser():
    parser = argparse.ArgumentParser(prog="qclscape", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the x,y,split dataset CSV")
    _common(p)
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("sweep", help="train every config of a JSON grid")
    _common(p)
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="median and lowest-bin summary of sweep records")
    _common(p)
    _hist(p)
    p.add_argument("--records", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("ams", help="aggregate minima set from sweep records")
    _common(p)
    _hist(p)
    p.add_argument("--records", required=True)
    p.add_argument("--layout", choices=LAYOUTS)
    p.add_argument("--depth", type=int)
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--wrap", action="store_true", help="wrap parameters into [0, 2pi) before clustering")
    p.set_defaults(func=cmd_ams)

    p = sub.add_parser("neb", help="nudged elastic band between two minima")
    _common(p)
    _circuit(p)
    _pair(p)
    p.add_argument("--profile", choices=sorted(NEB_PROFILES) + ["custom"], default="localized")
    p.add_argument("--pivots", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--k", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epsilon", type=float, default=0.02)
    p.add_argument("--with-test", action="store_true")
    p.set_defaults(func=cmd_neb)

    p = sub.add_parser("cut1d", help="losses along the segment between two vectors")
    _common(p)
    _circuit(p)
    _pair(p)
    p.add_argument("--points", type=int, default=50)
    p.set_defaults(func=cmd_cut1d)

    p = sub.add_parser("cut2d", help="loss grid on the plane through three vectors")
    _common(p)
    _circuit(p)
    _pair(p, third=True)
    p.add_argument("--resolution", type=int, default=50)
    p.add_argument("--with-test", action="store_true")
    p.set_defaults(func=cmd_cut2d)

    p = sub.add_parser("dropout", help="segment losses with selected parameters clamped to zero")
    _common(p)
    _circuit(p)
    _pair(p)
    p.add_argument("--indices", default="", help="comma-separated parameter indices, e.g. 2,6")
    p.add_argument("--points", type=int, default=50)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.set_defaults(func=cmd_dropout)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (NumericalError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, IndexError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
