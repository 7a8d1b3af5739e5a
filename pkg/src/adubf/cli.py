"""
Command-line harness: ``adubf <command> [flags]``.

Commands: gen-data, train, eval, baseline, sweep, gradcheck.  On failure a
single ``error[<category>]: <message>`` line goes to stderr and the exit
code is nonzero.
"""

import argparse
import csv
import logging
import os
import sys
import tempfile
import time
from dataclasses import replace

import numpy as np

from .baselines import eval_perfect_csi, eval_rvq_baseline
from .channel import generate_dataset, read_dataset, write_dataset
from .config import SCHEMES, load_config
from .errors import AdubfError, ConfigError
from .gradcheck import run_gradcheck
from .model import ADUModel
from .train import LOG_COLUMNS, check_layout, evaluate_model, train_model

__all__ = ["main", "build_parser", "RESULT_COLUMNS", "SCHEMA_VERSION", "write_rows",
           "read_rows", "result_row", "cmd_gen_data", "cmd_train", "cmd_eval",
           "cmd_baseline", "cmd_sweep", "cmd_gradcheck"]

SCHEMA_VERSION = "adubf-results/1"
LOG_SCHEMA = "adubf-trainlog/1"
RESULT_COLUMNS = ("schema_version", "axis", "axis_value", "scheme", "seed",
                  "mean_rate_bits", "std_rate_bits", "per_user_rate_bits", "wall_time_s")
EXIT_FAILED_CHECK = 3

log = logging.getLogger("adubf")


# --------------------------------------------------------------------------
# CSV helpers
# --------------------------------------------------------------------------

def result_row(axis, axis_value, scheme, seed, res, wall):
    return {
        "schema_version": SCHEMA_VERSION,
        "axis": axis,
        "axis_value": int(axis_value),
        "scheme": scheme,
        "seed": int(seed),
        "mean_rate_bits": f"{res.mean:.10g}",
        "std_rate_bits": f"{res.std:.10g}",
        "per_user_rate_bits": f"{float(np.mean(res.per_user)):.10g}",
        "wall_time_s": f"{wall:.3f}",
    }


def write_rows(path, rows, columns=RESULT_COLUMNS, schema=SCHEMA_VERSION):
    """Write a CSV whose first line is ``# <schema>``; ``path=None`` means stdout."""
    fh = sys.stdout if path is None else open(path, "w", newline="")
    try:
        fh.write(f"# {schema}\n")
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(dict(zip(columns, r)) if isinstance(r, (tuple, list)) else r)
    finally:
        if path is not None:
            fh.close()


def read_rows(path):
    """Inverse of ``write_rows``: returns ``(schema, rows)``."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ConfigError(f"{path}: missing schema line")
        return first[2:].strip(), list(csv.DictReader(fh))


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_gen_data(cfg, out_path, seed=None, count=None):
    seed = cfg.training.data_seed if seed is None else seed
    count = cfg.training.train_samples if count is None else count
    ds = generate_dataset(cfg.layout, count, seed)
    write_dataset(ds, out_path)
    return ds


def _scheme_gamma(cfg, scheme):
    if scheme not in ("adu", "adu-novib"):
        raise ConfigError(f"train expects scheme adu or adu-novib, got {scheme!r}")
    return cfg.for_scheme(scheme)


def cmd_train(cfg, data_path, ckpt_out, log_out=None, scheme="adu", resume=False):
    """Train and checkpoint after every epoch; returns the ``TrainResult``.

    With ``resume`` and an existing checkpoint, training continues after the
    last completed epoch with the stored optimizer state.
    """
    cfg = _scheme_gamma(cfg, scheme)
    ds = read_dataset(data_path)
    check_layout(ds, cfg.layout)
    model, start, rows = None, 0, []
    if resume and os.path.exists(ckpt_out):
        model, meta = ADUModel.load(ckpt_out)
        if meta.get("scheme") != scheme:
            raise ConfigError("checkpoint was trained under a different scheme")
        start = int(meta["epoch"]) + 1
        rows = [tuple(r) for r in meta.get("log", [])]

    def on_epoch(m, row):
        rows.append(row.as_tuple())
        m.save(ckpt_out, {"epoch": row.epoch, "scheme": scheme, "gamma": cfg.gamma,
                          "alpha": row.alpha, "seed": cfg.training.seed,
                          "log": [list(map(float, r)) for r in rows]})
        if log_out is not None:
            write_rows(log_out, rows, LOG_COLUMNS, LOG_SCHEMA)

    result = train_model(cfg, ds, model=model, start_epoch=start, on_epoch=on_epoch)
    result.rows = rows
    return result


def cmd_eval(ckpt, data_path, axis="bits", seed=0):
    t0 = time.perf_counter()
    model, meta = ADUModel.load(ckpt)
    ds = read_dataset(data_path)
    res = evaluate_model(model, ds, alpha=float(meta.get("alpha", 1.0)))
    value = _axis_value(axis, model.layout, model.cfg)
    return [result_row(axis, value, meta.get("scheme", "adu"), seed, res,
                       time.perf_counter() - t0)]


def cmd_baseline(scheme, cfg, data_path, axis="bits", seed=None):
    t0 = time.perf_counter()
    ds = read_dataset(data_path)
    check_layout(ds, cfg.layout)
    seed = cfg.training.rvq_seed if seed is None else seed
    if scheme == "rvq":
        res = eval_rvq_baseline(ds, cfg.model.B, cfg.model.T, seed=seed)
    elif scheme == "perfect":
        res = eval_perfect_csi(ds, cfg.model.T)
    else:
        raise ConfigError(f"baseline expects scheme rvq or perfect, got {scheme!r}")
    value = _axis_value(axis, cfg.layout, cfg.model)
    return [result_row(axis, value, scheme, seed, res, time.perf_counter() - t0)]


def _axis_value(axis, layout, model_cfg):
    return {"bits": model_cfg.B, "users": layout.K, "antennas": layout.Nt}[axis]


def cmd_sweep(cfg, axis=None, workdir=None, progress=None):
    """Train or evaluate every configured scheme at every grid point."""
    axis = axis or cfg.sweep.axis
    rows = []
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        for value in cfg.sweep.grid:
            point = cfg.at(axis, value)
            tc = point.training
            train_path = os.path.join(tmp, f"train_{value}.bin")
            test_path = os.path.join(tmp, f"test_{value}.bin")
            cmd_gen_data(point, test_path, tc.test_seed, tc.test_samples)
            if {"adu", "adu-novib"} & set(cfg.sweep.schemes):
                cmd_gen_data(point, train_path, tc.data_seed, tc.train_samples)
            for scheme in cfg.sweep.schemes:
                t0 = time.perf_counter()
                if scheme in ("adu", "adu-novib"):
                    ckpt = os.path.join(tmp, f"{scheme}_{value}.ckpt")
                    cmd_train(point, train_path, ckpt, scheme=scheme)
                    row = cmd_eval(ckpt, test_path, axis, tc.seed)[0]
                else:
                    row = cmd_baseline(scheme, point, test_path, axis)[0]
                row["wall_time_s"] = f"{time.perf_counter() - t0:.3f}"
                rows.append(row)
                if progress is not None:
                    progress(row)
    return rows


def cmd_gradcheck(seed=0, families=None):
    return run_gradcheck(seed, families)


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="adubf", description=__doc__.strip().splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=False, ckpt=False, out=True, scheme=None):
        sp.add_argument("--config", help="experiment config file (.ini)")
        sp.add_argument("--seed", type=int, help="seed override (unsigned 64-bit)")
        if data:
            sp.add_argument("--data", required=True, help="dataset file")
        if ckpt:
            sp.add_argument("--ckpt", required=True, help="model checkpoint path")
        if out:
            sp.add_argument("--out", help="output path (default: stdout for CSV)")
        if scheme:
            sp.add_argument("--scheme", choices=scheme, default=scheme[0])

    sp = sub.add_parser("gen-data", help="simulate a channel dataset")
    common(sp)
    sp.add_argument("--count", type=int, help="number of samples (default: train_samples)")
    sp = sub.add_parser("train", help="train an ADU model")
    common(sp, data=True, ckpt=True, scheme=("adu", "adu-novib"))
    sp.add_argument("--resume", action="store_true", help="continue from --ckpt if present")
    sp = sub.add_parser("eval", help="evaluate a trained checkpoint")
    common(sp, data=True, ckpt=True)
    sp = sub.add_parser("baseline", help="evaluate a reference scheme")
    common(sp, data=True, scheme=("rvq", "perfect"))
    sp = sub.add_parser("sweep", help="run every scheme over the configured grid")
    common(sp)
    sp.add_argument("--axis", choices=("bits", "users", "antennas"))
    sp.add_argument("--scheme", choices=SCHEMES, action="append",
                    help="restrict to these schemes (repeatable)")
    sp = sub.add_parser("gradcheck", help="finite-difference gradient check")
    common(sp)
    return p


def _run(args):
    cfg = load_config(args.config)
    if args.command == "gen-data":
        if not args.out:
            raise ConfigError("gen-data needs --out")
        ds = cmd_gen_data(cfg, args.out, args.seed, args.count)
        print(f"wrote {len(ds.samples)} samples to {args.out}")
        return 0
    if args.command == "train":
        if args.seed is not None:
            cfg = replace(cfg, training=replace(cfg.training, seed=args.seed))
        res = cmd_train(cfg, args.data, args.ckpt, args.out, args.scheme, args.resume)
        if not args.out:
            write_rows(None, res.rows, LOG_COLUMNS, LOG_SCHEMA)
        return 0
    if args.command == "eval":
        write_rows(args.out, cmd_eval(args.ckpt, args.data, seed=args.seed or 0))
        return 0
    if args.command == "baseline":
        write_rows(args.out, cmd_baseline(args.scheme, cfg, args.data, seed=args.seed))
        return 0
    if args.command == "sweep":
        if args.scheme:
            cfg = replace(cfg, sweep=replace(cfg.sweep, schemes=tuple(args.scheme)))
        if args.seed is not None:
            cfg = replace(cfg, training=replace(cfg.training, seed=args.seed))
        write_rows(args.out, cmd_sweep(cfg, args.axis))
        return 0
    if args.command == "gradcheck":
        results = cmd_gradcheck(args.seed or 0)
        lines = [f"{r.family:<10} max_rel_err={r.max_rel_error:.3e} tol={r.tol:.0e} "
                 f"{'ok' if r.passed else 'FAIL'}" for r in results]
        text = "\n".join(lines) + "\n"
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text)
        sys.stdout.write(text)
        return 0 if all(r.passed for r in results) else EXIT_FAILED_CHECK
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return _run(args)
    except AdubfError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
