"""Command-line entry point: ``splitz <command> [flags]``.

Every command writes CSV with a header row, to ``--out`` or standard output.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .certify import GammaSearchConfig, calibrate_mean_lipschitz, certify_splitz
from .lipschitz import global_lipschitz_bound, local_lipschitz_bound, per_layer_norms
from .network import load_model, save_model
from .numerics import RngStream
from .report import DEFAULT_EPSILONS, ReportRow, accuracy_table, read_report, write_report
from .smoothing import smooth_predict
from .train import parse_config_text, train

log = logging.getLogger("splitz")


class CliError(Exception):
    pass


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            yield fh


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_rows(fh, columns, rows) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])


def _load_data(path) -> data_mod.Dataset:
    if not Path(path).exists():
        raise CliError(f"no such file: {path}")
    return data_mod.load_csv(path)


def _load_model(path):
    if not Path(path).exists():
        raise CliError(f"no such file: {path}")
    return load_model(path)


def _epsilons(text) -> list[float]:
    if text is None:
        return list(DEFAULT_EPSILONS)
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise CliError(f"bad --epsilons: {exc}") from exc


def _train_config(args, **extra):
    text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    overrides = {"seed": getattr(args, "seed", None), **extra}
    try:
        return parse_config_text(text, overrides)
    except ValueError as exc:
        raise CliError(f"config: {exc}") from exc


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> None:
    if args.kind != "blobs":
        raise CliError(f"unknown dataset kind {args.kind!r}")
    ds = data_mod.gen_blobs(args.n, args.classes, args.dim, args.separation, args.seed)
    if args.out in (None, "-"):
        raise CliError("gen-data needs --out")
    data_mod.write_csv(ds, args.out)


def cmd_train(args) -> None:
    cfg = _train_config(args)
    train_data = _load_data(args.data)
    val_data = _load_data(args.val) if args.val else None
    net, report = train(cfg, train_data, val_data)
    save_model(net, args.out_model)
    if args.report:
        columns = ["epoch", "lambda", "learning_rate", "theta_lip", "loss", "regularizer",
                   "mean_lipschitz", "val_accuracy"]
        with _output(args.report) as fh:
            _write_rows(fh, columns, report.epochs)


def cmd_predict(args) -> None:
    net = _load_model(args.model)
    ds = _load_data(args.data)
    rows = []
    for i in range(len(ds)):
        pred = smooth_predict(net, ds.features[i], args.n0, args.sigma, RngStream(args.seed, i))
        rows.append({"index": i, "label": int(ds.labels[i]), "prediction": pred})
    with _output(args.out) as fh:
        _write_rows(fh, ["index", "label", "prediction"], rows)


def _gamma_config(args, net, features) -> GammaSearchConfig:
    calib = None
    if args.gamma_mode == "one_step" and net.split_index > 0:
        calib = calibrate_mean_lipschitz(net, features[: args.calibration], args.initial_gamma)
    return GammaSearchConfig(mode=args.gamma_mode, gamma_lo=args.gamma_lo, gamma_hi=args.gamma_hi,
                             calibration_mean_lipschitz=calib, initial_gamma=args.initial_gamma)


def certify_dataset(net, ds, args) -> list[ReportRow]:
    count = len(ds) if args.limit is None else min(args.limit, len(ds))
    cfg = _gamma_config(args, net, ds.features[:count])
    rows = []
    for i in range(count):
        cert = certify_splitz(net, ds.features[i], args.sigma, args.n0, args.n1, args.alpha,
                              cfg, RngStream(args.seed, i))
        rows.append(ReportRow.from_certificate(i, ds.labels[i], cert))
    return rows


def cmd_certify(args) -> None:
    net = _load_model(args.model)
    ds = _load_data(args.data)
    rows = certify_dataset(net, ds, args)
    with _output(args.out) as fh:
        write_report(rows, fh)


def cmd_lipschitz(args) -> None:
    net = _load_model(args.model)
    if args.per_layer:
        rows = [{"layer": k, "in_dim": l.in_dim, "out_dim": l.out_dim,
                 "in_left_half": int(k < net.split_index), "spectral_norm": n}
                for k, (l, n) in enumerate(zip(net.layers, per_layer_norms(net)))]
        with _output(args.out) as fh:
            _write_rows(fh, ["layer", "in_dim", "out_dim", "in_left_half", "spectral_norm"], rows)
        return
    if not args.data:
        raise CliError("lipschitz needs --data unless --per-layer is given")
    ds = _load_data(args.data)
    glob = global_lipschitz_bound(net)
    rows = []
    for i in range(len(ds)):
        cert = local_lipschitz_bound(net, ds.features[i], args.gamma)
        rows.append({"index": i, "gamma": cert.gamma, "lipschitz_upper_bound": cert.bound,
                     "global_upper_bound": glob,
                     "factor_norms": ";".join(repr(float(n)) for n in cert.per_layer_norms)})
    with _output(args.out) as fh:
        _write_rows(fh, ["index", "gamma", "lipschitz_upper_bound", "global_upper_bound",
                         "factor_norms"], rows)


def cmd_report(args) -> None:
    rows = read_report(args.input)
    if not rows:
        raise CliError(f"{args.input}: report has no rows")
    table = accuracy_table(rows, _epsilons(args.epsilons))
    with _output(args.out) as fh:
        _write_rows(fh, ["epsilon", "certified_accuracy", "acr", "acr_correct_only"], table)


def cmd_sweep_split(args) -> None:
    try:
        requested = [int(s) for s in args.splits.split(",") if s.strip()]
    except ValueError as exc:
        raise CliError(f"bad --splits: {exc}") from exc
    splits = list(dict.fromkeys(requested))
    if len(splits) != len(requested):
        log.warning("duplicate split indices dropped: %s -> %s", requested, splits)
    train_data = _load_data(args.data)
    val_data = _load_data(args.val) if args.val else None
    test_data = _load_data(args.test)
    epsilons = _epsilons(args.epsilons)
    base = _train_config(args)
    args.seed = base.seed
    if args.sigma is None:
        args.sigma = base.sigma
    table = []
    for s in splits:
        cfg = _train_config(args, split_index=s)
        net, _ = train(cfg, train_data, val_data)
        rows = certify_dataset(net, test_data, args)
        for entry in accuracy_table(rows, epsilons):
            table.append({"split_index": s, **entry})
    with _output(args.out) as fh:
        _write_rows(fh, ["split_index", "epsilon", "certified_accuracy", "acr", "acr_correct_only"],
                    table)


# ---------------------------------------------------------------------------
# argument parsing

def _add_certify_flags(p, sigma_default=0.25):
    p.add_argument("--sigma", type=float, default=sigma_default)
    p.add_argument("--n0", type=int, default=100)
    p.add_argument("--n1", type=int, default=10000)
    p.add_argument("--alpha", type=float, default=0.001)
    p.add_argument("--gamma-mode", choices=["binary", "one_step"], default="one_step")
    p.add_argument("--gamma-lo", type=float, default=1e-3)
    p.add_argument("--gamma-hi", type=float, default=10.0)
    p.add_argument("--initial-gamma", type=float, default=1.0,
                   help="ball size for the one-step calibration mean")
    p.add_argument("--calibration", type=int, default=100,
                   help="number of leading inputs used for the one-step calibration mean")
    p.add_argument("--limit", type=int, default=None, help="certify only the first N inputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splitz", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset as CSV")
    p.add_argument("--kind", default="blobs")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a split classifier")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    p.add_argument("--out-model", required=True)
    p.add_argument("--report")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="smoothed predictions")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sigma", type=float, default=0.25)
    p.add_argument("--n0", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("certify", help="certify every input of a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    _add_certify_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("lipschitz", help="local Lipschitz upper bounds or per-layer norms")
    p.add_argument("--model", required=True)
    p.add_argument("--data")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--per-layer", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_lipschitz)

    p = sub.add_parser("report", help="certified accuracy table and ACR from a certify CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--epsilons")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep-split", help="train and certify one model per split index")
    p.add_argument("--config")
    p.add_argument("--splits", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    p.add_argument("--test", required=True)
    _add_certify_flags(p, sigma_default=None)
    p.add_argument("--epsilons")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep_split)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(levelname)s: %(message)s")
    if getattr(args, "seed", 0) is None and args.command not in ("train", "sweep-split"):
        args.seed = 0
    try:
        args.func(args)
    except (CliError, ValueError, OSError) as exc:
        print(f"splitz: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
