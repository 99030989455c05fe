"""Command-line front end.

Exit codes: 0 success, 1 input/output or data error, 2 configuration error,
3 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import __version__
from . import evaluation as ev
from .config import ConfigError, RunConfig, describe, load_config, parse_value
from .data import IngestionError, LoadSeries, export_csv, load_csv, synth_generate
from .numcore import NonFiniteError
from .train import CheckpointError, TrainingDivergence, fit, load_checkpoint, save_checkpoint

EXIT_OK, EXIT_DATA, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("hybridload")


class DataError(Exception):
    """Missing or unreadable input."""


# --------------------------------------------------------------------------
# shared options


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat 'section.key = value' file (see keys below)")
    p.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key; may repeat")
    p.add_argument("--seed", type=int, help="seed for every stochastic step (train.seed, synth.seed)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _data_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="hourly load CSV (data.path)")
    p.add_argument("--holidays", help="holiday list (data.holidays)")


def _model_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-epochs", type=int, help="train.max_epochs_offline")
    p.add_argument("--d", type=int, help="model.d")
    p.add_argument("--n-h", type=int, help="model.n_h")
    p.add_argument("--train-end", help="data.train_end (ISO date)")


# flag name -> configuration key
_FLAG_KEYS = {
    "data": "data.path",
    "holidays": "data.holidays",
    "max_epochs": "train.max_epochs_offline",
    "d": "model.d",
    "n_h": "model.n_h",
    "train_end": "data.train_end",
    "variant": "model.variant",
    "policy": "policy.mode",
    "days": "data.test_days",
    "test_start": "data.train_end",
    "variants": "ablate.variants",
    "seeds": "ablate.seeds",
    "nc": "sweep.nc",
    "lam": "sweep.lambda",
    "years": "synth.years",
}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then ``--config``, then ``--set``, then dedicated flags."""
    overrides = {}
    for item in args.sets:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = parse_value(key.strip(), value)
    for flag, key in _FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            overrides[key] = parse_value(key, str(v))
    if args.seed is not None:
        overrides["train.seed"] = args.seed
        overrides["synth.seed"] = args.seed
    return load_config(args.config, overrides)


def _series(cfg: RunConfig) -> LoadSeries:
    path = cfg["data.path"]
    if path is None:
        raise ConfigError("no input data: pass --data or set data.path")
    return load_csv(path, cfg["data.holidays"])


# --------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    hol = Path(args.holidays_out) if args.holidays_out else out.with_suffix(".holidays.txt")
    series = synth_generate(cfg.synth())
    out.parent.mkdir(parents=True, exist_ok=True)
    export_csv(series, out, hol)
    print(f"wrote {len(series)} hourly rows to {out} and {len(series.holidays)} holidays to {hol}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    series = _series(cfg)
    ckpt = fit(series, cfg["data.train_end"], cfg.train(), variant=cfg["model.variant"],
               d=cfg["model.d"], n_h=cfg["model.n_h"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out)
    hist_path = out.with_suffix(".history.csv")
    with open(hist_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "perturbed_loss", "val_loss"])
        for row in ckpt.history:
            w.writerow([row["epoch"]] + ["" if row[k] is None else repr(row[k])
                                         for k in ("train_loss", "perturbed_loss", "val_loss")])
    best = min(row["val_loss"] for row in ckpt.history)
    print(f"epochs run: {ckpt.history[-1]['epoch']}")
    print(f"final validation loss: {ckpt.history[-1]['val_loss']:.6f} (best {best:.6f}, kept)")
    print(f"checkpoint: {out}")
    return EXIT_OK


def cmd_backtest(args, cfg: RunConfig) -> int:
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {args.checkpoint}: {exc.strerror}") from None
    series = _series(cfg)
    report = ev.backtest(ckpt, series, cfg["data.train_end"], cfg.policy(), n_days=cfg["data.test_days"])
    paths = ev.write_report(report, args.out, args.name)
    m = report.aggregate
    print(f"days: {len(report.days)}  corrections: {len(report.corrections)} ({cfg['policy.mode']})")
    print(f"MAE {m.mae:.3f} MW  MAPE {m.mape:.4f} %  RMSE {m.rmse:.3f} MW")
    print(f"report: {paths['json']}")
    return EXIT_OK


def cmd_ablate(args, cfg: RunConfig) -> int:
    series = _series(cfg)
    results = ev.run_ablation(
        series, cfg["data.train_end"], cfg["ablate.variants"], cfg.train(), cfg.policy(),
        seeds=cfg["ablate.seeds"], d=cfg["model.d"], n_h=cfg["model.n_h"], n_days=cfg["data.test_days"],
    )
    paths = ev.write_ablation(results, args.out)
    for name, m in ev.mean_metrics(results).items():
        print(f"{name:10s} MAPE {m.mape:.4f} %  MAE {m.mae:.3f}  RMSE {m.rmse:.3f}")
    print(f"summary: {paths['csv']}")
    return EXIT_OK


def cmd_sweep(args, cfg: RunConfig) -> int:
    series = _series(cfg)
    train_cfg = cfg.train()
    results = ev.run_sweep(
        series, cfg["data.train_end"], cfg["sweep.nc"], cfg["sweep.lambda"], train_cfg, cfg.policy(),
        d=cfg["model.d"], n_h=cfg["model.n_h"], n_days=cfg["data.test_days"],
    )
    paths = ev.write_sweep(results, args.out, train_cfg)
    for r in results:
        print(f"{r.name:24s} MAPE {r.metrics.mape:.4f} %")
    print(f"results: {paths['csv']}")
    return EXIT_OK


def cmd_metrics(args, cfg: RunConfig) -> int:
    try:
        actual, forecast = ev.read_hourly_csv(args.forecast)
    except OSError as exc:
        raise DataError(f"cannot read {args.forecast}: {exc.strerror}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    m = ev.metrics(actual, forecast)
    print(f"n={m.n} mae={m.mae!r} mape={m.mape!r} rmse={m.rmse!r} mape_excluded={m.mape_excluded}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    epilog = "configuration keys [default]:\n" + describe()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(
        prog="hybridload",
        description="Day-ahead load forecasting with a hybrid LSTM and weekly output-layer correction.",
        epilog=epilog + "\n\nexit codes: 0 ok, 1 input/data error, 2 configuration error, 3 divergence",
        formatter_class=fmt,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_, fn):
        p = sub.add_parser(name, help=help_, description=help_, epilog=epilog, formatter_class=fmt)
        _common(p)
        p.set_defaults(func=fn)
        return p

    p = add("synth", "write a synthetic load CSV and holiday list", cmd_synth)
    p.add_argument("--out", required=True, help="CSV path to write")
    p.add_argument("--holidays-out", help="holiday list path (default: OUT with .holidays.txt)")
    p.add_argument("--years", type=int, help="synth.years")

    p = add("train", "cluster the training windows and train a checkpoint", cmd_train)
    _data_opts(p)
    _model_opts(p)
    p.add_argument("--variant", help="model.variant")
    p.add_argument("--out", required=True, help="checkpoint path (history CSV is written alongside)")

    p = add("backtest", "rolling day-ahead forecasts with scheduled corrections", cmd_backtest)
    _data_opts(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint written by 'train'")
    p.add_argument("--policy", choices=("fine-tune-output", "retrain-all", "none"), help="policy.mode")
    p.add_argument("--test-start", help="first forecast day (data.train_end)")
    p.add_argument("--days", type=int, help="data.test_days")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--name", default="report", help="report file prefix (default: report)")

    p = add("ablate", "train and backtest several feature sets over several seeds", cmd_ablate)
    _data_opts(p)
    _model_opts(p)
    p.add_argument("--variants", help="ablate.variants, e.g. proposed,model1")
    p.add_argument("--seeds", help="ablate.seeds, e.g. 1,2,3")
    p.add_argument("--days", type=int, help="data.test_days")
    p.add_argument("--policy", choices=("fine-tune-output", "retrain-all", "none"), help="policy.mode")
    p.add_argument("--out", required=True, help="output directory")

    p = add("sweep", "one-at-a-time sensitivity over n_c and lambda", cmd_sweep)
    _data_opts(p)
    _model_opts(p)
    p.add_argument("--nc", help="sweep.nc, e.g. 10,20")
    p.add_argument("--lambda", dest="lam", help="sweep.lambda, e.g. 0.5,1")
    p.add_argument("--days", type=int, help="data.test_days")
    p.add_argument("--policy", choices=("fine-tune-output", "retrain-all", "none"), help="policy.mode")
    p.add_argument("--out", required=True, help="output directory")

    p = add("metrics", "MAE, MAPE and RMSE of an hourly forecast CSV", cmd_metrics)
    p.add_argument("forecast", help="CSV with actual_mw and forecast_mw columns")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDivergence, NonFiniteError) as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (IngestionError, CheckpointError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
