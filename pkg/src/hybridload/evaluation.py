"""Error metrics, rolling day-ahead backtest, feature/correction ablations and
hyperparameter sweeps."""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import svg
from .data import LoadSeries, RawWindow, make_windows
from .features import assemble_sample
from .model import predict
from .train import Checkpoint, CorrectionPolicy, TrainConfig, as_batch, correct_online, evaluate_loss, fit

log = logging.getLogger(__name__)

MAPE_FLOOR_MW = 1e-6


@dataclass(frozen=True)
class MetricTriple:
    mae: float
    mape: float
    rmse: float
    n: int = 0
    mape_excluded: int = 0

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def metrics(actual, forecast) -> MetricTriple:
    """MAE (MW), MAPE (%) and RMSE (MW).

    Hours whose actual load is below 1e-6 MW in magnitude are left out of
    MAPE and counted in ``mape_excluded``; MAPE is NaN if none remain.
    """
    a = np.asarray(actual, dtype=np.float64).ravel()
    f = np.asarray(forecast, dtype=np.float64).ravel()
    if a.shape != f.shape:
        raise ValueError(f"length mismatch: {a.size} actuals vs {f.size} forecasts")
    if a.size == 0:
        raise ValueError("metrics need at least one value")
    err = a - f
    abs_err = np.abs(err)
    ok = np.abs(a) >= MAPE_FLOOR_MW
    mape = float(np.mean(abs_err[ok] / np.abs(a[ok])) * 100.0) if ok.any() else math.nan
    return MetricTriple(
        mae=float(abs_err.mean()),
        mape=mape,
        rmse=float(np.sqrt(np.mean(err * err))),
        n=int(a.size),
        mape_excluded=int((~ok).sum()),
    )


# --------------------------------------------------------------------------
# forecasting


def forecast_inputs(checkpoint: Checkpoint, history: np.ndarray, history_start: dt.datetime, holidays):
    """Model inputs for the day after ``history``; no target values are touched."""
    target_start = history_start + dt.timedelta(hours=len(history))
    raw = RawWindow(0, np.asarray(history), np.zeros(checkpoint.dims.out_len), target_start, history_start)
    s = assemble_sample(raw, checkpoint.scaler, holidays, checkpoint.clusters, checkpoint.mask)
    return s.X, s.Q


def forecast_day(checkpoint: Checkpoint, history: np.ndarray, history_start: dt.datetime, holidays) -> np.ndarray:
    """Next-day forecast in MW from the preceding ``seq_len`` hours."""
    X, Q = forecast_inputs(checkpoint, history, history_start, holidays)
    return checkpoint.scaler.invert(predict(X, Q, checkpoint.params))


def recent_samples(checkpoint: Checkpoint, series: LoadSeries, end: int, history_days: int):
    """Training windows from the ``history_days`` days of ``series`` ending at hour ``end``."""
    start = max(0, end - 24 * history_days)
    sub = series.slice(start, end)
    return [
        assemble_sample(w, checkpoint.scaler, series.holidays, checkpoint.clusters, checkpoint.mask)
        for w in make_windows(sub, width=checkpoint.dims.seq_len, horizon=checkpoint.dims.out_len)
    ]


@dataclass
class DayRecord:
    date: dt.date
    actual: np.ndarray
    forecast: np.ndarray
    metrics: MetricTriple


@dataclass
class ForecastReport:
    days: list[DayRecord]
    aggregate: MetricTriple
    corrections: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    # model state after the last correction; not serialised
    final_checkpoint: Checkpoint | None = field(default=None, repr=False, compare=False)

    @property
    def actual(self) -> np.ndarray:
        return np.concatenate([d.actual for d in self.days]) if self.days else np.zeros(0)

    @property
    def forecast(self) -> np.ndarray:
        return np.concatenate([d.forecast for d in self.days]) if self.days else np.zeros(0)

    def check_consistency(self, tol: float = 1e-9) -> None:
        """Recompute the aggregate from the hourly values and compare."""
        again = metrics(self.actual, self.forecast)
        for name in ("mae", "mape", "rmse"):
            a, b = getattr(again, name), getattr(self.aggregate, name)
            if not (math.isnan(a) and math.isnan(b)) and abs(a - b) > tol * max(1.0, abs(b)):
                raise ValueError(f"report aggregate {name} {b} disagrees with hourly values ({a})")
        if again.rmse < again.mae - 1e-9 * max(1.0, again.mae):
            raise ValueError("RMSE below MAE")


Forecaster = Callable[[Checkpoint, np.ndarray, dt.datetime, frozenset], np.ndarray]


def backtest(
    checkpoint: Checkpoint,
    series: LoadSeries,
    test_start: dt.date | int,
    policy: CorrectionPolicy = CorrectionPolicy(),
    *,
    n_days: int | None = None,
    forecaster: Forecaster = forecast_day,
) -> ForecastReport:
    """Rolling day-ahead forecasts from ``test_start`` to the end of ``series``.

    Each day is forecast from the actual loads of the preceding week. After
    every ``policy.cadence_days`` days the model is corrected on the trailing
    ``policy.history_days`` of data (ending with the day just forecast), so
    corrections only affect later days. ``checkpoint`` itself is not modified.
    """
    seq = checkpoint.dims.seq_len
    first = test_start if isinstance(test_start, int) else series.index_of(test_start)
    if first % 24:
        raise ValueError("test_start must fall on a midnight")
    if first < seq:
        raise ValueError(
            f"history shortfall: first test day needs {seq} hours of history, only {max(first, 0)} available"
        )
    total = (len(series) - first) // 24
    if n_days is not None:
        total = min(total, n_days)
    if total <= 0:
        raise ValueError("no test days after test_start")

    current = checkpoint
    days: list[DayRecord] = []
    corrections: list[dict] = []
    for k in range(total):
        lo = first + 24 * k
        hist = series.values[lo - seq : lo]
        fc = np.asarray(forecaster(current, hist, series.timestamp(lo - seq), series.holidays), dtype=np.float64)
        actual = np.array(series.values[lo : lo + 24])
        days.append(DayRecord(series.timestamp(lo).date(), actual, fc, metrics(actual, fc)))
        if policy.mode != "none" and (k + 1) % policy.cadence_days == 0:
            end = lo + 24
            recent = recent_samples(current, series, end, policy.history_days)
            week = recent[-policy.cadence_days :]
            pre = evaluate_loss(week, current.params)
            current = correct_online(current, recent, policy, round_index=len(corrections))
            post = evaluate_loss(week, current.params)
            corrections.append(
                {"date": days[-1].date.isoformat(), "mode": policy.mode, "pre_loss": pre, "post_loss": post}
            )
            log.info("correction %s %s: %.5f -> %.5f", days[-1].date, policy.mode, pre, post)

    actual = np.concatenate([d.actual for d in days])
    forecast = np.concatenate([d.forecast for d in days])
    return ForecastReport(
        days,
        metrics(actual, forecast),
        corrections,
        {
            "variant": checkpoint.variant,
            "test_start": series.timestamp(first).date().isoformat(),
            "n_days": total,
            "policy": dataclasses.asdict(policy),
            "train_config": dataclasses.asdict(checkpoint.config),
            "dims": dataclasses.asdict(checkpoint.dims),
        },
        current,
    )


# --------------------------------------------------------------------------
# reference forecasts


def seasonal_naive(series: LoadSeries, test_start: dt.date | int, n_days: int | None = None) -> MetricTriple:
    """Metrics of forecasting each hour by the load one week earlier."""
    first = test_start if isinstance(test_start, int) else series.index_of(test_start)
    if first < 168:
        raise ValueError("seasonal naive needs a week of history")
    stop = len(series) if n_days is None else min(len(series), first + 24 * n_days)
    v = series.values
    return metrics(v[first:stop], v[first - 168 : stop - 168])


def ideal_forecast(series: LoadSeries, signal: LoadSeries, test_start: dt.date | int,
                   n_days: int | None = None) -> MetricTriple:
    """Metrics of a forecaster that knows the noise-free signal exactly."""
    first = test_start if isinstance(test_start, int) else series.index_of(test_start)
    stop = len(series) if n_days is None else min(len(series), first + 24 * n_days)
    return metrics(series.values[first:stop], signal.values[first:stop])


# --------------------------------------------------------------------------
# report IO


def _num(x: float):
    return None if isinstance(x, float) and math.isnan(x) else x


def report_to_dict(report: ForecastReport) -> dict:
    return {
        "aggregate": {k: _num(v) for k, v in report.aggregate.as_dict().items()},
        "days": [
            {
                "date": d.date.isoformat(),
                "actual_mw": [float(x) for x in d.actual],
                "forecast_mw": [float(x) for x in d.forecast],
                "metrics": {k: _num(v) for k, v in d.metrics.as_dict().items()},
            }
            for d in report.days
        ],
        "corrections": report.corrections,
        "config": report.config,
    }


def _metric_from(doc: dict) -> MetricTriple:
    return MetricTriple(
        doc["mae"], math.nan if doc["mape"] is None else doc["mape"], doc["rmse"], doc["n"], doc["mape_excluded"]
    )


def report_from_dict(doc: dict) -> ForecastReport:
    days = [
        DayRecord(
            dt.date.fromisoformat(d["date"]),
            np.array(d["actual_mw"], dtype=np.float64),
            np.array(d["forecast_mw"], dtype=np.float64),
            _metric_from(d["metrics"]),
        )
        for d in doc["days"]
    ]
    report = ForecastReport(days, _metric_from(doc["aggregate"]), doc["corrections"], doc["config"])
    report.check_consistency()
    return report


def report_json(report: ForecastReport) -> str:
    return json.dumps(report_to_dict(report), indent=1, sort_keys=True)


def load_report(path: str | Path) -> ForecastReport:
    return report_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def hourly_csv(report: ForecastReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["date", "hour", "actual_mw", "forecast_mw"])
    for d in report.days:
        for h, (a, f) in enumerate(zip(d.actual, d.forecast)):
            w.writerow([d.date.isoformat(), h, repr(float(a)), repr(float(f))])
    return buf.getvalue()


def read_hourly_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Actual and forecast columns of a ``date,hour,actual_mw,forecast_mw`` file."""
    actual, forecast = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"actual_mw", "forecast_mw"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns {sorted(need)}, got {reader.fieldnames}")
        for lineno, row in enumerate(reader, 2):
            try:
                actual.append(float(row["actual_mw"]))
                forecast.append(float(row["forecast_mw"]))
            except (TypeError, ValueError):
                raise ValueError(f"{path}:{lineno}: malformed row {row}") from None
    if not actual:
        raise ValueError(f"{path}: no rows")
    return np.array(actual), np.array(forecast)


SUMMARY_FIELDS = ("name", "mae", "mape", "rmse", "n", "mape_excluded")


def summary_csv(rows: Iterable[tuple[str, MetricTriple]], extra: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(extra) + list(SUMMARY_FIELDS))
    for row in rows:
        *keys, name, m = row
        w.writerow(list(keys) + [name, repr(m.mae), repr(m.mape), repr(m.rmse), m.n, m.mape_excluded])
    return buf.getvalue()


def write_report(report: ForecastReport, outdir: str | Path, name: str = "report") -> dict[str, Path]:
    """JSON, hourly CSV, summary CSV and two SVG charts under ``outdir``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / f"{name}.json",
        "csv": out / f"{name}_hourly.csv",
        "summary": out / f"{name}_summary.csv",
        "forecast_svg": out / f"{name}_forecast.svg",
        "mape_svg": out / f"{name}_daily_mape.svg",
    }
    paths["json"].write_text(report_json(report), encoding="utf-8")
    paths["csv"].write_text(hourly_csv(report), encoding="utf-8")
    paths["summary"].write_text(summary_csv([(report.config.get("variant", name), report.aggregate)]), encoding="utf-8")
    paths["forecast_svg"].write_text(
        svg.line_chart({"actual": report.actual.tolist(), "forecast": report.forecast.tolist()},
                       title="Day-ahead forecast", ylabel="MW"),
        encoding="utf-8",
    )
    paths["mape_svg"].write_text(
        svg.bar_chart([d.date.strftime("%m-%d") if len(report.days) <= 31 else "" for d in report.days],
                      [d.metrics.mape for d in report.days], title="Daily MAPE", ylabel="%",
                      width=max(480, 6 * len(report.days) + 80)),
        encoding="utf-8",
    )
    return paths


# --------------------------------------------------------------------------
# experiments


@dataclass
class RunResult:
    name: str
    seed: int
    metrics: MetricTriple
    report: ForecastReport | None = None
    params: dict = field(default_factory=dict)


def _with_seed(config: TrainConfig, seed: int | None) -> TrainConfig:
    return config if seed is None else dataclasses.replace(config, seed=seed)


def train_and_backtest(
    series: LoadSeries,
    test_start: dt.date,
    config: TrainConfig,
    policy: CorrectionPolicy,
    *,
    variant: str = "proposed",
    d: int = 10,
    n_h: int = 128,
    n_days: int | None = None,
) -> tuple[Checkpoint, ForecastReport]:
    ckpt = fit(series, test_start, config, variant=variant, d=d, n_h=n_h)
    return ckpt, backtest(ckpt, series, test_start, policy, n_days=n_days)


def run_ablation(
    series: LoadSeries,
    test_start: dt.date,
    variants: Sequence[str],
    config: TrainConfig = TrainConfig(),
    policy: CorrectionPolicy = CorrectionPolicy(),
    *,
    seeds: Sequence[int] | None = None,
    d: int = 10,
    n_h: int = 128,
    n_days: int | None = None,
) -> list[RunResult]:
    """Train and backtest every feature variant with identical seeds and settings."""
    if not variants:
        raise ValueError("no variants requested")
    seeds = list(seeds) if seeds else [config.seed]
    out = []
    for variant in variants:
        for seed in seeds:
            _, report = train_and_backtest(
                series, test_start, _with_seed(config, seed), policy, variant=variant, d=d, n_h=n_h, n_days=n_days
            )
            log.info("ablation %s seed %d: MAPE %.4f", variant, seed, report.aggregate.mape)
            out.append(RunResult(variant, seed, report.aggregate, report))
    return out


def mean_metrics(results: Iterable[RunResult]) -> dict[str, MetricTriple]:
    """Per-name average of MAE/MAPE/RMSE across seeds."""
    groups: dict[str, list[MetricTriple]] = {}
    for r in results:
        groups.setdefault(r.name, []).append(r.metrics)
    return {
        name: MetricTriple(
            float(np.mean([m.mae for m in ms])),
            float(np.mean([m.mape for m in ms])),
            float(np.mean([m.rmse for m in ms])),
            sum(m.n for m in ms),
            sum(m.mape_excluded for m in ms),
        )
        for name, ms in groups.items()
    }


def sweep_points(n_c_values, lambda_values, config: TrainConfig) -> list[tuple[int, float]]:
    """One-at-a-time grid: vary n_c at the default lambda, then lambda at the default n_c."""
    if not n_c_values or not lambda_values:
        raise ValueError("sweep grids must be nonempty")
    pts: list[tuple[int, float]] = []
    for n_c in n_c_values:
        pts.append((int(n_c), float(config.lambda_perturb)))
    for lam in lambda_values:
        pts.append((int(config.n_clusters), float(lam)))
    seen, unique = set(), []
    for p in pts:
        if p not in seen:
            seen.add(p)
            unique.append(p)
    return unique


def run_sweep(
    series: LoadSeries,
    test_start: dt.date,
    n_c_values: Sequence[int],
    lambda_values: Sequence[float],
    config: TrainConfig = TrainConfig(),
    policy: CorrectionPolicy = CorrectionPolicy(),
    *,
    d: int = 10,
    n_h: int = 128,
    n_days: int | None = None,
) -> list[RunResult]:
    out = []
    for n_c, lam in sweep_points(n_c_values, lambda_values, config):
        cfg = dataclasses.replace(config, n_clusters=n_c, lambda_perturb=lam)
        _, report = train_and_backtest(series, test_start, cfg, policy, d=d, n_h=n_h, n_days=n_days)
        out.append(RunResult(f"nc={n_c},lambda={lam!r}", cfg.seed, report.aggregate, report,
                             {"n_c": n_c, "lambda": lam}))
    return out


def sweep_csv(results: Sequence[RunResult]) -> str:
    return summary_csv(
        [(r.params["n_c"], repr(r.params["lambda"]), r.name, r.metrics) for r in results], extra=("n_c", "lambda")
    )


def write_sweep(results: Sequence[RunResult], outdir: str | Path, config: TrainConfig) -> dict[str, Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "sweep.csv"}
    paths["csv"].write_text(sweep_csv(results), encoding="utf-8")
    by_nc = [r for r in results if r.params["lambda"] == config.lambda_perturb]
    by_lam = [r for r in results if r.params["n_c"] == config.n_clusters]
    for tag, rows, key in (("nc", by_nc, "n_c"), ("lambda", by_lam, "lambda")):
        for metric in ("mape", "rmse"):
            p = out / f"sweep_{tag}_{metric}.svg"
            p.write_text(
                svg.bar_chart([str(r.params[key]) for r in rows], [getattr(r.metrics, metric) for r in rows],
                              title=f"{metric.upper()} vs {key}", ylabel=metric.upper()),
                encoding="utf-8",
            )
            paths[f"{tag}_{metric}"] = p
    return paths


def write_ablation(results: Sequence[RunResult], outdir: str | Path) -> dict[str, Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    means = mean_metrics(results)
    paths = {"csv": out / "ablation.csv", "runs": out / "ablation_runs.csv", "svg": out / "ablation_mape.svg"}
    paths["csv"].write_text(summary_csv(list(means.items())), encoding="utf-8")
    paths["runs"].write_text(summary_csv([(r.seed, r.name, r.metrics) for r in results], extra=("seed",)),
                             encoding="utf-8")
    paths["svg"].write_text(
        svg.bar_chart(list(means), [m.mape for m in means.values()], title="MAPE by feature set", ylabel="%"),
        encoding="utf-8",
    )
    return paths
