"""Flat ``section.key = value`` run configuration.

Every tunable of the pipeline lives in one table (:data:`KEYS`) with its
default, parser and a one-line description. Files may set any subset; unknown
keys are rejected. Command-line flags are applied on top of file values.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .data import SynthConfig
from .features import VARIANTS
from .train import CorrectionPolicy, TrainConfig


class ConfigError(ValueError):
    """Invalid configuration key or value."""


def _date(s: str) -> dt.date:
    return dt.date.fromisoformat(s)


def _optional(parse: Callable[[str], Any]) -> Callable[[str], Any]:
    def inner(s: str):
        return None if s.lower() in ("none", "") else parse(s)

    return inner


def _shift(s: str):
    when, _, mw = s.partition(":")
    if not mw:
        raise ValueError("expected DATE:MW")
    return (_date(when.strip()), float(mw))


def _variant(s: str) -> str:
    if s not in VARIANTS:
        raise ValueError(f"unknown variant (choose from {', '.join(VARIANTS)})")
    return s


def _int_list(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _float_list(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _str_list(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple) and len(v) == 2 and isinstance(v[0], dt.date):
        return f"{v[0].isoformat()}:{v[1]!r}"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, dt.date):
        return v.isoformat()
    return str(v)


@dataclass(frozen=True)
class Key:
    default: Any
    parse: Callable[[str], Any]
    help: str


_T, _P, _S = TrainConfig(), CorrectionPolicy(), SynthConfig()

KEYS: dict[str, Key] = {
    # training
    "train.lambda_perturb": Key(_T.lambda_perturb, float, "scale of the embedding perturbation"),
    "train.lr_offline": Key(_T.lr_offline, float, "Adam learning rate, offline training"),
    "train.lr_online": Key(_T.lr_online, float, "Adam learning rate, online correction"),
    "train.batch_size": Key(_T.batch_size, int, "samples per batch"),
    "train.max_epochs_offline": Key(_T.max_epochs_offline, int, "epoch cap, offline training"),
    "train.patience_offline": Key(_T.patience_offline, int, "epochs without improvement before stopping"),
    "train.max_epochs_online": Key(_T.max_epochs_online, int, "epoch cap per online correction"),
    "train.tolerance_online": Key(_T.tolerance_online, int, "patience per online correction"),
    "train.validation_fraction": Key(_T.validation_fraction, float, "share of training windows held out"),
    "train.early_stop_epsilon": Key(_T.early_stop_epsilon, float, "minimum loss improvement (normalised)"),
    "train.n_clusters": Key(_T.n_clusters, int, "K-means clusters n_c"),
    "train.kmeans_max_iter": Key(_T.kmeans_max_iter, int, "K-means iteration cap"),
    "train.forget_bias": Key(_T.forget_bias, float, "initial forget-gate bias"),
    "train.clip_norm": Key(_T.clip_norm, _optional(float), "global gradient-norm clip (none = off)"),
    "train.seed": Key(_T.seed, int, "seed for init, split, shuffles and K-means"),
    # model
    "model.d": Key(10, int, "embedding width"),
    "model.n_h": Key(128, int, "hidden units of every layer"),
    "model.variant": Key("proposed", _variant, "feature set: proposed, model1, model2, model3"),
    # online correction
    "policy.mode": Key(_P.mode, str, "fine-tune-output, retrain-all or none"),
    "policy.cadence_days": Key(_P.cadence_days, int, "days between corrections"),
    "policy.history_days": Key(_P.history_days, int, "trailing days used per correction"),
    # data and split
    "data.path": Key(None, _optional(str), "hourly load CSV"),
    "data.holidays": Key(None, _optional(str), "holiday list, one ISO date per line"),
    "data.train_end": Key(dt.date(2021, 1, 1), _date, "first day after training data (test start)"),
    "data.test_days": Key(None, _optional(int), "days to backtest (none = to the end)"),
    # synthetic generator
    "synth.years": Key(_S.years, int, "calendar years generated"),
    "synth.start": Key(_S.start, _date, "first day"),
    "synth.base_load": Key(_S.base_load, float, "mean level, MW"),
    "synth.daily_amplitude": Key(_S.daily_amplitude, float, "daily sinusoid amplitude, MW"),
    "synth.weekly_amplitude": Key(_S.weekly_amplitude, float, "weekday profile amplitude, MW"),
    "synth.trend_slope": Key(_S.trend_slope, float, "linear trend, MW per year"),
    "synth.holiday_dip_fraction": Key(_S.holiday_dip_fraction, float, "relative load drop on holidays"),
    "synth.noise_std_fraction": Key(_S.noise_std_fraction, float, "noise std as a fraction of base_load"),
    "synth.level_shift": Key(_S.level_shift, _optional(_shift), "DATE:MW step change (none = off)"),
    "synth.seed": Key(_S.seed, int, "generator seed"),
    # experiments
    "ablate.variants": Key(tuple(VARIANTS), _str_list, "comma-separated feature sets"),
    "ablate.seeds": Key((1, 2, 3), _int_list, "comma-separated seeds, results averaged"),
    "sweep.nc": Key((10, 15, 20, 25, 30), _int_list, "n_c grid (at the configured lambda)"),
    "sweep.lambda": Key((0.05, 0.1, 0.5, 1.0, 1.5), _float_list, "lambda grid (at the configured n_c)"),
}


@dataclass(frozen=True)
class RunConfig:
    values: dict[str, Any] = field(default_factory=lambda: {k: v.default for k, v in KEYS.items()})

    def __getitem__(self, key: str):
        return self.values[key]

    def section(self, name: str) -> dict[str, Any]:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def train(self) -> TrainConfig:
        return _build(TrainConfig, self.section("train"), "train")

    def policy(self) -> CorrectionPolicy:
        return _build(CorrectionPolicy, self.section("policy"), "policy")

    def synth(self) -> SynthConfig:
        return _build(SynthConfig, self.section("synth"), "synth")

    def with_values(self, updates: dict[str, Any]) -> "RunConfig":
        return RunConfig({**self.values, **updates})

    def dump(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.values.items())


def _build(cls, kwargs, section):
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{section}: {exc}") from None


def parse_value(key: str, text: str):
    if key not in KEYS:
        raise ConfigError(f"unknown configuration key {key!r}")
    try:
        return KEYS[key].parse(text.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text.strip()!r} ({exc})") from None


def parse_config(text: str, source: str = "<config>") -> dict[str, Any]:
    """Parse ``section.key = value`` lines; ``#`` starts a comment."""
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key = key.strip()
        try:
            out[key] = parse_value(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return out


def load_config(path: str | Path | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Defaults, then file values, then ``overrides``; every section is validated."""
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        cfg = cfg.with_values(parse_config(text, str(path)))
    if overrides:
        for k in overrides:
            if k not in KEYS:
                raise ConfigError(f"unknown configuration key {k!r}")
        cfg = cfg.with_values(overrides)
    cfg.train(), cfg.policy(), cfg.synth()
    return cfg


def describe() -> str:
    """One line per key: name, default and meaning."""
    width = max(map(len, KEYS))
    return "\n".join(f"  {k:<{width}}  [{_fmt(v.default)}]  {v.help}" for k, v in KEYS.items())

