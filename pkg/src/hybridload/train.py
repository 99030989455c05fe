"""Offline training with embedding perturbation, weekly output-block correction,
and checkpoint (de)serialisation."""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import numcore as nc
from .data import LoadSeries, Scaler, fit_scaler, make_windows
from .features import VARIANTS, ClusterModel, FeatureMask, WindowSample, assemble_sample, kmeans_fit, stack
from .model import OUTPUT, ModelDims, check_params, forward, init_params

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class TrainingDivergence(ArithmeticError):
    """Loss or gradient became non-finite during training."""


class CheckpointError(ValueError):
    """Malformed, corrupted or incompatible checkpoint document."""


@dataclass(frozen=True)
class TrainConfig:
    lambda_perturb: float = 1.0
    lr_offline: float = 0.005
    lr_online: float = 0.01
    batch_size: int = 56
    max_epochs_offline: int = 150
    patience_offline: int = 7
    max_epochs_online: int = 10
    tolerance_online: int = 5
    validation_fraction: float = 0.10
    early_stop_epsilon: float = 1e-4
    n_clusters: int = 20
    kmeans_max_iter: int = 300
    forget_bias: float = 0.0
    clip_norm: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.lambda_perturb < 0:
            raise ValueError("lambda_perturb must be nonnegative")
        for name in ("batch_size", "patience_offline", "tolerance_online", "n_clusters", "kmeans_max_iter"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("max_epochs_offline", "max_epochs_online"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.lr_offline <= 0 or self.lr_online <= 0:
            raise ValueError("learning rates must be positive")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")


@dataclass(frozen=True)
class CorrectionPolicy:
    cadence_days: int = 7
    history_days: int = 90
    mode: str = "fine-tune-output"

    MODES = ("fine-tune-output", "retrain-all", "none")

    def __post_init__(self):
        if self.mode not in self.MODES:
            raise ValueError(f"unknown correction mode {self.mode!r}; choose from {self.MODES}")
        if self.cadence_days < 1:
            raise ValueError("cadence_days must be at least 1")
        if self.history_days < self.cadence_days:
            raise ValueError("history_days must be at least cadence_days")


@dataclass(frozen=True, eq=False)
class Checkpoint:
    dims: ModelDims
    params: Mapping[str, np.ndarray]
    scaler: Scaler
    clusters: ClusterModel | None
    config: TrainConfig
    variant: str = "proposed"
    history: tuple[dict, ...] = ()
    format_version: int = FORMAT_VERSION

    @property
    def mask(self) -> FeatureMask:
        return VARIANTS[self.variant]

    def replace(self, **changes) -> "Checkpoint":
        return dataclasses.replace(self, **changes)


# --------------------------------------------------------------------------
# losses


Batch = tuple[np.ndarray, np.ndarray, np.ndarray]


def as_batch(samples: Sequence[WindowSample] | Batch) -> Batch:
    if isinstance(samples, tuple) and len(samples) == 3 and isinstance(samples[0], np.ndarray):
        return samples
    if not samples:
        raise ValueError("empty batch")
    return stack(samples)


def batch_loss(batch, params) -> nc.Tensor:
    """Mean over the batch of the 1-norm of the forecast error (normalised units)."""
    X, Q, Y = as_batch(batch)
    return nc.mean_abs_error(forward(X, Q, params), Y)


def loss_and_grads(batch, params: Mapping[str, np.ndarray]) -> tuple[float, dict[str, np.ndarray]]:
    tape = nc.GradientTape()
    with tape:
        loss = batch_loss(batch, tape.watch(params))
    return float(loss.data), nc.backward(tape, loss)


def perturb_embedding(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lam: float):
    """Parameters with ``W_e`` shifted by ``lam`` times its gradient."""
    out = dict(params)
    out["W_e"] = params["W_e"] + lam * grads["W_e"]
    return out


def perturbed_step(batch, params: Mapping[str, np.ndarray], lam: float):
    """Clean loss, perturbed loss and the gradient of the perturbed loss.

    The embedding shift is held constant while differentiating, so the
    returned gradient is evaluated at the shifted parameters. With
    ``lam == 0`` this is exactly one plain forward/backward pass.
    """
    batch = as_batch(batch)
    clean, grads = loss_and_grads(batch, params)
    if lam == 0:
        return clean, clean, grads
    shifted = perturb_embedding(params, grads, lam)
    perturbed, pgrads = loss_and_grads(batch, shifted)
    return clean, perturbed, pgrads


def perturbed_loss(batch, params: Mapping[str, np.ndarray], lam: float) -> float:
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    batch = as_batch(batch)
    if lam == 0:
        return float(batch_loss(batch, params).data)
    _, grads = loss_and_grads(batch, params)
    return float(batch_loss(batch, perturb_embedding(params, grads, lam)).data)


def evaluate_loss(samples, params, chunk: int = 256) -> float:
    """Clean loss over many samples, reduced in a fixed order."""
    X, Q, Y = as_batch(samples)
    total = 0.0
    for lo in range(0, len(X), chunk):
        sl = slice(lo, lo + chunk)
        total += float(batch_loss((X[sl], Q[sl], Y[sl]), params).data) * len(X[sl])
    return total / len(X)


# --------------------------------------------------------------------------
# offline training


def split_validation(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded random split of ``range(n)`` into (train, validation) indices."""
    n_val = int(round(fraction * n))
    if n_val < 1:
        raise ValueError(f"validation split of {fraction} over {n} windows is empty")
    if n_val >= n:
        raise ValueError(f"validation split leaves no training windows ({n} total)")
    perm = np.random.default_rng([seed, 1]).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _epoch(
    X, Q, Y, indices, params, state, lr, config, keys, rng, *, epoch, hook=None
) -> tuple[float, float]:
    order = rng.permutation(indices)
    clean_sum = pert_sum = 0.0
    n_batches = 0
    for b, lo in enumerate(range(0, len(order), config.batch_size)):
        idx = order[lo : lo + config.batch_size]
        if hook is not None:
            hook(epoch, b, idx)
        try:
            # overflow is reported as NonFiniteError, numpy's own warning adds nothing
            with np.errstate(over="ignore", invalid="ignore"):
                clean, pert, grads = perturbed_step((X[idx], Q[idx], Y[idx]), params, config.lambda_perturb)
                if config.clip_norm is not None:
                    nc.clip_global_norm(grads, config.clip_norm)
                nc.adam_step(state, params, grads, lr, keys=keys)
        except nc.NonFiniteError as exc:
            raise TrainingDivergence(f"non-finite value at epoch {epoch}, batch {b}: {exc}") from exc
        clean_sum += clean
        pert_sum += pert
        n_batches += 1
    return clean_sum / n_batches, pert_sum / n_batches


def train_offline(
    samples: Sequence[WindowSample],
    dims: ModelDims,
    config: TrainConfig,
    *,
    scaler: Scaler,
    clusters: ClusterModel | None = None,
    variant: str = "proposed",
    batch_hook: Callable | None = None,
) -> Checkpoint:
    """Train all parameters with Adam on the perturbed loss; keep the best-validation weights.

    ``batch_hook(epoch, batch_number, sample_indices)`` is called before each
    update (for instrumentation).
    """
    X, Q, Y = as_batch(samples)
    train_idx, val_idx = split_validation(len(X), config.validation_fraction, config.seed)
    val = (X[val_idx], Q[val_idx], Y[val_idx])
    params = init_params(dims, config.seed, config.forget_bias)
    state = nc.AdamState()
    rng = np.random.default_rng([config.seed, 2])

    best_val = prev_val = evaluate_loss(val, params)
    best = {k: v.copy() for k, v in params.items()}
    history = [{"epoch": 0, "train_loss": None, "perturbed_loss": None, "val_loss": best_val}]
    patience = 0
    for epoch in range(1, config.max_epochs_offline + 1):
        clean, pert = _epoch(
            X, Q, Y, train_idx, params, state, config.lr_offline, config, None, rng,
            epoch=epoch, hook=batch_hook,
        )
        val_loss = evaluate_loss(val, params)
        if not np.isfinite([clean, pert, val_loss]).all():
            raise TrainingDivergence(f"non-finite loss at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": clean, "perturbed_loss": pert, "val_loss": val_loss})
        log.info("epoch %d train %.6f perturbed %.6f val %.6f", epoch, clean, pert, val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best = {k: v.copy() for k, v in params.items()}
        patience = patience + 1 if prev_val - val_loss < config.early_stop_epsilon else 0
        prev_val = val_loss
        if patience >= config.patience_offline:
            break
    return Checkpoint(dims, best, scaler, clusters, config, variant, tuple(history))


def build_samples(
    series: LoadSeries,
    scaler: Scaler,
    clusters: ClusterModel | None,
    mask: FeatureMask,
) -> list[WindowSample]:
    return [assemble_sample(w, scaler, series.holidays, clusters, mask) for w in make_windows(series)]


def fit(
    series: LoadSeries,
    train_end: int | dt.date | None = None,
    config: TrainConfig = TrainConfig(),
    *,
    variant: str = "proposed",
    d: int = 10,
    n_h: int = 128,
    batch_hook: Callable | None = None,
) -> Checkpoint:
    """Scaler, clusters and offline training on ``series[:train_end]``."""
    if train_end is None:
        train_end = len(series)
    elif not isinstance(train_end, int):
        train_end = series.index_of(train_end)
    train = series.slice(0, train_end)
    scaler = fit_scaler(train)
    mask = VARIANTS[variant]
    raws = make_windows(train)
    clusters = None
    if mask.needs_clusters:
        hist = np.stack([scaler.apply(w.history) for w in raws])
        clusters = kmeans_fit(hist, config.n_clusters, seed=config.seed, max_iter=config.kmeans_max_iter)
    samples = [assemble_sample(w, scaler, series.holidays, clusters, mask) for w in raws]
    dims = ModelDims(
        seq_len=len(samples[0].X), in_dim=mask.in_dim, d=d, n_h=n_h,
        q_dim=mask.q_dim(config.n_clusters), out_len=len(samples[0].Y),
    )
    return train_offline(
        samples, dims, config, scaler=scaler, clusters=clusters, variant=variant, batch_hook=batch_hook
    )


# --------------------------------------------------------------------------
# online correction


def correct_online(
    checkpoint: Checkpoint,
    recent: Sequence[WindowSample],
    policy: CorrectionPolicy,
    config: TrainConfig | None = None,
    *,
    round_index: int = 0,
) -> Checkpoint:
    """Fine-tune on recent windows with a fresh Adam state.

    ``fine-tune-output`` updates only the output block, ``retrain-all``
    every parameter, ``none`` returns ``checkpoint`` itself.
    """
    if policy.mode == "none":
        return checkpoint
    if not recent:
        raise ValueError("online correction needs at least one recent window")
    config = config or checkpoint.config
    X, Q, Y = as_batch(recent)
    params = {k: v.copy() for k, v in checkpoint.params.items()}
    keys = list(OUTPUT) if policy.mode == "fine-tune-output" else list(params)
    state = nc.AdamState()
    rng = np.random.default_rng([config.seed, 3, round_index])
    idx = np.arange(len(X))
    prev = None
    patience = 0
    for epoch in range(1, config.max_epochs_online + 1):
        _, pert = _epoch(X, Q, Y, idx, params, state, config.lr_online, config, keys, rng, epoch=epoch)
        if prev is not None:
            patience = patience + 1 if prev - pert < config.early_stop_epsilon else 0
        prev = pert
        if patience >= config.tolerance_online:
            break
    # untouched entries keep the original arrays
    merged = dict(checkpoint.params)
    for k in keys:
        merged[k] = params[k]
    return checkpoint.replace(params=merged)


# --------------------------------------------------------------------------
# checkpoint IO


def f64_hex(x: float) -> str:
    return struct.pack(">d", float(x)).hex()


def hex_f64(s: str, where: str = "value") -> float:
    if not isinstance(s, str) or len(s) != 16:
        raise CheckpointError(f"{where}: expected 16 hex digits, got {s!r}")
    try:
        return struct.unpack(">d", bytes.fromhex(s))[0]
    except ValueError:
        raise CheckpointError(f"{where}: invalid hex {s!r}") from None


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype=">f8")
    return {
        "shape": list(a.shape),
        "data": [a.tobytes()[k : k + 8].hex() for k in range(0, a.nbytes, 8)],
        "sha256": hashlib.sha256(a.tobytes()).hexdigest(),
    }


def _decode_array(doc, where: str) -> np.ndarray:
    try:
        shape = tuple(int(n) for n in doc["shape"])
        data = doc["data"]
        digest = doc["sha256"]
    except (KeyError, TypeError, ValueError):
        raise CheckpointError(f"{where}: malformed array record") from None
    if len(data) != int(np.prod(shape)):
        raise CheckpointError(f"{where}: {len(data)} values for shape {shape}")
    for k, s in enumerate(data):
        if not isinstance(s, str) or len(s) != 16:
            raise CheckpointError(f"{where}[{k}]: expected 16 hex digits, got {s!r}")
    try:
        raw = bytes.fromhex("".join(data))
    except ValueError:
        raise CheckpointError(f"{where}: invalid hex digit") from None
    if hashlib.sha256(raw).hexdigest() != digest:
        raise CheckpointError(f"{where}: checksum mismatch (corrupted data)")
    return np.frombuffer(raw, dtype=">f8").astype(np.float64).reshape(shape)


def _encode_value(v):
    if isinstance(v, float):
        return f64_hex(v)
    return v


def _encode_config(cfg) -> dict:
    return {f.name: _encode_value(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}


def _decode_config(cls, doc, where: str):
    try:
        kwargs = {}
        for f in dataclasses.fields(cls):
            v = doc[f.name]
            if isinstance(v, str) and f.type in ("float", "float | None"):
                v = hex_f64(v, f"{where}.{f.name}")
            kwargs[f.name] = v
        return cls(**kwargs)
    except KeyError as exc:
        raise CheckpointError(f"{where}: missing field {exc.args[0]}") from None
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{where}: {exc}") from None


def checkpoint_to_dict(ckpt: Checkpoint) -> dict:
    return {
        "format_version": ckpt.format_version,
        "variant": ckpt.variant,
        "dims": dataclasses.asdict(ckpt.dims),
        "scaler": {"min_value": f64_hex(ckpt.scaler.min_value), "max_value": f64_hex(ckpt.scaler.max_value)},
        "cluster_centers": None
        if ckpt.clusters is None
        else {
            "centers": _encode_array(ckpt.clusters.centers),
            "final_objective": f64_hex(ckpt.clusters.final_objective),
            "iterations_run": ckpt.clusters.iterations_run,
        },
        "params": {k: _encode_array(v) for k, v in ckpt.params.items()},
        "train_config": _encode_config(ckpt.config),
        "history": [
            {k: (f64_hex(v) if isinstance(v, float) else v) for k, v in row.items()}
            for row in ckpt.history
        ],
    }


def checkpoint_from_dict(doc: dict) -> Checkpoint:
    if not isinstance(doc, dict):
        raise CheckpointError("checkpoint document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {version!r} (this build reads {FORMAT_VERSION})"
        )
    try:
        dims = ModelDims(**doc["dims"])
        scaler = Scaler(hex_f64(doc["scaler"]["min_value"], "scaler.min_value"),
                        hex_f64(doc["scaler"]["max_value"], "scaler.max_value"))
        cc = doc["cluster_centers"]
        clusters = None
        if cc is not None:
            clusters = ClusterModel(
                _decode_array(cc["centers"], "cluster_centers.centers"),
                hex_f64(cc["final_objective"], "cluster_centers.final_objective"),
                int(cc["iterations_run"]),
            )
        params = {k: _decode_array(v, f"params.{k}") for k, v in doc["params"].items()}
        config = _decode_config(TrainConfig, doc["train_config"], "train_config")
        history = tuple(
            {k: (hex_f64(v, f"history.{k}") if k.endswith("loss") and v is not None else v) for k, v in row.items()}
            for row in doc["history"]
        )
        variant = doc["variant"]
    except KeyError as exc:
        raise CheckpointError(f"missing field {exc.args[0]!r}") from None
    except (TypeError, AttributeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    if variant not in VARIANTS:
        raise CheckpointError(f"unknown variant {variant!r}")
    try:
        check_params(params, dims)
    except ValueError as exc:
        raise CheckpointError(f"params: {exc}") from None
    return Checkpoint(dims, params, scaler, clusters, config, variant, history, version)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    return json.dumps(checkpoint_to_dict(ckpt), sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from None
    return checkpoint_from_dict(doc)
