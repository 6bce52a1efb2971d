"""Look-ahead received-power prediction from depth frames and/or RSS history.

Three variants share one recurrent trunk: a per-frame conv tower feeds image
features (Img), the raw past rss scalar feeds the RF stream (RF), and Img+RF
concatenates both at the cell input. Labels and rss inputs are standardized
with train-set statistics stored in the checkpoint; depth is scaled by
1/far_clip.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import nncore as nn
from .dataset import Condition, SampleWindow
from .errors import NumericError, ShapeError


class PredictorVariant(str, Enum):
    IMG = "img"
    RF = "rf"
    IMG_RF = "img_rf"


@dataclass(frozen=True)
class PredictorDims:
    width: int = 64
    height: int = 48
    t_past: int = 8
    conv_channels: tuple[int, int] = (8, 16)
    conv_kernel: int = 4
    conv_stride: int = 2
    feature_dim: int = 32
    hidden_dim: int = 64
    far_clip: float = 12.0

    @classmethod
    def from_config(cls, raw: dict) -> "PredictorDims":
        p, cam = raw["predictor"], raw["camera"]
        return cls(
            width=int(cam["resolution"][0]),
            height=int(cam["resolution"][1]),
            t_past=int(p["t_past"]),
            conv_channels=tuple(p["conv_channels"]),
            conv_kernel=int(p["conv_kernel"]),
            conv_stride=int(p["conv_stride"]),
            feature_dim=int(p["feature_dim"]),
            hidden_dim=int(p["hidden_dim"]),
            far_clip=float(cam["far_clip"]),
        )


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    dtype: str = "float64"
    val_fraction: float = 0.1


@dataclass
class RmseReport:
    rmse_db: dict[str, float]
    counts: dict[str, int]
    overall_rmse_db: float
    total: int

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("condition,count,rmse_db\n")
            for name in ("LOS", "NLOS", "TRANSITION"):
                f.write(f"{name},{self.counts[name]},{self.rmse_db[name]!r}\n")
            f.write(f"OVERALL,{self.total},{self.overall_rmse_db!r}\n")


def conv_tower(dims: PredictorDims, in_ch: int = 1) -> tuple[tuple, int]:
    """Standard image feature stack; returns (layers, flattened width)."""
    c1, c2 = dims.conv_channels
    k, s = dims.conv_kernel, dims.conv_stride
    layers = (
        nn.Conv2D(in_ch, c1, k, s),
        nn.Relu(),
        nn.Conv2D(c1, c2, k, s),
        nn.Relu(),
        nn.Flatten(),
    )
    shape = (1, in_ch, dims.height, dims.width)
    for layer in layers:
        shape = layer.out_shape(shape)
    return layers, shape[1]


def build_predictor(variant: PredictorVariant, dims: PredictorDims) -> nn.NetworkSpec:
    branches = []
    cell_width = 0
    if variant in (PredictorVariant.IMG, PredictorVariant.IMG_RF):
        tower, flat = conv_tower(dims)
        branches.append(nn.Branch("img", "frames", (*tower, nn.Dense(flat, dims.feature_dim))))
        cell_width += dims.feature_dim
    if variant in (PredictorVariant.RF, PredictorVariant.IMG_RF):
        branches.append(nn.Branch("rf", "rss", ()))
        cell_width += 1
    return nn.NetworkSpec(
        branches=tuple(branches),
        cell=nn.RNNCell(cell_width, dims.hidden_dim),
        head=(nn.Dense(dims.hidden_dim, 1),),
    )


@dataclass
class PredictorModel:
    spec: nn.NetworkSpec
    params: list[np.ndarray]
    variant: PredictorVariant
    dims: PredictorDims
    rss_mean: float
    rss_std: float
    seed: int
    step: int = 0

    def save(self, directory) -> None:
        hyper = {
            "kind": "predictor",
            "variant": self.variant.value,
            "rss_mean": self.rss_mean,
            "rss_std": self.rss_std,
            "dims": {
                "width": self.dims.width,
                "height": self.dims.height,
                "t_past": self.dims.t_past,
                "conv_channels": list(self.dims.conv_channels),
                "conv_kernel": self.dims.conv_kernel,
                "conv_stride": self.dims.conv_stride,
                "feature_dim": self.dims.feature_dim,
                "hidden_dim": self.dims.hidden_dim,
                "far_clip": self.dims.far_clip,
            },
        }
        nn.save_checkpoint(directory, self.spec, self.params, hyper, self.seed, self.step)

    @classmethod
    def load(cls, directory) -> "PredictorModel":
        spec, params, manifest = nn.load_checkpoint(directory)
        h = manifest["hyperparameters"]
        d = h["dims"]
        dims = PredictorDims(
            width=d["width"],
            height=d["height"],
            t_past=d["t_past"],
            conv_channels=tuple(d["conv_channels"]),
            conv_kernel=d["conv_kernel"],
            conv_stride=d["conv_stride"],
            feature_dim=d["feature_dim"],
            hidden_dim=d["hidden_dim"],
            far_clip=d["far_clip"],
        )
        return cls(
            spec=spec,
            params=params,
            variant=PredictorVariant(h["variant"]),
            dims=dims,
            rss_mean=h["rss_mean"],
            rss_std=h["rss_std"],
            seed=manifest["seed"],
            step=manifest["step"],
        )


def standardize(x: np.ndarray, mean: float, std: float) -> np.ndarray:
    return (x - mean) / std


def destandardize(x: np.ndarray, mean: float, std: float) -> np.ndarray:
    return x * std + mean


def _batch_inputs(model: PredictorModel, windows: list[SampleWindow], dtype) -> dict:
    inputs = {}
    if model.variant in (PredictorVariant.IMG, PredictorVariant.IMG_RF):
        frames = np.stack([w.past_frames for w in windows]).astype(dtype)
        frames *= dtype(1.0) / dtype(model.dims.far_clip)
        inputs["frames"] = frames[:, :, None, :, :]  # (B, T, 1, H, W)
    if model.variant in (PredictorVariant.RF, PredictorVariant.IMG_RF):
        rss = np.stack([w.past_rss for w in windows]).astype(dtype)
        inputs["rss"] = standardize(rss, dtype(model.rss_mean), dtype(model.rss_std))
    return inputs


def predict(model: PredictorModel, windows: list[SampleWindow], batch_size: int = 256) -> np.ndarray:
    """De-standardized rss predictions in dBm, one per window."""
    dtype = model.params[0].dtype.type
    preds = np.empty(len(windows), dtype=np.float64)
    for start in range(0, len(windows), batch_size):
        chunk = windows[start : start + batch_size]
        y, _ = nn.forward(model.spec, model.params, _batch_inputs(model, chunk, dtype))
        preds[start : start + len(chunk)] = destandardize(
            y[:, 0].astype(np.float64), model.rss_mean, model.rss_std
        )
    return preds


def train_predictor(
    windows: list[SampleWindow],
    variant: PredictorVariant,
    dims: PredictorDims,
    train_config: TrainConfig,
    seed: int,
) -> tuple[PredictorModel, list[dict]]:
    """Deterministic MSE training on standardized labels; history carries
    per-epoch train/validation loss."""
    if not windows:
        raise ValueError("empty training set")
    labels_all = np.array([w.label_rss for w in windows], dtype=np.float64)
    if not np.all(np.isfinite(labels_all)):
        raise NumericError("non-finite training labels")

    pooled = np.concatenate([np.concatenate([w.past_rss for w in windows]), labels_all])
    rss_mean = float(pooled.mean())
    rss_std = float(pooled.std())
    if rss_std == 0.0:
        rss_std = 1.0

    dtype = np.float32 if train_config.dtype == "float32" else np.float64
    rng = np.random.default_rng(seed)
    spec = build_predictor(variant, dims)
    params = nn.init_params(spec, rng, dtype)
    model = PredictorModel(spec, params, variant, dims, rss_mean, rss_std, seed)

    order = rng.permutation(len(windows))
    n_val = int(round(train_config.val_fraction * len(windows)))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(train_idx) == 0:
        train_idx = order

    state = nn.AdamState.for_params(params, lr=train_config.learning_rate)
    history = []
    step = 0
    for epoch in range(train_config.epochs):
        perm = rng.permutation(len(train_idx))
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, len(train_idx), train_config.batch_size):
            batch = [windows[train_idx[i]] for i in perm[start : start + train_config.batch_size]]
            targets = standardize(
                np.array([[w.label_rss] for w in batch], dtype=dtype),
                dtype(rss_mean),
                dtype(rss_std),
            )
            y, cache = nn.forward(spec, model.params, _batch_inputs(model, batch, dtype))
            loss, gy = nn.mse_loss(y, targets)
            grads, _ = nn.backward(spec, model.params, cache, gy)
            model.params, state = nn.adam_step(model.params, grads, state)
            epoch_loss += loss
            n_batches += 1
            step += 1
        val_mse = _val_mse(model, [windows[i] for i in val_idx], dtype) if n_val else float("nan")
        history.append(
            {"epoch": epoch, "train_mse": epoch_loss / max(1, n_batches), "val_mse": val_mse}
        )
    model.step = step
    return model, history


def _val_mse(model: PredictorModel, windows: list[SampleWindow], dtype) -> float:
    if not windows:
        return float("nan")
    preds = predict(model, windows)
    labels = np.array([w.label_rss for w in windows])
    z = (preds - labels) / model.rss_std
    return float(np.mean(z * z))


_CONDITION_NAMES = {Condition.LOS: "LOS", Condition.NLOS: "NLOS", Condition.TRANSITION: "TRANSITION"}


def _report_from_errors(errors: np.ndarray, conditions: list[Condition]) -> RmseReport:
    rmse, counts = {}, {}
    cond_arr = np.array([int(c) for c in conditions])
    for cond, name in _CONDITION_NAMES.items():
        sel = cond_arr == int(cond)
        counts[name] = int(sel.sum())
        rmse[name] = float(np.sqrt(np.mean(errors[sel] ** 2))) if sel.any() else float("nan")
    overall = float(np.sqrt(np.mean(errors**2)))
    return RmseReport(rmse_db=rmse, counts=counts, overall_rmse_db=overall, total=len(errors))


def evaluate_rmse(model: PredictorModel, windows: list[SampleWindow]) -> RmseReport:
    """RMSE in raw dB, partitioned by the window's channel condition."""
    if not windows:
        raise ValueError("no windows to evaluate")
    if windows[0].past_frames.shape[1:] != (model.dims.height, model.dims.width):
        raise ShapeError(
            f"window frames {windows[0].past_frames.shape[1:]} vs model "
            f"{(model.dims.height, model.dims.width)}"
        )
    preds = predict(model, windows)
    labels = np.array([w.label_rss for w in windows])
    return _report_from_errors(preds - labels, [w.label_condition for w in windows])


def persistence_rmse(windows: list[SampleWindow]) -> RmseReport:
    """Baseline: predict the last observed rss."""
    errors = np.array([w.past_rss[-1] - w.label_rss for w in windows])
    return _report_from_errors(errors, [w.label_condition for w in windows])
