"""Recurrent dual-head network, feedforward baselines, and training loop.

Everything is plain numpy: an Elman recurrence feeding a regression head
(dense 64-64-32-1, ReLU) and a classification head (dense 64, dropout
0.2, dense k), trained jointly with a weighted sum of squared error and
cross-entropy under Adam with cosine-annealed learning rate. The MLP
baseline is the regression stack applied to a single feature vector.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import LinkTable, Trip
from .features import (FeatureKind, ScalarStandardizer, Standardizer,
                       assemble_trip_features)
from .roppa import derive_rng, generate_rsa, roppa_indices

DEFAULT_HIDDEN = 64
DEFAULT_DROPOUT = 0.2
REG_SIZES = (64, 64, 32)
CLS_HIDDEN = 64

RNN_PARAM_ORDER = (
    "w_xh", "w_hh", "b_h",
    "reg_w0", "reg_b0", "reg_w1", "reg_b1", "reg_w2", "reg_b2",
    "reg_w3", "reg_b3",
    "cls_w0", "cls_b0", "cls_w1", "cls_b1",
)
MLP_PARAM_ORDER = ("w0", "b0", "w1", "b1", "w2", "b2", "w3", "b3")


class ShapeMismatchError(ValueError):
    pass


class LabelOutOfRangeError(ValueError):
    pass


class InvalidStepError(ValueError):
    pass


class EmptyDatasetError(ValueError):
    pass


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_rnn_params(input_dim: int, n_classes: int,
                    hidden: int = DEFAULT_HIDDEN,
                    seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    h = hidden
    params = {
        "w_xh": _glorot(rng, input_dim, h),
        "w_hh": _glorot(rng, h, h),
        "b_h": np.zeros(h),
        "reg_w0": _glorot(rng, h, REG_SIZES[0]),
        "reg_b0": np.zeros(REG_SIZES[0]),
        "reg_w1": _glorot(rng, REG_SIZES[0], REG_SIZES[1]),
        "reg_b1": np.zeros(REG_SIZES[1]),
        "reg_w2": _glorot(rng, REG_SIZES[1], REG_SIZES[2]),
        "reg_b2": np.zeros(REG_SIZES[2]),
        "reg_w3": _glorot(rng, REG_SIZES[2], 1),
        "reg_b3": np.zeros(1),
        "cls_w0": _glorot(rng, h, CLS_HIDDEN),
        "cls_b0": np.zeros(CLS_HIDDEN),
        "cls_w1": _glorot(rng, CLS_HIDDEN, n_classes),
        "cls_b1": np.zeros(n_classes),
    }
    return params


def init_mlp_params(input_dim: int, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    sizes = (input_dim,) + REG_SIZES + (1,)
    params: dict[str, np.ndarray] = {}
    for i in range(4):
        params[f"w{i}"] = _glorot(rng, sizes[i], sizes[i + 1])
        params[f"b{i}"] = np.zeros(sizes[i + 1])
    return params


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def rnn_forward(params: dict[str, np.ndarray], seqs: np.ndarray,
                train_mode: bool = False,
                rng: np.random.Generator | None = None,
                dropout: float = DEFAULT_DROPOUT):
    """Forward pass over (batch, steps, dim) sequences.

    Returns (speed predictions (batch,), logits (batch, k), cache). The
    final hidden state feeds both heads; dropout is inverted and active
    only in train mode.
    """
    seqs = np.asarray(seqs, dtype=float)
    if seqs.ndim == 2:
        seqs = seqs[None, :, :]
    b, t, d = seqs.shape
    if params["w_xh"].shape[0] != d:
        raise ShapeMismatchError(
            f"input dim {d} does not match w_xh {params['w_xh'].shape}")
    hdim = params["w_hh"].shape[0]
    hs = [np.zeros((b, hdim))]
    for step in range(t):
        pre = seqs[:, step, :] @ params["w_xh"] + hs[-1] @ params["w_hh"] + params["b_h"]
        hs.append(np.tanh(pre))
    h = hs[-1]

    z0 = h @ params["reg_w0"] + params["reg_b0"]
    r0 = _relu(z0)
    z1 = r0 @ params["reg_w1"] + params["reg_b1"]
    r1 = _relu(z1)
    z2 = r1 @ params["reg_w2"] + params["reg_b2"]
    r2 = _relu(z2)
    preds = (r2 @ params["reg_w3"] + params["reg_b3"])[:, 0]

    zc = h @ params["cls_w0"] + params["cls_b0"]
    c0 = _relu(zc)
    if train_mode and dropout > 0.0:
        if rng is None:
            raise ValueError("train_mode dropout needs an rng")
        mask = (rng.random(c0.shape) >= dropout) / (1.0 - dropout)
    else:
        mask = None
    c0d = c0 if mask is None else c0 * mask
    logits = c0d @ params["cls_w1"] + params["cls_b1"]

    cache = {"seqs": seqs, "hs": hs, "z0": z0, "r0": r0, "z1": z1, "r1": r1,
             "z2": z2, "r2": r2, "zc": zc, "c0": c0, "mask": mask, "c0d": c0d,
             "preds": preds, "logits": logits}
    return preds, logits, cache


def mlp_forward(params: dict[str, np.ndarray], x: np.ndarray):
    """Feedforward regression on (batch, dim) single-point inputs."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if params["w0"].shape[0] != x.shape[1]:
        raise ShapeMismatchError(
            f"input dim {x.shape[1]} does not match w0 {params['w0'].shape}")
    z0 = x @ params["w0"] + params["b0"]
    r0 = _relu(z0)
    z1 = r0 @ params["w1"] + params["b1"]
    r1 = _relu(z1)
    z2 = r1 @ params["w2"] + params["b2"]
    r2 = _relu(z2)
    preds = (r2 @ params["w3"] + params["b3"])[:, 0]
    cache = {"x": x, "z0": z0, "r0": r0, "z1": z1, "r1": r1, "z2": z2,
             "r2": r2, "preds": preds}
    return preds, cache


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def joint_loss(speed_pred, speed_label, logits, cluster_label,
               w_reg: float = 1.0, w_cls: float = 0.1) -> float:
    """Weighted sum of squared error and cross-entropy, averaged over the
    batch. logits=None drops the classification term entirely."""
    speed_pred = np.atleast_1d(np.asarray(speed_pred, dtype=float))
    speed_label = np.atleast_1d(np.asarray(speed_label, dtype=float))
    loss = w_reg * float(((speed_pred - speed_label) ** 2).mean())
    if logits is not None:
        logits = np.atleast_2d(np.asarray(logits, dtype=float))
        labels = np.atleast_1d(np.asarray(cluster_label, dtype=int))
        k = logits.shape[1]
        if ((labels < 0) | (labels >= k)).any():
            raise LabelOutOfRangeError(f"labels must be in 0..{k - 1}")
        logp = _log_softmax(logits)
        loss += w_cls * float(-logp[np.arange(len(labels)), labels].mean())
    return loss


def _loss_output_grads(preds, y, logits, labels, w_reg, w_cls):
    b = len(preds)
    d_pred = w_reg * 2.0 * (preds - y) / b
    d_logits = None
    if logits is not None:
        probs = np.exp(_log_softmax(logits))
        onehot = np.zeros_like(probs)
        onehot[np.arange(b), labels] = 1.0
        d_logits = w_cls * (probs - onehot) / b
    return d_pred, d_logits


def rnn_backward(params: dict[str, np.ndarray], batch, cache,
                 w_reg: float = 1.0, w_cls: float = 0.1) -> dict[str, np.ndarray]:
    """Exact gradients of joint_loss for the batch that produced cache.

    batch is (sequences, standardized labels, cluster labels); the cached
    dropout mask is reused so the gradients match the forward pass.
    """
    _, y, labels = batch
    preds, logits = cache["preds"], cache["logits"]
    d_pred, d_logits = _loss_output_grads(preds, np.asarray(y, dtype=float),
                                          logits, np.asarray(labels, dtype=int),
                                          w_reg, w_cls)
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    h = cache["hs"][-1]

    dr3 = d_pred[:, None]
    grads["reg_w3"] = cache["r2"].T @ dr3
    grads["reg_b3"] = dr3.sum(axis=0)
    dz2 = (dr3 @ params["reg_w3"].T) * (cache["z2"] > 0)
    grads["reg_w2"] = cache["r1"].T @ dz2
    grads["reg_b2"] = dz2.sum(axis=0)
    dz1 = (dz2 @ params["reg_w2"].T) * (cache["z1"] > 0)
    grads["reg_w1"] = cache["r0"].T @ dz1
    grads["reg_b1"] = dz1.sum(axis=0)
    dz0 = (dz1 @ params["reg_w1"].T) * (cache["z0"] > 0)
    grads["reg_w0"] = h.T @ dz0
    grads["reg_b0"] = dz0.sum(axis=0)
    dh = dz0 @ params["reg_w0"].T

    if d_logits is not None:
        grads["cls_w1"] = cache["c0d"].T @ d_logits
        grads["cls_b1"] = d_logits.sum(axis=0)
        dc0 = d_logits @ params["cls_w1"].T
        if cache["mask"] is not None:
            dc0 = dc0 * cache["mask"]
        dzc = dc0 * (cache["zc"] > 0)
        grads["cls_w0"] = h.T @ dzc
        grads["cls_b0"] = dzc.sum(axis=0)
        dh = dh + dzc @ params["cls_w0"].T

    seqs, hs = cache["seqs"], cache["hs"]
    for step in range(seqs.shape[1] - 1, -1, -1):
        da = dh * (1.0 - hs[step + 1] ** 2)
        grads["w_xh"] += seqs[:, step, :].T @ da
        grads["w_hh"] += hs[step].T @ da
        grads["b_h"] += da.sum(axis=0)
        dh = da @ params["w_hh"].T
    return grads


def mlp_backward(params: dict[str, np.ndarray], batch, cache,
                 w_reg: float = 1.0) -> dict[str, np.ndarray]:
    _, y, _ = batch
    preds = cache["preds"]
    d_pred, _ = _loss_output_grads(preds, np.asarray(y, dtype=float),
                                   None, None, w_reg, 0.0)
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dr3 = d_pred[:, None]
    grads["w3"] = cache["r2"].T @ dr3
    grads["b3"] = dr3.sum(axis=0)
    dz2 = (dr3 @ params["w3"].T) * (cache["z2"] > 0)
    grads["w2"] = cache["r1"].T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    dz1 = (dz2 @ params["w2"].T) * (cache["z1"] > 0)
    grads["w1"] = cache["r0"].T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    dz0 = (dz1 @ params["w1"].T) * (cache["z0"] > 0)
    grads["w0"] = cache["x"].T @ dz0
    grads["b0"] = dz0.sum(axis=0)
    return grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0


def adam_init(params: dict[str, np.ndarray], beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
        beta1=beta1, beta2=beta2, eps=eps, t=0,
    )


def adam_step(state: AdamState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray], lr: float):
    """Bias-corrected Adam update, in place."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for key, g in grads.items():
        state.m[key] = state.beta1 * state.m[key] + (1.0 - state.beta1) * g
        state.v[key] = state.beta2 * state.v[key] + (1.0 - state.beta2) * g * g
        params[key] -= lr * (state.m[key] / bc1) / (np.sqrt(state.v[key] / bc2) + state.eps)
    return state, params


def cosine_lr(step: int, total_steps: int, lr0: float, lr_min: float = 0.0) -> float:
    """Cosine-annealed learning rate from lr0 at step 0 to lr_min at the end."""
    if total_steps <= 0 or not 0 <= step <= total_steps:
        raise InvalidStepError(f"step {step} outside 0..{total_steps}")
    return lr_min + (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 1000
    sz: int = 5
    lr0: float = 1e-3
    lr_min: float = 0.0
    w_reg: float = 1.0
    w_cls: float = 0.1
    seed: int = 0
    hidden: int = DEFAULT_HIDDEN
    dropout: float = DEFAULT_DROPOUT

    def to_json_dict(self) -> dict:
        return {
            "epochs": self.epochs, "batch_size": self.batch_size, "sz": self.sz,
            "lr0": self.lr0, "lr_min": self.lr_min, "w_reg": self.w_reg,
            "w_cls": self.w_cls, "seed": self.seed, "hidden": self.hidden,
            "dropout": self.dropout,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)


def _regression_preds(params, x, kind: str) -> np.ndarray:
    if kind == "rnn":
        preds, _, _ = rnn_forward(params, x, train_mode=False)
    else:
        preds, _ = mlp_forward(params, x)
    return preds


def _eval_mse(params, x, y, kind: str, chunk: int = 4096) -> float:
    total = 0.0
    for start in range(0, len(x), chunk):
        preds = _regression_preds(params, x[start:start + chunk], kind)
        total += float(((preds - y[start:start + chunk]) ** 2).sum())
    return total / len(x)


def train(x: np.ndarray, y: np.ndarray, clusters: np.ndarray | None,
          cfg: TrainConfig, kind: str = "rnn", n_classes: int | None = None,
          val: tuple[np.ndarray, np.ndarray] | None = None):
    """Mini-batch training; labels must already be standardized.

    Returns (params, history). With a validation set, the parameters at
    the best validation MSE are returned; history has one entry per epoch
    with train and validation MSE (dropout disabled for both).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) == 0:
        raise EmptyDatasetError("training set is empty")
    if kind == "rnn":
        if n_classes is None:
            n_classes = int(clusters.max()) + 1
        params = init_rnn_params(x.shape[2], n_classes, cfg.hidden, cfg.seed)
    elif kind == "mlp":
        params = init_mlp_params(x.shape[1], cfg.seed)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    history: list[dict] = []
    if cfg.epochs == 0:
        return params, history

    rng = np.random.default_rng(cfg.seed)
    state = adam_init(params)
    n = len(x)
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    step = 0
    best_val = math.inf
    best_params = None
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            bx, by = x[idx], y[idx]
            bc = clusters[idx] if clusters is not None else None
            lr = cosine_lr(step, total_steps, cfg.lr0, cfg.lr_min)
            if kind == "rnn":
                _, _, cache = rnn_forward(params, bx, train_mode=True, rng=rng,
                                          dropout=cfg.dropout)
                grads = rnn_backward(params, (bx, by, bc), cache,
                                     cfg.w_reg, cfg.w_cls)
            else:
                _, cache = mlp_forward(params, bx)
                grads = mlp_backward(params, (bx, by, None), cache, cfg.w_reg)
            adam_step(state, params, grads, lr)
            step += 1
        entry = {"epoch": epoch, "train_mse": _eval_mse(params, x, y, kind)}
        if val is not None:
            entry["val_mse"] = _eval_mse(params, val[0], val[1], kind)
            if entry["val_mse"] < best_val:
                best_val = entry["val_mse"]
                best_params = copy.deepcopy(params)
        history.append(entry)
    if val is not None and best_params is not None:
        params = best_params
    return params, history


@dataclass
class TrainedModel:
    """A trained predictor plus everything needed to run it on raw trips."""

    kind: str  # "rnn" | "mlp" | "mean"
    feature_kind: FeatureKind
    with_cds: bool
    sz: int
    max_skip: int
    seed: int
    cfg: TrainConfig
    params: dict[str, np.ndarray] | None = None
    n_classes: int | None = None
    feature_std: Standardizer | None = None
    label_std: ScalarStandardizer | None = None
    mean_speed: float | None = None
    history: list = field(default_factory=list)


def predict_points(model: TrainedModel, z: np.ndarray, trip_id: str,
                   seed: int) -> np.ndarray:
    """Predict standardized speeds for one trip's standardized features."""
    if model.kind == "mlp":
        preds, _ = mlp_forward(model.params, z)
        return preds
    sequences = []
    for n in range(len(z)):
        rng = derive_rng(seed, trip_id, n)
        rsa = generate_rsa(model.sz, model.max_skip, rng)
        sequences.append(z[roppa_indices(n, rsa)])
    preds, _, _ = rnn_forward(model.params, np.stack(sequences), train_mode=False)
    return preds


def predict_trip(model: TrainedModel, dset, kmeans, trip: Trip,
                 links: LinkTable, seed: int, car_class: int = 0,
                 cluster_cache: dict[str, int] | None = None) -> np.ndarray:
    """Per-point speed predictions for a whole trip, in km/h."""
    if model.kind == "mean":
        return np.full(len(trip), model.mean_speed)
    vectors, _ = assemble_trip_features(
        trip, links, kmeans, dset, model.feature_kind, car_class=car_class,
        with_cds=model.with_cds, cluster_cache=cluster_cache)
    raw = np.stack([v.values for v in vectors])
    z = model.feature_std.apply(raw)
    preds = predict_points(model, z, trip.trip_id, seed)
    return model.label_std.invert(preds)


def _weights_to_json(params: dict[str, np.ndarray], order: Sequence[str]) -> list:
    return [{"name": name, "shape": list(params[name].shape),
             "data": [float(v) for v in params[name].ravel()]}
            for name in order]


def _weights_from_json(entries: list) -> dict[str, np.ndarray]:
    return {e["name"]: np.array(e["data"], dtype=float).reshape(e["shape"])
            for e in entries}


def save_model(path: str | Path, model: TrainedModel) -> None:
    arch: dict = {
        "kind": model.kind,
        "feature_kind": model.feature_kind.value,
        "with_cds": model.with_cds,
        "sz": model.sz,
        "max_skip": model.max_skip,
    }
    weights: list = []
    if model.kind == "rnn":
        arch.update(input_dim=int(model.params["w_xh"].shape[0]),
                    hidden=int(model.params["w_hh"].shape[0]),
                    n_classes=model.n_classes,
                    reg_sizes=list(REG_SIZES), cls_hidden=CLS_HIDDEN)
        weights = _weights_to_json(model.params, RNN_PARAM_ORDER)
    elif model.kind == "mlp":
        arch.update(input_dim=int(model.params["w0"].shape[0]),
                    reg_sizes=list(REG_SIZES))
        weights = _weights_to_json(model.params, MLP_PARAM_ORDER)
    else:
        arch["mean_speed"] = model.mean_speed
    doc = {
        "arch": arch,
        "weights": weights,
        "standardizers": {
            "features": model.feature_std.to_json_dict() if model.feature_std else None,
            "labels": model.label_std.to_json_dict() if model.label_std else None,
        },
        "config": model.cfg.to_json_dict(),
        "seed": model.seed,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def load_model(path: str | Path) -> TrainedModel:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    arch = doc["arch"]
    std = doc["standardizers"]
    return TrainedModel(
        kind=arch["kind"],
        feature_kind=FeatureKind(arch["feature_kind"]),
        with_cds=bool(arch["with_cds"]),
        sz=int(arch["sz"]),
        max_skip=int(arch["max_skip"]),
        seed=int(doc["seed"]),
        cfg=TrainConfig.from_json_dict(doc["config"]),
        params=_weights_from_json(doc["weights"]) if doc["weights"] else None,
        n_classes=arch.get("n_classes"),
        feature_std=Standardizer.from_json_dict(std["features"]) if std["features"] else None,
        label_std=ScalarStandardizer.from_json_dict(std["labels"]) if std["labels"] else None,
        mean_speed=arch.get("mean_speed"),
    )


def fit_mean_baseline(speeds, feature_kind: FeatureKind, cfg: TrainConfig,
                      seed: int) -> TrainedModel:
    """Baseline that always predicts the training-set mean speed."""
    speeds = np.asarray(speeds, dtype=float)
    if speeds.size == 0:
        raise EmptyDatasetError("no speeds to average")
    return TrainedModel(kind="mean", feature_kind=feature_kind, with_cds=False,
                        sz=cfg.sz, max_skip=0, seed=seed, cfg=cfg,
                        mean_speed=float(speeds.mean()))
