"""Geometry-head pretraining and frozen-head classifier training."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tt
from .errors import EmptyDataset, FrozenHeadMissing, LabelError
from .features import COORD_CLAMP, GENERATED, REAL, FeatureSequence
from .metrics import roc_auc
from .model import (
    FROZEN_GEO,
    ModelConfig,
    forward,
    geometry_head,
    gat_layer,
    gpe_encode,
    init_params,
    trainable_names,
)
from .optim import AdamW
from .tensor import Tensor


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 1e-4
    warmup_epochs: int = 5
    schedule: str = "cosine"
    label_smoothing: float = 0.02
    grad_clip: float = 1.0
    w_repj: float = 1.0
    w_temp: float = 1.0
    w_line: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0.0 <= self.label_smoothing < 0.5:
            raise ValueError("label_smoothing must be in [0, 0.5)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    @classmethod
    def pretrain_defaults(cls, **overrides) -> "TrainConfig":
        base = {"epochs": 30, "lr": 2e-4}
        base.update(overrides)
        return cls(**base)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Linear warmup to lr over warmup_epochs, then cosine decay to zero at
    the final epoch."""
    if cfg.schedule not in ("cosine", "constant"):
        raise ValueError(f"unknown schedule {cfg.schedule!r}")
    if cfg.schedule == "constant":
        return cfg.lr
    if epoch < cfg.warmup_epochs:
        return cfg.lr * (epoch + 1) / cfg.warmup_epochs
    span = max(1, cfg.epochs - cfg.warmup_epochs)
    progress = (epoch - cfg.warmup_epochs + 1) / span
    return 0.5 * cfg.lr * (1.0 + np.cos(np.pi * min(progress, 1.0)))


def cross_entropy(logits: Tensor, label: int, smoothing: float = 0.0) -> Tensor:
    """Label-smoothed cross-entropy for a (1, 2) logit row."""
    target = np.full(2, smoothing / 2.0)
    target[label] = 1.0 - smoothing + smoothing / 2.0
    return tt.neg(tt.sum_(tt.mul(tt.log_softmax(logits), tt.constant(target[None, :]))))


# -- geometry losses --------------------------------------------------------------

Z_GUARD = 1e-6


def _project_slot(U: Tensor, slot: int, k_matrix: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Project one predicted direction per frame through K; returns the (T, 2)
    pixel tensor and the mask of frames whose depth component was usable
    (|z| >= Z_GUARD). Masked rows are projected against z = 1, with the mask
    cutting both the value and the gradient."""
    u = tt.slice_cols(U, 3 * slot, 3 * slot + 3)
    hom = tt.matmul(u, tt.constant(k_matrix.T))
    z = tt.slice_cols(hom, 2, 3)
    ok = (np.abs(z.data[:, 0]) >= Z_GUARD).astype(float)[:, None]
    z_safe = tt.add(tt.mul(z, tt.constant(ok)), tt.constant(1.0 - ok))
    proj = tt.div(tt.slice_cols(hom, 0, 2), z_safe)
    return proj, ok


def loss_reprojection(U: Tensor, vp2d: np.ndarray, visible: np.ndarray,
                      k_ref, d_max: float = COORD_CLAMP) -> Tensor:
    """Sum of squared pixel errors between projected predictions and the
    observed 2D vanishing points, over visible slots. Observations farther
    than d_max diagonals outside the frame are quality-filtered out."""
    k_matrix = k_ref.K
    total = tt.constant(np.zeros(()))
    T = U.shape[0]
    for slot in range(3):
        mask = visible[:, slot].astype(float).copy()
        if mask.sum() == 0:
            continue
        proj, ok = _project_slot(U, slot, k_matrix)
        mask = (mask * ok[:, 0])[:, None]
        diff = tt.sub(proj, tt.constant(vp2d[:, slot, :]))
        sq = tt.mul(diff, diff)
        total = tt.add(total, tt.sum_(tt.mul(sq, tt.constant(mask))))
    return total


def loss_temporal(U: Tensor) -> Tensor:
    """Sum of squared frame-to-frame prediction steps (zero for T = 1)."""
    T = U.shape[0]
    if T < 2:
        return tt.constant(np.zeros(()))
    diff = tt.sub(tt.slice_rows(U, 1, T), tt.slice_rows(U, 0, T - 1))
    return tt.sum_(tt.mul(diff, diff))


def loss_line(U: Tensor, seq: FeatureSequence, k_ref=None) -> Tensor:
    """Point-to-line distance of each projected prediction from its
    supporting segments (normalized homogeneous lines)."""
    k_matrix = (k_ref or seq.k_ref).K
    total = tt.constant(np.zeros(()))
    T = U.shape[0]
    per_slot_rows: dict[int, list[tuple[int, np.ndarray]]] = {0: [], 1: [], 2: []}
    for t, frame in enumerate(seq.frames):
        if t >= T:
            break
        assign = seq.assignments[t]
        if len(assign) == 0:
            continue
        hom = frame.homogeneous_array()
        norms = np.linalg.norm(hom[:, :2], axis=1)
        for k_i, slot in enumerate(assign):
            if slot < 0 or norms[k_i] == 0:
                continue
            per_slot_rows[int(slot)].append((t, hom[k_i] / norms[k_i]))
    for slot in range(3):
        rows = per_slot_rows[slot]
        if not rows:
            continue
        proj, ok = _project_slot(U, slot, k_matrix)
        sel = np.zeros((len(rows), T))
        lin = np.zeros((len(rows), 3))
        for r, (t, l) in enumerate(rows):
            sel[r, t] = ok[t, 0]
            lin[r] = l
        pts = tt.matmul(tt.constant(sel), proj)
        val = tt.add(tt.sum_(tt.mul(pts, tt.constant(lin[:, :2])), axis=1, keepdims=True),
                     tt.constant((lin[:, 2] * sel.sum(axis=1))[:, None]))
        total = tt.add(total, tt.sum_(tt.abs_(val)))
    return total


def combined_geometry_loss(U: Tensor, seq: FeatureSequence, cfg: TrainConfig) -> Tensor:
    vis = seq.visible * (seq.features[:, 15:18] < COORD_CLAMP)
    parts = tt.smul(loss_reprojection(U, seq.vp2d, vis, seq.k_ref), cfg.w_repj)
    parts = tt.add(parts, tt.smul(loss_temporal(U), cfg.w_temp))
    return tt.add(parts, tt.smul(loss_line(U, seq), cfg.w_line))


# -- training loops ----------------------------------------------------------------


def _backbone_activations(seq: FeatureSequence, params, model_cfg: ModelConfig) -> np.ndarray:
    """Backbone output with no tape recording (frozen-backbone cache)."""
    X = gpe_encode(tt.constant(seq.features), params, model_cfg)
    for i in range(model_cfg.layers):
        X = gat_layer(X, tt.constant(seq.features), params, i, model_cfg)
    return X.data


def _set_requires_grad(params, names, flag=True):
    for n in params:
        params[n].requires_grad = False
    for n in names:
        params[n].requires_grad = flag


def pretrain_geometry_head(
    dataset: list[FeatureSequence],
    cfg: TrainConfig | None = None,
    model_cfg: ModelConfig | None = None,
    params=None,
) -> tuple[dict, ModelConfig, list[dict]]:
    """Optimize the geometry head alone on real-labeled sequences, with the
    randomly initialized backbone frozen. Returns (params, model config,
    per-epoch history); the head is to be marked frozen when checkpointed.
    """
    cfg = cfg or TrainConfig.pretrain_defaults()
    model_cfg = model_cfg or ModelConfig()
    if not dataset:
        raise EmptyDataset("pretraining needs at least one sequence")
    for seq in dataset:
        if seq.label != REAL:
            raise LabelError(f"pretraining is real-only; got {seq.label!r} for {seq.video_id}")
    params = params if params is not None else init_params(model_cfg, seed=cfg.seed)

    cached = [tt.constant(_backbone_activations(seq, params, model_cfg)) for seq in dataset]
    head_names = [n for n in params if n.startswith("geo.")]
    _set_requires_grad(params, head_names)
    opt = AdamW({n: params[n] for n in head_names}, lr=cfg.lr,
                weight_decay=cfg.weight_decay, clip_norm=cfg.grad_clip)
    rng = np.random.default_rng(cfg.seed)

    history = []
    order = np.arange(len(dataset))
    for epoch in range(cfg.epochs):
        opt.lr = lr_at(epoch, cfg)
        rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            opt.zero_grad()
            for idx in batch:
                with tt.Tape() as tape:
                    U = geometry_head(cached[idx], params)
                    loss = tt.smul(combined_geometry_loss(U, dataset[idx], cfg),
                                   1.0 / len(batch))
                tape.backward(loss)
                epoch_loss += float(loss.data) * len(batch)
            opt.step()
        history.append({"epoch": epoch, "train_loss": epoch_loss / len(dataset),
                        "val_auc": None, "lr": opt.lr})
    _set_requires_grad(params, [])
    return params, model_cfg, history


def evaluate_scores(dataset: list[FeatureSequence], params, model_cfg: ModelConfig):
    scores = np.array([forward(seq.features, params, model_cfg).score for seq in dataset])
    labels = np.array([1 if seq.label == GENERATED else 0 for seq in dataset])
    return scores, labels


def train_classifier(
    train_set: list[FeatureSequence],
    val_set: list[FeatureSequence],
    params,
    model_cfg: ModelConfig,
    frozen: list[str],
    cfg: TrainConfig | None = None,
) -> tuple[dict, list[dict]]:
    """Label-smoothed cross-entropy over everything but the frozen geometry
    head; keeps the best-validation-AUC parameter snapshot."""
    cfg = cfg or TrainConfig()
    if FROZEN_GEO not in frozen:
        raise FrozenHeadMissing("classifier training requires a frozen geometry head")
    if not train_set:
        raise EmptyDataset("empty training set")

    names = trainable_names(params, model_cfg, frozen=set(frozen))
    _set_requires_grad(params, names)
    opt = AdamW({n: params[n] for n in names}, lr=cfg.lr,
                weight_decay=cfg.weight_decay, clip_norm=cfg.grad_clip)
    rng = np.random.default_rng(cfg.seed)
    labels = [1 if seq.label == GENERATED else 0 for seq in train_set]

    best_auc = -1.0
    best_params = {n: p.data.copy() for n, p in params.items()}
    history = []
    order = np.arange(len(train_set))
    for epoch in range(cfg.epochs):
        opt.lr = lr_at(epoch, cfg)
        rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            opt.zero_grad()
            for idx in batch:
                drop_rng = np.random.default_rng(rng.integers(0, 2**63))
                with tt.Tape() as tape:
                    out = forward(train_set[idx].features, params, model_cfg, rng=drop_rng)
                    loss = tt.smul(
                        cross_entropy(out.logits, labels[idx], cfg.label_smoothing),
                        1.0 / len(batch))
                tape.backward(loss)
                epoch_loss += float(loss.data) * len(batch)
            opt.step()

        val_auc = None
        if val_set:
            scores, val_labels = evaluate_scores(val_set, params, model_cfg)
            if len(set(val_labels.tolist())) == 2:
                val_auc = roc_auc(scores, val_labels)
                if val_auc > best_auc:
                    best_auc = val_auc
                    best_params = {n: p.data.copy() for n, p in params.items()}
        history.append({"epoch": epoch, "train_loss": epoch_loss / len(train_set),
                        "val_auc": val_auc, "lr": opt.lr})

    if best_auc >= 0:
        for n, data in best_params.items():
            params[n].data = data
    _set_requires_grad(params, [])
    return params, history


def write_history(path, history: list[dict]) -> None:
    with Path(path).open("w") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
