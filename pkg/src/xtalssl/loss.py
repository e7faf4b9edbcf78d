"""Redundancy-reduction loss over the batch cross-correlation, plus regression losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeMismatch,
    Tensor,
    add,
    column_standardize,
    matmul,
    mul,
    scale,
    sum_all,
    transpose,
)


class BatchTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.0051
    eps: float = 1e-5

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")


def cross_correlation(za: Tensor, zb: Tensor, eps: float = 1e-5) -> Tensor:
    """C = (1/B) * standardize(Za)^T standardize(Zb), per-column batch stats."""
    if za.data.ndim != 2 or za.data.shape != zb.data.shape:
        raise ShapeMismatch(f"embedding batches differ: {za.data.shape} vs {zb.data.shape}")
    batch = za.data.shape[0]
    if batch < 2:
        raise BatchTooSmall("cross correlation needs a batch of at least 2")
    za_n = column_standardize(za, eps)
    zb_n = column_standardize(zb, eps)
    return scale(matmul(transpose(za_n), zb_n), 1.0 / batch)


def barlow_twins_loss(c: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    """sum_i (1 - C_ii)^2 + lam * sum_{i != j} C_ij^2."""
    d = c.data.shape[0]
    if c.data.ndim != 2 or c.data.shape != (d, d):
        raise ShapeMismatch(f"cross correlation must be square, got {c.data.shape}")
    eye = np.eye(d)
    # (1 - C_ii)^2 = (C - I)_ii^2 and off-diagonal entries of C - I equal C's,
    # so one weighted elementwise square covers both terms
    residual = add(c, Tensor(-eye))
    weight = Tensor(eye + cfg.lam * (1.0 - eye))
    return sum_all(mul(mul(residual, residual), weight))


def bt_loss_from_embeddings(za: Tensor, zb: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    return barlow_twins_loss(cross_correlation(za, zb, cfg.eps), cfg)


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    target = np.asarray(target, dtype=np.float64).reshape(-1, 1)
    if pred.data.ndim != 2 or pred.data.shape[1] != 1:
        raise ShapeMismatch(f"pred must be a column, got {pred.data.shape}")
    if pred.data.shape[0] != target.shape[0]:
        raise ShapeMismatch(f"pred/target lengths differ: {pred.data.shape[0]} vs {target.shape[0]}")
    if target.shape[0] < 1:
        raise BatchTooSmall("mse needs at least one sample")
    diff = add(pred, Tensor(-target))
    return scale(sum_all(mul(diff, diff)), 1.0 / target.shape[0])


def mae_metric(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred/target lengths differ: {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target)))
