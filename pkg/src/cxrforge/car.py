"""Framework-free kernels of the partial-label segmentation objective.

Arrays follow the ``[batch, class, height, width]`` layout. Everything is
computed in float64. Where the training objective detaches a tensor
(the predicted part of the reliable target, the reconstruction targets),
these kernels only document it: there is no autodiff here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError, UndefinedLossError

DICE_SMOOTH = 1.0
NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_dist: float = 4.0
    lambda_recon: float = 2.0

    def __post_init__(self):
        if self.lambda_dist < 0 or self.lambda_recon < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class ReliableTarget:
    values: np.ndarray
    # True where the channel was copied from the prediction and is to be
    # treated as a constant during optimisation
    detached: np.ndarray


def _maps(x, name, ndim=4) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != ndim:
        raise ShapeError(f"{name} must have {ndim} axes, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} has non-finite entries")
    return x


def _same(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def dice_loss(pred, gt, smooth: float = DICE_SMOOTH) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _same(pred, gt, "dice_loss")
    inter = float(np.sum(pred * gt))
    return 1.0 - (2.0 * inter + smooth) / (float(pred.sum()) + float(gt.sum()) + smooth)


def _availability(m, pred) -> np.ndarray:
    m = np.asarray(m, dtype=bool)
    if m.shape != pred.shape[:2]:
        raise ShapeError(f"availability mask {m.shape} does not match maps {pred.shape[:2]}")
    return m


def per_channel_dice(pred, gt, smooth: float = DICE_SMOOTH) -> np.ndarray:
    inter = np.sum(pred * gt, axis=(2, 3))
    return 1.0 - (2.0 * inter + smooth) / (pred.sum(axis=(2, 3)) + gt.sum(axis=(2, 3)) + smooth)


def masked_seg_loss(pred, gt, m, smooth: float = DICE_SMOOTH) -> float:
    """Dice loss averaged over the (sample, class) pairs that have annotations."""
    pred, gt = _maps(pred, "pred"), _maps(gt, "gt")
    _same(pred, gt, "masked_seg_loss")
    m = _availability(m, pred)
    total = int(m.sum())
    if total == 0:
        raise UndefinedLossError("no annotated (sample, class) pair in batch; skip it")
    losses = per_channel_dice(pred, gt, smooth)
    return float(np.sum(losses[m]) / total)


def compose_reliable_target(pred, gt, m) -> ReliableTarget:
    pred, gt = _maps(pred, "pred"), _maps(gt, "gt")
    _same(pred, gt, "compose_reliable_target")
    m = _availability(m, pred)
    values = np.where(m[:, :, None, None], gt, pred)
    return ReliableTarget(values=values, detached=~m)


def cosine_dist_loss(z_pred, z_tgt) -> float:
    a = _maps(z_pred, "z_pred", ndim=2)
    b = _maps(z_tgt, "z_tgt", ndim=2)
    _same(a, b, "cosine_dist_loss")
    if a.shape[1] < 1:
        raise ShapeError("latent dimension must be >= 1")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na < NORM_FLOOR) or np.any(nb < NORM_FLOOR):
        raise NumericError("zero-norm latent vector (encoder collapse?)")
    cos = np.einsum("bd,bd->b", a, b) / (na * nb)
    return float(np.mean(1.0 - cos))


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same(a, b, "mse")
    return float(np.mean((a - b) ** 2))


def recon_loss(recon_pred, pred_const, recon_tgt, tgt_const) -> float:
    """Sum of the two reconstruction MSEs; the second argument of each pair is a constant target."""
    return mse(recon_pred, pred_const) + mse(recon_tgt, tgt_const)


def total_loss(seg: float, dist: float, recon: float, w: LossWeights = LossWeights()) -> float:
    vals = (seg, dist, recon)
    if not all(np.isfinite(v) for v in vals):
        raise ValueError("loss terms must be finite")
    return seg + w.lambda_dist * dist + w.lambda_recon * recon


def concat_condition(x, y) -> np.ndarray:
    """Image channel first, then the class maps: ``[B, 1 + C, H, W]``."""
    x = _maps(x, "x")
    y = _maps(y, "y")
    if x.shape[1] != 1:
        raise ShapeError(f"image must have exactly one channel, got {x.shape[1]}")
    if x.shape[0] != y.shape[0] or x.shape[2:] != y.shape[2:]:
        raise ShapeError(f"cannot concatenate {x.shape} with {y.shape}")
    return np.concatenate([x, y], axis=1)
