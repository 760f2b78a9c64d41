"""Regression and auxiliary pixel-wise losses.

All squared-error terms are means over elements (per sample, then over the
batch). Pose parameters are compared as rotation matrices rather than raw
6D vectors, since many 6D vectors map to the same rotation; shape
coefficients are compared directly. UV regression is masked by the
ground-truth foreground and averaged over foreground pixels only.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from .body import rot6d_to_matrix
from .errors import ConfigurationError


@dataclass
class LossWeights:
    lambda_2d: float = 300.0
    lambda_3d: float = 300.0
    lambda_pose: float = 60.0
    lambda_shape: float = 0.6
    lambda_pi: float = 0.1
    lambda_uv: float = 0.5

    def __post_init__(self):
        for name, val in self.__dict__.items():
            if not (val >= 0.0 and val == val):
                raise ConfigurationError(f"loss weight {name} must be nonnegative and finite")


def _batched(x: Tensor, event_dims: int) -> Tensor:
    """Ensure a leading batch dimension given the number of per-sample dims."""
    return x if x.dim() == event_dims + 1 else x.unsqueeze(0)


def _sample_mean(x: Tensor) -> Tensor:
    """Mean over all but the batch dimension."""
    return x.reshape(x.shape[0], -1).mean(dim=1)


def reg_loss_terms(pred_kp2d: Tensor, pred_joints: Tensor, pred_pose6d: Tensor,
                   pred_shape: Tensor, gt_kp2d: Tensor, gt_joints: Tensor,
                   gt_pose6d: Tensor, gt_shape: Tensor, weights: LossWeights,
                   visibility: Tensor | None = None,
                   has_3d: Tensor | None = None) -> dict[str, Tensor]:
    pred_kp2d, gt_kp2d = _batched(pred_kp2d, 2), _batched(gt_kp2d, 2)
    pred_joints, gt_joints = _batched(pred_joints, 2), _batched(gt_joints, 2)
    pred_pose6d, gt_pose6d = _batched(pred_pose6d, 2), _batched(gt_pose6d, 2)
    pred_shape, gt_shape = _batched(pred_shape, 1), _batched(gt_shape, 1)
    for pred, gt in ((pred_kp2d, gt_kp2d), (pred_joints, gt_joints),
                     (pred_pose6d, gt_pose6d), (pred_shape, gt_shape)):
        if pred.shape != gt.shape:
            raise ConfigurationError(f"prediction {tuple(pred.shape)} vs ground truth {tuple(gt.shape)}")

    sq2d = (pred_kp2d - gt_kp2d) ** 2
    if visibility is not None:
        sq2d = sq2d * _batched(visibility, 1).unsqueeze(-1)
    loss_2d = _sample_mean(sq2d)

    mask = has_3d.to(sq2d.dtype) if has_3d is not None else torch.ones_like(loss_2d)
    loss_3d = _sample_mean((pred_joints - gt_joints) ** 2) * mask

    rot_p = rot6d_to_matrix(pred_pose6d)
    rot_g = rot6d_to_matrix(gt_pose6d)
    pose_term = _sample_mean((rot_p - rot_g) ** 2)
    shape_term = _sample_mean((pred_shape - gt_shape) ** 2)
    loss_param = (weights.lambda_pose * pose_term + weights.lambda_shape * shape_term) * mask

    return {
        "loss_2d": weights.lambda_2d * loss_2d.mean(),
        "loss_3d": weights.lambda_3d * loss_3d.mean(),
        "loss_param": loss_param.mean(),
    }


def reg_loss(pred_kp2d, pred_joints, pred_pose6d, pred_shape,
             gt_kp2d, gt_joints, gt_pose6d, gt_shape,
             weights: LossWeights, visibility=None, has_3d=None) -> Tensor:
    terms = reg_loss_terms(pred_kp2d, pred_joints, pred_pose6d, pred_shape,
                           gt_kp2d, gt_joints, gt_pose6d, gt_shape,
                           weights, visibility, has_3d)
    return terms["loss_2d"] + terms["loss_3d"] + terms["loss_param"]


def aux_loss_terms(logits: Tensor, gt_part: Tensor, gt_u: Tensor, gt_v: Tensor,
                   weights: LossWeights) -> dict[str, Tensor]:
    """Pixel-wise supervision: (P+1)-way cross-entropy plus masked UV smooth L1.

    `logits` is (B, P+3, H, W): P+1 class logits, then the U and V channels.
    """
    logits = logits if logits.dim() == 4 else logits.unsqueeze(0)
    gt_part = _batched(gt_part, 2).long()
    gt_u, gt_v = _batched(gt_u, 2), _batched(gt_v, 2)
    n_classes = logits.shape[1] - 2
    if logits.shape[-2:] != gt_part.shape[-2:]:
        raise ConfigurationError(
            f"IUV logits at {tuple(logits.shape[-2:])} vs ground truth {tuple(gt_part.shape[-2:])}")

    ce = F.cross_entropy(logits[:, :n_classes], gt_part, reduction="mean")

    fg = gt_part > 0
    count = fg.sum()
    if count > 0:
        pred_u = logits[:, n_classes][fg]
        pred_v = logits[:, n_classes + 1][fg]
        uv = (F.smooth_l1_loss(pred_u, gt_u[fg], beta=1.0, reduction="sum")
              + F.smooth_l1_loss(pred_v, gt_v[fg], beta=1.0, reduction="sum")) / count
    else:
        uv = logits.sum() * 0.0
    return {"loss_pi": weights.lambda_pi * ce, "loss_uv": weights.lambda_uv * uv}


def aux_loss(logits, gt_part, gt_u, gt_v, weights: LossWeights) -> Tensor:
    terms = aux_loss_terms(logits, gt_part, gt_u, gt_v, weights)
    return terms["loss_pi"] + terms["loss_uv"]


def total_loss_terms(trace, gt_kp2d, gt_joints, gt_pose6d, gt_shape,
                     weights: LossWeights, aux_logits: Tensor | None = None,
                     gt_part=None, gt_u=None, gt_v=None,
                     visibility=None, has_3d=None) -> dict[str, Tensor]:
    """Per-iteration regression losses summed over the trace, plus optional aux."""
    terms: dict[str, Tensor] = {}
    total = None
    for t in range(len(trace.thetas)):
        it = reg_loss_terms(trace.keypoints[t], trace.joints[t],
                            trace.pose6d(t), trace.shapes(t),
                            gt_kp2d, gt_joints, gt_pose6d, gt_shape,
                            weights, visibility, has_3d)
        step = it["loss_2d"] + it["loss_3d"] + it["loss_param"]
        terms[f"reg_{t + 1}"] = step
        total = step if total is None else total + step
    if aux_logits is not None:
        aux = aux_loss_terms(aux_logits, gt_part, gt_u, gt_v, weights)
        terms["loss_pi"] = aux["loss_pi"]
        terms["loss_uv"] = aux["loss_uv"]
        total = total + aux["loss_pi"] + aux["loss_uv"]
    terms["total"] = total
    return terms


def total_loss(trace, gt_kp2d, gt_joints, gt_pose6d, gt_shape, weights: LossWeights,
               aux_enabled: bool = False, aux_logits=None,
               gt_part=None, gt_u=None, gt_v=None,
               visibility=None, has_3d=None) -> Tensor:
    if aux_enabled and aux_logits is None:
        raise ConfigurationError("aux_enabled requires auxiliary logits")
    return total_loss_terms(
        trace, gt_kp2d, gt_joints, gt_pose6d, gt_shape, weights,
        aux_logits if aux_enabled else None, gt_part, gt_u, gt_v,
        visibility, has_3d)["total"]
