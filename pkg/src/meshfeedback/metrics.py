"""Evaluation metrics: joint/vertex errors, keypoint AP, segmentation scores.

All pose errors are reported in millimeters (model units are meters). MPJPE
aligns the root joint translation; PA-MPJPE additionally solves the optimal
similarity transform in closed form (Procrustes), with reflections excluded.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateAlignmentError

DEFAULT_KAPPA = 0.08
OKS_THRESHOLDS = np.arange(0.50, 0.951, 0.05)


@dataclass
class SimilarityTransform:
    rotation: np.ndarray   # (3, 3), orthonormal, det +1
    scale: float
    translation: np.ndarray  # (3,)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation


def procrustes_align(x: np.ndarray, y: np.ndarray) -> tuple[SimilarityTransform, np.ndarray]:
    """Least-squares similarity transform mapping x onto y (closed form).

    Minimizes sum ||s R x_i + t - y_i||^2 with det(R) = +1 enforced.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 3:
        raise ConfigurationError("procrustes expects matching (N, 3) arrays")
    n = x.shape[0]
    if n < 3:
        raise DegenerateAlignmentError("need at least 3 points")
    mu_x, mu_y = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mu_x, y - mu_y
    var_x = (xc ** 2).sum() / n
    if var_x < 1e-18:
        raise DegenerateAlignmentError("source points are coincident")
    cov = yc.T @ xc / n
    u, s, vt = np.linalg.svd(cov)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise DegenerateAlignmentError("point configuration is rank deficient")
    d = np.ones(3)
    if np.linalg.det(u @ vt) < 0:
        d[2] = -1.0
    rotation = u @ np.diag(d) @ vt
    scale = float((s * d).sum() / var_x)
    translation = mu_y - scale * rotation @ mu_x
    transform = SimilarityTransform(rotation=rotation, scale=scale, translation=translation)
    return transform, transform.apply(x)


def mpjpe(joints: np.ndarray, gt_joints: np.ndarray, root: int = 0) -> float:
    """Mean per-joint error (mm) after root-joint translation alignment."""
    joints, gt_joints = np.asarray(joints), np.asarray(gt_joints)
    if joints.shape != gt_joints.shape:
        raise ConfigurationError("joint arrays must match")
    pred = joints - joints[root]
    gt = gt_joints - gt_joints[root]
    return float(np.linalg.norm(pred - gt, axis=-1).mean() * 1000.0)


def pa_mpjpe(joints: np.ndarray, gt_joints: np.ndarray) -> float:
    """Mean per-joint error (mm) after Procrustes alignment."""
    _, aligned = procrustes_align(np.asarray(joints), np.asarray(gt_joints))
    return float(np.linalg.norm(aligned - gt_joints, axis=-1).mean() * 1000.0)


def pve(vertices: np.ndarray, gt_vertices: np.ndarray) -> float:
    """Mean per-vertex error (mm), no alignment."""
    vertices, gt_vertices = np.asarray(vertices), np.asarray(gt_vertices)
    if vertices.shape != gt_vertices.shape:
        raise ConfigurationError("vertex arrays must match")
    return float(np.linalg.norm(vertices - gt_vertices, axis=-1).mean() * 1000.0)


def oks(pred_kps: np.ndarray, gt_kps: np.ndarray, area: float,
        kappas: np.ndarray | None = None, visibility: np.ndarray | None = None) -> float:
    """Object keypoint similarity; distances and area share pixel units."""
    pred_kps, gt_kps = np.asarray(pred_kps), np.asarray(gt_kps)
    k = gt_kps.shape[0]
    kap = np.full(k, DEFAULT_KAPPA) if kappas is None else np.asarray(kappas, dtype=np.float64)
    vis = np.ones(k) if visibility is None else np.asarray(visibility, dtype=np.float64)
    d2 = ((pred_kps - gt_kps) ** 2).sum(axis=-1)
    score = np.exp(-d2 / (2.0 * area * kap ** 2 + np.spacing(1)))
    return float((score * vis).sum() / vis.sum())


def oks_ap(pred_kps: list[np.ndarray], gt_kps: list[np.ndarray], areas: list[float],
           kappas: np.ndarray | None = None) -> dict[str, float]:
    """Single-person AP: per-threshold fraction of samples whose OKS clears it."""
    if not pred_kps:
        raise ConfigurationError("oks_ap needs at least one sample")
    scores = np.array([oks(p, g, a, kappas) for p, g, a in zip(pred_kps, gt_kps, areas)])
    frac = np.array([(scores > t).mean() for t in OKS_THRESHOLDS])
    return {"ap": float(frac.mean()),
            "ap50": float((scores > 0.50).mean()),
            "ap75": float((scores > 0.75).mean())}


def _f1(tp: int, fp: int, fn: int) -> float:
    # empty-class convention: a class absent from both pred and gt scores 1.0
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def seg_scores(pred_labels: np.ndarray, gt_labels: np.ndarray,
               n_parts: int | None = None) -> dict[str, float]:
    """Foreground/background and part segmentation accuracy and mean f1."""
    pred_labels, gt_labels = np.asarray(pred_labels), np.asarray(gt_labels)
    if pred_labels.shape != gt_labels.shape:
        raise ConfigurationError("label grids must have identical shape")
    if n_parts is None:
        n_parts = int(max(pred_labels.max(), gt_labels.max()))

    pred_fg, gt_fg = pred_labels > 0, gt_labels > 0
    fb_acc = float((pred_fg == gt_fg).mean())
    fb_f1 = _f1(int((pred_fg & gt_fg).sum()), int((pred_fg & ~gt_fg).sum()),
                int((~pred_fg & gt_fg).sum()))

    part_acc = float((pred_labels == gt_labels).mean())
    f1s = []
    for p in range(1, n_parts + 1):
        pp, gp = pred_labels == p, gt_labels == p
        f1s.append(_f1(int((pp & gp).sum()), int((pp & ~gp).sum()), int((~pp & gp).sum())))
    part_f1 = float(np.mean(f1s)) if f1s else 1.0
    return {"fb_accuracy": fb_acc, "fb_f1": fb_f1,
            "part_accuracy": part_acc, "part_f1": part_f1}


METRIC_COLUMNS = ["sample_id", "mpjpe", "pa_mpjpe", "pve", "oks"]


def write_report(rows: list[dict], csv_path, json_path) -> dict:
    """Per-sample CSV plus aggregate JSON summary; returns the summary."""
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in METRIC_COLUMNS})
    summary = {"count": len(rows)}
    for key in METRIC_COLUMNS[1:]:
        summary[f"mean_{key}"] = float(np.mean([row[key] for row in rows]))
    with open(json_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
