"""
Evaluation metrics
==================
Joint errors (root-aligned, global, Procrustes-aligned) in millimeters,
contact accuracy, acceleration magnitude and ground-normal cosine, with
per-level aggregation by minimum hip height.
"""

import json
import math
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..core.errors import DimensionError
from ..data.synth import HIP_HEIGHT_BUCKETS, hip_height_bucket, min_hip_height

logger = logging.getLogger(__name__)

METRICS = ("mpjpe", "mpjpe_g", "mpjpe_pa", "contact_accuracy", "accel_mag", "plane_cos")
MM = 1000.0


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"Prediction shape {pred.shape} does not match ground truth {gt.shape}.")
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    return pred, gt


def mpjpe_g(pred, gt) -> float:
    """Mean joint distance in world coordinates (mm)."""
    pred, gt = _pair(pred, gt)
    return float(np.linalg.norm(pred - gt, axis=-1).mean() * MM)


def mpjpe(pred, gt, root_index: int = 0) -> float:
    """Mean joint distance after translating each predicted frame so the roots coincide (mm)."""
    pred, gt = _pair(pred, gt)
    residual = (pred - pred[:, root_index:root_index + 1]) - (gt - gt[:, root_index:root_index + 1])
    return float(np.linalg.norm(residual, axis=-1).mean() * MM)


def procrustes_align(pred, gt) -> np.ndarray:
    """Per-frame rigid (rotation + translation) alignment of pred onto gt.

    Frames whose joints all coincide fall back to translation only.
    """
    pred, gt = _pair(pred, gt)
    mu_p = pred.mean(axis=1, keepdims=True)
    mu_g = gt.mean(axis=1, keepdims=True)
    p = pred - mu_p
    g = gt - mu_g
    h = np.transpose(p, (0, 2, 1)) @ g
    u, _, vt = np.linalg.svd(h)
    v = np.transpose(vt, (0, 2, 1))
    d = np.sign(np.linalg.det(v @ np.transpose(u, (0, 2, 1))))
    d[d == 0] = 1.0
    fix = np.zeros_like(h)
    fix[:, 0, 0] = 1.0
    fix[:, 1, 1] = 1.0
    fix[:, 2, 2] = d
    rotation = v @ fix @ np.transpose(u, (0, 2, 1))
    degenerate = (np.linalg.norm(p, axis=(1, 2)) < 1e-12) | (np.linalg.norm(g, axis=(1, 2)) < 1e-12)
    rotation[degenerate] = np.eye(3)
    return p @ np.transpose(rotation, (0, 2, 1)) + mu_g


def mpjpe_pa(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return float(np.linalg.norm(procrustes_align(pred, gt) - gt, axis=-1).mean() * MM)


def contact_accuracy(pred_labels, gt_labels) -> float:
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    if pred_labels.shape != gt_labels.shape:
        raise DimensionError(f"Label shapes differ: {pred_labels.shape} vs {gt_labels.shape}.")
    return float((pred_labels.astype(np.int64) == gt_labels.astype(np.int64)).mean())


def accel_mag(pred) -> float:
    """Mean norm of the joint second difference, mm per frame^2."""
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape[0] < 3:
        return 0.0
    accel = pred[2:] - 2.0 * pred[1:-1] + pred[:-2]
    return float(np.linalg.norm(accel, axis=-1).mean() * MM)


def _normal(plane) -> np.ndarray:
    if hasattr(plane, "normal"):
        normal = plane.normal.detach().numpy() if hasattr(plane.normal, "detach") else plane.normal
    else:
        normal = np.asarray(plane, dtype=np.float64)[:3]
    normal = np.asarray(normal, dtype=np.float64)
    return normal / np.linalg.norm(normal)


def plane_cos(pred, gt, up=None) -> float:
    """Cosine between unit normals, each flipped to agree with `up` (default: the gt normal)."""
    n_pred, n_gt = _normal(pred), _normal(gt)
    up = n_gt if up is None else np.asarray(up, dtype=np.float64)
    if n_pred @ up < 0:
        n_pred = -n_pred
    if n_gt @ up < 0:
        n_gt = -n_gt
    return float(np.clip(n_pred @ n_gt, -1.0, 1.0))


# =============================================================================
# REPORT
# =============================================================================

@dataclass
class EvalReport:
    sequences: List[Dict] = field(default_factory=list)
    overall: Dict[str, float] = field(default_factory=dict)
    buckets: Dict[str, Dict] = field(default_factory=dict)
    hardest: Dict[str, float] = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)


def predicted_labels(seq) -> np.ndarray:
    if seq.predicted_contacts is not None:
        return (np.asarray(seq.predicted_contacts) > 0.5).astype(np.int8)
    return np.asarray(seq.contacts)


def sequence_metrics(pred, gt) -> Dict[str, float]:
    if pred.num_frames != gt.num_frames:
        raise DimensionError(f"Sequence lengths differ: {pred.num_frames} vs {gt.num_frames}.")
    pj, gj = pred.joints(), gt.joints()
    return {
        "mpjpe": mpjpe(pj, gj),
        "mpjpe_g": mpjpe_g(pj, gj),
        "mpjpe_pa": mpjpe_pa(pj, gj),
        "contact_accuracy": contact_accuracy(predicted_labels(pred), gt.contacts),
        "accel_mag": accel_mag(pj),
        "plane_cos": plane_cos(pred.plane, gt.plane),
    }


def weighted_mean(rows: Sequence[Dict], key: str) -> float:
    frames = sum(r["frames"] for r in rows)
    if not frames:
        return float("nan")
    return sum(r[key] * r["frames"] for r in rows) / frames


def _aggregate(rows):
    return {"count": len(rows), "frames": sum(r["frames"] for r in rows),
            **{m: weighted_mean(rows, m) for m in METRICS}}


def evaluate(pred_sequences, gt_sequences, names: Optional[Sequence[str]] = None,
             hardest_fraction: float = 0.01) -> EvalReport:
    """All metrics per sequence, overall and per hip-height level (frame-weighted means)."""
    if len(pred_sequences) != len(gt_sequences):
        raise DimensionError(f"{len(pred_sequences)} predictions for {len(gt_sequences)} ground-truth sequences.")
    if not len(gt_sequences):
        raise DimensionError("evaluate needs at least one sequence.")
    names = list(names) if names is not None else [f"seq_{i:04d}" for i in range(len(gt_sequences))]

    report = EvalReport()
    for name, pred, gt in zip(names, pred_sequences, gt_sequences):
        height = min_hip_height(gt)
        row = {"name": name, "kind": gt.kind, "frames": gt.num_frames, "min_hip_height": height,
               "bucket": hip_height_bucket(height), **sequence_metrics(pred, gt)}
        report.sequences.append(row)

    report.overall = _aggregate(report.sequences)
    for label in HIP_HEIGHT_BUCKETS:
        rows = [r for r in report.sequences if r["bucket"] == label]
        report.buckets[label] = _aggregate(rows) if rows else {"count": 0, "frames": 0}

    count = max(1, math.ceil(hardest_fraction * len(report.sequences)))
    hardest = sorted(report.sequences, key=lambda r: r["plane_cos"])[:count]
    report.hardest = {
        "count": count,
        "plane_cos": float(np.mean([r["plane_cos"] for r in hardest])),
        "mpjpe_g": float(np.mean([r["mpjpe_g"] for r in hardest])),
    }
    logger.info("evaluated %d sequences: mpjpe %.2f mm", len(report.sequences), report.overall["mpjpe"])
    return report
