"""Evaluation: accuracy triple, filtering confusion counts, and ROC/AUC.

The accuracy triple separates the victim class (target), everything untouched
by the attack (other: all labels except target and source), and the overall
rate. ROC curves treat the defense score in the keep direction: at threshold
theta a client is called clean iff score >= theta, sensitivity is the kept
fraction of clean clients and 1 - specificity the kept fraction of malicious
ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import ROLE_CLEAN, ROLE_MALICIOUS, ModelSpec, predict
from .params import ParamVector


@dataclass(frozen=True)
class RoundRecord:
    """One aggregation round's outcome."""

    round_index: int
    overall_acc: float
    target_acc: float
    other_acc: float
    n_t: int  # clean kept
    n_f: int  # malicious kept
    m_t: int  # malicious dropped
    m_f: int  # clean dropped
    num_kept: int
    epsilon_used: float | None
    h_used: float | None


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    sensitivity: float
    one_minus_specificity: float


def eval_accuracy(joint: ParamVector, features: np.ndarray, labels: np.ndarray,
                  spec: ModelSpec, target_label: int | None, source_label: int | None):
    """(overall, target, other) accuracy on a test set.

    target is the accuracy restricted to target-label samples (the attack's
    victim class); other excludes both target and source labels. With no
    target configured both restricted values are NaN; an empty target subset
    is an error, an empty other subset yields NaN (a two-label task has no
    third class).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] == 0:
        raise ValueError("empty test set")
    pred = predict(joint, features, spec)
    hits = pred == labels
    overall = float(np.mean(hits))
    if target_label is None:
        return overall, float("nan"), float("nan")
    t_mask = labels == target_label
    if not np.any(t_mask):
        raise ValueError(f"test set has no samples of target label {target_label}")
    target = float(np.mean(hits[t_mask]))
    o_mask = ~t_mask
    if source_label is not None:
        o_mask &= labels != source_label
    other = float(np.mean(hits[o_mask])) if np.any(o_mask) else float("nan")
    return overall, target, other


def confusion_counts(kept_ids, roles: dict[int, str]):
    """(n_t, n_f, m_t, m_f): clean kept, malicious kept, malicious dropped, clean dropped."""
    kept = set(kept_ids)
    unknown = kept - set(roles)
    if unknown:
        raise ValueError(f"kept ids without roles: {sorted(unknown)}")
    n_t = sum(1 for c, r in roles.items() if r == ROLE_CLEAN and c in kept)
    n_f = sum(1 for c, r in roles.items() if r == ROLE_MALICIOUS and c in kept)
    m_t = sum(1 for c, r in roles.items() if r == ROLE_MALICIOUS and c not in kept)
    m_f = sum(1 for c, r in roles.items() if r == ROLE_CLEAN and c not in kept)
    return n_t, n_f, m_t, m_f


def roc_from_scores(scores: dict[int, float], roles: dict[int, str]):
    """Sweep thresholds over the distinct scores; return (points, auc).

    Scores follow the keep direction (higher = cleaner). The sweep starts
    above the maximum (nothing kept) and ends at the minimum (everything
    kept), so the curve always spans (0,0) to (1,1); AUC is the trapezoidal
    area. Both roles must be present.
    """
    if set(scores) != set(roles):
        raise ValueError("scores and roles must cover the same clients")
    clean = [c for c, r in roles.items() if r == ROLE_CLEAN]
    malicious = [c for c, r in roles.items() if r == ROLE_MALICIOUS]
    if not clean or not malicious:
        raise ValueError("ROC needs both clean and malicious clients")
    for v in scores.values():
        if not np.isfinite(v) and np.isnan(v):
            raise ValueError("scores must not be NaN")

    points = [RocPoint(float("inf"), 0.0, 0.0)]
    for theta in sorted(set(scores.values()), reverse=True):
        kept = {c for c, s in scores.items() if s >= theta}
        sens = sum(1 for c in clean if c in kept) / len(clean)
        fall = sum(1 for c in malicious if c in kept) / len(malicious)
        points.append(RocPoint(float(theta), sens, fall))

    xs = np.array([p.one_minus_specificity for p in points])
    ys = np.array([p.sensitivity for p in points])
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    auc = float(trapezoid(ys, xs))
    return points, auc
