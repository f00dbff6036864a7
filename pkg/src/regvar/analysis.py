"""Evaluation metrics, truth-comparison scores, and interpretability exports."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import DayTensor
from .errors import DegenerateFeatures, ShapeMismatch
from .sparse import SparseMatrix


@dataclass
class EvalReport:
    """Overall MSE/MAE with per-day and per-slot breakdown series."""

    mse: float
    mae: float
    per_day: list  # (day_id, mse, mae)
    per_slot: list  # (slot, mse, mae)
    subset: dict | None = None

    def to_dict(self) -> dict:
        out = {
            "mse": self.mse,
            "mae": self.mae,
            "per_day": [
                {"day": d, "mse": m, "mae": a} for d, m, a in self.per_day
            ],
            "per_slot": [
                {"slot": s, "mse": m, "mae": a} for s, m, a in self.per_slot
            ],
        }
        if self.subset is not None:
            out["subset"] = self.subset
        return out

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


@dataclass
class EdgeList:
    """Influence arcs (from_section, to_section, weight), |weight| descending."""

    rows: list

    def __post_init__(self):
        for _, _, wgt in self.rows:
            if not np.isfinite(wgt) or wgt == 0.0:
                raise ValueError("edge weights must be finite and nonzero")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["from", "to", "weight"])
            for src, dst, wgt in self.rows:
                writer.writerow([src, dst, repr(float(wgt))])


def evaluate(
    predictions: np.ndarray,
    actual: DayTensor,
    window=None,
    section_subset=None,
) -> EvalReport:
    """Score predictions (n, p, w) against the matching tensor slots.

    The w prediction columns cover slots lo+1..hi of the window (full
    window by default). Errors average over every evaluated cell; the
    per-day and per-slot series break the same cells down.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    lo, hi = (0, actual.slot_count - 1) if window is None else window
    truth = actual.values[:, :, lo + 1 : hi + 1]
    if predictions.shape != truth.shape:
        raise ShapeMismatch(
            f"predictions {predictions.shape} do not match truth {truth.shape}"
        )
    err = predictions - truth
    sq = err**2
    ab = np.abs(err)
    per_day = [
        (actual.days[i], float(sq[i].mean()), float(ab[i].mean()))
        for i in range(actual.n_days)
    ]
    per_slot = [
        (lo + 1 + s, float(sq[:, :, s].mean()), float(ab[:, :, s].mean()))
        for s in range(truth.shape[2])
    ]
    subset = None
    if section_subset is not None:
        idx = [actual.sections.index(s) for s in section_subset]
        subset = {
            "sections": list(section_subset),
            "mse": float(sq[:, idx, :].mean()),
            "mae": float(ab[:, idx, :].mean()),
        }
    return EvalReport(
        mse=float(sq.mean()),
        mae=float(ab.mean()),
        per_day=per_day,
        per_slot=per_slot,
        subset=subset,
    )


def support_recovery(estimated, truth, threshold: float = 1e-8) -> float:
    """Percentage of positions whose nonzero indicators agree."""
    est = estimated.to_dense() if isinstance(estimated, SparseMatrix) else np.asarray(estimated)
    tru = truth.to_dense() if isinstance(truth, SparseMatrix) else np.asarray(truth)
    if est.shape != tru.shape:
        raise ShapeMismatch("matrices must share a shape")
    agree = (np.abs(est) > threshold) == (np.abs(tru) > threshold)
    return 100.0 * float(agree.mean())


def frobenius_distance(estimated, truth) -> float:
    est = estimated.to_dense() if isinstance(estimated, SparseMatrix) else np.asarray(estimated)
    tru = truth.to_dense() if isinstance(truth, SparseMatrix) else np.asarray(truth)
    if est.shape != tru.shape:
        raise ShapeMismatch("matrices must share a shape")
    return float(np.linalg.norm(est - tru))


def influence(model) -> np.ndarray:
    """Column sums of the strictly positive coefficients of A.

    Entry l measures how strongly section l drives the rest of the
    network; negative coefficients are ignored.
    """
    A = model.A
    out = np.zeros(A.shape[1])
    pos = A.values > 0
    np.add.at(out, A.cols[pos], A.values[pos])
    return out


def _kmeans2(feats: np.ndarray, restarts: int, seed: int) -> np.ndarray:
    """Plain seeded 2-means (best of `restarts` inits); returns labels."""
    rng = np.random.default_rng(seed)
    n = feats.shape[0]
    best_inertia = np.inf
    best_labels = np.zeros(n, dtype=np.int64)
    for _ in range(restarts):
        centers = feats[rng.choice(n, size=2, replace=False)].copy()
        labels = None
        for _iter in range(100):
            d0 = ((feats - centers[0]) ** 2).sum(axis=1)
            d1 = ((feats - centers[1]) ** 2).sum(axis=1)
            new_labels = (d1 < d0).astype(np.int64)
            if labels is not None and np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for c in (0, 1):
                members = feats[labels == c]
                if members.size:
                    centers[c] = members.mean(axis=0)
        inertia = float(
            np.minimum(
                ((feats - centers[0]) ** 2).sum(axis=1),
                ((feats - centers[1]) ** 2).sum(axis=1),
            ).sum()
        )
        if inertia < best_inertia:
            best_inertia = inertia
            best_labels = labels.copy()
    return best_labels


FEATURE_NAMES = ("min", "max", "mean", "std", "q25", "q50", "q75")


def variable_sections(tensor: DayTensor, restarts: int = 50, seed: int = 0) -> list:
    """Sections in the high-variability cluster of descriptive statistics.

    Each section gets a 7-feature vector (min, max, mean, std and the
    quartiles over all its day/slot cells); features are standardized
    and 2-means clustered; the cluster with the larger mean std feature
    is returned, in the tensor's section order.
    """
    if not tensor.mask.all():
        raise ValueError("tensor must be fully imputed")
    flat = tensor.values.transpose(1, 0, 2).reshape(tensor.n_sections, -1)
    feats = np.column_stack(
        [
            flat.min(axis=1),
            flat.max(axis=1),
            flat.mean(axis=1),
            flat.std(axis=1),
            np.percentile(flat, 25, axis=1),
            np.percentile(flat, 50, axis=1),
            np.percentile(flat, 75, axis=1),
        ]
    )
    if np.allclose(feats, feats[0], rtol=0, atol=0):
        raise DegenerateFeatures("all sections have identical statistics")
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    std[std == 0] = 1.0
    z = (feats - mean) / std
    labels = _kmeans2(z, restarts, seed)
    std_col = z[:, FEATURE_NAMES.index("std")]
    mean_std = [std_col[labels == c].mean() if (labels == c).any() else -np.inf
                for c in (0, 1)]
    winner = int(np.argmax(mean_std))
    return [s for s, l in zip(tensor.sections, labels) if l == winner]


def export_edges(model, min_abs_weight: float = 0.0) -> EdgeList:
    """Arcs for every coefficient with |value| >= min_abs_weight."""
    A = model.A
    keep = np.abs(A.values) >= min_abs_weight
    rows_idx = A.rows[keep]
    cols_idx = A.cols[keep]
    vals = A.values[keep]
    sections = model.sections
    rows = [
        (sections[r], sections[c % len(sections)], float(v))
        for r, c, v in zip(rows_idx, cols_idx, vals)
    ]
    rows.sort(key=lambda rcw: (-abs(rcw[2]), rcw[0], rcw[1]))
    return EdgeList(rows=rows)


def influence_to_csv(model, path) -> None:
    """Write section,influence sorted by influence descending."""
    values = influence(model)
    sections = model.sections
    order = sorted(range(len(sections)), key=lambda k: (-values[k], sections[k]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["section", "influence"])
        for k in order:
            writer.writerow([sections[k], repr(float(values[k]))])
