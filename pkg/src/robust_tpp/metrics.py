"""Clustering purity, normalised L1 error and MLE comparison ratios."""

from __future__ import annotations

from collections import Counter, defaultdict
from typing import Mapping

import numpy as np

from .errors import DataError
from .spline import eval_basis, quadrature_grid


def purity(pred: Mapping, truth: Mapping) -> float:
    """``(1/N) sum_k max_k' |pred_k & truth_k'|`` over a shared id set."""
    if set(pred) != set(truth):
        missing = sorted(set(pred) ^ set(truth), key=str)
        raise DataError(f"partitions disagree on id {missing[0]!r}")
    if not pred:
        raise DataError("purity of an empty partition")
    groups = defaultdict(Counter)
    for i, k in pred.items():
        groups[k][truth[i]] += 1
    return sum(max(c.values()) for c in groups.values()) / len(pred)


def restrict(part: Mapping, ids) -> dict:
    return {i: part[i] for i in ids}


def detection_scores(detected, actual) -> tuple[float, float]:
    """Precision and recall of a detected id set (1.0 when the relevant set is empty)."""
    detected, actual = set(detected), set(actual)
    tp = len(detected & actual)
    precision = tp / len(detected) if detected else 1.0
    recall = tp / len(actual) if actual else 1.0
    return precision, recall


def l1_terms(fit_coeffs, fit_basis, class_coeffs, G: int = 1024) -> np.ndarray:
    """Per-stream ``int |lam_n - lam_k| / sqrt(int lam_k)`` for matched rows."""
    nodes, w = quadrature_grid(fit_basis.T, G)
    Kg = eval_basis(fit_basis, nodes)
    a = np.atleast_2d(fit_coeffs) @ Kg.T
    b = np.atleast_2d(class_coeffs) @ Kg.T
    return w * np.abs(a - b).sum(axis=1) / np.sqrt(w * b.sum(axis=1))


def l1_error(fits, model, labels, outlier_ids=(), G: int = 1024) -> float:
    """Mean normalised L1 gap between each non-outlier stream fit and its class intensity."""
    skip = set(outlier_ids)
    keep = [n for n, f in enumerate(fits) if f.id not in skip and n not in skip]
    if not keep:
        raise DataError("l1_error: every stream is an outlier")
    coeffs = np.stack([fits[n].coeffs for n in keep])
    cls = model.B[np.asarray(labels)[keep]]
    return float(l1_terms(coeffs, fits[0].basis, cls, G).mean())


def mle_ratio(result_a, result_b, scope: str = "out", outlier_ids=None) -> float:
    """Share of streams whose assigned-class log-likelihood under A strictly beats B.

    ``scope="out"`` drops ``outlier_ids`` (default: A's detected outliers).
    """
    if list(result_a.ids) != list(result_b.ids):
        raise DataError("results cover different streams")
    la, lb = result_a.assigned_loglik, result_b.assigned_loglik
    if scope == "all":
        keep = np.ones(len(la), dtype=bool)
    elif scope == "out":
        drop = result_a.outlier_ids if outlier_ids is None else set(outlier_ids)
        keep = np.array([i not in drop for i in result_a.ids])
    else:
        raise DataError(f"unknown scope {scope!r}")
    if not keep.any():
        raise DataError("mle_ratio: no streams in scope")
    return float(np.mean(la[keep] > lb[keep]))
