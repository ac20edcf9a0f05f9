"""ROC curve and AUC with exact tie handling."""

from __future__ import annotations

import numpy as np


def roc_auc(scores, labels) -> tuple[float, list[tuple[float, float]]]:
    """AUC and ROC points from a descending-score threshold sweep.

    Ties are grouped: tied scores contribute a single ROC point, and the
    trapezoidal area credits tied positive/negative pairs with 1/2.  The
    result equals P(score_pos > score_neg) + 0.5 * P(score_pos = score_neg)
    exactly.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-d and the same length")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc requires at least one positive and one negative")

    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]

    points = [(0.0, 0.0)]
    auc = 0.0
    tp = fp = 0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        d_tp = int(np.sum(y[i:j] == 1))
        d_fp = (j - i) - d_tp
        # trapezoid over the tie group: ties count half
        auc += d_fp * tp + 0.5 * d_fp * d_tp
        tp += d_tp
        fp += d_fp
        points.append((fp / n_neg, tp / n_pos))
        i = j
    return auc / (n_pos * n_neg), points
