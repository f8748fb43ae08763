"""Video-level aggregation and the two training losses.

Per-class video scores are top-k means over the TCAS columns; the plain
loss is cross-entropy between their softmax and the normalized
video-level label. The motion-guided variant weights each class term by
the squared mean motionness over that class's selected snippets and adds
a -log(mu^2) regularizer that pushes selected motionness upward.
"""

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import DiffNode, DomainError, as_matrix, constant

_PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    r: int = 8
    regularizer_mask: str = "all_classes"  # all_classes | positive_only | none
    loss_kind: str = "motion_guided"       # xe | motion_guided

    def validate(self):
        if self.r < 1:
            raise ValueError(f"selection ratio r must be >= 1, got {self.r}")
        if self.regularizer_mask not in ("all_classes", "positive_only", "none"):
            raise ValueError(f"unknown regularizer_mask {self.regularizer_mask!r}")
        if self.loss_kind not in ("xe", "motion_guided"):
            raise ValueError(f"unknown loss_kind {self.loss_kind!r}")


@dataclass
class AggregationResult:
    video_scores: DiffNode   # 1 x C top-k means
    probs: DiffNode          # 1 x C softmax of the scores
    topk_indices: list       # per class, the k selected snippet indices
    k: int


def aggregate_topk(tcas, r):
    """Top-k mean per class with k = max(1, floor(T / r))."""
    k = max(1, tcas.rows // r)
    scores, indices = nc.topk_mean_columns(tcas, k)
    probs = nc.softmax_rows(scores)
    return AggregationResult(video_scores=scores, probs=probs,
                             topk_indices=indices, k=k)


def normalized_label(label):
    """Multi-hot label scaled to sum 1 (uniform over its positives)."""
    y = as_matrix(label, "label")
    if y.shape[0] != 1:
        y = y.reshape(1, -1)
    total = y.sum()
    if total <= 0:
        raise DomainError("label needs at least one positive class")
    return y / total


def _log_probs(agg):
    # softmax output is positive by construction; the floor only guards
    # underflow at extreme logits
    return nc.log(nc.clip(agg.probs, _PROB_FLOOR, 2.0))


def xe_loss(agg, label):
    """L = -sum_c yhat_c log p_c with yhat the normalized label."""
    yhat = constant(normalized_label(label))
    return nc.scale(nc.sum_all(yhat * _log_probs(agg)), -1.0)


def video_motionness(motionness, topk_indices):
    """Per-class mean motionness over the class's top-k snippet set.

    Built as a matmul with a constant averaging matrix so the gradient
    lands as 1/k on the selected snippets and 0 elsewhere.
    """
    T = motionness.rows
    C = len(topk_indices)
    sel = np.zeros((T, C))
    for c, idxs in enumerate(topk_indices):
        if not idxs:
            raise DomainError(f"class {c} has an empty selection")
        w = 1.0 / len(idxs)
        for t in idxs:
            sel[t, c] += w
    return nc.transpose(motionness) @ constant(sel)


def motion_guided_loss(agg, mu, label, cfg):
    """L = -sum_c mu_c^2 yhat_c log p_c - sum_{c in R} log mu_c^2.

    R is every class, only positive classes, or empty, per
    cfg.regularizer_mask.
    """
    cfg.validate()
    yhat = normalized_label(label)
    C = yhat.shape[1]
    if mu.shape != (1, C):
        raise nc.ShapeMismatchError(f"mu must be 1x{C}, got {mu.shape}")
    mu2 = nc.square(mu)
    logp = _log_probs(agg)
    main = nc.scale(nc.sum_all(constant(yhat) * mu2 * logp), -1.0)
    if cfg.regularizer_mask == "none":
        return main
    if cfg.regularizer_mask == "positive_only":
        mask = (yhat > 0).astype(np.float64)
    else:
        mask = np.ones((1, C))
    reg = nc.scale(nc.sum_all(constant(mask) * nc.log(mu2)), -1.0)
    return main + reg


def per_video_loss(out, label, cfg):
    """Dispatch on cfg.loss_kind given a ForwardOutput."""
    agg = aggregate_topk(out.tcas, cfg.r)
    if cfg.loss_kind == "xe":
        return xe_loss(agg, label), agg
    mu = video_motionness(out.motionness, agg.topk_indices)
    return motion_guided_loss(agg, mu, label, cfg), agg


def surface_term(p, mu, label=1.0):
    """Single-class motion-guided term -mu^2 yhat log p - log mu^2."""
    return -(mu ** 2) * label * np.log(p) - np.log(mu ** 2)


def loss_surface(p_grid, mu_grid, label=1.0):
    """Matrix L[i, j] = surface_term(p_grid[i], mu_grid[j], label)."""
    p = np.asarray(p_grid, dtype=np.float64)
    m = np.asarray(mu_grid, dtype=np.float64)
    if np.any(p <= 0) or np.any(p >= 1) or np.any(m <= 0) or np.any(m >= 1):
        raise DomainError("grids must lie strictly inside (0, 1)")
    return surface_term(p[:, None], m[None, :], label)


def default_surface_grids(n=50):
    """50 x 50 sampling box for the surface plot.

    dL/dmu = -2 mu log p - 2/mu is negative exactly while
    mu^2 log(1/p) < 1, so the surface is monotone in mu only where p is
    not too small. The default box (p >= 0.4) stays inside that region:
    0.98^2 * log(1/0.4) = 0.88 < 1.
    """
    return np.linspace(0.40, 0.99, n), np.linspace(0.02, 0.98, n)
