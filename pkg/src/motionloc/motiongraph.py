"""Snippet graphs over motion features.

The sparse graph connects each snippet to its temporal neighbourhood
(positional edges) and to distant snippets whose projected motion
features point the same way (semantic edges).  Edge weights are raw
cosine similarities.  A dense baseline normalizes projected inner
products over full rows, and an identity graph backs the plain-MLP
ablation.
"""

from dataclasses import dataclass, field

import numpy as np

from .numcore import ShapeMismatchError, as_matrix

_TINY_ROW_SUM = 1e-9


@dataclass(frozen=True)
class GraphConfig:
    theta_pos: float = 0.1
    gamma: float = 0.6
    mode: str = "sparse"          # sparse | dense | mlp
    row_normalize: bool = True
    include_self: bool = True
    use_positional: bool = True   # ablation switches for the sparse mode
    use_semantic: bool = True

    def validate(self):
        if not 0.0 < self.theta_pos < 1.0:
            raise ValueError(f"theta_pos must lie in (0,1), got {self.theta_pos}")
        if not -1.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (-1,1), got {self.gamma}")
        if self.mode not in ("sparse", "dense", "mlp"):
            raise ValueError(f"unknown graph mode {self.mode!r}")


@dataclass(frozen=True, eq=False)
class MotionGraph:
    T: int
    pos_edges: frozenset = field(repr=False)
    smt_edges: frozenset = field(repr=False)
    adjacency: np.ndarray = field(repr=False)


def _unit_rows(x):
    """Rows scaled to unit norm; zero rows map to zero (cosine treated as 0)."""
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return x / safe


def build_positional_edges(motion, cfg):
    """Ordered pairs (i,j) with |i-j|/T below the positional threshold."""
    motion = as_matrix(motion, "motion")
    T = motion.shape[0]
    idx = np.arange(T)
    delta = np.abs(idx[:, None] - idx[None, :])
    mask = (delta / T) < cfg.theta_pos
    if not cfg.include_self:
        np.fill_diagonal(mask, False)
    ii, jj = np.nonzero(mask)
    return {(int(i), int(j)) for i, j in zip(ii, jj)}


def build_semantic_edges(motion, W1, W2, cfg):
    """Distant pairs whose projected features agree in direction.

    A pair qualifies when |i-j|/T exceeds the positional threshold and
    cos(W1 m_i, W2 m_j) exceeds gamma; the result is symmetrized.
    """
    motion = as_matrix(motion, "motion")
    T, d = motion.shape
    W1 = as_matrix(W1, "W1")
    W2 = as_matrix(W2, "W2")
    if W1.shape != (d, d) or W2.shape != (d, d):
        raise ShapeMismatchError(
            f"projections must be {d}x{d}, got {W1.shape} and {W2.shape}")
    p1 = _unit_rows(motion @ W1.T)
    p2 = _unit_rows(motion @ W2.T)
    cos = p1 @ p2.T
    idx = np.arange(T)
    distant = (np.abs(idx[:, None] - idx[None, :]) / T) > cfg.theta_pos
    qual = distant & (cos > cfg.gamma)
    qual = qual | qual.T
    ii, jj = np.nonzero(qual)
    return {(int(i), int(j)) for i, j in zip(ii, jj)}


def build_adjacency(motion, edges, cfg):
    """Raw-feature cosine weights on the given edges, zero elsewhere."""
    motion = as_matrix(motion, "motion")
    T = motion.shape[0]
    u = _unit_rows(motion)
    cos = u @ u.T
    G = np.zeros((T, T))
    if edges:
        ii, jj = zip(*edges)
        G[list(ii), list(jj)] = cos[list(ii), list(jj)]
    if cfg.row_normalize:
        sums = np.abs(G).sum(axis=1, keepdims=True)
        G = G / np.where(sums > _TINY_ROW_SUM, sums, 1.0)
    return G


def build_dense_adjacency(motion, W1, W2):
    """Projected inner products normalized over each full row.

    Rows whose sum is negative or vanishing fall back to uniform 1/T
    weights (signed inner products make the normalizer unreliable there).
    """
    motion = as_matrix(motion, "motion")
    T, d = motion.shape
    W1 = as_matrix(W1, "W1")
    W2 = as_matrix(W2, "W2")
    if W1.shape != (d, d) or W2.shape != (d, d):
        raise ShapeMismatchError(
            f"projections must be {d}x{d}, got {W1.shape} and {W2.shape}")
    S = (motion @ W1.T) @ (motion @ W2.T).T
    sums = S.sum(axis=1, keepdims=True)
    ok = sums > _TINY_ROW_SUM
    G = np.where(ok, S / np.where(ok, sums, 1.0), 1.0 / T)
    return G


def identity_projections(d, rng=None, noise=0.01):
    """Identity plus small Gaussian noise, the default W1/W2 pair."""
    if rng is None:
        return np.eye(d), np.eye(d)
    W1 = np.eye(d) + noise * rng.standard_normal((d, d))
    W2 = np.eye(d) + noise * rng.standard_normal((d, d))
    return W1, W2


def build_graph(motion, W1, W2, cfg):
    """Dispatch on cfg.mode; mlp mode carries an identity adjacency."""
    cfg.validate()
    motion = as_matrix(motion, "motion")
    T = motion.shape[0]
    if cfg.mode == "dense":
        adj = build_dense_adjacency(motion, W1, W2)
        return MotionGraph(T, frozenset(), frozenset(), adj)
    if cfg.mode == "mlp":
        return MotionGraph(T, frozenset(), frozenset(), np.eye(T))
    pos = build_positional_edges(motion, cfg) if cfg.use_positional else set()
    smt = build_semantic_edges(motion, W1, W2, cfg) if cfg.use_semantic else set()
    smt -= pos  # thresholds make these disjoint already; keep it structural
    adj = build_adjacency(motion, pos | smt, cfg)
    return MotionGraph(T, frozenset(pos), frozenset(smt), adj)


def adjacency_mean_distance(adjacency):
    """Mean |i-j| weighted by the signed adjacency entries.

    Signed weighting lets the sign-alternating far-field products of a
    dense graph cancel, exposing its diagonal concentration; a matrix
    whose entries sum to (near) zero maps to 0.
    """
    A = as_matrix(adjacency, "adjacency")
    total = A.sum()
    if abs(total) <= _TINY_ROW_SUM:
        return 0.0
    T = A.shape[0]
    idx = np.arange(T)
    dist = np.abs(idx[:, None] - idx[None, :])
    return float((A * dist).sum() / total)
