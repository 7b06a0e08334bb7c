"""Per-cell distributed map optimization: consensus step plus gradient ascent.

Each robot keeps a log-odds estimate per cell and repeats two moves: pull
toward its neighbors' estimates (weighted by the communication graph), then
take a gradient step on its local observation objective

    f(h) = sum_m softmax_m(h) * (logq[m] - log softmax_m(h)),

whose ascent direction works out to g[c] = sig[c] * (sig @ delta - delta[c])
with sig = softmax(h) and delta = h - logq.  The literal textbook form of
that gradient (kept for cross-checking) squares a sum of exponentials and
overflows for large log-odds; the softmax form is the one used everywhere.

The batched kernels operate on row matrices so that a map stored as octree
regions and a map stored as a dense grid run through bitwise-identical
arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigMismatchError, InvalidInputError
from .logodds import LOG_ODDS_LIMIT, log_softmax, softmax
from .observation import LogQAccumulator
from .octree import (
    SemanticOctree,
    gather_accumulators,
    gather_logodds,
    refinement_regions,
)

EPSILON_LIMIT = 0.5  # consensus step sizes at or above this can oscillate


@dataclass(frozen=True)
class IterationParams:
    """Step sizes and stopping rule for the iteration loop.

    gamma_schedule is "constant" or "inv_sqrt" (gamma / sqrt(k)).  The loop
    stops after k_max iterations or when the update norm drops below
    update_tol, whichever comes first.
    """

    epsilon: float = 0.25
    gamma: float = 1.0
    gamma_schedule: str = "constant"
    k_max: int = 100
    update_tol: float = 1e-3

    def __post_init__(self):
        if not 0.0 <= self.epsilon < EPSILON_LIMIT:
            raise InvalidInputError(f"epsilon must be in [0, {EPSILON_LIMIT}), got {self.epsilon}")
        if self.gamma < 0:
            raise InvalidInputError(f"gamma must be >= 0, got {self.gamma}")
        if self.gamma_schedule not in ("constant", "inv_sqrt"):
            raise InvalidInputError(f"unknown gamma schedule {self.gamma_schedule!r}")
        if self.k_max < 1 or self.update_tol < 0:
            raise InvalidInputError("k_max must be >= 1 and update_tol >= 0")

    def gamma_at(self, k: int) -> float:
        if self.gamma_schedule == "inv_sqrt":
            return self.gamma / np.sqrt(max(k, 1))
        return self.gamma


class RobotGraph:
    """Undirected communication graph with weighted adjacency.

    Off-diagonal weights are stored explicitly; each row's remaining mass is
    an implicit self-weight, so every row sums to one.  Weights must be
    symmetric unless allow_asymmetric is set.
    """

    def __init__(self, weights, allow_asymmetric: bool = False):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise InvalidInputError("weights must be a square matrix")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidInputError("weights must be finite and non-negative")
        off = w - np.diag(np.diag(w))
        if np.any(off.sum(axis=1) > 1.0 + 1e-12):
            raise InvalidInputError("off-diagonal row sums must not exceed 1")
        if not allow_asymmetric and not np.allclose(off, off.T, rtol=0, atol=1e-12):
            raise InvalidInputError(
                "adjacency must be symmetric (pass allow_asymmetric to override)"
            )
        self.weights = off

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def neighbors(self, i: int) -> list[tuple[int, float]]:
        """(j, A_ij) for every neighbor of robot i, ascending j."""
        row = self.weights[i]
        return [(int(j), float(row[j])) for j in np.nonzero(row > 0)[0]]

    def edges(self) -> list[tuple[int, int, float]]:
        """Unordered edges (i, j, A_ij) with i < j."""
        out = []
        for i in range(self.n):
            for j in range(i + 1, self.n):
                if self.weights[i, j] > 0:
                    out.append((i, j, float(self.weights[i, j])))
        return out

    @classmethod
    def from_edges(cls, n: int, edges, rule: str = "metropolis") -> "RobotGraph":
        adj = np.zeros((n, n), dtype=bool)
        for i, j in edges:
            if i == j or not (0 <= i < n and 0 <= j < n):
                raise InvalidInputError(f"bad edge ({i}, {j})")
            adj[i, j] = adj[j, i] = True
        w = np.zeros((n, n))
        if rule == "metropolis":
            deg = adj.sum(axis=1)
            for i in range(n):
                for j in range(n):
                    if adj[i, j]:
                        w[i, j] = 1.0 / max(deg[i], deg[j])
        elif rule == "uniform":
            deg_max = max(int(adj.sum(axis=1).max()), 1)
            w[adj] = 1.0 / deg_max
        else:
            raise InvalidInputError(f"unknown weight rule {rule!r}")
        return cls(w)

    @classmethod
    def complete(cls, n: int, rule: str = "metropolis") -> "RobotGraph":
        return cls.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)], rule)

    @classmethod
    def ring(cls, n: int, rule: str = "metropolis") -> "RobotGraph":
        if n < 3:
            return cls.line(n, rule)
        return cls.from_edges(n, [(i, (i + 1) % n) for i in range(n)], rule)

    @classmethod
    def line(cls, n: int, rule: str = "metropolis") -> "RobotGraph":
        return cls.from_edges(n, [(i, i + 1) for i in range(n - 1)], rule)

    @classmethod
    def star(cls, n: int, rule: str = "metropolis") -> "RobotGraph":
        return cls.from_edges(n, [(0, i) for i in range(1, n)], rule)

    @classmethod
    def edgeless(cls, n: int) -> "RobotGraph":
        return cls(np.zeros((n, n)))


# -- single-vector operations --------------------------------------------------


def _check_vector(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} must be finite")
    return x


def consensus_step(h_i, neighbor_hs, epsilon: float) -> np.ndarray:
    """One-hop averaging pull: h_i + 2*eps * sum_j A_ij (h_j - h_i)."""
    h_i = _check_vector(h_i, "log-odds")
    if not 0.0 <= epsilon < EPSILON_LIMIT:
        raise InvalidInputError(f"epsilon must be in [0, {EPSILON_LIMIT})")
    total = 0.0
    acc = np.zeros_like(h_i)
    for w, h_j in neighbor_hs:
        if w < 0:
            raise InvalidInputError("negative neighbor weight")
        total += w
        acc += w * (_check_vector(h_j, "neighbor log-odds") - h_i)
    if total > 1.0 + 1e-12:
        raise InvalidInputError(f"neighbor weights sum to {total} > 1")
    return h_i + (2.0 * epsilon) * acc


def gradient(h_tilde, logq) -> np.ndarray:
    """Ascent direction of the per-cell objective at h_tilde.

    Evaluated in the softmax form; the shift delta - delta[0] makes the
    gradient exactly zero whenever delta is a constant vector, in floating
    point and not just on paper.
    """
    h_tilde = _check_vector(h_tilde, "log-odds")
    logq = _check_vector(logq, "log q")
    if h_tilde.shape != logq.shape:
        raise InvalidInputError("length mismatch between log-odds and log q")
    delta = h_tilde - logq
    delta = delta - delta[..., :1]
    sig = softmax(h_tilde)
    proj = np.sum(sig * delta, axis=-1, keepdims=True)
    return sig * (proj - delta)


def gradient_literal(h_tilde, logq) -> np.ndarray:
    """Textbook form of the gradient, kept for numerical cross-checks.

    Overflows once components approach ~350 because it squares the sum of
    exponentials; use gradient() for real work.
    """
    h_tilde = _check_vector(h_tilde, "log-odds")
    logq = _check_vector(logq, "log q")
    delta = h_tilde - logq
    e = np.exp(h_tilde)
    alpha = float(e @ delta) * np.ones_like(delta)
    beta = float(e.sum()) * delta
    return (alpha - beta) * e / float(e.sum()) ** 2


def apply_gradient(h_tilde, g, gamma: float) -> np.ndarray:
    """Step, clamp to the log-odds limit, then re-normalize component 0 to 0."""
    if gamma < 0:
        raise InvalidInputError(f"gamma must be >= 0, got {gamma}")
    h_tilde = _check_vector(h_tilde, "log-odds")
    g = _check_vector(g, "gradient")
    stepped = np.clip(h_tilde + gamma * g, -LOG_ODDS_LIMIT, LOG_ODDS_LIMIT)
    return stepped - stepped[..., :1]


def objective_value(h, logq) -> float:
    """sum_m softmax_m(h) * (logq[m] - log softmax_m(h)); 0 iff logq = log softmax(h)."""
    h = _check_vector(h, "log-odds")
    logq = _check_vector(logq, "log q")
    sig = softmax(h)
    return float(np.sum(sig * (logq - log_softmax(h))))


# -- batched kernels -------------------------------------------------------------


def batch_log_q(acc_sum: np.ndarray, acc_count: np.ndarray, prior: np.ndarray) -> np.ndarray:
    """Rowwise mean log q; rows with no observations read the prior's log-softmax."""
    safe = np.maximum(acc_count, 1)[:, None]
    mean = acc_sum / safe
    return np.where(acc_count[:, None] > 0, mean, log_softmax(prior))


def batch_update(
    h_own: np.ndarray,
    neighbor_hs: list[tuple[float, np.ndarray]],
    epsilon: float,
    logq: np.ndarray,
    gamma: float,
) -> np.ndarray:
    """Consensus + gradient + clamp + normalize over rows of cell states.

    This is the single arithmetic path shared by the octree and dense-grid
    pipelines; identical input rows produce bitwise-identical output rows.
    """
    acc = np.zeros_like(h_own)
    for w, h_j in neighbor_hs:
        acc += w * (h_j - h_own)
    h_t = h_own + (2.0 * epsilon) * acc
    if gamma != 0.0:
        delta = h_t - logq
        delta = delta - delta[:, :1]
        z = h_t - np.max(h_t, axis=1, keepdims=True)
        e = np.exp(z)
        sig = e / np.sum(e, axis=1, keepdims=True)
        proj = np.sum(sig * delta, axis=1, keepdims=True)
        h_t = h_t + gamma * (sig * (proj - delta))
    h_t = np.clip(h_t, -LOG_ODDS_LIMIT, LOG_ODDS_LIMIT)
    return h_t - h_t[:, :1]


# -- map-level operations ---------------------------------------------------------


def iterate(map_i, neighbor_maps, params: IterationParams, gamma: float | None = None, k: int = 1):
    """One synchronous iteration of the update on a robot's whole map.

    neighbor_maps is a list of (weight, snapshot) pairs; snapshots are
    read-only maps from the same tick.  Every common-refinement region gets
    the consensus pull, then the local gradient, and the result is written
    back through the robot's map (octree maps re-prune afterwards).  Returns
    the update norm: max over regions of the max-abs change.
    """
    if gamma is None:
        gamma = params.gamma_at(k)
    if isinstance(map_i, SemanticOctree):
        return _iterate_octree(map_i, neighbor_maps, params.epsilon, gamma)
    return map_i.iterate(neighbor_maps, params.epsilon, gamma)


def _iterate_octree(tree: SemanticOctree, neighbor_maps, epsilon: float, gamma: float) -> float:
    trees = [tree] + [t for _, t in neighbor_maps]
    starts, levels, index = refinement_regions(trees)
    h_own = gather_logodds(tree, index[0])
    acc_sum, acc_count = gather_accumulators(tree, index[0])
    logq = batch_log_q(acc_sum, acc_count, tree.prior)
    neighbor_rows = [
        (w, gather_logodds(t, index[k + 1]))
        for k, (w, t) in enumerate(neighbor_maps)
    ]
    h_new = batch_update(h_own, neighbor_rows, epsilon, logq, gamma)
    norm = float(np.max(np.abs(h_new - h_own))) if len(h_new) else 0.0
    tree.replace_leaves(starts, levels, h_new, acc_sum, acc_count)
    return norm


def constraint_residual(maps, graph: RobotGraph, weighted: bool = False) -> float:
    """Disagreement across graph edges, summed over common-refinement regions.

    Each unordered edge {i, j} contributes (A_ij if weighted else 1) times
    the cell-count-weighted squared distance between the two maps.
    """
    total = 0.0
    for i, j, w in graph.edges():
        total += (w if weighted else 1.0) * _pair_residual(maps[i], maps[j])
    return total


def pairwise_residual(maps) -> float:
    """Unweighted disagreement over all robot pairs, regardless of the graph."""
    total = 0.0
    for i in range(len(maps)):
        for j in range(i + 1, len(maps)):
            total += _pair_residual(maps[i], maps[j])
    return total


def _pair_residual(a, b) -> float:
    if isinstance(a, SemanticOctree) and isinstance(b, SemanticOctree):
        if a.config != b.config:
            raise ConfigMismatchError("maps with different configurations")
        starts, levels, index = refinement_regions([a, b])
        ha = gather_logodds(a, index[0])
        hb = gather_logodds(b, index[1])
        counts = np.int64(1) << (3 * (a.config.depth - levels))
        return float(np.dot(counts.astype(np.float64), np.sum((ha - hb) ** 2, axis=1)))
    if a.config != b.config:
        raise ConfigMismatchError("maps with different configurations")
    da = a.dense_logodds_morton()
    db = b.dense_logodds_morton()
    return float(np.sum((da - db) ** 2))


def run_rounds(
    maps,
    graph: RobotGraph,
    params: IterationParams,
    max_rounds: int | None = None,
    tol: float | None = None,
    gamma: float | None = None,
) -> tuple[int, float]:
    """Synchronous iteration rounds until the update norm falls below tol.

    Snapshots are full-precision copies (no wire quantization here); returns
    (rounds executed, last max update norm).
    """
    limit = max_rounds if max_rounds is not None else params.k_max
    stop = tol if tol is not None else params.update_tol
    norm = np.inf
    k = 0
    while k < limit and norm >= stop:
        k += 1
        snaps = [m.copy() for m in maps]
        norms = []
        for i, m in enumerate(maps):
            nbrs = [(w, snaps[j]) for j, w in graph.neighbors(i)]
            norms.append(iterate(m, nbrs, params, gamma=gamma, k=k))
        norm = max(norms)
    return k, norm
