"""Adaptive-resolution semantic octree with lossless pruning.

The tree is stored as a flat table of leaves sorted by the Morton index of
their first finest-resolution cell.  A leaf at depth_level L covers a
contiguous Morton interval of 8^(depth-L) cells; gaps between intervals are
absent subtrees, which stand for the prior with an empty accumulator.  This
representation keeps tree-wide operations (refinement, pruning, painting a
dense grid) vectorizable while remaining equivalent to the usual pointer
octree: inner nodes exist implicitly wherever a cube properly contains a
leaf.

Canonical (pruned) form: no 8 sibling leaves with equal payloads, and no
leaf whose payload equals the prior with an empty accumulator (such leaves
are represented as absent).  With tolerance zero, "equal" means bitwise
equality of the log-odds, the accumulator sum, and the count, which is what
makes pruning exactly lossless for any downstream arithmetic.
"""

from __future__ import annotations

from typing import Callable, Iterator, NamedTuple

import numpy as np

from .errors import ConfigMismatchError, InvalidInputError, ResourceLimitError
from .grid import MapConfig, morton_encode, morton_order_permutation
from .logodds import log_softmax
from .observation import CellIndex, LogQAccumulator

# Guard on 2^(3d) * (C+1) float entries for dense materialization.
DENSE_ENTRY_LIMIT = 1 << 25

_PERM_CACHE: dict[int, np.ndarray] = {}


def _perm(depth: int) -> np.ndarray:
    if depth not in _PERM_CACHE:
        _PERM_CACHE[depth] = morton_order_permutation(depth)
    return _PERM_CACHE[depth]


class NodeKey(NamedTuple):
    """Cube identifier: tree level plus Morton code at that level."""

    depth_level: int
    morton: int


class SemanticOctree:
    """Sparse multi-class map over a MapConfig grid.

    Leaves hold a log-odds vector plus a log-q accumulator (sum and count).
    Mutation is single-owner; snapshots for concurrent readers are taken
    with copy().
    """

    def __init__(self, config: MapConfig, prior=None, tau_prune: float = 0.0):
        self.config = config
        width = config.vector_length
        if prior is None:
            prior = np.zeros(width)
        prior = np.asarray(prior, dtype=np.float64)
        if prior.shape != (width,) or not np.all(np.isfinite(prior)):
            raise InvalidInputError("prior must be a finite vector of length C+1")
        if prior[0] != 0.0:
            raise InvalidInputError("prior must be normalized (component 0 == 0)")
        self.prior = prior
        self.tau_prune = float(tau_prune)
        self.starts = np.empty(0, dtype=np.int64)
        self.levels = np.empty(0, dtype=np.int64)
        self.h = np.empty((0, width), dtype=np.float64)
        self.acc_sum = np.empty((0, width), dtype=np.float64)
        self.acc_count = np.empty(0, dtype=np.int64)

    # -- basic structure ---------------------------------------------------

    @property
    def depth(self) -> int:
        return self.config.depth

    def sizes(self) -> np.ndarray:
        """Cells covered by each leaf."""
        return np.int64(1) << (3 * (self.depth - self.levels))

    def leaf_count(self) -> int:
        return len(self.starts)

    def node_count(self) -> int:
        """Leaves plus implicit inner nodes (cubes properly containing a leaf)."""
        if len(self.starts) == 0:
            return 1  # empty tree serializes as a single prior leaf at the root
        inner = set()
        for lev in range(0, int(self.levels.max())):
            size = 1 << (3 * (self.depth - lev))
            for s in np.unique(self.starts[self.levels > lev] // size * size):
                inner.add((int(s), lev))
        return len(inner) + len(self.starts)

    def copy(self) -> "SemanticOctree":
        t = SemanticOctree(self.config, self.prior.copy(), self.tau_prune)
        t.starts = self.starts.copy()
        t.levels = self.levels.copy()
        t.h = self.h.copy()
        t.acc_sum = self.acc_sum.copy()
        t.acc_count = self.acc_count.copy()
        return t

    def _set_table(self, starts, levels, h, acc_sum, acc_count) -> None:
        width = self.config.vector_length
        self.starts = np.asarray(starts, dtype=np.int64)
        self.levels = np.asarray(levels, dtype=np.int64)
        self.h = np.asarray(h, dtype=np.float64).reshape(len(self.starts), width)
        self.acc_sum = np.asarray(acc_sum, dtype=np.float64).reshape(len(self.starts), width)
        self.acc_count = np.asarray(acc_count, dtype=np.int64)

    def _covering_index(self, mu: int) -> int:
        """Index of the leaf covering Morton cell mu, or -1 if absent."""
        i = int(np.searchsorted(self.starts, mu, side="right")) - 1
        if i >= 0:
            size = 1 << (3 * (self.depth - int(self.levels[i])))
            if int(self.starts[i]) + size > mu:
                return i
        return -1

    # -- queries -----------------------------------------------------------

    def query(self, point) -> tuple[np.ndarray, int]:
        """Log-odds at a world point and the level that resolved it.

        Absent subtrees resolve to the prior at the coarsest leaf-free cube
        containing the point (level 0 for an empty tree).
        """
        cell = self.config.cell_of_point(point)
        return self.query_cell(cell)

    def query_cell(self, cell: CellIndex) -> tuple[np.ndarray, int]:
        cell = self.config.check_cell(cell)
        mu = morton_encode(*cell)
        i = self._covering_index(mu)
        if i >= 0:
            return self.h[i].copy(), int(self.levels[i])
        for lev in range(self.depth + 1):
            size = 1 << (3 * (self.depth - lev))
            cs = mu - mu % size
            j = int(np.searchsorted(self.starts, cs, side="left"))
            left_clear = j == 0 or int(self.starts[j - 1]) + (
                1 << (3 * (self.depth - int(self.levels[j - 1])))
            ) <= cs
            right_clear = j == len(self.starts) or int(self.starts[j]) >= cs + size
            if left_clear and right_clear:
                return self.prior.copy(), lev
        raise AssertionError("unreachable: uncovered cell has a leaf-free cube")

    # -- payload equality / canonical form ----------------------------------

    def _mean_log(self, i: int) -> np.ndarray:
        if self.acc_count[i] > 0:
            return self.acc_sum[i] / self.acc_count[i]
        return log_softmax(self.prior)

    def _rows_equal(self, i: int, j: int) -> bool:
        if self.tau_prune == 0.0:
            return (
                np.array_equal(self.h[i], self.h[j])
                and self.acc_count[i] == self.acc_count[j]
                and np.array_equal(self.acc_sum[i], self.acc_sum[j])
            )
        return (
            np.max(np.abs(self.h[i] - self.h[j])) <= self.tau_prune
            and np.max(np.abs(self._mean_log(i) - self._mean_log(j))) <= self.tau_prune
        )

    def _prior_empty_mask(self) -> np.ndarray:
        if len(self.starts) == 0:
            return np.empty(0, dtype=bool)
        if self.tau_prune == 0.0:
            h_eq = np.all(self.h == self.prior, axis=1)
        else:
            h_eq = np.max(np.abs(self.h - self.prior), axis=1) <= self.tau_prune
        return h_eq & (self.acc_count == 0)

    # -- mutation ------------------------------------------------------------

    def update_leaf(self, cell: CellIndex, fn: Callable) -> None:
        """Apply fn(h, acc) -> (h, acc) to the finest leaf covering a cell.

        A coarser leaf covering the cell is first expanded (payload copied to
        its children, recursively); an absent subtree materializes at the
        prior.  Ancestors are re-pruned afterwards if the write made them
        homogeneous.
        """
        cell = self.config.check_cell(cell)
        mu = int(morton_encode(*cell))
        i = self._covering_index(mu)
        if i >= 0 and self.levels[i] == self.depth:
            self._apply_fn(i, fn)
        elif i >= 0:
            self._split_row_to_cell(i, mu)
            i = self._covering_index(mu)
            self._apply_fn(i, fn)
        else:
            h, acc = fn(self.prior.copy(), LogQAccumulator.empty(self.config.num_classes))
            self._insert_rows([mu], [self.depth], [h], [acc.sum_log], [acc.count])
        self._canonicalize_path(mu)

    def _apply_fn(self, i: int, fn: Callable) -> None:
        acc = LogQAccumulator(sum_log=self.acc_sum[i].copy(), count=int(self.acc_count[i]))
        h, acc = fn(self.h[i].copy(), acc)
        h = np.asarray(h, dtype=np.float64)
        if h.shape != (self.config.vector_length,) or not np.all(np.isfinite(h)):
            raise InvalidInputError("update produced an invalid log-odds vector")
        self.h[i] = h
        self.acc_sum[i] = acc.sum_log
        self.acc_count[i] = acc.count

    def _split_row_to_cell(self, i: int, mu: int) -> None:
        """Expand the leaf at row i one level at a time toward cell mu."""
        s0 = int(self.starts[i])
        lev0 = int(self.levels[i])
        h0, sum0, cnt0 = self.h[i], self.acc_sum[i], self.acc_count[i]
        new_s, new_lv = [], []
        s, lev = s0, lev0
        while lev < self.depth:
            child = 1 << (3 * (self.depth - lev - 1))
            k = (mu - s) // child
            for k2 in range(8):
                if k2 != k:
                    new_s.append(s + k2 * child)
                    new_lv.append(lev + 1)
            s += k * child
            lev += 1
        new_s.append(s)  # == mu
        new_lv.append(self.depth)
        n_new = len(new_s)
        self._delete_rows(np.array([i]))
        self._insert_rows(
            new_s,
            new_lv,
            np.tile(h0, (n_new, 1)),
            np.tile(sum0, (n_new, 1)),
            np.full(n_new, cnt0, dtype=np.int64),
        )

    def _delete_rows(self, idx) -> None:
        keep = np.ones(len(self.starts), dtype=bool)
        keep[idx] = False
        self._set_table(
            self.starts[keep], self.levels[keep], self.h[keep],
            self.acc_sum[keep], self.acc_count[keep],
        )

    def _insert_rows(self, starts, levels, h, acc_sum, acc_count) -> None:
        starts = np.concatenate([self.starts, np.asarray(starts, dtype=np.int64)])
        levels = np.concatenate([self.levels, np.asarray(levels, dtype=np.int64)])
        h = np.vstack([self.h, np.asarray(h, dtype=np.float64).reshape(-1, self.config.vector_length)])
        acc_sum = np.vstack([self.acc_sum, np.asarray(acc_sum, dtype=np.float64).reshape(-1, self.config.vector_length)])
        acc_count = np.concatenate([self.acc_count, np.asarray(acc_count, dtype=np.int64)])
        order = np.argsort(starts, kind="stable")
        self._set_table(starts[order], levels[order], h[order], acc_sum[order], acc_count[order])

    def _canonicalize_path(self, mu: int) -> None:
        """Restore canonical form along the ancestor path of cell mu."""
        i = self._covering_index(mu)
        if i >= 0 and bool(self._prior_empty_mask()[i]):
            self._delete_rows(np.array([i]))
            return
        for lev in range(self.depth, 0, -1):
            i = self._covering_index(mu)
            if i < 0 or self.levels[i] != lev:
                return
            size = 1 << (3 * (self.depth - lev))
            parent = int(self.starts[i]) // (8 * size) * (8 * size)
            rows = []
            ok = True
            for k in range(8):
                j = self._covering_index(parent + k * size)
                if j < 0 or self.levels[j] != lev or self.starts[j] != parent + k * size:
                    ok = False
                    break
                rows.append(j)
            if not ok or not all(self._rows_equal(rows[0], j) for j in rows[1:]):
                return
            h0 = self.h[rows[0]].copy()
            sum0 = self.acc_sum[rows[0]].copy()
            cnt0 = int(self.acc_count[rows[0]])
            self._delete_rows(np.array(rows))
            self._insert_rows([parent], [lev - 1], [h0], [sum0], [cnt0])

    def _groups_equal(self, rows: np.ndarray) -> np.ndarray:
        """rows: (g, 8) leaf indices; True where all 8 payloads agree."""
        h = self.h[rows]
        if self.tau_prune == 0.0:
            ok = np.all(h == h[:, :1], axis=(1, 2))
            ok &= np.all(self.acc_sum[rows] == self.acc_sum[rows][:, :1], axis=(1, 2))
            return ok & np.all(self.acc_count[rows] == self.acc_count[rows][:, :1], axis=1)
        counts = self.acc_count[rows][:, :, None]
        mean = np.where(
            counts > 0,
            self.acc_sum[rows] / np.maximum(counts, 1),
            log_softmax(self.prior),
        )
        ok = np.max(np.abs(h - h[:, :1]), axis=(1, 2)) <= self.tau_prune
        return ok & (np.max(np.abs(mean - mean[:, :1]), axis=(1, 2)) <= self.tau_prune)

    def prune(self) -> int:
        """Bring the tree to pruned-canonical form; returns nodes removed."""
        removed = 0
        drop = self._prior_empty_mask()
        if drop.any():
            removed += int(drop.sum())
            self._delete_rows(np.nonzero(drop)[0])
        for lev in range(self.depth, 0, -1):
            at = np.nonzero(self.levels == lev)[0]
            if len(at) < 8:
                continue
            size = 1 << (3 * (self.depth - lev))
            parents = self.starts[at] // (8 * size)
            uniq, first, counts = np.unique(parents, return_index=True, return_counts=True)
            full = counts == 8
            if not full.any():
                continue
            # rows at one level sharing a parent are exactly its 8 children
            rows = at[first[full][:, None] + np.arange(8)]
            mergeable = self._groups_equal(rows)
            if not mergeable.any():
                continue
            rows = rows[mergeable]
            removed += rows.size
            keep_payload = rows[:, 0]
            new_s = uniq[full][mergeable] * 8 * size
            new_h = self.h[keep_payload].copy()
            new_sum = self.acc_sum[keep_payload].copy()
            new_cnt = self.acc_count[keep_payload].copy()
            self._delete_rows(rows.ravel())
            self._insert_rows(new_s, np.full(len(new_s), lev - 1), new_h, new_sum, new_cnt)
        return removed

    def replace_leaves(self, starts, levels, h, acc_sum, acc_count, prune: bool = True) -> None:
        """Rebuild the leaf table from region arrays and re-canonicalize.

        Rows whose payload equals the prior with an empty accumulator are
        dropped (absent), everything else is kept and pruned bottom-up.
        """
        self._set_table(starts, levels, h, acc_sum, acc_count)
        if prune:
            self.prune()

    # -- batched observation updates ----------------------------------------

    def apply_observation_deltas(self, mus, delta_sum, delta_count) -> None:
        """Add per-cell log-probability sums into the accumulators.

        mus are unique, sorted finest-level Morton codes; delta_sum is the
        matching (k, C+1) array of log p sums and delta_count the number of
        observations per cell.  Log-odds are not touched: they evolve only
        through consensus iterations.
        """
        mus = np.asarray(mus, dtype=np.int64)
        if len(mus) == 0:
            return
        delta_sum = np.asarray(delta_sum, dtype=np.float64)
        delta_count = np.asarray(delta_count, dtype=np.int64)
        pos = np.searchsorted(self.starts, mus, side="right") - 1
        sizes = self.sizes()
        covered = pos >= 0
        covered[covered] &= (
            self.starts[pos[covered]] + sizes[pos[covered]] > mus[covered]
        )
        exact = covered.copy()
        exact[covered] &= self.levels[pos[covered]] == self.depth
        coarse = covered & ~exact

        if exact.any():
            rows = pos[exact]
            self.acc_sum[rows] += delta_sum[exact]
            self.acc_count[rows] += delta_count[exact]

        add_s, add_lv, add_h, add_sum, add_cnt = [], [], [], [], []
        miss = ~covered
        if miss.any():
            for m, ds, dc in zip(mus[miss], delta_sum[miss], delta_count[miss]):
                add_s.append(int(m))
                add_lv.append(self.depth)
                add_h.append(self.prior.copy())
                add_sum.append(0.0 + ds)
                add_cnt.append(int(dc))
        if coarse.any():
            for row in np.unique(pos[coarse]):
                in_row = coarse & (pos == row)
                self._expand_row_with_deltas(
                    int(row), mus[in_row], delta_sum[in_row], delta_count[in_row],
                    add_s, add_lv, add_h, add_sum, add_cnt,
                )
            self._delete_rows(np.unique(pos[coarse]))
        if add_s:
            self._insert_rows(add_s, add_lv, add_h, add_sum, add_cnt)

    def _expand_row_with_deltas(self, row, mus, dsum, dcnt, out_s, out_lv, out_h, out_sum, out_cnt):
        h0 = self.h[row].copy()
        sum0 = self.acc_sum[row].copy()
        cnt0 = int(self.acc_count[row])
        depth = self.depth

        def rec(s, lev, lo, hi):
            if lo == hi:
                out_s.append(s)
                out_lv.append(lev)
                out_h.append(h0)
                out_sum.append(sum0.copy())
                out_cnt.append(cnt0)
                return
            if lev == depth:
                out_s.append(s)
                out_lv.append(depth)
                out_h.append(h0)
                out_sum.append(sum0 + dsum[lo])
                out_cnt.append(cnt0 + int(dcnt[lo]))
                return
            child = 1 << (3 * (depth - lev - 1))
            for k in range(8):
                cs = s + k * child
                lo2 = lo + int(np.searchsorted(mus[lo:hi], cs, side="left"))
                hi2 = lo + int(np.searchsorted(mus[lo:hi], cs + child, side="left"))
                rec(cs, lev + 1, lo2, hi2)

        rec(int(self.starts[row]), int(self.levels[row]), 0, len(mus))

    # -- dense views ---------------------------------------------------------

    def _check_dense_guard(self) -> None:
        if self.config.total_cells * self.config.vector_length > DENSE_ENTRY_LIMIT:
            raise ResourceLimitError(
                f"dense grid of {self.config.total_cells} cells x "
                f"{self.config.vector_length} exceeds the materialization guard"
            )

    def dense_logodds_morton(self) -> np.ndarray:
        """(8^d, C+1) log-odds per finest cell in Morton order."""
        self._check_dense_guard()
        out = np.tile(self.prior, (self.config.total_cells, 1))
        if len(self.starts):
            sizes = self.sizes()
            rows = np.repeat(np.arange(len(self.starts)), sizes)
            offsets = np.arange(int(sizes.sum())) - np.repeat(
                np.cumsum(sizes) - sizes, sizes
            )
            cells = np.repeat(self.starts, sizes) + offsets
            out[cells] = self.h[rows]
        return out

    def dense_counts_morton(self) -> np.ndarray:
        """(8^d,) observation counts per finest cell in Morton order."""
        self._check_dense_guard()
        out = np.zeros(self.config.total_cells, dtype=np.int64)
        if len(self.starts):
            sizes = self.sizes()
            rows = np.repeat(np.arange(len(self.starts)), sizes)
            offsets = np.arange(int(sizes.sum())) - np.repeat(
                np.cumsum(sizes) - sizes, sizes
            )
            cells = np.repeat(self.starts, sizes) + offsets
            out[cells] = self.acc_count[rows]
        return out

    def to_dense_grid(self) -> np.ndarray:
        """(n, n, n, C+1) log-odds array indexed by cell (ix, iy, iz)."""
        lin = self.dense_logodds_morton()
        n = self.config.cells_per_axis
        out = np.empty_like(lin)
        out[_perm(self.depth)] = lin
        return out.reshape(n, n, n, self.config.vector_length)

    def wire_quantized(self) -> "SemanticOctree":
        """The tree as a receiver reconstructs it: 32-bit wire precision.

        Equals decode(encode(self)) bitwise; log-odds and the accumulator
        mean pass through float32, counts are preserved.
        """
        t = SemanticOctree(self.config, self.prior.copy(), self.tau_prune)
        h32 = self.h.astype(np.float32).astype(np.float64)
        cnt = self.acc_count.copy()
        safe = np.maximum(cnt, 1)[:, None]
        mean = np.where(cnt[:, None] > 0, self.acc_sum / safe, 0.0)
        mean32 = mean.astype(np.float32).astype(np.float64)
        t._set_table(self.starts.copy(), self.levels.copy(), h32, mean32 * cnt[:, None], cnt)
        return t

    def structurally_equal(self, other: "SemanticOctree") -> bool:
        return (
            self.config == other.config
            and np.array_equal(self.prior, other.prior)
            and np.array_equal(self.starts, other.starts)
            and np.array_equal(self.levels, other.levels)
            and np.array_equal(self.h, other.h)
            and np.array_equal(self.acc_sum, other.acc_sum)
            and np.array_equal(self.acc_count, other.acc_count)
        )


# -- common refinement --------------------------------------------------------


def _aligned_blocks_vec(seg_s: np.ndarray, seg_e: np.ndarray, depth: int):
    """Greedy decomposition of segments into maximal aligned power-of-8 blocks.

    Runs as vectorized passes, each emitting the leading block of every
    still-open segment; segment lengths stay below 2^52 so the float log2
    used to find the largest power of 8 is exact at the boundaries.
    """
    out_s, out_sz = [], []
    s = seg_s.astype(np.int64, copy=True)
    e = seg_e.astype(np.int64, copy=True)
    full = np.int64(1) << (3 * depth)
    while len(s):
        align = np.where(s > 0, s & -s, full)
        cap = np.minimum(align, e - s)
        k = np.log2(cap.astype(np.float64)).astype(np.int64) // 3
        size = np.int64(1) << (3 * k)
        out_s.append(s.copy())
        out_sz.append(size)
        s = s + size
        keep = s < e
        if not keep.all():
            s, e = s[keep], e[keep]
    return np.concatenate(out_s), np.concatenate(out_sz)


def refinement_regions(trees: list[SemanticOctree]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coarsest partition refining all trees, as aligned cubes.

    Returns (starts, levels, index matrix) where index[k, r] is the covering
    leaf row in tree k or -1 when that subtree is absent.  Regions tile the
    full bounding box exactly once, in Morton order.
    """
    cfg = trees[0].config
    for t in trees[1:]:
        if t.config != cfg:
            raise ConfigMismatchError("maps with different configurations")
    total = cfg.total_cells
    depth = cfg.depth
    bounds = [np.array([0, total], dtype=np.int64)]
    for t in trees:
        if len(t.starts):
            bounds.append(t.starts)
            bounds.append(t.starts + t.sizes())
    cuts = np.unique(np.concatenate(bounds))
    seg_s = cuts[:-1]
    seg_e = cuts[1:]

    # fast path: segments that are single aligned cubes already
    length = seg_e - seg_s
    pow8 = (length & (length - 1)) == 0
    exp_ok = (np.log2(length).astype(np.int64) % 3) == 0
    aligned = seg_s % np.maximum(length, 1) == 0
    simple = pow8 & exp_ok & aligned
    starts = seg_s[simple]
    sizes = length[simple]
    if not simple.all():
        extra_s, extra_sz = _aligned_blocks_vec(seg_s[~simple], seg_e[~simple], depth)
        starts = np.concatenate([starts, extra_s])
        sizes = np.concatenate([sizes, extra_sz])
        order = np.argsort(starts, kind="stable")
        starts = starts[order]
        sizes = sizes[order]
    levels = depth - (np.round(np.log2(sizes)).astype(np.int64) // 3)

    index = np.empty((len(trees), len(starts)), dtype=np.int64)
    for k, t in enumerate(trees):
        if len(t.starts) == 0:
            index[k] = -1
            continue
        pos = np.searchsorted(t.starts, starts, side="right") - 1
        tsz = t.sizes()
        cover = pos >= 0
        cover[cover] &= t.starts[pos[cover]] + tsz[pos[cover]] > starts[cover]
        index[k] = np.where(cover, pos, -1)
    return starts, levels, index


def gather_logodds(tree: SemanticOctree, idx: np.ndarray) -> np.ndarray:
    """Per-region log-odds rows; absent regions read the prior."""
    if tree.leaf_count() == 0:
        return np.tile(tree.prior, (len(idx), 1))
    out = tree.h[np.maximum(idx, 0)].copy()
    out[idx < 0] = tree.prior
    return out


def gather_accumulators(tree: SemanticOctree, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-region accumulator (sum, count) rows; absent regions are empty."""
    width = tree.config.vector_length
    if tree.leaf_count() == 0:
        return np.zeros((len(idx), width)), np.zeros(len(idx), dtype=np.int64)
    sums = tree.acc_sum[np.maximum(idx, 0)].copy()
    counts = tree.acc_count[np.maximum(idx, 0)].copy()
    absent = idx < 0
    sums[absent] = 0.0
    counts[absent] = 0
    return sums, counts


def common_refinement(
    a: SemanticOctree, b: SemanticOctree
) -> Iterator[tuple[NodeKey, np.ndarray, np.ndarray, int]]:
    """Yield (key, h_a, h_b, cell_count) over the common refinement of two trees."""
    starts, levels, index = refinement_regions([a, b])
    ha = gather_logodds(a, index[0])
    hb = gather_logodds(b, index[1])
    depth = a.config.depth
    for r in range(len(starts)):
        size = 1 << (3 * (depth - int(levels[r])))
        key = NodeKey(int(levels[r]), int(starts[r]) // size)
        yield key, ha[r], hb[r], size
