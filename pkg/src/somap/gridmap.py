"""Uniform-resolution dense map backend.

Mirrors the octree map cell for cell so that an entire scenario can be run
on flat arrays and compared bitwise against the octree pipeline: both feed
the same batched update kernel, the same observation deltas, and the same
float32 wire quantization.  Rows are ordered by finest-level Morton code.

The prior must survive a float32 round trip unchanged (the zero prior
does), because an octree keeps unobserved space at full precision while a
dense snapshot quantizes every cell.
"""

from __future__ import annotations

import numpy as np

from . import consensus
from .errors import InvalidInputError, ResourceLimitError
from .grid import MapConfig
from .octree import DENSE_ENTRY_LIMIT


class DenseMap:
    """Flat per-cell map state: log-odds plus log-q accumulators."""

    def __init__(self, config: MapConfig, prior=None, tau_prune: float = 0.0):
        if config.total_cells * config.vector_length > DENSE_ENTRY_LIMIT:
            raise ResourceLimitError("grid too large for the dense backend")
        width = config.vector_length
        if prior is None:
            prior = np.zeros(width)
        prior = np.asarray(prior, dtype=np.float64)
        if not np.array_equal(prior, prior.astype(np.float32).astype(np.float64)):
            raise InvalidInputError("dense backend requires a float32-exact prior")
        self.config = config
        self.prior = prior
        self.tau_prune = float(tau_prune)
        self.h = np.tile(prior, (config.total_cells, 1))
        self.acc_sum = np.zeros((config.total_cells, width))
        self.acc_count = np.zeros(config.total_cells, dtype=np.int64)

    def copy(self) -> "DenseMap":
        m = DenseMap.__new__(DenseMap)
        m.config = self.config
        m.prior = self.prior.copy()
        m.tau_prune = self.tau_prune
        m.h = self.h.copy()
        m.acc_sum = self.acc_sum.copy()
        m.acc_count = self.acc_count.copy()
        return m

    def apply_observation_deltas(self, mus, delta_sum, delta_count) -> None:
        mus = np.asarray(mus, dtype=np.int64)
        if len(mus) == 0:
            return
        self.acc_sum[mus] += np.asarray(delta_sum, dtype=np.float64)
        self.acc_count[mus] += np.asarray(delta_count, dtype=np.int64)

    def prune(self) -> int:
        return 0  # dense maps have nothing to prune

    def iterate(self, neighbor_maps, epsilon: float, gamma: float) -> float:
        logq = consensus.batch_log_q(self.acc_sum, self.acc_count, self.prior)
        neighbor_rows = [(w, m.h) for w, m in neighbor_maps]
        h_new = consensus.batch_update(self.h, neighbor_rows, epsilon, logq, gamma)
        norm = float(np.max(np.abs(h_new - self.h)))
        self.h = h_new
        return norm

    def wire_quantized(self) -> "DenseMap":
        m = self.copy()
        m.h = self.h.astype(np.float32).astype(np.float64)
        safe = np.maximum(self.acc_count, 1)[:, None]
        mean = np.where(self.acc_count[:, None] > 0, self.acc_sum / safe, 0.0)
        m.acc_sum = mean.astype(np.float32).astype(np.float64) * self.acc_count[:, None]
        return m

    def dense_logodds_morton(self) -> np.ndarray:
        return self.h

    def dense_counts_morton(self) -> np.ndarray:
        return self.acc_count

    def leaf_count(self) -> int:
        return self.config.total_cells

    def payload_bytes(self) -> int:
        from .netsim import HEADER_SIZE

        return HEADER_SIZE + self.config.total_cells * self.config.vector_length * 4
