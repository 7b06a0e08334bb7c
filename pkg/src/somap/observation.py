"""Ray observations, the inverse observation model, and per-cell evidence.

A sensor ray reports a range and a semantic category.  Inverting the
observation per cell gives a categorical distribution: the terminal cell
gets most of its mass on the observed category, traversed cells get most of
theirs on free space.  Each map cell keeps a running geometric average of
these distributions over time, stored in log space as a sum and a count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .grid import MapConfig
from .logodds import log_softmax

CellIndex = tuple[int, int, int]


@dataclass(frozen=True)
class RayObservation:
    """One range+category return along a ray.

    direction must be unit-norm.  When max_range_hit is set, no surface was
    found within the sensor range and category is meaningless.
    """

    origin: tuple[float, float, float]
    direction: tuple[float, float, float]
    range_m: float
    category: int = 0
    max_range_hit: bool = False

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(float(d @ d) - 1.0) > 1e-9:
            raise InvalidInputError(f"ray direction {self.direction} is not unit-norm")
        if self.range_m < 0 or not np.isfinite(self.range_m):
            raise InvalidInputError(f"ray range must be finite and >= 0, got {self.range_m}")


@dataclass(frozen=True)
class InverseModelParams:
    """Hit/free categorical inverse model.

    p_hit is the mass on the observed class at the terminal cell, p_free the
    mass on free space at traversed cells; the remaining mass is split
    uniformly over the other C classes.  Values must exceed the uninformative
    level 1/(C+1) for the class count in use.
    """

    p_hit: float = 0.7
    p_free: float = 0.7

    def __post_init__(self):
        for name, v in (("p_hit", self.p_hit), ("p_free", self.p_free)):
            if not 0.0 < v < 1.0:
                raise InvalidInputError(f"{name} must be in (0, 1), got {v}")

    def _check_informative(self, p: float, num_classes: int) -> None:
        if p <= 1.0 / (num_classes + 1):
            raise InvalidInputError(
                f"probability {p} not informative for {num_classes} classes"
            )

    def hit_distribution(self, category: int, num_classes: int) -> np.ndarray:
        self._check_informative(self.p_hit, num_classes)
        if not 0 <= category <= num_classes:
            raise InvalidInputError(f"category {category} out of range")
        p = np.full(num_classes + 1, (1.0 - self.p_hit) / num_classes)
        p[category] = self.p_hit
        return p

    def free_distribution(self, num_classes: int) -> np.ndarray:
        self._check_informative(self.p_free, num_classes)
        p = np.full(num_classes + 1, (1.0 - self.p_free) / num_classes)
        p[0] = self.p_free
        return p


@dataclass
class LogQAccumulator:
    """Running sum of log inverse-model probabilities plus an observation count.

    The geometric mean of the accumulated distributions is exp(sum_log/count);
    a count of zero marks the cell as unobserved.
    """

    sum_log: np.ndarray
    count: int = 0

    @classmethod
    def empty(cls, num_classes: int) -> "LogQAccumulator":
        return cls(sum_log=np.zeros(num_classes + 1), count=0)

    def accumulate(self, p) -> "LogQAccumulator":
        """Return a new accumulator including distribution p."""
        p = np.asarray(p, dtype=np.float64)
        if p.shape != self.sum_log.shape:
            raise InvalidInputError(f"distribution length {p.shape} != {self.sum_log.shape}")
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise InvalidInputError("distribution must be finite and strictly positive")
        return LogQAccumulator(sum_log=self.sum_log + np.log(p), count=self.count + 1)

    def log_q(self, prior) -> np.ndarray:
        """Mean log probability; unobserved cells fall back to the prior.

        With no observations this returns the prior's log-softmax, which makes
        the prior the fixed point of the gradient update for untouched cells.
        """
        if self.count > 0:
            return self.sum_log / self.count
        return log_softmax(np.asarray(prior, dtype=np.float64))

    def copy(self) -> "LogQAccumulator":
        return LogQAccumulator(sum_log=self.sum_log.copy(), count=self.count)


def traverse_ray(obs: RayObservation, config: MapConfig) -> list[CellIndex]:
    """Ordered finest-resolution cells intersected by a ray segment.

    Incremental voxel stepping from the origin cell; a boundary crossing at
    exactly the segment end does not enter the next cell.  The sequence is
    truncated where the ray leaves the bounding box.
    """
    if not config.contains_point(obs.origin):
        raise InvalidInputError(f"ray origin {obs.origin} outside map bounding box")
    n = config.cells_per_axis
    size = config.cell_size
    ox = (obs.origin[0] - config.origin[0]) / size
    oy = (obs.origin[1] - config.origin[1]) / size
    oz = (obs.origin[2] - config.origin[2]) / size
    pos = (ox, oy, oz)
    cell = [min(int(ox), n - 1), min(int(oy), n - 1), min(int(oz), n - 1)]
    limit = obs.range_m / size  # traversal in cell units

    step = [0, 0, 0]
    t_max = [np.inf, np.inf, np.inf]
    t_delta = [np.inf, np.inf, np.inf]
    for a in range(3):
        d = obs.direction[a]
        if d > 0:
            step[a] = 1
            t_max[a] = (cell[a] + 1.0 - pos[a]) / d
            t_delta[a] = 1.0 / d
        elif d < 0:
            step[a] = -1
            t_max[a] = (cell[a] - pos[a]) / d
            t_delta[a] = -1.0 / d

    cells: list[CellIndex] = [tuple(cell)]
    while True:
        a = 0
        if t_max[1] < t_max[a]:
            a = 1
        if t_max[2] < t_max[a]:
            a = 2
        if t_max[a] >= limit:
            break
        cell[a] += step[a]
        if not 0 <= cell[a] < n:
            break
        t_max[a] += t_delta[a]
        cells.append((cell[0], cell[1], cell[2]))
    return cells


def inverse_observation(
    obs: RayObservation,
    cell: CellIndex,
    params: InverseModelParams,
    config: MapConfig,
) -> np.ndarray:
    """Per-cell class distribution implied by one ray observation.

    The terminal cell of a surface hit gets the hit distribution for the
    observed category; every earlier cell (and every cell of a max-range
    ray) gets the free-space distribution.
    """
    cells = traverse_ray(obs, config)
    cell = tuple(int(v) for v in cell)
    try:
        idx = cells.index(cell)
    except ValueError:
        raise InvalidInputError(f"cell {cell} is not on the ray") from None
    c = config.num_classes
    if obs.max_range_hit or idx < len(cells) - 1:
        return params.free_distribution(c)
    return params.hit_distribution(obs.category, c)
