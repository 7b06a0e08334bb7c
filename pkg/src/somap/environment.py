"""Synthetic labeled environments and the ray sensor simulator.

Environments are dense ground-truth label grids over the map config: a flat
terrain layer at the bottom, axis-aligned boxes of object classes resting
on it, free space everywhere else.  The sensor casts a frustum of rays from
a pose, stops each at the first non-free cell, and reports a noisy range
plus a (possibly misclassified) category.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GenerationError, InvalidInputError
from .grid import MapConfig
from .observation import RayObservation

ENV_STREAM = 0  # Philox stream ids: environment generation
SENSOR_STREAM = 1  # sensor noise


def make_rng(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator; all scenario randomness flows from (seed, stream)."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


@dataclass(frozen=True)
class EnvironmentSpec:
    """Parameters for procedural generation.

    Box sizes are in cells; boxes rest on the terrain layer and must not
    overlap each other.
    """

    terrain_class: int = 1
    terrain_thickness: int = 1
    box_classes: tuple[int, ...] = (2,)
    num_boxes: int = 8
    box_min_cells: int = 2
    box_max_cells: int = 5
    class_names: tuple[str, ...] = ()
    max_retries: int = 100


@dataclass(frozen=True)
class PlacedBox:
    category: int
    lo: tuple[int, int, int]  # inclusive cell corner
    hi: tuple[int, int, int]  # exclusive cell corner

    @property
    def volume(self) -> int:
        return int(np.prod(np.array(self.hi) - np.array(self.lo)))


@dataclass
class Environment:
    """Ground-truth labels per finest cell, plus the placement log."""

    config: MapConfig
    labels: np.ndarray  # (n, n, n) int16, 0 = free space
    class_names: tuple[str, ...]
    boxes: list[PlacedBox] = field(default_factory=list)


def generate_environment(config: MapConfig, spec: EnvironmentSpec, seed: int) -> Environment:
    """Deterministic environment from (config, spec, seed)."""
    c = config.num_classes
    if spec.terrain_class > c or any(b > c for b in spec.box_classes):
        raise InvalidInputError("environment classes exceed the map's class count")
    if not 1 <= spec.box_min_cells <= spec.box_max_cells:
        raise InvalidInputError("bad box size range")
    n = config.cells_per_axis
    if spec.terrain_thickness >= n:
        raise InvalidInputError("terrain layer fills the whole map")
    rng = make_rng(seed, ENV_STREAM)
    labels = np.zeros((n, n, n), dtype=np.int16)
    labels[:, :, : spec.terrain_thickness] = spec.terrain_class

    boxes: list[PlacedBox] = []
    z0 = spec.terrain_thickness
    for b in range(spec.num_boxes):
        category = int(spec.box_classes[int(rng.integers(len(spec.box_classes)))])
        placed = False
        for _ in range(spec.max_retries):
            sx, sy, sz = (int(v) for v in rng.integers(spec.box_min_cells, spec.box_max_cells + 1, 3))
            if sx > n or sy > n or z0 + sz > n:
                continue
            x = int(rng.integers(0, n - sx + 1))
            y = int(rng.integers(0, n - sy + 1))
            lo = (x, y, z0)
            hi = (x + sx, y + sy, z0 + sz)
            if any(
                lo[0] < q.hi[0] and q.lo[0] < hi[0]
                and lo[1] < q.hi[1] and q.lo[1] < hi[1]
                and lo[2] < q.hi[2] and q.lo[2] < hi[2]
                for q in boxes
            ):
                continue
            labels[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = category
            boxes.append(PlacedBox(category, lo, hi))
            placed = True
            break
        if not placed:
            raise GenerationError(f"could not place box {b + 1}/{spec.num_boxes} without overlap")

    names = spec.class_names or tuple(
        ["free"] + [f"class{i}" for i in range(1, c + 1)]
    )
    if len(names) != c + 1:
        raise InvalidInputError(f"need {c + 1} class names, got {len(names)}")
    return Environment(config=config, labels=labels, class_names=tuple(names), boxes=boxes)


def save_environment(env: Environment, path) -> None:
    """Write labels and grid metadata to a .npz file (deterministic bytes)."""
    boxes = np.array(
        [[b.category, *b.lo, *b.hi] for b in env.boxes], dtype=np.int64
    ).reshape(-1, 7)
    np.savez(
        path,
        labels=env.labels,
        origin=np.asarray(env.config.origin, dtype=np.float64),
        cell_size=np.float64(env.config.cell_size),
        depth=np.int64(env.config.depth),
        num_classes=np.int64(env.config.num_classes),
        class_names=np.array(env.class_names),
        boxes=boxes,
    )


def load_environment(path) -> Environment:
    with np.load(path, allow_pickle=False) as data:
        config = MapConfig(
            origin=tuple(float(v) for v in data["origin"]),
            cell_size=float(data["cell_size"]),
            depth=int(data["depth"]),
            num_classes=int(data["num_classes"]),
        )
        boxes = [
            PlacedBox(int(r[0]), tuple(int(v) for v in r[1:4]), tuple(int(v) for v in r[4:7]))
            for r in data["boxes"]
        ]
        return Environment(
            config=config,
            labels=data["labels"].astype(np.int16),
            class_names=tuple(str(s) for s in data["class_names"]),
            boxes=boxes,
        )


@dataclass(frozen=True)
class SensorSpec:
    """Frustum geometry and noise of the range/category sensor."""

    n_az: int = 9
    n_el: int = 5
    fov_h_deg: float = 90.0
    fov_v_deg: float = 40.0
    max_range: float = 2.0
    range_sigma: float = 0.02
    misclass_prob: float = 0.05
    pitch_deg: float = 0.0

    def __post_init__(self):
        if self.n_az < 1 or self.n_el < 1 or self.max_range <= 0:
            raise InvalidInputError("sensor needs at least one ray and a positive range")
        if self.range_sigma < 0 or not 0 <= self.misclass_prob <= 1:
            raise InvalidInputError("bad sensor noise parameters")

    @property
    def rays_per_scan(self) -> int:
        return self.n_az * self.n_el

    def ray_directions(self, yaw: float) -> np.ndarray:
        """(n_el * n_az, 3) unit directions, elevation-major then azimuth."""
        az = np.deg2rad(np.linspace(-self.fov_h_deg / 2, self.fov_h_deg / 2, self.n_az)) + yaw
        el = np.deg2rad(
            np.linspace(-self.fov_v_deg / 2, self.fov_v_deg / 2, self.n_el) + self.pitch_deg
        )
        azg, elg = np.meshgrid(az, el)
        dirs = np.stack(
            [np.cos(elg) * np.cos(azg), np.cos(elg) * np.sin(azg), np.sin(elg)], axis=-1
        ).reshape(-1, 3)
        return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


@dataclass(frozen=True)
class Pose:
    position: tuple[float, float, float]
    yaw: float = 0.0


def _cast_ray(env: Environment, origin, direction, max_range: float):
    """First non-free cell along a ray: (cell, t_entry, t_exit) or None.

    Distances are in meters from the origin; the origin cell itself counts
    if it is non-free (t_entry 0).
    """
    cfg = env.config
    n = cfg.cells_per_axis
    size = cfg.cell_size
    pos = [(origin[a] - cfg.origin[a]) / size for a in range(3)]
    cell = [min(int(pos[a]), n - 1) for a in range(3)]
    limit = max_range / size

    step = [0, 0, 0]
    t_max = [np.inf, np.inf, np.inf]
    t_delta = [np.inf, np.inf, np.inf]
    for a in range(3):
        d = direction[a]
        if d > 0:
            step[a] = 1
            t_max[a] = (cell[a] + 1.0 - pos[a]) / d
            t_delta[a] = 1.0 / d
        elif d < 0:
            step[a] = -1
            t_max[a] = (cell[a] - pos[a]) / d
            t_delta[a] = -1.0 / d

    t_entry = 0.0
    labels = env.labels
    while True:
        if labels[cell[0], cell[1], cell[2]] != 0:
            t_exit = min(t_max[0], t_max[1], t_max[2], limit)
            return (cell[0], cell[1], cell[2]), t_entry * size, t_exit * size
        a = 0
        if t_max[1] < t_max[a]:
            a = 1
        if t_max[2] < t_max[a]:
            a = 2
        if t_max[a] >= limit:
            return None
        t_entry = t_max[a]
        cell[a] += step[a]
        if not 0 <= cell[a] < n:
            return None
        t_max[a] += t_delta[a]


def simulate_scan(
    env: Environment, pose: Pose, sensor: SensorSpec, rng: np.random.Generator
) -> list[RayObservation]:
    """One frustum scan from a pose; rays are emitted in a fixed order.

    The true range is the midpoint of the ray segment inside the hit cell,
    which keeps the reported endpoint strictly interior to that cell.  Range
    noise is clamped into [0, max_range]; misclassification replaces the
    category with a uniform draw over the other object classes.
    """
    if not env.config.contains_point(pose.position):
        raise InvalidInputError(f"scan pose {pose.position} outside map bounds")
    c = env.config.num_classes
    observations = []
    for direction in sensor.ray_directions(pose.yaw):
        hit = _cast_ray(env, pose.position, direction, sensor.max_range)
        if hit is None:
            observations.append(
                RayObservation(
                    origin=tuple(pose.position),
                    direction=tuple(direction),
                    range_m=sensor.max_range,
                    max_range_hit=True,
                )
            )
            continue
        cell, t_entry, t_exit = hit
        true_range = 0.5 * (t_entry + t_exit)
        rng_range = true_range
        if sensor.range_sigma > 0:
            rng_range = true_range + sensor.range_sigma * float(rng.standard_normal())
            rng_range = min(max(rng_range, 0.0), sensor.max_range)
        category = int(env.labels[cell])
        if sensor.misclass_prob > 0 and c >= 2 and float(rng.random()) < sensor.misclass_prob:
            others = [k for k in range(1, c + 1) if k != category]
            category = others[int(rng.integers(len(others)))]
        observations.append(
            RayObservation(
                origin=tuple(pose.position),
                direction=tuple(direction),
                range_m=rng_range,
                category=category,
            )
        )
    return observations
