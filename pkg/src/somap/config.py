"""Scenario files: schema, parsing, and the packaged default scenario.

Scenarios are TOML with one section per concern and one section per robot:

    [scenario]    seed, total_ticks, observe_ticks, publish_period, tau_prune
    [map]         origin, cell_size, depth, num_classes
    [environment] procedural spec (or file = "env.npz")
    [sensor]      frustum + noise
    [model]       p_hit, p_free
    [graph]       topology, weight_rule (or edges for custom)
    [iteration]   epsilon, gamma, gamma_schedule, k_max, update_tol
    [robot.N]     waypoints + speed, or pattern = "lawnmower" + bounds

Robots observe while tick <= observe_ticks and then keep exchanging maps in
a consensus-only tail until total_ticks.  See README for the full schema.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .consensus import IterationParams, RobotGraph
from .environment import EnvironmentSpec, SensorSpec
from .errors import InvalidInputError
from .grid import MapConfig
from .observation import InverseModelParams


@dataclass(frozen=True)
class RobotSpec:
    """Scripted trajectory: cyclic waypoints followed at constant speed (m/tick)."""

    waypoints: tuple[tuple[float, float, float], ...]
    speed: float = 0.2

    def __post_init__(self):
        if not self.waypoints:
            raise InvalidInputError("robot needs at least one waypoint")
        if self.speed < 0:
            raise InvalidInputError("speed must be >= 0")


@dataclass(frozen=True)
class GraphSpec:
    topology: str = "complete"
    weight_rule: str = "metropolis"
    edges: tuple[tuple[int, int], ...] = ()

    def build(self, n: int) -> RobotGraph:
        t = self.topology
        if t == "complete":
            return RobotGraph.complete(n, self.weight_rule)
        if t == "ring":
            return RobotGraph.ring(n, self.weight_rule)
        if t == "line":
            return RobotGraph.line(n, self.weight_rule)
        if t == "star":
            return RobotGraph.star(n, self.weight_rule)
        if t == "edgeless":
            return RobotGraph.edgeless(n)
        if t == "custom":
            return RobotGraph.from_edges(n, self.edges, self.weight_rule)
        raise InvalidInputError(f"unknown graph topology {t!r}")


@dataclass(frozen=True)
class Scenario:
    seed: int
    map_config: MapConfig
    sensor: SensorSpec
    model: InverseModelParams
    graph_spec: GraphSpec
    iteration: IterationParams
    robots: tuple[RobotSpec, ...]
    total_ticks: int
    observe_ticks: int
    publish_period: int = 1
    tau_prune: float = 0.0
    env_spec: EnvironmentSpec | None = None
    env_file: str | None = None

    def __post_init__(self):
        if self.publish_period < 1:
            raise InvalidInputError("publish_period must be >= 1")
        if not 0 <= self.observe_ticks <= self.total_ticks:
            raise InvalidInputError("need 0 <= observe_ticks <= total_ticks")
        if not self.robots:
            raise InvalidInputError("scenario needs at least one robot")
        if self.env_spec is None and self.env_file is None:
            raise InvalidInputError("scenario needs [environment] parameters or a file")


def lawnmower_waypoints(
    x_min: float, x_max: float, y_min: float, y_max: float, z: float, lanes: int
) -> tuple[tuple[float, float, float], ...]:
    """Serpentine sweep over a rectangle at fixed height; loops via the runner."""
    if lanes < 2 or x_min >= x_max or y_min >= y_max:
        raise InvalidInputError("lawnmower needs lanes >= 2 and a proper rectangle")
    ys = [y_min + (y_max - y_min) * k / (lanes - 1) for k in range(lanes)]
    wps = []
    for k, y in enumerate(ys):
        xs = (x_min, x_max) if k % 2 == 0 else (x_max, x_min)
        wps.append((xs[0], y, z))
        wps.append((xs[1], y, z))
    return tuple(wps)


def _robot_spec(table: dict) -> RobotSpec:
    speed = float(table.get("speed", 0.2))
    if "pattern" in table:
        if table["pattern"] != "lawnmower":
            raise InvalidInputError(f"unknown trajectory pattern {table['pattern']!r}")
        wps = lawnmower_waypoints(
            float(table["x_min"]), float(table["x_max"]),
            float(table["y_min"]), float(table["y_max"]),
            float(table["z"]), int(table.get("lanes", 4)),
        )
        return RobotSpec(waypoints=wps, speed=speed)
    wps = tuple(tuple(float(v) for v in w) for w in table["waypoints"])
    return RobotSpec(waypoints=wps, speed=speed)


def scenario_from_dict(raw: dict) -> Scenario:
    try:
        sc = raw["scenario"]
        mp = raw["map"]
    except KeyError as e:
        raise InvalidInputError(f"scenario file missing section {e}") from None

    map_config = MapConfig(
        origin=tuple(float(v) for v in mp.get("origin", (0.0, 0.0, 0.0))),
        cell_size=float(mp.get("cell_size", 1.0)),
        depth=int(mp["depth"]),
        num_classes=int(mp["num_classes"]),
    )
    env = raw.get("environment", {})
    env_file = env.get("file")
    env_spec = None
    if env_file is None:
        env_spec = EnvironmentSpec(
            terrain_class=int(env.get("terrain_class", 1)),
            terrain_thickness=int(env.get("terrain_thickness", 1)),
            box_classes=tuple(int(v) for v in env.get("box_classes", (2,))),
            num_boxes=int(env.get("num_boxes", 8)),
            box_min_cells=int(env.get("box_min_cells", 2)),
            box_max_cells=int(env.get("box_max_cells", 5)),
            class_names=tuple(env.get("class_names", ())),
        )
    sensor_t = raw.get("sensor", {})
    sensor = SensorSpec(
        n_az=int(sensor_t.get("n_az", 9)),
        n_el=int(sensor_t.get("n_el", 5)),
        fov_h_deg=float(sensor_t.get("fov_h_deg", 90.0)),
        fov_v_deg=float(sensor_t.get("fov_v_deg", 40.0)),
        max_range=float(sensor_t.get("max_range", 2.0)),
        range_sigma=float(sensor_t.get("range_sigma", 0.02)),
        misclass_prob=float(sensor_t.get("misclass_prob", 0.05)),
        pitch_deg=float(sensor_t.get("pitch_deg", 0.0)),
    )
    model_t = raw.get("model", {})
    model = InverseModelParams(
        p_hit=float(model_t.get("p_hit", 0.7)),
        p_free=float(model_t.get("p_free", 0.7)),
    )
    graph_t = raw.get("graph", {})
    graph_spec = GraphSpec(
        topology=graph_t.get("topology", "complete"),
        weight_rule=graph_t.get("weight_rule", "metropolis"),
        edges=tuple((int(i), int(j)) for i, j in graph_t.get("edges", ())),
    )
    iter_t = raw.get("iteration", {})
    iteration = IterationParams(
        epsilon=float(iter_t.get("epsilon", 0.25)),
        gamma=float(iter_t.get("gamma", 1.0)),
        gamma_schedule=iter_t.get("gamma_schedule", "constant"),
        k_max=int(iter_t.get("k_max", 100)),
        update_tol=float(iter_t.get("update_tol", 1e-3)),
    )
    robot_t = raw.get("robot", {})
    if not robot_t:
        raise InvalidInputError("scenario file has no [robot.N] sections")
    robots = tuple(_robot_spec(robot_t[key]) for key in sorted(robot_t, key=int))

    return Scenario(
        seed=int(sc["seed"]),
        map_config=map_config,
        sensor=sensor,
        model=model,
        graph_spec=graph_spec,
        iteration=iteration,
        robots=robots,
        total_ticks=int(sc["total_ticks"]),
        observe_ticks=int(sc.get("observe_ticks", sc["total_ticks"])),
        publish_period=int(sc.get("publish_period", 1)),
        tau_prune=float(sc.get("tau_prune", 0.0)),
        env_spec=env_spec,
        env_file=env_file,
    )


def load_scenario(path) -> Scenario:
    """Load a scenario from a TOML file; "@default" loads the packaged one."""
    if str(path) == "@default":
        return default_scenario()
    with open(path, "rb") as f:
        return scenario_from_dict(tomllib.load(f))


def default_scenario() -> Scenario:
    """The desk-scale reference scenario shipped with the package."""
    data = resources.files("somap").joinpath("data/default.toml").read_bytes()
    return scenario_from_dict(tomllib.loads(data.decode()))


def load_environment_request(path) -> tuple[MapConfig, EnvironmentSpec]:
    """Parse an environment-generation spec file ([map] + [environment])."""
    with open(path, "rb") as f:
        raw = tomllib.load(f)
    mp = raw["map"]
    map_config = MapConfig(
        origin=tuple(float(v) for v in mp.get("origin", (0.0, 0.0, 0.0))),
        cell_size=float(mp.get("cell_size", 1.0)),
        depth=int(mp["depth"]),
        num_classes=int(mp["num_classes"]),
    )
    env = raw.get("environment", {})
    spec = EnvironmentSpec(
        terrain_class=int(env.get("terrain_class", 1)),
        terrain_thickness=int(env.get("terrain_thickness", 1)),
        box_classes=tuple(int(v) for v in env.get("box_classes", (2,))),
        num_boxes=int(env.get("num_boxes", 8)),
        box_min_cells=int(env.get("box_min_cells", 2)),
        box_max_cells=int(env.get("box_max_cells", 5)),
        class_names=tuple(env.get("class_names", ())),
    )
    return map_config, spec
