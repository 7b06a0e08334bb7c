"""Scenario runner: the observe / publish / iterate loop plus metrics output.

Each simulated second every robot moves along its scripted trajectory,
scans, and folds the scan into its own map; on publish ticks the maps are
exchanged over the graph and every robot runs one consensus-gradient
iteration against the received snapshots.  After observe_ticks the sensors
stop and the remaining ticks form a consensus-only tail (gradient step size
zero) that drives the local maps to agreement; once the update norm falls
below update_tol the iteration has converged and the maps freeze.

Everything is deterministic from the scenario seed: one counter-based
generator per purpose, robots processed in id order, stable CSV formatting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import consensus, netsim
from .config import Scenario
from .environment import (
    SENSOR_STREAM,
    Environment,
    Pose,
    generate_environment,
    load_environment,
    make_rng,
    simulate_scan,
)
from .errors import InvalidInputError
from .grid import MapConfig, morton_encode, morton_order_permutation
from .gridmap import DenseMap
from .observation import InverseModelParams, traverse_ray
from .octree import SemanticOctree


@dataclass(frozen=True)
class MetricsRecord:
    """One row per publish tick: consensus residuals, payload sizes, map quality."""

    tick: int
    iteration: int
    residual_unweighted: float
    residual_weighted: float
    grid_bytes: int
    octree_bytes: tuple[int, ...]
    leaf_counts: tuple[int, ...]
    accuracies: tuple[float, ...]
    update_norms: tuple[float, ...]

    @property
    def octree_bytes_mean(self) -> float:
        return float(np.mean(self.octree_bytes))

    @property
    def octree_bytes_std(self) -> float:
        return float(np.std(self.octree_bytes))


@dataclass
class RunResult:
    scenario: Scenario
    records: list[MetricsRecord]
    maps: list
    env: Environment
    graph: "consensus.RobotGraph"


def build_poses(spec, total_ticks: int, config: MapConfig) -> list[Pose]:
    """Tick-indexed poses along cyclic waypoints; yaw follows the motion."""
    wps = [np.asarray(w, dtype=np.float64) for w in spec.waypoints]
    for w in wps:
        if not config.contains_point(w):
            raise InvalidInputError(f"waypoint {tuple(w)} outside map bounds")
    pos = wps[0].copy()
    target = 1 % len(wps)
    yaw = 0.0
    if len(wps) > 1:
        d = wps[1] - wps[0]
        if d[0] or d[1]:
            yaw = float(np.arctan2(d[1], d[0]))
    poses = []
    for _ in range(total_ticks):
        remaining = spec.speed
        hops = 0
        while remaining > 0 and len(wps) > 1 and hops < 2 * len(wps):
            d = wps[target] - pos
            dist = float(np.linalg.norm(d))
            if dist <= 1e-12:
                target = (target + 1) % len(wps)
                hops += 1
                continue
            if d[0] or d[1]:
                yaw = float(np.arctan2(d[1], d[0]))
            if dist <= remaining:
                pos = wps[target].copy()
                remaining -= dist
                target = (target + 1) % len(wps)
                hops += 1
            else:
                pos = pos + d * (remaining / dist)
                remaining = 0.0
        poses.append(Pose(position=tuple(pos), yaw=yaw))
    return poses


def observation_deltas(observations, model: InverseModelParams, config: MapConfig):
    """Fold one tick of scans into per-cell accumulator deltas.

    Returns (sorted unique Morton cells, (k, C+1) log-probability sums,
    (k,) observation counts).  Both map backends consume these arrays
    unchanged, which keeps their accumulator arithmetic identical.
    """
    c = config.num_classes
    table = np.stack(
        [np.log(model.free_distribution(c))]
        + [np.log(model.hit_distribution(cat, c)) for cat in range(1, c + 1)]
    )
    all_cells: list = []
    hit_marks: list[tuple[int, int]] = []  # (index of terminal cell, category)
    for obs in observations:
        cells = traverse_ray(obs, config)
        all_cells.extend(cells)
        if not obs.max_range_hit and 1 <= obs.category <= c:
            ox, oy, oz = obs.origin
            dx, dy, dz = obs.direction
            end = (ox + obs.range_m * dx, oy + obs.range_m * dy, oz + obs.range_m * dz)
            if config.contains_point(end):
                hit_marks.append((len(all_cells) - 1, obs.category))
    if not all_cells:
        width = config.vector_length
        return np.empty(0, dtype=np.int64), np.empty((0, width)), np.empty(0, dtype=np.int64)
    arr = np.asarray(all_cells, dtype=np.int64)
    mu_all = np.atleast_1d(morton_encode(arr[:, 0], arr[:, 1], arr[:, 2]))
    kind_all = np.zeros(len(mu_all), dtype=np.int64)
    for pos, cat in hit_marks:
        kind_all[pos] = cat
    uniq, inverse = np.unique(mu_all, return_inverse=True)
    dsum = np.zeros((len(uniq), config.vector_length))
    np.add.at(dsum, inverse, table[kind_all])
    dcnt = np.bincount(inverse, minlength=len(uniq)).astype(np.int64)
    return uniq, dsum, dcnt


def labels_in_morton_order(env: Environment) -> np.ndarray:
    """Ground-truth class per finest cell, ordered by Morton code."""
    perm = morton_order_permutation(env.config.depth)
    return env.labels.reshape(-1)[perm]


def compute_metrics(
    tick: int,
    iteration: int,
    maps,
    graph,
    labels_morton: np.ndarray,
    octree_bytes,
    grid_bytes: int,
    update_norms,
) -> MetricsRecord:
    """Residuals over graph edges plus per-robot size and accuracy figures.

    Residuals are evaluated on the dense per-cell expansion of each map so
    the value does not depend on how a map groups cells into leaves.
    """
    dense = [m.dense_logodds_morton() for m in maps]
    ru = 0.0
    rw = 0.0
    for i, j, w in graph.edges():
        s = float(np.sum((dense[i] - dense[j]) ** 2))
        ru += s
        rw += w * s
    accuracies = []
    for m, d in zip(maps, dense):
        observed = m.dense_counts_morton() > 0
        if not observed.any():
            accuracies.append(1.0)
            continue
        argmax = np.argmax(d, axis=1)
        accuracies.append(float(np.mean(argmax[observed] == labels_morton[observed])))
    return MetricsRecord(
        tick=tick,
        iteration=iteration,
        residual_unweighted=ru,
        residual_weighted=rw,
        grid_bytes=int(grid_bytes),
        octree_bytes=tuple(int(b) for b in octree_bytes),
        leaf_counts=tuple(int(m.leaf_count()) for m in maps),
        accuracies=tuple(accuracies),
        update_norms=tuple(float(v) for v in update_norms),
    )


def run_scenario(
    scenario: Scenario,
    out_dir=None,
    backend: str = "octree",
    env: Environment | None = None,
) -> RunResult:
    """Execute a scenario; optionally write metrics.csv and per-robot .som maps."""
    if backend not in ("octree", "dense"):
        raise InvalidInputError(f"unknown backend {backend!r}")
    cfg = scenario.map_config
    if env is None:
        if scenario.env_file is not None:
            env = load_environment(scenario.env_file)
            if env.config != cfg:
                raise InvalidInputError("environment file does not match the map config")
        else:
            env = generate_environment(cfg, scenario.env_spec, scenario.seed)
    n = len(scenario.robots)
    graph = scenario.graph_spec.build(n)
    if backend == "octree":
        maps = [SemanticOctree(cfg, tau_prune=scenario.tau_prune) for _ in range(n)]
    else:
        maps = [DenseMap(cfg, tau_prune=scenario.tau_prune) for _ in range(n)]
    poses = [build_poses(r, scenario.total_ticks, cfg) for r in scenario.robots]
    rng = make_rng(scenario.seed, SENSOR_STREAM)
    labels_morton = labels_in_morton_order(env)
    packet_log = netsim.PacketLog()
    params = scenario.iteration
    records: list[MetricsRecord] = []
    seqs = [0] * n
    frozen = False  # update norms fell below update_tol after observations stopped

    for tick in range(1, scenario.total_ticks + 1):
        observing = tick <= scenario.observe_ticks
        if observing:
            for i in range(n):
                scan = simulate_scan(env, poses[i][tick - 1], scenario.sensor, rng)
                mus, dsum, dcnt = observation_deltas(scan, scenario.model, cfg)
                maps[i].apply_observation_deltas(mus, dsum, dcnt)
                maps[i].prune()
        if tick % scenario.publish_period != 0:
            continue
        if frozen:
            # stopping rule reached: maps no longer change, so the previous
            # record repeats except for its timestamp
            prev = records[-1]
            records.append(
                replace(prev, tick=tick, iteration=prev.iteration + 1,
                        update_norms=tuple(0.0 for _ in range(n)))
            )
            continue
        iteration = len(records) + 1
        gamma = params.gamma_at(iteration) if observing else 0.0
        if backend == "octree":
            messages, delivered, _ = netsim.exchange(
                maps, graph, tick, seqs=seqs, packet_log=packet_log
            )
            octree_bytes = [len(m.payload) for m in messages]
            grid_bytes = netsim.encode_grid_baseline(maps[0])
            seqs = [s + 1 for s in seqs]
        else:
            snaps = [m.wire_quantized() for m in maps]
            delivered = {
                i: [(j, snaps[j]) for j, _w in graph.neighbors(i)] for i in range(n)
            }
            octree_bytes = [m.payload_bytes() for m in maps]
            grid_bytes = maps[0].payload_bytes()
        norms = []
        for i in range(n):
            nbrs = [(graph.weights[i, s], snap) for s, snap in delivered[i]]
            norms.append(consensus.iterate(maps[i], nbrs, params, gamma=gamma))
        records.append(
            compute_metrics(
                tick, iteration, maps, graph, labels_morton,
                octree_bytes, grid_bytes, norms,
            )
        )
        if not observing and max(norms) < params.update_tol:
            frozen = True

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(records, n, out / "metrics.csv")
        if backend == "octree":
            for i, m in enumerate(maps):
                (out / f"map_robot{i}.som").write_bytes(netsim.encode(m))
    return RunResult(scenario=scenario, records=records, maps=maps, env=env, graph=graph)


def metrics_columns(n_robots: int) -> list[str]:
    cols = [
        "tick", "iteration", "residual_unweighted", "residual_weighted",
        "grid_bytes", "octree_bytes_mean", "octree_bytes_std",
    ]
    for stem in ("octree_bytes", "leaf_count", "accuracy", "update_norm"):
        cols.extend(f"{stem}_{i}" for i in range(n_robots))
    return cols


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(records, n_robots: int, path) -> None:
    """Stable column order, shortest round-trip float formatting."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(metrics_columns(n_robots))
        for r in records:
            row = [
                r.tick, r.iteration, _fmt(r.residual_unweighted), _fmt(r.residual_weighted),
                r.grid_bytes, _fmt(r.octree_bytes_mean), _fmt(r.octree_bytes_std),
            ]
            row.extend(r.octree_bytes)
            row.extend(r.leaf_counts)
            row.extend(_fmt(a) for a in r.accuracies)
            row.extend(_fmt(u) for u in r.update_norms)
            w.writerow(row)
