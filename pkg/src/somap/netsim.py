"""Wire format for semantic octree maps and the simulated exchange bus.

Payload layout (little-endian throughout), 21-byte header:

    bytes 0..3   magic "SOM1"
    byte  4      (depth << 4) | num_classes
    bytes 5..16  origin, 3 x float32
    bytes 17..20 cell_size, float32

followed by a preorder node stream: one tag byte per node (0 absent,
1 inner, 2 leaf); an inner node is followed by its 8 children in Morton
order (x fastest); a leaf tag is followed by C+1 float32 log-odds, a uint32
observation count, and C+1 float32 mean log q (zeros when the count is 0).
The root is never absent: an empty tree serializes as a root leaf at the
prior with count 0.

The exchange bus is synchronous, lossless and zero-latency: every tick each
robot's encoded map reaches all of its graph neighbors, and payload sizes
are logged next to the uniform-grid baseline for the same map.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, MappingError
from .grid import MapConfig
from .octree import SemanticOctree

logger = logging.getLogger(__name__)

MAGIC = b"SOM1"
HEADER_SIZE = 21
TAG_ABSENT, TAG_INNER, TAG_LEAF = 0, 1, 2
ENVELOPE = struct.Struct("<HIQ")  # robot_id, seq, config digest


def config_header(config: MapConfig) -> bytes:
    return (
        MAGIC
        + bytes([(config.depth << 4) | config.num_classes])
        + struct.pack("<3f", *config.origin)
        + struct.pack("<f", config.cell_size)
    )


def config_digest(config: MapConfig) -> int:
    """64-bit digest of the grid configuration at wire precision."""
    return int.from_bytes(
        hashlib.blake2b(config_header(config)[4:], digest_size=8).digest(), "little"
    )


def _parse_header(payload: bytes) -> MapConfig:
    if len(payload) < HEADER_SIZE or payload[:4] != MAGIC:
        raise InvalidInputError("payload does not start with a SOM1 header")
    packed = payload[4]
    depth, num_classes = packed >> 4, packed & 0x0F
    ox, oy, oz = struct.unpack_from("<3f", payload, 5)
    (cell,) = struct.unpack_from("<f", payload, 17)
    return MapConfig(
        origin=(float(ox), float(oy), float(oz)),
        cell_size=float(cell),
        depth=depth,
        num_classes=num_classes,
    )


def encode(tree: SemanticOctree) -> bytes:
    """Serialize a pruned-canonical tree to its wire payload."""
    cfg = tree.config
    width = cfg.vector_length
    rec = 1 + 4 * width + 4 + 4 * width  # tag + h + count + mean log q
    header = config_header(cfg)

    n = tree.leaf_count()
    if n == 0:
        mean = np.zeros(width, dtype="<f4")
        return (
            header
            + bytes([TAG_LEAF])
            + tree.prior.astype("<f4").tobytes()
            + struct.pack("<I", 0)
            + mean.tobytes()
        )

    depth = cfg.depth
    # implicit inner nodes: every cube properly containing a leaf
    key_of = lambda s, lv: s * 16 + lv  # levels fit in 4 bits
    inner_keys = []
    max_level = int(tree.levels.max())
    for lev in range(max_level):
        deeper = tree.starts[tree.levels > lev]
        if len(deeper):
            size = 1 << (3 * (depth - lev))
            inner_keys.append(np.unique(deeper // size * size) * 16 + lev)
    inner = np.unique(np.concatenate(inner_keys)) if inner_keys else np.empty(0, dtype=np.int64)
    leaf_keys = tree.starts * 16 + tree.levels

    # children of inner nodes that are neither inner nor leaves are absent
    if len(inner):
        in_s, in_lv = inner // 16, inner % 16
        child_size = np.int64(1) << (3 * (depth - in_lv - 1))
        ch_s = (in_s[:, None] + np.arange(8, dtype=np.int64) * child_size[:, None]).ravel()
        ch_lv = np.repeat(in_lv + 1, 8)
        ch_keys = ch_s * 16 + ch_lv
        known = np.concatenate([inner, leaf_keys])
        known.sort()
        pos = np.searchsorted(known, ch_keys)
        found = (pos < len(known)) & (known[np.minimum(pos, len(known) - 1)] == ch_keys)
        absent_keys = ch_keys[~found]
    else:
        absent_keys = np.empty(0, dtype=np.int64)

    keys = np.concatenate([inner, leaf_keys, absent_keys])
    tags = np.concatenate(
        [
            np.full(len(inner), TAG_INNER, dtype=np.uint8),
            np.full(n, TAG_LEAF, dtype=np.uint8),
            np.full(len(absent_keys), TAG_ABSENT, dtype=np.uint8),
        ]
    )
    # preorder = ascending (start, level); the packed key preserves that order
    order = np.argsort(keys, kind="stable")
    tags = tags[order]
    leaf_rank = np.cumsum(tags == TAG_LEAF) - 1  # which leaf record sits at each node

    lengths = np.where(tags == TAG_LEAF, rec, 1)
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    out = np.zeros(int(lengths.sum()), dtype=np.uint8)
    out[offsets] = tags

    # leaf records, assembled columnwise: h | count | mean log q
    leaf_order = np.argsort(tree.starts, kind="stable")  # already sorted; keep explicit
    h32 = tree.h[leaf_order].astype("<f4")
    counts = tree.acc_count[leaf_order]
    safe = np.maximum(counts, 1)[:, None]
    mean = np.where(counts[:, None] > 0, tree.acc_sum[leaf_order] / safe, 0.0).astype("<f4")
    records = np.concatenate(
        [
            h32.view(np.uint8).reshape(n, 4 * width),
            counts.astype("<u4").view(np.uint8).reshape(n, 4),
            mean.view(np.uint8).reshape(n, 4 * width),
        ],
        axis=1,
    )
    leaf_pos = offsets[tags == TAG_LEAF]
    out[leaf_pos[:, None] + 1 + np.arange(rec - 1)] = records[leaf_rank[tags == TAG_LEAF]]
    return header + out.tobytes()


def decode(payload: bytes, prior=None, tau_prune: float = 0.0) -> SemanticOctree:
    """Rebuild a tree from its wire payload.

    The wire carries no prior; the receiver supplies its own (default zero),
    which must match the sender's for the absent-subtree semantics to agree.
    """
    cfg = _parse_header(payload)
    tree = SemanticOctree(cfg, prior=prior, tau_prune=tau_prune)
    width = cfg.vector_length
    depth = cfg.depth
    body = memoryview(payload)[HEADER_SIZE:]
    pos = 0
    stack = [(0, 0)]  # (start, level), root first
    starts, levels, hs, means, counts = [], [], [], [], []
    while stack:
        s, lev = stack.pop()
        if pos >= len(body):
            raise InvalidInputError("truncated payload")
        tag = body[pos]
        pos += 1
        if tag == TAG_ABSENT:
            if lev == 0:
                raise InvalidInputError("root tagged absent")
            continue
        if tag == TAG_INNER:
            if lev >= depth:
                raise InvalidInputError("inner node below finest level")
            child = 1 << (3 * (depth - lev - 1))
            for k in range(7, -1, -1):
                stack.append((s + k * child, lev + 1))
            continue
        if tag != TAG_LEAF:
            raise InvalidInputError(f"unknown node tag {tag}")
        h = np.frombuffer(body, dtype="<f4", count=width, offset=pos)
        pos += 4 * width
        (cnt,) = struct.unpack_from("<I", body, pos)
        pos += 4
        mean = np.frombuffer(body, dtype="<f4", count=width, offset=pos)
        pos += 4 * width
        starts.append(s)
        levels.append(lev)
        hs.append(h.astype(np.float64))
        means.append(mean.astype(np.float64))
        counts.append(cnt)
    if pos != len(body):
        raise InvalidInputError(f"{len(body) - pos} trailing bytes after node stream")
    if len(starts) == 1 and levels[0] == 0 and counts[0] == 0 and np.array_equal(hs[0], tree.prior):
        return tree  # canonical empty tree
    cnt_arr = np.array(counts, dtype=np.int64)
    sums = np.array(means) * cnt_arr[:, None]
    tree._set_table(np.array(starts), np.array(levels), np.array(hs), sums, cnt_arr)
    return tree


def encode_grid_baseline(tree: SemanticOctree) -> int:
    """Payload size of the same map as a uniform-resolution grid of float32 h."""
    tree._check_dense_guard()
    cfg = tree.config
    return HEADER_SIZE + cfg.total_cells * cfg.vector_length * 4


@dataclass(frozen=True)
class MapMessage:
    """One published local map: sender, sequence number, config digest, payload."""

    robot_id: int
    seq: int
    config_digest: int
    payload: bytes

    def to_bytes(self) -> bytes:
        return ENVELOPE.pack(self.robot_id, self.seq, self.config_digest) + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "MapMessage":
        if len(data) < ENVELOPE.size:
            raise InvalidInputError("message shorter than its envelope")
        rid, seq, digest = ENVELOPE.unpack_from(data)
        return cls(rid, seq, digest, bytes(data[ENVELOPE.size:]))


@dataclass
class PacketLog:
    """Per (robot, tick) payload sizes for the octree and the grid baseline."""

    rows: list = field(default_factory=list)

    def record(self, robot_id: int, tick: int, octree_bytes: int, grid_bytes: int) -> None:
        self.rows.append((robot_id, tick, octree_bytes, grid_bytes))


def exchange(
    trees: list[SemanticOctree],
    graph,
    tick: int,
    seqs: list[int] | None = None,
    packet_log: PacketLog | None = None,
    decode_payloads: bool = False,
):
    """Deliver every robot's encoded map to its one-hop neighbors.

    Returns (messages, delivered, rejected_count) where delivered[r] is the
    list of (sender, snapshot) pairs for receiver r in ascending sender
    order.  Snapshots carry wire (float32) precision; by default they are
    produced by the sender's quantizer, which is bitwise-identical to
    decode(encode(tree)) and avoids re-parsing inside the simulator.
    Messages whose config digest does not match the receiver are rejected
    and logged.
    """
    n = len(trees)
    messages = []
    snapshots = {}
    for rid in range(n):
        payload = encode(trees[rid])
        seq = seqs[rid] if seqs is not None else tick
        messages.append(MapMessage(rid, seq, config_digest(trees[rid].config), payload))
        if decode_payloads:
            snapshots[rid] = decode(payload, prior=trees[rid].prior)
        else:
            snapshots[rid] = trees[rid].wire_quantized()
        if packet_log is not None:
            packet_log.record(rid, tick, len(payload), encode_grid_baseline(trees[rid]))

    delivered = {rid: [] for rid in range(n)}
    rejected = 0
    for sender in range(n):
        for receiver, _w in graph.neighbors(sender):
            msg = messages[sender]
            if msg.config_digest != config_digest(trees[receiver].config):
                rejected += 1
                logger.warning(
                    "tick %d: robot %d rejected map from %d (config digest mismatch)",
                    tick, receiver, sender,
                )
                continue
            delivered[receiver].append((sender, snapshots[sender]))
    return messages, delivered, rejected
