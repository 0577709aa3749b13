"""Statistics exchange between nodes and the server, and its wire format.

Record layout (32 bytes, little-endian)::

    u32 node_id | u32 image_id | f32 mean[0..2] | f32 std[0..2]

A message or registry dump is a 16-byte header (``STMX``, version, N, K)
followed by records. Doubles are narrowed to f32 on encode; that is the only
lossy step and it happens only here.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imagecore import Image
from .stats import ImageStats, StatsKey, compute_stats

RECORD_SIZE = 32
HEADER_SIZE = 16
MAGIC = b"STMX"
FORMAT_VERSION = 1

RECORD_DTYPE = np.dtype([
    ("node_id", "<u4"),
    ("image_id", "<u4"),
    ("mean", "<f4", (3,)),
    ("std", "<f4", (3,)),
])
assert RECORD_DTYPE.itemsize == RECORD_SIZE

_HEADER = struct.Struct("<4sIII")


class ProtocolError(RuntimeError):
    pass


class WireDecodeError(ProtocolError):
    pass


Entry = tuple[StatsKey, ImageStats]


def encode_records(entries) -> bytes:
    entries = list(entries)
    rec = np.zeros(len(entries), dtype=RECORD_DTYPE)
    for i, (key, st) in enumerate(entries):
        if len(st.mean) != 3:
            raise ValueError(f"wire records carry 3 channels, got {len(st.mean)}")
        rec[i] = (key.node_id, key.image_id, st.mean, st.std)
    return rec.tobytes()


def decode_records(data: bytes) -> list[Entry]:
    if len(data) % RECORD_SIZE:
        whole = len(data) // RECORD_SIZE
        raise WireDecodeError(
            f"truncated record at byte offset {whole * RECORD_SIZE} "
            f"(length {len(data)} is not a multiple of {RECORD_SIZE})"
        )
    rec = np.frombuffer(data, dtype=RECORD_DTYPE)
    # sign bit set (covers -0.0 and negative NaN too) is rejected
    neg = np.signbit(rec["std"]).any(axis=1)
    if neg.any():
        i = int(np.flatnonzero(neg)[0])
        raise WireDecodeError(f"record {i} has a negative std field {rec['std'][i].tolist()}")
    return [
        (StatsKey(int(r["node_id"]), int(r["image_id"])),
         ImageStats(tuple(float(v) for v in r["mean"]), tuple(float(v) for v in r["std"])))
        for r in rec
    ]


def encode_header(n_nodes: int, k: int) -> bytes:
    return _HEADER.pack(MAGIC, FORMAT_VERSION, n_nodes, k)


def decode_header(data: bytes) -> tuple[int, int]:
    if len(data) < HEADER_SIZE:
        raise WireDecodeError(f"header needs {HEADER_SIZE} bytes, got {len(data)}")
    magic, version, n_nodes, k = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise WireDecodeError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise WireDecodeError(f"unsupported format version {version}")
    return n_nodes, k


def encode_message(entries, n_nodes: int, k: int) -> bytes:
    return encode_header(n_nodes, k) + encode_records(entries)


def decode_message(data: bytes) -> tuple[int, int, list[Entry]]:
    n_nodes, k = decode_header(data)
    return n_nodes, k, decode_records(data[HEADER_SIZE:])


@dataclass
class WireTap:
    """Byte counter on the wire layer.

    ``uplink`` is traffic leaving nodes (node -> server); ``downlink`` is
    server -> node. Only encoded messages ever pass through here.
    """

    uplink: list[tuple[int, int]] = field(default_factory=list)
    downlink: list[tuple[int, int]] = field(default_factory=list)

    def send_up(self, node_id: int, payload: bytes) -> bytes:
        self.uplink.append((node_id, len(payload)))
        return payload

    def send_down(self, node_id: int, payload: bytes) -> bytes:
        self.downlink.append((node_id, len(payload)))
        return payload

    @property
    def uplink_bytes(self) -> int:
        return sum(n for _, n in self.uplink)

    @property
    def downlink_bytes(self) -> int:
        return sum(n for _, n in self.downlink)


class StatsRegistry:
    """One node's view of every image's statistics, keyed by (node_id, image_id)."""

    def __init__(self, entries, n_nodes: int, per_node_counts):
        self.n_nodes = int(n_nodes)
        self.per_node_counts = tuple(int(k) for k in per_node_counts)
        if len(self.per_node_counts) != self.n_nodes:
            raise ProtocolError(f"{len(self.per_node_counts)} node counts for {self.n_nodes} nodes")
        table: dict[StatsKey, ImageStats] = {}
        for key, st in entries:
            key = StatsKey(*key)
            if key in table:
                raise ProtocolError(f"duplicate statistics key {tuple(key)}")
            if not (0 <= key.node_id < self.n_nodes and 0 <= key.image_id < self.per_node_counts[key.node_id]):
                raise ProtocolError(f"key {tuple(key)} outside the declared ranges")
            table[key] = st
        self.entries = table
        self._keys = sorted(table)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, key) -> ImageStats:
        return self.entries[StatsKey(*key)]

    def keys(self) -> list[StatsKey]:
        return list(self._keys)

    @property
    def expected_size(self) -> int:
        return sum(self.per_node_counts)

    def is_complete(self) -> bool:
        return len(self.entries) == self.expected_size

    def dump(self, path=None) -> bytes:
        """Registry dump: header then records in key order. K in the header is the largest node size."""
        data = encode_message(((k, self.entries[k]) for k in self._keys),
                              self.n_nodes, max(self.per_node_counts, default=0))
        if path is not None:
            Path(path).write_bytes(data)
        return data


def load_registry(data_or_path, per_node_counts=None) -> StatsRegistry:
    data = data_or_path
    if not isinstance(data, (bytes, bytearray)):
        data = Path(data).read_bytes()
    n_nodes, k, entries = decode_message(bytes(data))
    if per_node_counts is None:
        counts = [0] * n_nodes
        for key, _ in entries:
            if key.node_id >= n_nodes:
                raise ProtocolError(f"key {tuple(key)} outside {n_nodes} nodes")
            counts[key.node_id] = max(counts[key.node_id], key.image_id + 1)
        per_node_counts = counts
    return StatsRegistry(entries, n_nodes, per_node_counts)


def publish_node_stats(node_images: list[Image], node_id: int = 0) -> list[Entry]:
    return [(StatsKey(node_id, k), compute_stats(img)) for k, img in enumerate(node_images)]


def server_distribute(all_published, tap: WireTap | None = None) -> list[StatsRegistry]:
    """Run the upload / redistribute round and return each node's registry.

    Every byte crossing a node boundary is an encoded message and goes through
    ``tap``. The server decodes uploads into statistics only and sends node i
    everything not owned by node i; node i keeps its own entries at full
    precision.
    """
    tap = tap or WireTap()
    all_published = [list(entries) for entries in all_published]
    n_nodes = len(all_published)
    counts = [len(entries) for entries in all_published]
    k_max = max(counts, default=0)

    # server side: statistics only
    server: dict[StatsKey, ImageStats] = {}
    for node_id, entries in enumerate(all_published):
        for key, _ in entries:
            if key.node_id != node_id:
                raise ProtocolError(f"node {node_id} published a key owned by node {key.node_id}")
        msg = tap.send_up(node_id, encode_message(entries, n_nodes, k_max))
        _, _, received = decode_message(msg)
        for key, st in received:
            if key in server:
                raise ProtocolError(f"duplicate statistics key {tuple(key)}")
            server[key] = st

    registries = []
    for node_id in range(n_nodes):
        foreign = [(key, server[key]) for key in sorted(server) if key.node_id != node_id]
        msg = tap.send_down(node_id, encode_message(foreign, n_nodes, k_max))
        _, _, received = decode_message(msg)
        registries.append(StatsRegistry(received + all_published[node_id], n_nodes, counts))
    return registries


def select_target(registry: StatsRegistry, rng: np.random.Generator) -> Entry:
    """Uniform draw over every entry in the registry, the node's own included."""
    if not registry.is_complete() or len(registry) == 0:
        raise ProtocolError(
            f"registry holds {len(registry)} of {registry.expected_size} expected entries"
        )
    key = registry._keys[int(rng.integers(len(registry._keys)))]
    return key, registry.entries[key]
