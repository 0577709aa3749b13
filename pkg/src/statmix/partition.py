"""Stratified, disjoint split of a training set across N nodes."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imagecore import Dataset


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class NodePartition:
    assignments: tuple[int, ...]
    n_nodes: int
    per_node_ids: tuple[tuple[int, ...], ...]

    def node_sizes(self) -> list[int]:
        return [len(ids) for ids in self.per_node_ids]


def _from_assignments(assignments, n_nodes: int) -> NodePartition:
    assignments = np.asarray(assignments, dtype=np.int64)
    per_node = tuple(tuple(int(i) for i in np.flatnonzero(assignments == n)) for n in range(n_nodes))
    return NodePartition(tuple(int(a) for a in assignments), n_nodes, per_node)


def stratified_split(ds: Dataset | np.ndarray, n_nodes: int, rng: np.random.Generator,
                     num_classes: int | None = None) -> NodePartition:
    """Shuffle each class with ``rng`` and deal its members round-robin to the nodes.

    ``ds`` may also be a bare label array. Classes are processed in ascending
    order; within a node the image ids come out sorted ascending.
    """
    if n_nodes < 1:
        raise PartitionError(f"n_nodes must be >= 1, got {n_nodes}")
    if isinstance(ds, Dataset):
        labels, num_classes = ds.labels, ds.num_classes
    else:
        labels = np.asarray(ds, dtype=np.int64)
        num_classes = int(labels.max()) + 1 if num_classes is None else num_classes
    counts = np.bincount(labels, minlength=num_classes)
    for cls, count in enumerate(counts):
        if 0 < count < n_nodes:
            raise PartitionError(f"class {cls} has {count} members, fewer than {n_nodes} nodes")
    assignments = np.empty(labels.size, dtype=np.int64)
    for cls in range(num_classes):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(members.size)]
        assignments[members] = np.arange(members.size) % n_nodes
    return _from_assignments(assignments, n_nodes)


def write_manifest(part: NodePartition, path, seed: int) -> None:
    lines = [f"n_nodes={part.n_nodes} seed={seed}"]
    lines += [f"{i}\t{node}" for i, node in enumerate(part.assignments)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> tuple[NodePartition, int]:
    """Parse a manifest written by :func:`write_manifest`; returns (partition, seed)."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise PartitionError(f"{path}: empty manifest")
    try:
        header = dict(field.split("=", 1) for field in lines[0].split())
        n_nodes, seed = int(header["n_nodes"]), int(header["seed"])
    except (KeyError, ValueError) as exc:
        raise PartitionError(f"{path}: bad header {lines[0]!r}") from exc
    assignments = []
    for lineno, line in enumerate(lines[1:], start=2):
        idx, node = line.split("\t")
        if int(idx) != len(assignments):
            raise PartitionError(f"{path}:{lineno}: expected index {len(assignments)}, got {idx}")
        if not 0 <= int(node) < n_nodes:
            raise PartitionError(f"{path}:{lineno}: node {node} out of range")
        assignments.append(int(node))
    return _from_assignments(assignments, n_nodes), seed
