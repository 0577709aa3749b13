import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from statmix.imagecore import Dataset, Image
from statmix.partition import PartitionError, read_manifest, stratified_split, write_manifest


def _check(part, labels, n_nodes):
    ids = [i for node in part.per_node_ids for i in node]
    assert sorted(ids) == list(range(len(labels)))
    assert len(ids) == len(set(ids))
    for node, node_ids in enumerate(part.per_node_ids):
        assert list(node_ids) == sorted(node_ids)
        assert all(part.assignments[i] == node for i in node_ids)
    for cls in np.unique(labels):
        per_node = [sum(labels[i] == cls for i in node_ids) for node_ids in part.per_node_ids]
        assert max(per_node) - min(per_node) <= 1
        total = int(np.sum(labels == cls))
        assert all(abs(c - total / n_nodes) <= 1 for c in per_node)


def test_cifar10_shaped_five_nodes():
    labels = np.repeat(np.arange(10), 5000)
    part = stratified_split(labels, 5, np.random.default_rng(0))
    assert part.node_sizes() == [10_000] * 5
    for ids in part.per_node_ids:
        assert list(np.bincount(labels[list(ids)], minlength=10)) == [1000] * 10


def test_single_node_gets_everything():
    labels = np.array([0, 1, 1, 2, 0])
    part = stratified_split(labels, 1, np.random.default_rng(0))
    assert part.per_node_ids == ((0, 1, 2, 3, 4),)


def test_one_class_fifty_nodes():
    part = stratified_split(np.zeros(100, dtype=int), 50, np.random.default_rng(0))
    assert part.node_sizes() == [2] * 50


def test_same_seed_same_partition():
    labels = np.random.default_rng(1).integers(0, 4, 300)
    a = stratified_split(labels, 7, np.random.default_rng(9))
    b = stratified_split(labels, 7, np.random.default_rng(9))
    c = stratified_split(labels, 7, np.random.default_rng(10))
    assert a == b
    assert a != c


def test_too_few_members_names_class():
    labels = np.array([0] * 10 + [1] * 3)
    with pytest.raises(PartitionError, match="class 1"):
        stratified_split(labels, 5, np.random.default_rng(0))


def test_accepts_dataset():
    imgs = tuple(Image(np.zeros((1, 1, 3)), i % 3) for i in range(12))
    part = stratified_split(Dataset(imgs, 3), 2, np.random.default_rng(0))
    assert part.node_sizes() == [6, 6]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.lists(st.integers(8, 40), min_size=1, max_size=5), st.integers(0, 2**32))
def test_stratification_invariants(n_nodes, class_sizes, seed):
    labels = np.repeat(np.arange(len(class_sizes)), class_sizes)
    part = stratified_split(labels, n_nodes, np.random.default_rng(seed))
    _check(part, labels, n_nodes)
    sizes = part.node_sizes()
    assert max(sizes) - min(sizes) <= len(class_sizes)


def test_manifest_round_trip(tmp_path):
    labels = np.repeat(np.arange(3), 10)
    part = stratified_split(labels, 4, np.random.default_rng(2))
    path = tmp_path / "m.tsv"
    write_manifest(part, path, seed=2)
    lines = path.read_text().splitlines()
    assert lines[0] == "n_nodes=4 seed=2"
    assert lines[1] == f"0\t{part.assignments[0]}"
    back, seed = read_manifest(path)
    assert back == part and seed == 2


def test_manifest_rejects_bad_node(tmp_path):
    path = tmp_path / "m.tsv"
    path.write_text("n_nodes=2 seed=0\n0\t0\n1\t5\n")
    with pytest.raises(PartitionError, match="out of range"):
        read_manifest(path)
