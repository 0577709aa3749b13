"""
Partitioning and the statistics exchange
========================================

The training set is split into N label-balanced nodes. Each node uploads one
32-byte record per image; the server sends every node the records it does
not own. No pixels cross a node boundary.
"""

import numpy as np

from statmix import WireTap, publish_node_stats, select_target, server_distribute, stratified_split
from statmix.exchange import HEADER_SIZE, encode_records
from statmix.imagecore import synthetic_dataset
from statmix.orchestrator import derive_stream

ds = synthetic_dataset(per_class=30, num_classes=4, seed=1)
part = stratified_split(ds, 5, derive_stream(seed := 42, (0,)))
print("node sizes:", part.node_sizes())
for node, ids in enumerate(part.per_node_ids):
    print(f"  node {node} class counts:", np.bincount(ds.labels[list(ids)], minlength=4))

published = [publish_node_stats([ds[i] for i in ids], node) for node, ids in enumerate(part.per_node_ids)]

# one record on the wire
key, st = published[0][0]
print("record for", tuple(key), "->", encode_records([(key, st)]).hex(" ", 4))

tap = WireTap()
registries = server_distribute(published, tap)
print("uplink bytes:", tap.uplink_bytes, "=", len(ds), "* 32 +", len(published), "*", HEADER_SIZE)
print("downlink bytes:", tap.downlink_bytes)
print("registry sizes:", [len(r) for r in registries])

# a node draws targets from the whole grid, its own images included
gen = derive_stream(seed, (0, 3, 0, 0, 1))
draws = [select_target(registries[3], gen)[0].node_id for _ in range(5000)]
print("draws per owner node:", np.bincount(draws, minlength=5))
