import struct

import numpy as np
import pytest
from scipy import stats as sps

from statmix.exchange import (HEADER_SIZE, RECORD_SIZE, ProtocolError, StatsRegistry, WireDecodeError,
                              WireTap, decode_records, encode_records, load_registry, publish_node_stats,
                              select_target, server_distribute)
from statmix.stats import ImageStats, StatsKey, compute_stats

from conftest import random_image


def _entries(n_nodes, k, rng):
    return [[(StatsKey(i, m), ImageStats(tuple(rng.random(3)), tuple(rng.random(3)))) for m in range(k)]
            for i in range(n_nodes)]


def test_single_record_golden_bytes():
    data = encode_records([(StatsKey(0, 0), ImageStats((0.5, 0.5, 0.5), (0.0, 0.0, 0.0)))])
    half = struct.pack("<f", 0.5)
    assert half == bytes.fromhex("0000003f")
    assert data == b"\x00" * 8 + half * 3 + b"\x00" * 12
    assert len(data) == RECORD_SIZE


def test_field_order_and_endianness():
    data = encode_records([(StatsKey(1, 258), ImageStats((1.0, 2.0, 3.0), (4.0, 5.0, 6.0)))])
    assert data[:8] == bytes.fromhex("01000000" "02010000")
    assert struct.unpack("<6f", data[8:]) == (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)


def test_round_trips(rng):
    entries = [e for node in _entries(3, 20, rng) for e in node]
    data = encode_records(entries)
    assert encode_records(decode_records(data)) == data
    back = decode_records(data)
    assert [k for k, _ in back] == [k for k, _ in entries]
    for (_, a), (_, b) in zip(entries, back):
        assert np.allclose(a.mean, b.mean, rtol=1e-7) and np.allclose(a.std, b.std, rtol=1e-7)


def test_decode_truncated_names_offset():
    with pytest.raises(WireDecodeError, match="byte offset 32"):
        decode_records(b"\x00" * 40)


def test_decode_negative_sigma_names_record():
    good = encode_records([(StatsKey(0, 0), ImageStats((0, 0, 0), (0, 0, 0)))])
    bad = bytearray(good * 3)
    bad[2 * 32 + 24:2 * 32 + 28] = struct.pack("<f", -1.0)
    with pytest.raises(WireDecodeError, match="record 2"):
        decode_records(bytes(bad))


def test_publish(rng):
    imgs = [random_image(rng, 4, 4) for _ in range(3)]
    entries = publish_node_stats(imgs, node_id=2)
    assert [k for k, _ in entries] == [StatsKey(2, 0), StatsKey(2, 1), StatsKey(2, 2)]
    assert all(s == compute_stats(img) for (_, s), img in zip(entries, imgs))
    assert publish_node_stats([]) == []


def test_distribute_two_nodes(rng):
    published = _entries(2, 3, rng)
    tap = WireTap()
    regs = server_distribute(published, tap)
    assert [len(r) for r in regs] == [6, 6]
    # node 0 received exactly node 1's three entries
    assert tap.downlink == [(0, HEADER_SIZE + 3 * 32), (1, HEADER_SIZE + 3 * 32)]
    assert tap.uplink_bytes == 2 * (HEADER_SIZE + 3 * 32)


def test_distribute_single_node_receives_nothing(rng):
    published = _entries(1, 4, rng)
    tap = WireTap()
    (reg,) = server_distribute(published, tap)
    assert len(reg) == 4
    assert tap.downlink == [(0, HEADER_SIZE)]
    assert all(reg[k] == s for k, s in published[0])  # own entries kept at full precision


def test_key_grid_covered(rng):
    published = _entries(4, 5, rng)
    regs = server_distribute(published)
    grid = {StatsKey(i, m) for i in range(4) for m in range(5)}
    for i, reg in enumerate(regs):
        received = {k for k in reg.keys() if k.node_id != i}
        owned = {k for k, _ in published[i]}
        assert received | owned == grid
        assert not received & owned


def test_foreign_stats_are_f32_narrowed(rng):
    published = _entries(2, 2, rng)
    regs = server_distribute(published)
    key, original = published[1][0]
    got = regs[0][key]
    assert got.mean == tuple(float(np.float32(v)) for v in original.mean)


def test_duplicate_key_is_protocol_error(rng):
    published = _entries(2, 2, rng)
    published[1].append((StatsKey(1, 0), published[1][0][1]))
    with pytest.raises(ProtocolError, match="duplicate"):
        server_distribute(published)


def test_select_single_entry(rng):
    s = ImageStats((0.1,) * 3, (0.2,) * 3)
    reg = StatsRegistry([(StatsKey(0, 0), s)], 1, [1])
    for _ in range(5):
        assert select_target(reg, rng) == (StatsKey(0, 0), s)


def test_select_incomplete_registry_rejected(rng):
    s = ImageStats((0.1,) * 3, (0.2,) * 3)
    reg = StatsRegistry([(StatsKey(0, 0), s)], 1, [2])
    with pytest.raises(ProtocolError):
        select_target(reg, rng)


def test_select_uniform_two_keys():
    regs = server_distribute(_entries(2, 1, np.random.default_rng(0)))
    gen = np.random.default_rng(77)
    draws = [select_target(regs[0], gen)[0].node_id for _ in range(10_000)]
    counts = np.bincount(draws, minlength=2)
    assert sps.chisquare(counts).pvalue > 0.01


def test_select_sequence_deterministic():
    regs = server_distribute(_entries(3, 4, np.random.default_rng(0)))
    a = [select_target(regs[1], np.random.default_rng(5))[0] for _ in range(3)]
    g1, g2 = np.random.default_rng(5), np.random.default_rng(5)
    assert [select_target(regs[1], g1)[0] for _ in range(20)] == [select_target(regs[1], g2)[0] for _ in range(20)]
    assert len(set(a)) == 1


def test_registry_dump_header_and_reload(tmp_path, rng):
    regs = server_distribute(_entries(3, 4, rng))
    data = regs[0].dump(tmp_path / "r.stmx")
    assert data[:4] == b"STMX"
    assert struct.unpack("<III", data[4:16]) == (1, 3, 4)
    assert len(data) == HEADER_SIZE + 12 * RECORD_SIZE
    back = load_registry(tmp_path / "r.stmx")
    assert back.keys() == regs[0].keys()
    assert back.dump() == data
