"""End-to-end federated StatMix runs.

All randomness comes from :func:`derive_stream`, keyed by the global seed and
a tuple of context integers:

=====================================  ===============================
labels                                 used for
=====================================  ===============================
``(rep,)``                             stratified partition
``(rep, node)``                        weight initialisation
``(rep, node, epoch)``                 shuffling the node's images
``(rep, node, epoch, batch, purpose)`` gate, target, crop, flip draws
=====================================  ===============================

Because each stream is derived independently, a node's results do not depend
on how many draws any other node made or in what order nodes were scheduled.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import hashlib
import io
import logging
import math
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import trainer
from .augment import AugmentConfig, standard_da, statmix_pixels
from .exchange import (HEADER_SIZE, RECORD_SIZE, WireTap, publish_node_stats, select_target,
                       server_distribute)
from .imagecore import Dataset, Image, load_cifar_binary, load_cifar_dir, synthetic_dataset
from .partition import stratified_split

log = logging.getLogger(__name__)


class Purpose(enum.IntEnum):
    GATE = 0
    TARGET = 1
    CROP = 2
    FLIP = 3
    SHUFFLE = 4
    INIT = 5


class NodeFailure(RuntimeError):
    def __init__(self, node_id: int, rep: int, cause: BaseException):
        super().__init__(f"node {node_id} failed in repetition {rep}: {cause}")
        self.node_id = node_id
        self.rep = rep


def derive_stream(global_seed: int, labels=()) -> np.random.Generator:
    """Independent generator keyed by ``global_seed`` and an integer tuple.

    BLAKE2b keyed with the seed hashes the length-prefixed labels, so tuples
    of different lengths never collide; the digest seeds a PCG64 generator.
    """
    labels = tuple(int(v) for v in labels)
    key = (int(global_seed) % (1 << 64)).to_bytes(8, "little")
    msg = struct.pack(f"<I{len(labels)}q", len(labels), *labels)
    digest = hashlib.blake2b(msg, key=key, digest_size=32).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))


def batch_stream(seed: int, rep: int, node: int, epoch: int, batch: int, purpose: Purpose) -> np.random.Generator:
    return derive_stream(seed, (rep, node, epoch, batch, int(purpose)))


@dataclass(frozen=True)
class SimConfig:
    n_nodes: int = 5
    p_statmix: float = 0.5
    standard_da: bool = False
    epochs: int = 20
    batch_size: int = 128
    repetitions: int = 3
    global_seed: int = 0
    dataset: str = "synthetic"
    num_classes: int = 10
    classes: tuple[int, ...] = ()
    train_per_class: int = 0
    test_per_class: int = 0
    model: str = "linear"
    hidden_units: int = 64
    lr0: float = 0.01
    momentum: float = 0.9
    init_scale: float = 1.0
    sigma_floor: float = 1e-6
    crop_padding: int = 4
    flip_probability: float = 0.5

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError(f"n_nodes must be >= 1, got {self.n_nodes}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.repetitions < 1:
            raise ValueError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        # remaining checks live with the owning configs
        self.augment_config()
        self.trainer_config()

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(self.p_statmix, self.sigma_floor, self.crop_padding,
                             self.flip_probability, self.standard_da)

    def trainer_config(self) -> trainer.TrainerConfig:
        return trainer.TrainerConfig(self.model, self.hidden_units, self.lr0, self.momentum,
                                     self.epochs, self.init_scale)

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    @property
    def model_tag(self) -> str:
        return self.model if self.model == "linear" else f"{self.model}{self.hidden_units}"

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: dict) -> "SimConfig":
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        parsed = {}
        for name, raw in values.items():
            name = name.replace("-", "_")
            if name not in kinds:
                raise ValueError(f"unknown config key {name!r}")
            parsed[name] = _coerce(kinds[name], raw, name)
        return cls(**parsed)

    @classmethod
    def from_text(cls, text: str, **overrides) -> "SimConfig":
        return cls.from_mapping({**parse_key_values(text), **overrides})

    @classmethod
    def from_file(cls, path, **overrides) -> "SimConfig":
        return cls.from_text(Path(path).read_text(), **overrides)


def parse_key_values(text: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _coerce(kind: str, raw, name: str):
    if not isinstance(raw, str):
        return tuple(raw) if kind.startswith("tuple") else raw
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind.startswith("tuple"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError as exc:
        raise ValueError(f"bad value for {name}: {raw!r}") from exc
    return raw


@dataclass
class RunResult:
    """Per-epoch test accuracy, indexed ``accuracy[rep, node, epoch]``."""

    accuracy: np.ndarray
    config: SimConfig
    seed: int
    wall_clock: float = 0.0
    uplink_bytes: int = 0
    downlink_bytes: int = 0

    def rows(self):
        reps, nodes, epochs = self.accuracy.shape
        for r in range(reps):
            for n in range(nodes):
                for e in range(epochs):
                    yield r, n, e, float(self.accuracy[r, n, e])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rep", "node", "epoch", "test_accuracy"])
        for r, n, e, acc in self.rows():
            w.writerow([r, n, e, repr(acc)])
        return buf.getvalue()

    def write(self, path) -> Path:
        """Write the CSV plus a ``.cfg`` sidecar holding the config echo."""
        path = Path(path)
        path.write_text(self.to_csv())
        path.with_suffix(".cfg").write_text(self.config.to_text())
        return path

    @classmethod
    def read(cls, path, config: SimConfig | None = None) -> "RunResult":
        path = Path(path)
        if config is None:
            cfg_path = path.with_suffix(".cfg")
            config = SimConfig.from_file(cfg_path) if cfg_path.exists() else SimConfig()
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: no result rows")
        idx = np.array([[int(r["rep"]), int(r["node"]), int(r["epoch"])] for r in rows])
        acc = np.full(tuple(idx.max(axis=0) + 1), np.nan)
        for (r, n, e), row in zip(idx, rows):
            acc[r, n, e] = float(row["test_accuracy"])
        if np.isnan(acc).any():
            raise ValueError(f"{path}: missing (rep, node, epoch) rows")
        return cls(acc, config, config.global_seed)


# observer(rep, node, epoch, batch, pixels, labels, target_key_or_None)
BatchObserver = Callable[[int, int, int, int, np.ndarray, np.ndarray, object], None]


def batch_bounds(k: int, batch_size: int) -> list[tuple[int, int]]:
    """Start/stop offsets of ceil(k / batch_size) batches; the last may be short."""
    return [(s, min(s + batch_size, k)) for s in range(0, k, batch_size)]


def _node_batches(cfg: SimConfig, rep: int, node: int, epoch: int, X: np.ndarray, y: np.ndarray,
                  registry, observer: BatchObserver | None):
    aug = cfg.augment_config()
    seed = cfg.global_seed
    order = derive_stream(seed, (rep, node, epoch)).permutation(len(y))
    for b, (start, stop) in enumerate(batch_bounds(len(y), cfg.batch_size)):
        idx = order[start:stop]
        pixels, labels = X[idx], y[idx]
        gate = batch_stream(seed, rep, node, epoch, b, Purpose.GATE).random()
        if cfg.standard_da:
            crop_rng = batch_stream(seed, rep, node, epoch, b, Purpose.CROP)
            flip_rng = batch_stream(seed, rep, node, epoch, b, Purpose.FLIP)
            pixels = np.stack([
                standard_da(Image(px, lab), aug, crop_rng, flip_rng).pixels
                for px, lab in zip(pixels, labels)
            ])
        target_key = None
        if gate < cfg.p_statmix:
            target_key, target = select_target(
                registry, batch_stream(seed, rep, node, epoch, b, Purpose.TARGET))
            pixels = statmix_pixels(pixels, target, cfg.sigma_floor)
        if observer is not None:
            observer(rep, node, epoch, b, pixels, labels, target_key)
        yield pixels, labels


def train_node(cfg: SimConfig, rep: int, node: int, X: np.ndarray, y: np.ndarray, registry,
               test_X: np.ndarray, test_y: np.ndarray, num_classes: int,
               observer: BatchObserver | None = None) -> list[float]:
    """Train one node's model in isolation and return its per-epoch test accuracy."""
    tcfg = cfg.trainer_config()
    state = trainer.init_model(tcfg, int(np.prod(X.shape[1:])), num_classes,
                               derive_stream(cfg.global_seed, (rep, node)))
    accs = []
    for epoch in range(cfg.epochs):
        lr = trainer.cosine_lr(epoch, cfg.lr0, cfg.epochs)
        batches = _node_batches(cfg, rep, node, epoch, X, y, registry, observer)
        state = trainer.train_epoch(state, batches, lr, cfg.momentum)
        accs.append(trainer.evaluate(state, (test_X, test_y)))
    return accs


def run_experiment(cfg: SimConfig, train_ds: Dataset, test_ds: Dataset, workers: int = 1,
                   tap: WireTap | None = None, observer: BatchObserver | None = None) -> RunResult:
    """Partition, exchange statistics, then train every node independently.

    Nodes share nothing but statistics. ``workers`` only changes scheduling;
    the result is identical for any value.
    """
    if train_ds.image_shape != test_ds.image_shape:
        raise ValueError(f"train images {train_ds.image_shape} vs test images {test_ds.image_shape}")
    t0 = time.perf_counter()
    tap = tap if tap is not None else WireTap()
    num_classes = max(train_ds.num_classes, test_ds.num_classes)
    acc = np.zeros((cfg.repetitions, cfg.n_nodes, cfg.epochs))
    test_X, test_y = test_ds.pixels, test_ds.labels

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for rep in range(cfg.repetitions):
            part = stratified_split(train_ds, cfg.n_nodes, derive_stream(cfg.global_seed, (rep,)))
            node_images = [[train_ds[i] for i in ids] for ids in part.per_node_ids]
            published = [publish_node_stats(imgs, n) for n, imgs in enumerate(node_images)]
            registries = server_distribute(published, tap)
            log.info("rep %d: %d nodes, sizes %s", rep, cfg.n_nodes, part.node_sizes())

            def work(node, rep=rep, part=part, registries=registries):
                ids = np.asarray(part.per_node_ids[node], dtype=np.int64)
                try:
                    return train_node(cfg, rep, node, train_ds.pixels[ids], train_ds.labels[ids],
                                      registries[node], test_X, test_y, num_classes, observer)
                except Exception as exc:
                    raise NodeFailure(node, rep, exc) from exc

            for node, accs in enumerate(pool.map(work, range(cfg.n_nodes))):
                acc[rep, node] = accs

    return RunResult(acc, cfg, cfg.global_seed, time.perf_counter() - t0,
                     tap.uplink_bytes, tap.downlink_bytes)


def load_datasets(cfg: SimConfig) -> tuple[Dataset, Dataset]:
    """Resolve ``cfg.dataset`` into (train, test).

    ``synthetic`` builds class-coloured images; a directory is read as an
    extracted CIFAR binary archive; ``train.bin:test.bin`` names two files.
    ``classes`` and the per-class caps then select a subset, relabelled to
    ``0..len(classes)-1``.
    """
    if cfg.dataset == "synthetic":
        per = cfg.train_per_class or 100
        train = synthetic_dataset(per, cfg.num_classes, seed=cfg.global_seed, name="synthetic/train")
        test = synthetic_dataset(cfg.test_per_class or max(per // 5, 1), cfg.num_classes,
                                 seed=cfg.global_seed + 1, name="synthetic/test")
    elif Path(cfg.dataset).is_dir():
        train = load_cifar_dir(cfg.dataset, cfg.num_classes, train=True)
        test = load_cifar_dir(cfg.dataset, cfg.num_classes, train=False)
    elif ":" in cfg.dataset:
        train_path, test_path = cfg.dataset.split(":", 1)
        train = load_cifar_binary(train_path, cfg.num_classes)
        test = load_cifar_binary(test_path, cfg.num_classes)
    else:
        raise FileNotFoundError(f"dataset {cfg.dataset!r} is neither 'synthetic', a directory, nor train:test files")
    return (select_subset(train, cfg.classes, cfg.train_per_class),
            select_subset(test, cfg.classes, cfg.test_per_class))


def select_subset(ds: Dataset, classes=(), per_class: int = 0) -> Dataset:
    """Keep the first ``per_class`` images (0 = all) of each listed class, in file order."""
    if not classes and not per_class:
        return ds
    classes = tuple(classes) or tuple(range(ds.num_classes))
    remap = {c: i for i, c in enumerate(classes)}
    seen = dict.fromkeys(classes, 0)
    images = []
    for img in ds.images:
        if img.label in remap and (not per_class or seen[img.label] < per_class):
            seen[img.label] += 1
            images.append(Image(img.pixels, remap[img.label], img.coarse_label))
    return Dataset(tuple(images), len(classes), ds.name)


def expected_uplink_bytes(node_sizes) -> int:
    """Header plus 32 bytes per image, for every node's upload."""
    return sum(HEADER_SIZE + RECORD_SIZE * k for k in node_sizes)


def n_batches(k: int, batch_size: int) -> int:
    return math.ceil(k / batch_size)
