"""Federated data augmentation by exchanging per-image channel statistics."""

from .augment import (AugmentConfig, apply_stats, normalize_image, random_crop, random_hflip,
                      statmix_batch, statmix_pixels)
from .exchange import (StatsRegistry, WireTap, decode_records, encode_records, publish_node_stats,
                       select_target, server_distribute)
from .imagecore import Dataset, Image, load_cifar_binary, synthetic_dataset, to_bytes_u8
from .orchestrator import RunResult, SimConfig, derive_stream, run_experiment
from .partition import NodePartition, stratified_split
from .report import MetricsReport, aggregate
from .stats import ImageStats, StatsKey, channel_mean, channel_std, compute_stats

__version__ = "0.1.0"
