"""Accuracy tables: pooled mean/std per configuration and relative gain over p=0."""

from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["n_nodes", "model", "standard_da", "p_statmix", "mean", "std", "diff_percent"]


@dataclass(frozen=True)
class ReportRow:
    n_nodes: int
    model: str
    standard_da: bool
    p_statmix: float
    mean: float
    std: float
    diff_percent: float | None = None

    @property
    def key(self):
        return (self.n_nodes, self.model, self.standard_da, round(self.p_statmix, 9))


@dataclass(frozen=True)
class MetricsReport:
    rows: tuple[ReportRow, ...]

    def row(self, n_nodes, model, standard_da, p_statmix) -> ReportRow:
        key = (n_nodes, model, standard_da, round(p_statmix, 9))
        for r in self.rows:
            if r.key == key:
                return r
        raise KeyError(key)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([
                r.n_nodes, r.model, "true" if r.standard_da else "false", f"{r.p_statmix:g}",
                f"{r.mean:.4f}", f"{r.std:.4f}",
                "" if r.diff_percent is None else f"{r.diff_percent:.2f}",
            ])
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def plot_data(self, standard_da: bool, n_nodes: int | None = None, model: str | None = None) -> str:
        """Two-column ``p_statmix mean`` text for one facet, sorted by p."""
        rows = sorted(
            (r for r in self.rows
             if r.standard_da == standard_da
             and (n_nodes is None or r.n_nodes == n_nodes)
             and (model is None or r.model == model)),
            key=lambda r: r.p_statmix,
        )
        return "".join(f"{r.p_statmix:g}\t{r.mean:.4f}\n" for r in rows)


def diff_percent(mean_p: float, mean_0: float) -> float:
    """Relative gain of ``mean_p`` over the p=0 baseline, in percent."""
    return (mean_p / mean_0 - 1.0) * 100.0


def with_diffs(rows) -> MetricsReport:
    """Fill ``diff_percent`` from the matching p=0 row of the same N, model and DA flag."""
    rows = list(rows)
    baselines = {(r.n_nodes, r.model, r.standard_da): r.mean for r in rows if r.p_statmix == 0.0}
    out = []
    for r in rows:
        base = baselines.get((r.n_nodes, r.model, r.standard_da))
        if base is None:
            msg = f"no p=0 row for N={r.n_nodes} model={r.model} standard_da={r.standard_da}; diff omitted"
            warnings.warn(msg, stacklevel=2)
            log.warning(msg)
            diff = None
        else:
            diff = diff_percent(r.mean, base)
        out.append(ReportRow(r.n_nodes, r.model, r.standard_da, r.p_statmix, r.mean, r.std, diff))
    return MetricsReport(tuple(out))


def aggregate(results, tail_epochs: int = 10) -> MetricsReport:
    """Pool the last ``tail_epochs`` accuracies of every node and repetition.

    Results sharing (N, model, standard DA, p) are pooled together. Means and
    population stds are reported in percent.
    """
    pools: dict[tuple, list[np.ndarray]] = {}
    for res in results:
        epochs = res.accuracy.shape[2]
        if epochs < tail_epochs:
            raise ValueError(f"result has {epochs} epochs, fewer than tail_epochs={tail_epochs}")
        cfg = res.config
        key = (cfg.n_nodes, cfg.model_tag, cfg.standard_da, float(cfg.p_statmix))
        pools.setdefault(key, []).append(res.accuracy[:, :, epochs - tail_epochs:].ravel())
    rows = []
    for (n, model, da, p), parts in sorted(pools.items()):
        pooled = np.concatenate(parts) * 100.0
        rows.append(ReportRow(n, model, da, p, float(pooled.mean()), float(pooled.std())))
    return with_diffs(rows)


def read_means_csv(path) -> MetricsReport:
    """Load a report-shaped CSV (``diff_percent`` optional) and recompute diffs."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"n_nodes", "model", "standard_da", "p_statmix", "mean"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = [
            ReportRow(int(r["n_nodes"]), r["model"], r["standard_da"].strip().lower() in ("true", "1"),
                      float(r["p_statmix"]), float(r["mean"]), float(r.get("std") or 0.0))
            for r in reader
        ]
    return with_diffs(rows)
