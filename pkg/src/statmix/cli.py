"""Command line front end: ``statmix <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import exchange, imagecore, report
from .augment import statmix_batch
from .orchestrator import (RunResult, SimConfig, derive_stream, load_datasets, parse_key_values,
                           run_experiment)
from .partition import read_manifest, stratified_split, write_manifest
from .stats import compute_stats

log = logging.getLogger("statmix")

# flag -> SimConfig field
SIM_FLAGS = {
    "n_nodes": ("--n-nodes", int),
    "p_statmix": ("--p-statmix", float),
    "epochs": ("--epochs", int),
    "batch_size": ("--batch-size", int),
    "repetitions": ("--reps", int),
    "global_seed": ("--seed", int),
    "dataset": ("--dataset", str),
    "num_classes": ("--num-classes", int),
    "classes": ("--classes", str),
    "train_per_class": ("--train-per-class", int),
    "test_per_class": ("--test-per-class", int),
    "model": ("--model", str),
    "hidden_units": ("--hidden-units", int),
    "lr0": ("--lr0", float),
    "momentum": ("--momentum", float),
    "sigma_floor": ("--sigma-floor", float),
    "crop_padding": ("--crop-padding", int),
    "flip_probability": ("--flip-probability", float),
}


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key=value file; flags override it")
    for dest, (flag, kind) in SIM_FLAGS.items():
        p.add_argument(flag, dest=dest, type=kind, default=None)
    p.add_argument("--standard-da", dest="standard_da", nargs="?", const="true", default=None,
                   help="enable random crop + horizontal flip (optionally =true/false)")
    p.add_argument("--workers", type=int, default=1)


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", default="synthetic",
                   help="CIFAR binary file, extracted archive directory, or 'synthetic'")
    p.add_argument("--num-classes", type=int, default=10)


def sim_config(args) -> SimConfig:
    values = {}
    if args.config is not None:
        values.update(parse_key_values(args.config.read_text()))
    for dest in list(SIM_FLAGS) + ["standard_da"]:
        v = getattr(args, dest, None)
        if v is not None:
            values[dest] = v
    return SimConfig.from_mapping(values)


def _train_set(dataset: str, num_classes: int, seed: int = 0) -> imagecore.Dataset:
    path = Path(dataset)
    if dataset == "synthetic":
        return load_datasets(SimConfig(num_classes=num_classes, global_seed=seed))[0]
    if path.is_dir():
        return imagecore.load_cifar_dir(path, num_classes, train=True)
    if path.is_file():
        return imagecore.load_cifar_binary(path, num_classes)
    raise FileNotFoundError(f"no such dataset: {dataset}")


def cmd_ingest(args) -> int:
    ds = _train_set(args.dataset, args.num_classes)
    counts = ds.class_counts()
    print(f"{ds.name}: {len(ds)} images of shape {ds.image_shape}, {ds.num_classes} classes")
    print("per-class counts: " + " ".join(str(int(c)) for c in counts))
    if args.out:
        imagecore.save_cifar_binary(ds, args.out)
    if args.ppm_dir:
        args.ppm_dir.mkdir(parents=True, exist_ok=True)
        for i in range(min(args.count, len(ds))):
            imagecore.write_ppm(ds[i], args.ppm_dir / f"image_{i:05d}_label{ds[i].label}.ppm")
    return 0


def cmd_partition(args) -> int:
    ds = _train_set(args.dataset, args.num_classes, args.seed)
    part = stratified_split(ds, args.n_nodes, derive_stream(args.seed, (args.rep,)))
    write_manifest(part, args.out, args.seed)
    print(f"wrote {args.out}: node sizes {part.node_sizes()}")
    return 0


def cmd_stats(args) -> int:
    ds = _train_set(args.dataset, args.num_classes)
    part, _ = read_manifest(args.manifest)
    if len(part.assignments) != len(ds):
        raise ValueError(f"manifest covers {len(part.assignments)} images, dataset has {len(ds)}")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    k_max = max(part.node_sizes())
    for node, ids in enumerate(part.per_node_ids):
        entries = exchange.publish_node_stats([ds[i] for i in ids], node)
        msg = exchange.encode_message(entries, part.n_nodes, k_max)
        (args.out_dir / f"node_{node}.stmx").write_bytes(msg)
    print(f"wrote {part.n_nodes} node uploads to {args.out_dir}")
    return 0


def cmd_distribute(args) -> int:
    published = []
    for path in args.inputs:
        _, _, entries = exchange.decode_message(Path(path).read_bytes())
        published.append(entries)
    published.sort(key=lambda entries: entries[0][0].node_id if entries else 0)
    tap = exchange.WireTap()
    registries = exchange.server_distribute(published, tap)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for node, reg in enumerate(registries):
        reg.dump(args.out_dir / f"registry_{node}.stmx")
    print(f"uplink {tap.uplink_bytes} bytes, downlink {tap.downlink_bytes} bytes, "
          f"{len(registries)} registries of {registries[0].expected_size if registries else 0} entries")
    return 0


def cmd_augment_preview(args) -> int:
    ds = _train_set(args.dataset, args.num_classes)
    sources = [int(i) for i in args.indices.split(",")]
    targets = [int(i) for i in args.targets.split(",")]
    args.out.mkdir(parents=True, exist_ok=True)
    augmented = []
    for s in sources:
        imagecore.write_ppm(ds[s], args.out / f"src{s}_orig.ppm")
        for t in targets:
            img = statmix_batch([ds[s]], compute_stats(ds[t]), args.sigma_floor)[0]
            augmented.append(img)
            imagecore.write_ppm(img, args.out / f"src{s}_stats{t}.ppm")
    grid = imagecore.Dataset(tuple(augmented), ds.num_classes, "preview")
    if ds.image_shape == (32, 32, 3):
        imagecore.save_cifar_binary(grid, args.out / "preview.bin")
    print(f"wrote {len(augmented)} augmented images to {args.out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = sim_config(args)
    train, test = load_datasets(cfg)
    res = run_experiment(cfg, train, test, workers=args.workers)
    if args.out:
        res.write(args.out)
    else:
        sys.stdout.write(res.to_csv())
    final = res.accuracy[:, :, -1].mean()
    log.info("final-epoch mean accuracy %.4f (%.1fs)", final, res.wall_clock)
    return 0


def parse_grid(spec: str) -> list[float]:
    """``start:stop:step`` (inclusive) or a comma list."""
    if ":" in spec:
        start, stop, step = (float(x) for x in spec.split(":"))
        if step <= 0:
            raise ValueError(f"grid step must be positive: {spec}")
        n = int(round((stop - start) / step)) + 1
        return [round(start + i * step, 10) for i in range(n)]
    return [float(x) for x in spec.split(",")]


def cmd_sweep(args) -> int:
    base = sim_config(args)
    grid = parse_grid(args.p_grid)
    train, test = load_datasets(base)
    args.out.mkdir(parents=True, exist_ok=True)
    results = []
    for p in grid:
        cfg = base.replace(p_statmix=p)
        res = run_experiment(cfg, train, test, workers=args.workers)
        res.write(args.out / f"run_p{p:g}.csv")
        results.append(res)
        print(f"p_statmix={p:g}: final-epoch mean accuracy {res.accuracy[:, :, -1].mean():.4f}")
    tail = min(args.tail, base.epochs)
    rep = report.aggregate(results, tail)
    rep.write(args.out / "report.csv")
    (args.out / f"plot_da{int(base.standard_da)}.tsv").write_text(rep.plot_data(base.standard_da))
    print(f"{len(grid)} configurations; report in {args.out / 'report.csv'}")
    return 0


def cmd_report(args) -> int:
    if args.means:
        rep = report.read_means_csv(args.means)
    else:
        if not args.inputs:
            raise ValueError("report needs run CSVs or --means")
        results = [RunResult.read(p) for p in args.inputs]
        rep = report.aggregate(results, args.tail)
    text = rep.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.plot_dir:
        args.plot_dir.mkdir(parents=True, exist_ok=True)
        for da in sorted({r.standard_da for r in rep.rows}):
            (args.plot_dir / f"plot_da{int(da)}.tsv").write_text(rep.plot_data(da))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="statmix", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a CIFAR binary file and summarise it")
    _add_dataset_flags(p)
    p.add_argument("--out", type=Path, help="re-export the records")
    p.add_argument("--ppm-dir", type=Path)
    p.add_argument("--count", type=int, default=10)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("partition", help="write a stratified partition manifest")
    _add_dataset_flags(p)
    p.add_argument("--n-nodes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rep", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("stats", help="compute each node's statistics upload")
    _add_dataset_flags(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("distribute", help="run the server round over node uploads")
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_distribute)

    p = sub.add_parser("augment-preview", help="export images re-statisticised with other images' stats")
    _add_dataset_flags(p)
    p.add_argument("--indices", default="0,1,2")
    p.add_argument("--targets", default="3,4,5,6")
    p.add_argument("--sigma-floor", type=float, default=1e-6)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("simulate", help="run one configuration and write its RunResult CSV")
    _add_sim_flags(p)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run a grid of p_statmix values and report them")
    _add_sim_flags(p)
    p.add_argument("--p-grid", default="0:1:0.1")
    p.add_argument("--tail", type=int, default=10)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="aggregate RunResult CSVs into a table")
    p.add_argument("inputs", nargs="*", type=Path)
    p.add_argument("--means", type=Path, help="report-shaped CSV of means; diffs are recomputed")
    p.add_argument("--tail", type=int, default=10)
    p.add_argument("--out", type=Path)
    p.add_argument("--plot-dir", type=Path)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"statmix {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
