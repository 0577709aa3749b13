"""
Sweeping the augmentation probability
=====================================

The ablation grid runs p = 0.0, 0.1, ..., 1.0 at N=5 and plots mean accuracy
against p. This writes the two-column plot data and draws it with
matplotlib when that is installed.
"""

from statmix import SimConfig, aggregate, run_experiment
from statmix.cli import parse_grid
from statmix.orchestrator import load_datasets

base = SimConfig(n_nodes=5, epochs=10, repetitions=1, batch_size=32, num_classes=4,
                 train_per_class=100, global_seed=9)
train, test = load_datasets(base)
results = [run_experiment(base.replace(p_statmix=p), train, test) for p in parse_grid("0:1:0.1")]
report = aggregate(results, tail_epochs=5)
data = report.plot_data(standard_da=False)
print(data)

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    plt = None

if plt is not None:
    ps, means = zip(*(map(float, line.split()) for line in data.splitlines()))
    plt.plot(ps, means, marker="o")
    plt.xlabel("probability of applying StatMix")
    plt.ylabel("test accuracy [%]")
    plt.savefig("sweep.png", dpi=100)
    print("saved sweep.png")
