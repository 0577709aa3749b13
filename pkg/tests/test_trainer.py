import math

import numpy as np
import pytest
from scipy import stats as sps

from statmix import trainer
from statmix.imagecore import Dataset, Image
from statmix.trainer import (ConfigurationError, ModelState, TrainerConfig, TrainingError, cosine_lr,
                             evaluate, init_model, loss, loss_and_grads, sgd_momentum_step, train_epoch)


def finite_difference_grads(state, X, y, h=1e-5):
    grads = {}
    for name, w in state.params.items():
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + h
            up = loss(state, X, y)
            w[idx] = orig - h
            down = loss(state, X, y)
            w[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def max_rel_error(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8)))


@pytest.mark.parametrize("model", ["linear", "mlp"])
def test_gradient_check_6x6x3(model):
    gen = np.random.default_rng(4)
    cfg = TrainerConfig(model=model, hidden_units=5)
    state = init_model(cfg, 6 * 6 * 3, 4, gen)
    state.params = {k: v + gen.normal(0, 0.1, v.shape) for k, v in state.params.items()}
    X = gen.random((7, 6, 6, 3))
    y = gen.integers(0, 4, 7)
    _, analytic = loss_and_grads(state, X, y)
    numeric = finite_difference_grads(state, X, y)
    for name in analytic:
        assert max_rel_error(analytic[name], numeric[name]) <= 1e-4, name


def test_cosine_endpoints():
    assert cosine_lr(0, 0.01, 200) == 0.01
    assert cosine_lr(200, 0.01, 200) == 0.0
    assert cosine_lr(100, 0.01, 200) == pytest.approx(0.005, abs=1e-15)


def test_cosine_monotone_and_validated():
    lrs = [cosine_lr(e, 0.1, 10) for e in range(11)]
    assert all(a > b for a, b in zip(lrs, lrs[1:]))
    with pytest.raises(ValueError):
        cosine_lr(11, 0.1, 10)


def _scalar_state(w=0.0, v=0.0):
    return ModelState({"W": np.array([w])}, {"W": np.array([v])})


def test_plain_sgd_step():
    out = sgd_momentum_step(_scalar_state(1.0), {"W": np.array([2.0])}, lr=0.1, momentum=0.0)
    assert out.params["W"][0] == pytest.approx(0.8, abs=1e-15)


def test_heavy_ball_recurrence():
    # oracle: v <- m v + g, w <- w - lr v, iterated by hand
    w, v, seq = 0.0, 0.0, []
    for _ in range(2):
        v = 0.9 * v + 1.0
        w = w - 1.0 * v
        seq.append((w, v))
    assert seq == [(-1.0, 1.0), (-2.9, 1.9)]
    s = _scalar_state()
    for expected_w, expected_v in seq:
        s = sgd_momentum_step(s, {"W": np.array([1.0])}, lr=1.0, momentum=0.9)
        assert s.params["W"][0] == pytest.approx(expected_w, abs=1e-15)
        assert s.velocity["W"][0] == pytest.approx(expected_v, abs=1e-15)


def test_zero_gradient_no_change():
    s = _scalar_state(0.3)
    out = sgd_momentum_step(s, {"W": np.array([0.0])}, lr=0.5, momentum=0.9)
    assert out.params["W"][0] == 0.3 and out.velocity["W"][0] == 0.0


def test_nonfinite_gradient_names_tensor():
    with pytest.raises(TrainingError, match="W"):
        sgd_momentum_step(_scalar_state(), {"W": np.array([np.nan])}, lr=0.1, momentum=0.0)


def _toy(n_per_class=20, side=4):
    imgs = [Image(np.full((side, side, 3), 0.1), 0) for _ in range(n_per_class)]
    imgs += [Image(np.full((side, side, 3), 0.9), 1) for _ in range(n_per_class)]
    return Dataset(tuple(imgs), 2)


def test_separable_toy_reaches_full_accuracy():
    ds = _toy()
    gen = np.random.default_rng(0)
    state = init_model(TrainerConfig(epochs_total=20), 48, 2, gen)
    for epoch in range(20):
        order = gen.permutation(len(ds))
        batches = [(ds.pixels[order[i:i + 8]], ds.labels[order[i:i + 8]]) for i in range(0, len(ds), 8)]
        state = train_epoch(state, batches, cosine_lr(epoch, 0.01, 20), 0.9)
    assert evaluate(state, ds) == 1.0


def test_loss_non_increasing_on_toy():
    ds = _toy()
    gen = np.random.default_rng(0)
    state = init_model(TrainerConfig(), 48, 2, np.random.default_rng(1))
    losses = []
    for _ in range(10):
        order = gen.permutation(len(ds))
        batches = [(ds.pixels[order[i:i + 8]], ds.labels[order[i:i + 8]]) for i in range(0, len(ds), 8)]
        state = train_epoch(state, batches, 0.01, 0.9)
        losses.append(loss(state, ds.pixels, ds.labels))
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_untrained_model_is_at_chance():
    gen = np.random.default_rng(2)
    n = 1000
    X = gen.random((n, 8, 8, 3))
    y = np.repeat(np.arange(10), n // 10)
    accs = []
    for seed in range(5):
        state = init_model(TrainerConfig(), 192, 10, np.random.default_rng(seed))
        accs.append(evaluate(state, (X, y)))
    lo, hi = sps.binom.ppf([0.005, 0.995], n, 0.1) / n
    assert all(lo <= a <= hi for a in accs)


def test_evaluate_order_independent_and_tie_break():
    state = ModelState({"W": np.zeros((3, 3)), "b": np.zeros(3)}, {"W": np.zeros((3, 3)), "b": np.zeros(3)})
    X = np.eye(3)
    # all logits tie -> class 0 predicted everywhere
    assert evaluate(state, (X, np.array([0, 1, 2]))) == pytest.approx(1 / 3)
    s2 = init_model(TrainerConfig(), 12, 3, np.random.default_rng(0))
    Xr = np.random.default_rng(1).random((30, 12))
    yr = np.random.default_rng(2).integers(0, 3, 30)
    perm = np.random.default_rng(3).permutation(30)
    assert evaluate(s2, (Xr, yr)) == evaluate(s2, (Xr[perm], yr[perm]))


def test_dimension_mismatch():
    state = init_model(TrainerConfig(), 12, 2, np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        evaluate(state, (np.zeros((2, 5)), np.zeros(2, dtype=int)))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TrainerConfig(model="resnet")
    with pytest.raises(ConfigurationError):
        TrainerConfig(momentum=1.0)
    with pytest.raises(ConfigurationError):
        TrainerConfig(lr0=0)


def test_init_scale_bound():
    state = init_model(TrainerConfig(model="mlp", hidden_units=16), 100, 3, np.random.default_rng(0))
    assert np.abs(state.params["W1"]).max() <= 1 / math.sqrt(100)
    assert np.abs(state.params["W2"]).max() <= 1 / math.sqrt(16)
    assert all(state.velocity[k].shape == v.shape for k, v in state.params.items())


def test_checkpoint_round_trip(tmp_path):
    state = init_model(TrainerConfig(model="mlp", hidden_units=4), 6, 3, np.random.default_rng(0))
    trainer.save_checkpoint(state, tmp_path / "c.bin")
    back = trainer.load_checkpoint(tmp_path / "c.bin")
    assert set(back) == set(state.params)
    for k in back:
        assert np.array_equal(back[k], state.params[k].astype(np.float32))
