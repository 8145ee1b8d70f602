import math

import numpy as np
import pytest

from efld.data import Dataset, SynthSpec, synth_splits
from efld.engine import (OptimizerSpec, Schedule, TrainConfig, TrainState, adaptive_alpha, efld_step, rng_streams,
                         run_training, sample_minibatch, sgld_params, sign_sgd_step)
from efld.errors import ConfigError, DomainError, NumericError
from efld.expfam import BERNOULLI_PM1, GAUSSIAN
from efld.models import LogisticModel, Model, QuadraticModel


def small_data(n=50, dim=3, seed=0):
    train, _ = synth_splits(SynthSpec(dim=dim, n=n, classes=2), seed)
    return train


def test_schedules():
    s = Schedule("step_decay", base=0.1, rate=0.5, every=2)
    assert [s.value(0, e) for e in range(5)] == pytest.approx([0.1, 0.1, 0.05, 0.05, 0.025])
    inv = Schedule("inverse_sqrt", base=1.0)
    assert inv.value(3, 0) == pytest.approx(0.5)
    assert Schedule(base=2.0).scaled(3.0).value(10, 10) == 6.0
    with pytest.raises(ConfigError):
        Schedule("cosine")


def test_sgld_params_mapping():
    assert sgld_params(0.01, 0.002) == (0.01, pytest.approx(0.2))
    with pytest.raises(ConfigError):
        sgld_params(0.0, 1.0)
    with pytest.raises(ConfigError):
        sgld_params(0.1, -1.0)


def test_sgld_spec_requires_one_noise_source():
    with pytest.raises(ConfigError):
        OptimizerSpec("sgld", Schedule(base=0.1))
    with pytest.raises(ConfigError):
        OptimizerSpec("sgld", Schedule(base=0.1), beta=10.0, sigma_over_eta=0.1)
    spec = OptimizerSpec("sgld", Schedule(base=0.02), beta=100.0)
    p = spec.step_params(0, 0)
    assert p.sigma == pytest.approx(math.sqrt(2 * 0.02 / 100))
    assert p.alpha == pytest.approx(p.sigma / 0.02)
    assert 2 * p.eta / p.sigma**2 == pytest.approx(100.0)


def test_with_alpha_scale_doubles_alpha():
    for spec in (OptimizerSpec("sgld", Schedule(base=0.02), beta=100.0),
                 OptimizerSpec("sgld", Schedule(base=0.02), sigma_over_eta=0.3),
                 OptimizerSpec("sgld", Schedule(base=0.02), sigma=Schedule(base=0.01)),
                 OptimizerSpec("noisy_sign_sgd", Schedule(base=0.1), alpha=Schedule(base=0.5))):
        a = spec.step_params(0, 0).alpha
        b = spec.with_alpha_scale(2.0).step_params(0, 0).alpha
        assert b == pytest.approx(2 * a)


def test_sgld_step_is_langevin_increment():
    """With rho = eta and alpha = sigma / eta the update is w - eta * g + sigma * N(0, 1)."""
    eta, sigma = 0.1, 0.05
    rho, alpha = sgld_params(eta, sigma)
    g = np.array([1.0, -2.0])
    w = np.array([0.5, 0.5])
    out = np.array([efld_step(TrainState(w, 0, np.random.default_rng(i)), GAUSSIAN, g, rho, alpha).w
                    for i in range(20000)])
    np.testing.assert_allclose(out.mean(axis=0), w - eta * g, atol=2e-3)
    np.testing.assert_allclose(out.std(axis=0), sigma, rtol=0.03)


def test_efld_step_errors():
    st = TrainState(np.zeros(2), 0, np.random.default_rng(0))
    with pytest.raises(DomainError):
        efld_step(st, GAUSSIAN, np.ones(2), 0.0, 1.0)
    with pytest.raises(NumericError) as ei:
        efld_step(st, GAUSSIAN, np.array([np.nan, 1.0]), 0.1, 1.0)
    assert ei.value.step == 1 and ei.value.snapshot is not None


def test_sign_sgd_sign_zero_is_plus_one():
    st = TrainState(np.zeros(3), 0, np.random.default_rng(0))
    np.testing.assert_array_equal(sign_sgd_step(st, np.array([0.0, 2.0, -1.0]), 0.1).w, [-0.1, -0.1, 0.1])


def test_noisy_sign_agrees_with_sign_for_large_gradients():
    alpha = 0.01
    g = np.array([0.1, -0.1, 0.5, -1.0])
    rng = np.random.default_rng(0)
    agree = 0
    draws = 20000
    for _ in range(draws):
        st = efld_step(TrainState(np.zeros(4), 0, rng), BERNOULLI_PM1, g, 1.0, alpha)
        agree += np.sum(np.sign(-st.w) == np.sign(g))
    assert agree / (4 * draws) >= 0.999


def test_rng_streams_independent_and_reproducible():
    a = rng_streams(3, ("x", "y"))
    b = rng_streams(3, ("x", "y"))
    assert a["x"].random() == b["x"].random()
    assert rng_streams(3, ("x", "y"))["x"].random() != rng_streams(3, ("x", "y"))["y"].random()


def test_sample_minibatch():
    idx = sample_minibatch(10, 1000, np.random.default_rng(0))
    assert idx.min() >= 0 and idx.max() < 10
    with pytest.raises(ConfigError):
        sample_minibatch(0, 1, np.random.default_rng(0))


def test_run_training_deterministic_and_records():
    data = small_data()
    model = LogisticModel(3, 2)
    spec = OptimizerSpec("sgld", Schedule("step_decay", 0.1, 0.5, 1), batch_size=10, sigma_over_eta=0.2)
    cfg = TrainConfig(model, data, spec, 12, seed=4, record_path=True)
    seen = []
    a = run_training(cfg, [seen.append])
    b = run_training(cfg)
    np.testing.assert_array_equal(a.w_final, b.w_final)
    assert a.steps_per_epoch == 5
    assert a.epoch.tolist() == [0] * 5 + [1] * 5 + [2] * 2
    np.testing.assert_allclose(a.eta[:6], [0.1] * 5 + [0.05])
    np.testing.assert_allclose(a.alpha, 0.2)
    assert a.path.shape == (13, model.param_count)
    assert [s.t for s in seen] == list(range(1, 13))
    np.testing.assert_array_equal(seen[0].w_prev, a.path[0])
    np.testing.assert_array_equal(seen[-1].w, a.w_final)


def test_run_training_modes():
    data = small_data()
    model = LogisticModel(3, 2)
    for spec in (
        OptimizerSpec("noisy_sign_sgd", Schedule(base=0.01), alpha_mode="delta", alpha_safety=1.0, pool_m=16),
        OptimizerSpec("noisy_sign_sgd", Schedule(base=0.01), full_batch=True, alpha_mode="grad_inf"),
        OptimizerSpec("sign_sgd", Schedule(base=0.01)),
        OptimizerSpec("sgd", Schedule(base=0.01)),
        OptimizerSpec("efld", Schedule(base=0.01), family=GAUSSIAN, alpha=Schedule(base=1.0)),
    ):
        tr = run_training(TrainConfig(model, data, spec, 5, seed=0))
        assert np.all(np.isfinite(tr.w_final))
        if spec.alpha_mode == "grad_inf":
            g = model.mean_grad(np.zeros(model.param_count), data.X, data.y)
            assert tr.alpha[0] == pytest.approx(np.max(np.abs(g)))


def test_delta_mode_alpha_meets_floor():
    data = small_data()
    model = LogisticModel(3, 2)
    spec = OptimizerSpec("noisy_sign_sgd", Schedule(base=0.01), alpha_mode="delta", alpha_safety=1.0, pool_m=1000)
    tr = run_training(TrainConfig(model, data, spec, 1, seed=0))
    X = np.concatenate([data.X, data.pool_X])
    y = np.concatenate([data.y, data.pool_y])
    assert tr.alpha[0] == pytest.approx(adaptive_alpha(model, np.zeros(model.param_count), X, y, 1.0))
    with pytest.raises(DomainError):
        adaptive_alpha(model, np.zeros(model.param_count), X, y, 1.0, safety=0.5)


class _Exploding(Model):
    param_count = 1
    dim = 1

    def init_params(self, rng):
        return np.zeros(1)

    def losses(self, w, X, y):
        return np.zeros(X.shape[0])

    def grads(self, w, X, y):
        return np.full((X.shape[0], 1), np.inf if w[0] < -0.5 else 1.0)

    def mean_grad(self, w, X, y):
        return self.grads(w, X, y).mean(axis=0)


def test_numeric_error_names_step():
    data = Dataset(np.zeros((4, 1)), np.zeros(4, dtype=np.int64), 2)
    spec = OptimizerSpec("sgd", Schedule(base=0.3), full_batch=True)
    with pytest.raises(NumericError, match="step 3"):
        run_training(TrainConfig(_Exploding(), data, spec, 10, seed=0))


def test_quadratic_sgd_converges():
    model = QuadraticModel(np.array([1.0, -1.0]), data_shift=False)
    data = Dataset(np.zeros((2, 2)), np.zeros(2, dtype=np.int64), 2)
    tr = run_training(TrainConfig(model, data, OptimizerSpec("sgd", Schedule(base=0.5), full_batch=True), 60, 0))
    np.testing.assert_allclose(tr.w_final, [1.0, -1.0], atol=1e-12)


def test_unknown_kind():
    with pytest.raises(ConfigError):
        OptimizerSpec("adam", Schedule())
    with pytest.raises(ConfigError):
        OptimizerSpec("noisy_sign_sgd", Schedule())
