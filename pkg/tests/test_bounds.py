import math

import numpy as np
import pytest

from efld.bounds import (CSV_COLUMNS, BoundConfig, BoundLedger, BoundMeter, bound_series, delta_and_floor,
                         grad_discrepancy, li_bound, our_bound, read_ledger_csv, record_step, replay_ledger,
                         write_ledger_csv)
from efld.data import SynthSpec, synth_splits
from efld.engine import OptimizerSpec, Schedule, StepParams, TrainConfig, run_training
from efld.errors import ConfigError, FormatError, UnsupportedError
from efld.models import LogisticModel


@pytest.fixture(scope="module")
def setup():
    train, test = synth_splits(SynthSpec(dim=4, n=200, classes=3), 0)
    model = LogisticModel(4, 3)
    w = np.random.default_rng(1).normal(size=model.param_count)
    return train, test, model, w


def test_record_step_matches_pairwise_loop(setup):
    train, _, model, w = setup
    cfg = BoundConfig(n=train.n, pairs_per_step=7, eval_every=3)
    params = StepParams(eta=0.01, rho=0.01, alpha=0.5, sigma=0.005)
    led = record_step(BoundLedger(), 1, model, w, train, params, cfg, np.random.default_rng(5), track_delta=False)
    rng = np.random.default_rng(5)
    i = rng.integers(0, train.n, size=7)
    j = rng.integers(0, train.pool_size, size=7)
    discs, sq = [], []
    for a, b in zip(i, j):
        discs.append(grad_discrepancy(model, w, train.example(a), (train.pool_X[b], int(train.pool_y[b]))))
        g = model.grads(w, train.X[a][None], train.y[a:a + 1])[0]
        sq.append(float(g @ g))
    row = led.rows[0]
    assert row.mean_disc == pytest.approx(np.mean(discs), rel=1e-12)
    assert row.mean_grad_sq == pytest.approx(np.mean(sq), rel=1e-12)
    assert row.inv_alpha_sq == pytest.approx((0.01 / 0.005) ** 2)
    assert led.ours_radicand == pytest.approx(3 * row.mean_disc * 4.0)
    assert led.li_radicand == pytest.approx(3 * row.mean_grad_sq * 4.0)
    c = 8.0 * math.sqrt(5.0)
    assert our_bound(led, cfg) == pytest.approx(c / train.n * math.sqrt(led.ours_radicand))
    assert li_bound(led, cfg) == pytest.approx(c / train.n * math.sqrt(led.li_radicand))


def test_delta_matches_loop(setup):
    train, _, model, w = setup
    X, y = train.X[:15], train.y[:15]
    G = model.grads(w, X, y)
    want = max(np.linalg.norm(G[a] - G[b]) for a in range(15) for b in range(15))
    delta, floor = delta_and_floor(model, w, X, y, 0.25)
    assert delta == pytest.approx(want)
    assert floor == pytest.approx(math.sqrt(2.0) * want)


def test_li_unsupported_without_sigma(setup):
    train, _, model, w = setup
    cfg = BoundConfig(n=train.n)
    led = record_step(BoundLedger(), 1, model, w, train, StepParams(0.1, 0.1, 0.3, None), cfg,
                      np.random.default_rng(0), track_delta=False)
    assert math.isnan(led.rows[0].li_cum)
    with pytest.raises(UnsupportedError):
        li_bound(led, cfg)
    assert our_bound(led, cfg) > 0


def test_zero_discrepancy_adds_nothing(setup):
    train, _, model, _ = setup
    cfg = BoundConfig(n=train.n)
    same = train.subset(np.zeros(train.n, dtype=int))
    same = type(same)(same.X, same.y, same.num_classes, same.X[:5], same.y[:5])
    led = record_step(BoundLedger(), 1, model, np.zeros(model.param_count), same, StepParams(0.1, 0.1, 1.0, 0.1), cfg,
                      np.random.default_rng(0), track_delta=False)
    assert led.rows[0].mean_disc == 0.0 and led.ours_radicand == 0.0


def test_config_checks():
    with pytest.raises(ConfigError):
        BoundConfig(n=0)
    with pytest.warns(UserWarning, match="twice the batch"):
        BoundConfig(n=100, batch_size=60)
    assert BoundConfig(n=10, c2=0.25).c == pytest.approx(8.0 * math.sqrt(1.25))
    assert BoundConfig(n=10, c_li=3.0).li_constant == 3.0


def _sgld_run(train, test, model, T=40, eval_every=5, seed=0):
    spec = OptimizerSpec("sgld", Schedule("step_decay", 0.05, 0.9, 1), batch_size=20, sigma_over_eta=0.5)
    cfg = BoundConfig(n=train.n, eval_every=eval_every, batch_size=20)
    meter = BoundMeter(model, train, cfg, np.random.default_rng(seed), T, test=test)
    run_training(TrainConfig(model, train, spec, T, seed), [meter])
    return meter.ledger, cfg


def test_meter_rows_and_weights(setup):
    train, test, model, _ = setup
    led, cfg = _sgld_run(train, test, model, T=42, eval_every=5)
    assert [r.t for r in led.rows] == list(range(1, 43, 5))
    assert sum(r.weight for r in led.rows) == 42
    assert all(0 <= r.train_err <= 1 and 0 <= r.test_err <= 1 for r in led.rows)
    assert all(np.isfinite(r.incoh_surrogate) for r in led.rows)
    ours, li = bound_series(led, cfg)
    assert np.all(np.diff(ours) >= 0) and np.all(np.diff(li) >= 0)


def test_replay_halves_bound_and_n_scaling(setup):
    train, test, model, _ = setup
    led, cfg = _sgld_run(train, test, model)
    base = our_bound(led, cfg)
    doubled = replay_ledger(led, 2.0)
    assert our_bound(doubled, cfg) == pytest.approx(base / 2, rel=1e-14)
    assert li_bound(doubled, cfg) == pytest.approx(li_bound(led, cfg) / 2, rel=1e-14)
    assert doubled.rows[0].alpha == pytest.approx(2 * led.rows[0].alpha)
    assert our_bound(replay_ledger(led, 1.0), cfg) == pytest.approx(base, rel=1e-15)
    for n in (50, 400, 1600):
        assert our_bound(led, BoundConfig(n=n)) * n == pytest.approx(base * cfg.n, rel=1e-14)
    with pytest.raises(ConfigError):
        replay_ledger(led, 0.0)


def test_retraining_with_doubled_alpha_halves_ratio(setup):
    """Same seed, alpha doubled: the per-row statistics differ but 1/alpha^2 is exactly a quarter."""
    train, _, model, _ = setup
    spec = OptimizerSpec("sgld", Schedule(base=0.05), batch_size=20, sigma_over_eta=0.5)
    for s in (spec, spec.with_alpha_scale(2.0)):
        cfg = BoundConfig(n=train.n)
        meter = BoundMeter(model, train, cfg, np.random.default_rng(0), 3)
        run_training(TrainConfig(model, train, s, 3, 0), [meter])
        assert meter.ledger.rows[0].inv_alpha_sq == pytest.approx(1 / s.step_params(0, 0).alpha ** 2)


def test_csv_round_trip_and_determinism(setup, tmp_path):
    train, test, model, _ = setup
    led, cfg = _sgld_run(train, test, model)
    p1 = write_ledger_csv(tmp_path / "a.csv", led, cfg)
    led2, _ = _sgld_run(train, test, model)
    p2 = write_ledger_csv(tmp_path / "b.csv", led2, cfg)
    assert p1.read_bytes() == p2.read_bytes()
    cols = read_ledger_csv(p1)
    assert tuple(cols) == CSV_COLUMNS
    ours, _ = bound_series(led, cfg)
    np.testing.assert_array_equal(cols["our_bound"], ours)
    np.testing.assert_array_equal(cols["t"], [r.t for r in led.rows])


def test_read_csv_errors(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    with pytest.raises(FormatError, match="empty"):
        read_ledger_csv(empty)
    missing = tmp_path / "m.csv"
    missing.write_text("t,epoch\n1,0\n")
    with pytest.raises(FormatError, match="eta"):
        read_ledger_csv(missing)
    bad = tmp_path / "b.csv"
    bad.write_text("t,epoch\n1,x\n")
    with pytest.raises(FormatError, match="epoch"):
        read_ledger_csv(bad, required=["t", "epoch"])
    with pytest.raises(FormatError):
        read_ledger_csv(tmp_path / "nope.csv")


def test_pool_required(setup):
    train, _, model, w = setup
    no_pool = type(train)(train.X, train.y, train.num_classes)
    with pytest.raises(ConfigError):
        record_step(BoundLedger(), 1, model, w, no_pool, StepParams(0.1, 0.1, 1.0, 0.1), BoundConfig(n=10),
                    np.random.default_rng(0))
