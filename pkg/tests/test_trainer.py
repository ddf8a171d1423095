import math
from dataclasses import replace

import numpy as np
import pytest

from cfgnn.baselines import tdm_rates, tdm_schedule
from cfgnn.phy import capacity
from cfgnn.regnn import RegnnConfig, RegnnParams, forward, init_params
from cfgnn.topology import DropParams, drop_channels, generate_drop
from cfgnn.trainer import (LOG_COLUMNS, Batch, BatchStats, Environment, TrainerConfig,
                           TrainerState, batch_capacity, dual_update, evaluate,
                           evaluate_policy, init_state, iterate, lagrangian,
                           make_batch, primal_update, summarize, train)

ENV = Environment()
RCFG = RegnnConfig(p_max=ENV.p_max)


def _drops(m, n, start=0, **kw):
    return [generate_drop(DropParams(m, seed=start + i, **kw)) for i in range(n)]


def _state(m, theta_seed=0, **kw):
    st = init_state(RCFG, m, TrainerConfig(), theta_seed)
    return replace(st, **kw)


def _stub(rates, grad=None):
    zero = RegnnParams.zeros(RCFG)
    return BatchStats(np.asarray(rates, float), lambda lam: grad or zero)


def test_make_batch_shapes_and_gso_modes():
    drop = _drops(4, 1, area_side=200)[0]
    b = make_batch(drop, ENV, 12)
    assert len(b) == 12 and b.gso.S.shape == (12, 4, 4)
    fixed = make_batch(drop, replace(ENV, gso_per_step=False), 12)
    assert np.array_equal(fixed.gso.S[0], fixed.gso.S[-1])
    np.testing.assert_allclose(np.linalg.norm(fixed.gso.S[0], 2), 1.0, rtol=1e-6)


def test_batch_capacity_identical_samples():
    drop = _drops(3, 1)[0]
    b = make_batch(drop, ENV, 1)
    rep = Batch(b.H.__class__(np.repeat(b.H.h, 4, 0), b.H.noise_power),
                b.gso.__class__(np.repeat(b.gso.S, 4, 0)))
    theta = init_params(RCFG, 1)
    np.testing.assert_allclose(batch_capacity(theta, rep).mean_rates,
                               batch_capacity(theta, b).mean_rates, rtol=1e-12)


def test_batch_capacity_two_sample_average():
    b = make_batch(_drops(3, 1, start=5)[0], ENV, 2)
    theta = init_params(RCFG, 2)
    terms = []
    for t in range(2):
        p, _ = forward(b.gso.S[t], theta)
        terms.append(capacity(b.H[t], p))
    np.testing.assert_allclose(batch_capacity(theta, b).mean_rates,
                               (terms[0] + terms[1]) / 2, rtol=1e-12)


def test_zero_prices_give_zero_policy_gradient():
    b = make_batch(_drops(3, 1)[0], ENV, 5)
    grad = batch_capacity(init_params(RCFG, 0), b).policy_grad(np.zeros(3))
    assert np.all(grad.flat() == 0)


def test_policy_gradient_matches_finite_differences():
    b = make_batch(_drops(2, 1, start=11, area_side=150)[0], ENV, 6)
    theta = init_params(RCFG, 3)
    lam = np.array([0.7, 1.3])
    grad = batch_capacity(theta, b).policy_grad(lam).flat()
    vec, eps = theta.flat(), 1e-6
    fd = np.empty_like(vec)
    for i in range(vec.size):
        e = np.zeros_like(vec)
        e[i] = eps
        hi = batch_capacity(RegnnParams.from_flat(RCFG, vec + e), b).mean_rates @ lam
        lo = batch_capacity(RegnnParams.from_flat(RCFG, vec - e), b).mean_rates @ lam
        fd[i] = (hi - lo) / (2 * eps)
    assert np.linalg.norm(grad - fd) <= 1e-4 * np.linalg.norm(fd)


def test_lagrangian_special_cases():
    cfg = TrainerConfig()
    st = _state(3, x=np.array([1.0, 2.0, 4.0]))
    assert lagrangian(st, _stub([9.0, 9.0, 9.0]), cfg) == pytest.approx(7.0)
    x = np.array([1.5, 1.5, 1.5])
    st = _state(3, x=x, s=np.asarray(0.5), lam=np.array([1.0, 2.0, 3.0]),
                mu=np.array([0.1, 0.2, 0.3]))
    assert lagrangian(st, _stub(x), cfg) == pytest.approx(4.5 - 0.125)


def test_lagrangian_term_by_term():
    rng = np.random.default_rng(0)
    cfg = TrainerConfig(shared_slack=False, c_min=2.0)
    x, s, lam, mu, c_hat = (rng.uniform(0, 3, 4) for _ in range(5))
    st = _state(4, x=x, s=s, lam=lam, mu=mu)
    expected = sum(x)
    expected -= 0.5 * sum(v * v for v in s)
    expected -= sum(lam[i] * (x[i] - c_hat[i]) for i in range(4))
    expected -= sum(mu[i] * (2.0 - s[i] - x[i]) for i in range(4))
    assert lagrangian(st, _stub(c_hat), cfg) == pytest.approx(expected, rel=1e-12)


def test_primal_update_with_zero_duals():
    cfg = TrainerConfig()
    st = _state(3, s=np.asarray(0.8))
    new = primal_update(st, None, cfg, _stub([1, 1, 1]))
    assert np.array_equal(new.theta.flat(), st.theta.flat())
    np.testing.assert_allclose(new.x, cfg.lr_x)
    assert 0 <= new.s < 0.8


def test_slack_one_step_arithmetic():
    cfg = TrainerConfig()
    st = _state(2, mu=np.array([0.25, 0.75]))
    new = primal_update(st, None, cfg, _stub([1, 1]))
    assert float(new.s) == pytest.approx(5e-4)


def test_slack_floors_at_zero():
    cfg = TrainerConfig(lr_slack=0.6)
    st = _state(2, s=np.asarray(10.0))
    for _ in range(5):
        prev = float(st.s)
        st = primal_update(st, None, cfg, _stub([1, 1]))
        assert float(st.s) < prev
    st = primal_update(st, None, TrainerConfig(lr_slack=2.0), _stub([1, 1]))
    assert float(st.s) == 0.0


def test_per_link_slack_uses_own_price():
    cfg = TrainerConfig(shared_slack=False)
    st = init_state(RCFG, 2, cfg)
    st = replace(st, mu=np.array([0.5, 0.0]))
    new = primal_update(st, None, cfg, _stub([1, 1]))
    np.testing.assert_allclose(new.s, [5e-4, 0.0])


def test_dual_update_fixed_at_balance():
    cfg = TrainerConfig()
    x = np.array([1.5, 1.5])
    st = _state(2, x=x, s=np.asarray(0.5), lam=np.array([0.3, 0.4]), mu=np.array([0.2, 0.1]))
    new = dual_update(st, None, cfg, _stub(x))
    np.testing.assert_array_equal(new.lam, st.lam)
    np.testing.assert_array_equal(new.mu, st.mu)


def test_dual_update_hand_arithmetic():
    cfg = TrainerConfig()
    st = _state(2, x=np.array([2.0, 2.0]), s=np.asarray(0.5),
                lam=np.array([0.5, 0.1]), mu=np.array([0.2, 0.0]))
    new = dual_update(st, None, cfg, _stub([1.0, 3.0]))
    np.testing.assert_allclose(new.lam, [0.51, 0.09], rtol=1e-12)
    np.testing.assert_allclose(new.mu, [0.195, 0.0], rtol=1e-12)


def test_mu_clamps_when_constraint_loose():
    st = _state(2, x=np.array([10.0, 10.0]), mu=np.array([0.01, 0.0]))
    new = dual_update(st, None, TrainerConfig(), _stub([10, 10]))
    np.testing.assert_array_equal(new.mu, [0.0, 0.0])


def test_full_update_fixed_point():
    cfg = TrainerConfig()
    x = np.array([1.5, 1.5])
    mu = np.array([0.5, 0.5])
    st = _state(2, x=x, s=np.asarray(0.5), mu=mu, lam=1.0 + mu)
    stats = _stub(x)
    new = primal_update(st, None, cfg, stats)
    new = replace(new, lam=dual_update(st, None, cfg, stats).lam,
                  mu=dual_update(st, None, cfg, stats).mu)
    np.testing.assert_allclose(new.x, st.x)
    np.testing.assert_allclose(new.s, st.s)
    np.testing.assert_allclose(new.lam, st.lam)
    np.testing.assert_allclose(new.mu, st.mu)
    np.testing.assert_array_equal(new.theta.flat(), st.theta.flat())


def test_violated_constraint_raises_mu():
    cfg = TrainerConfig()
    st = _state(2)
    for _ in range(20):
        prev = st.mu.copy()
        stats = _stub([0.5, 0.5])
        primal = primal_update(st, None, cfg, stats)
        dual = dual_update(st, None, cfg, stats)
        st = replace(primal, lam=dual.lam, mu=dual.mu)
        violated = st.x + st.s < cfg.c_min
        assert np.all(st.mu[violated] >= prev[violated])


def test_iterate_reads_pre_step_state():
    b = make_batch(_drops(3, 1)[0], ENV, 4)
    cfg = TrainerConfig()
    st = _state(3, x=np.array([1.0, 2.0, 3.0]), lam=np.array([0.2, 0.3, 0.1]),
                mu=np.array([0.4, 0.0, 0.2]), s=np.asarray(0.3))
    new, stats = iterate(st, b, cfg)
    assert new.k == 1
    np.testing.assert_allclose(new.lam, np.maximum(st.lam - cfg.lr_lambda * (stats.mean_rates - st.x), 0))
    np.testing.assert_allclose(new.mu, np.maximum(st.mu - cfg.lr_mu * (st.x + 0.3 - 2.0), 0))


def test_train_with_zero_rates_is_frozen():
    cfg = TrainerConfig(0, 0, 0, 0, 0, batch_size=5)
    theta0 = init_params(RCFG, 7)
    theta, log, state = train(cfg, _drops(3, 4), ENV, RCFG, seed=7)
    assert np.array_equal(theta.flat(), theta0.flat())
    assert np.all(state.x == 0) and float(state.s) == 0
    assert [r["iter"] for r in log.rows] == [1, 2, 3, 4]


def test_train_is_deterministic(tmp_path):
    cfg = TrainerConfig(batch_size=10)
    runs = []
    for k in range(2):
        theta, log, _ = train(cfg, _drops(4, 6), ENV, RCFG, seed=3)
        path = tmp_path / f"log{k}.csv"
        log.write_csv(path)
        runs.append((theta.flat(), path.read_bytes()))
    assert np.array_equal(runs[0][0], runs[1][0])
    assert runs[0][1] == runs[1][1]
    assert runs[0][1].decode().splitlines()[0] == ",".join(LOG_COLUMNS)


def test_train_rejects_mixed_sizes_and_empty_stream():
    with pytest.raises(ValueError):
        train(TrainerConfig(batch_size=2), _drops(3, 1) + _drops(4, 1), ENV)
    with pytest.raises(ValueError):
        train(TrainerConfig(), [], ENV)


def test_single_pair_slack_relaxes_toward_zero():
    # One strong link easily exceeds C_min: the slack rises during warm-up, then decays.
    cfg = TrainerConfig(batch_size=10)
    drops = (generate_drop(DropParams(1, seed=i, steps_per_drop=10)) for i in range(2000))
    _, log, state = train(cfg, drops, ENV, RCFG, seed=0)
    s = log.column("s")
    assert state.mu[0] == 0.0
    assert s[-1] < 0.25 * s.max()
    assert np.all(np.diff(s[-500:]) < 0)
    assert state.x[0] + float(state.s) >= cfg.c_min


def test_evaluate_silent_policy():
    drops = _drops(4, 2)
    metrics = evaluate_policy(lambda b: np.zeros((len(b), 4)), drops, ENV, 20)
    assert all(m.sum_rate == 0 and np.all(m.rates == 0) for m in metrics)


def test_evaluate_single_pair_always_on():
    drop = _drops(1, 1, start=3)[0]
    metrics = evaluate_policy(lambda b: np.full((len(b), 1), ENV.p_max), [drop], ENV)
    H = drop_channels(drop, ENV.noise_power)
    expected = np.mean(np.log2(1 + H.gain[:, 0, 0] * ENV.p_max / ENV.noise_power))
    assert metrics[0].sum_rate == pytest.approx(expected, rel=1e-12)


def test_evaluate_tdm_matches_baseline_module():
    drops = _drops(5, 3, area_side=300)
    metrics = evaluate_policy(lambda b: tdm_schedule(len(b), 5, ENV.p_max), drops, ENV)
    for drop, met in zip(drops, metrics):
        H = drop_channels(drop, ENV.noise_power)
        np.testing.assert_allclose(met.rates, tdm_rates(H, ENV.p_max), rtol=1e-12)


def test_evaluate_regnn_binarized_and_summary():
    drops = _drops(4, 3)
    theta = init_params(RCFG, 0)
    cont = evaluate(theta, drops, ENV, binarize_flag=False, num_steps=10)
    binary = evaluate(theta, drops, ENV, binarize_flag=True, num_steps=10)
    assert len(cont) == len(binary) == 3
    sr, p5 = summarize(binary)
    assert sr == pytest.approx(np.mean([m.sum_rate for m in binary]))
    assert p5 <= min(m.rates.max() for m in binary)
    with pytest.raises(ValueError):
        summarize([])
