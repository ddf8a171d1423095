"""Fast in-process invariant checks, runnable without pytest."""

from __future__ import annotations

import numpy as np

from .baselines import WmmseConfig, wmmse
from .phy import capacity, capacity_jacobian
from .regnn import RegnnConfig, backward, forward, init_params
from .tin_graph import TinParams, build_gso, tin_indicator
from .topology import ChannelMatrix, DropParams, FadingProcess, generate_drop
from .trainer import Environment, TrainerConfig, init_state, iterate, make_batch


def _random_channel(rng, m, noise=1.0):
    h = (rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))) / np.sqrt(2)
    return ChannelMatrix(h * (1.0 + 2.0 * np.eye(m)), noise)


def check_permutation_equivariance(rng):
    cfg = RegnnConfig(p_max=1.0)
    theta = init_params(cfg, int(rng.integers(1 << 31)))
    S = rng.random((8, 8))
    perm = rng.permutation(8)
    p, _ = forward(S, theta)
    q, _ = forward(S[np.ix_(perm, perm)], theta)
    assert np.max(np.abs(p[perm] - q)) <= 1e-9


def check_regnn_gradient(rng):
    cfg = RegnnConfig(p_max=1.0)
    theta = init_params(cfg, int(rng.integers(1 << 31)))
    S = rng.random((5, 5))
    S /= np.linalg.norm(S, 2)
    c = rng.standard_normal(5)
    _, tape = forward(S, theta)
    grad = backward(tape, S, theta, c).flat()
    vec = theta.flat()
    eps = 1e-6
    fd = np.empty_like(vec)
    for i in range(vec.size):
        e = np.zeros_like(vec)
        e[i] = eps
        hi = forward(S, type(theta).from_flat(cfg, vec + e))[0] @ c
        lo = forward(S, type(theta).from_flat(cfg, vec - e))[0] @ c
        fd[i] = (hi - lo) / (2 * eps)
    assert np.linalg.norm(grad - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-12)


def check_capacity_jacobian(rng):
    H = _random_channel(rng, 4)
    p = rng.uniform(0.1, 1.0, 4)
    jac = capacity_jacobian(H, p)
    eps = 1e-6
    fd = np.column_stack([
        (capacity(H, p + eps * e) - capacity(H, p - eps * e)) / (2 * eps) for e in np.eye(4)
    ])
    assert np.linalg.norm(jac - fd) <= 1e-4 * np.linalg.norm(fd)


def check_gso_norm(rng):
    H = _random_channel(rng, 6)
    gso = build_gso(H, TinParams(1.0, 1.0))
    assert abs(np.linalg.norm(gso.S, 2) - 1.0) <= 1e-6
    mask = tin_indicator(H, TinParams(1.0, 1.0))
    assert np.array_equal(gso.S > 0, mask)


def check_wmmse_monotone(rng):
    H = _random_channel(rng, 4)
    hist = wmmse(H, WmmseConfig(1.0, single_link_fallback=False)).history
    assert np.all(np.diff(hist) >= -1e-10)


def check_fading_power(rng):
    proc = FadingProcess(1, rng)
    g = proc.run(20_000)
    assert 0.9 <= np.mean(np.abs(g) ** 2) <= 1.1


def check_drop_geometry(rng):
    params = DropParams(6, seed=int(rng.integers(1 << 62)))
    drop = generate_drop(params)
    d = np.linalg.norm(drop.tx_positions - drop.rx_positions, axis=1)
    assert np.all((d >= 10) & (d <= 100))
    diff = drop.tx_positions[:, None] - drop.tx_positions[None]
    sep = np.linalg.norm(diff, axis=-1)[np.triu_indices(6, 1)]
    assert np.all(sep >= 35)


def check_projections(rng):
    env = Environment()
    cfg = TrainerConfig(batch_size=20)
    state = init_state(RegnnConfig(p_max=env.p_max), 4, cfg)
    for i in range(10):
        drop = generate_drop(DropParams(4, seed=int(rng.integers(1 << 62))))
        state, _ = iterate(state, make_batch(drop, env, cfg.batch_size), cfg)
        assert np.all(state.s >= 0) and np.all(state.lam >= 0) and np.all(state.mu >= 0)


CHECKS = [
    check_permutation_equivariance,
    check_regnn_gradient,
    check_capacity_jacobian,
    check_gso_norm,
    check_wmmse_monotone,
    check_fading_power,
    check_drop_geometry,
    check_projections,
]


def run_selftest(seed: int = 0, repeats: int = 5, out=print) -> tuple[int, int]:
    rng = np.random.default_rng(seed)
    passed = failed = 0
    for check in CHECKS:
        ok = 0
        for _ in range(repeats):
            try:
                check(rng)
                ok += 1
            except AssertionError:
                pass
        status = "PASS" if ok == repeats else "FAIL"
        out(f"{status} {check.__name__[len('check_'):]} ({ok}/{repeats})")
        passed += ok == repeats
        failed += ok != repeats
    out(f"selftest: {passed} passed, {failed} failed")
    return passed, failed
