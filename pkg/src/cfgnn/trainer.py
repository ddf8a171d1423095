"""Counterfactual primal-dual learning of the REGNN power policy.

The learner keeps the policy taps ``theta``, per-receiver ergodic-rate
iterates ``x``, a constraint slack ``s`` and dual prices ``lam`` (rate
consistency) and ``mu`` (minimum rate). Each iteration uses one batch of
consecutive fading steps from a drop:

    theta <- theta + g1 * grad_theta(lam . C_hat(theta))
    x     <- x + g2 * (1 - lam + mu)
    s     <- [s + g3 * (mu - s)]_+
    lam   <- [lam - g4 * (C_hat - x)]_+
    mu    <- [mu - g5 * (x + s - C_min)]_+

All right-hand sides are evaluated at the current iterate. With a shared
slack, ``s`` is a scalar driven by the mean of ``mu``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .phy import capacity, capacity_jacobian, percentile_rate
from .regnn import (RegnnConfig, RegnnParams, backward, binarize, forward,
                    init_params)
from .tin_graph import Gso, TinParams, build_gso
from .topology import ChannelMatrix, Drop, drop_channels

LOG_COLUMNS = ("iter", "s", "mean_lambda", "mean_mu", "utility",
               "batch_sum_rate", "batch_p5_rate")


@dataclass(frozen=True)
class TrainerConfig:
    lr_theta: float = 2e-2
    lr_x: float = 2e-2
    lr_slack: float = 1e-3
    lr_lambda: float = 1e-2
    lr_mu: float = 1e-2
    c_min: float = 2.0
    batch_size: int = 200
    shared_slack: bool = True

    def __post_init__(self):
        rates = (self.lr_theta, self.lr_x, self.lr_slack, self.lr_lambda, self.lr_mu)
        if any(r < 0 for r in rates):
            raise ValueError("learning rates must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class Environment:
    """Physical-layer settings shared by training and evaluation."""

    p_max: float = 0.01
    noise_power: float = 3.981071705534969e-14
    tin_M: float = 1.0
    tin_eta: float = 0.6
    num_sinusoids: int = 20
    normalized_doppler: float = 0.01
    gso_per_step: bool = True

    @property
    def tin(self) -> TinParams:
        return TinParams(self.p_max, self.noise_power, self.tin_M, self.tin_eta)


@dataclass
class Batch:
    H: ChannelMatrix  # (B, m, m)
    gso: Gso          # (B, m, m)

    def __len__(self) -> int:
        return self.H.h.shape[0]


def make_batch(drop: Drop, env: Environment, num_steps: int) -> Batch:
    """Consecutive fading steps of one drop with their shift operators."""
    H = drop_channels(drop, env.noise_power, num_steps,
                      env.num_sinusoids, env.normalized_doppler)
    if env.gso_per_step:
        gso = build_gso(H, env.tin)
    else:
        # One operator per drop, from the long-term gains alone.
        longterm = ChannelMatrix(np.sqrt(drop.longterm_gain), env.noise_power)
        S = build_gso(longterm, env.tin).S
        gso = Gso(np.broadcast_to(S, H.h.shape).copy())
    return Batch(H, gso)


@dataclass
class TrainerState:
    theta: RegnnParams
    x: np.ndarray
    s: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    k: int = 0

    def copy(self) -> "TrainerState":
        return TrainerState(self.theta.copy(), self.x.copy(), np.array(self.s, copy=True),
                            self.lam.copy(), self.mu.copy(), self.k)


def init_state(regnn_config: RegnnConfig, num_pairs: int, config: TrainerConfig,
               seed: int = 0) -> TrainerState:
    m = num_pairs
    s = np.zeros(()) if config.shared_slack else np.zeros(m)
    return TrainerState(init_params(regnn_config, seed), np.zeros(m), s,
                        np.zeros(m), np.zeros(m))


@dataclass
class BatchStats:
    mean_rates: np.ndarray
    policy_grad: Callable[[np.ndarray], RegnnParams]


def batch_capacity(theta: RegnnParams, batch: Batch) -> BatchStats:
    """Batch-mean rates of the policy and the map ``lam -> grad_theta(lam . C_hat)``."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    S = batch.gso.S
    p, tape = forward(S, theta)
    rates = capacity(batch.H, p)
    jac = capacity_jacobian(batch.H, p)
    B = rates.shape[0]

    def policy_grad(lam) -> RegnnParams:
        # dL/dp_b = J_b^T lam / B, contracted through the network.
        dL_dp = np.einsum("bij,i->bj", jac, np.asarray(lam, dtype=float)) / B
        return backward(tape, S, theta, dL_dp)

    return BatchStats(rates.mean(axis=0), policy_grad)


def _slack_vec(s, m):
    return np.broadcast_to(np.asarray(s, dtype=float), (m,))


def lagrangian(state: TrainerState, stats: BatchStats | Batch, config: TrainerConfig) -> float:
    """``U(x) - |s|^2/2 - lam.(x - C_hat) - mu.(C_min - s - x)`` for the sum-rate utility."""
    if isinstance(stats, Batch):
        stats = batch_capacity(state.theta, stats)
    m = state.x.size
    s = _slack_vec(state.s, m)
    return float(
        state.x.sum()
        - 0.5 * np.sum(np.asarray(state.s) ** 2)
        - state.lam @ (state.x - stats.mean_rates)
        - state.mu @ (config.c_min - s - state.x)
    )


def primal_update(state: TrainerState, batch: Batch, config: TrainerConfig,
                  stats: BatchStats | None = None) -> TrainerState:
    """Ascent on ``theta`` and ``x``, projected slack step; duals untouched."""
    if stats is None:
        stats = batch_capacity(state.theta, batch)
    grad = stats.policy_grad(state.lam)
    theta = state.theta.axpy(config.lr_theta, grad)
    x = state.x + config.lr_x * (1.0 - state.lam + state.mu)
    mu_drive = state.mu.mean() if config.shared_slack else state.mu
    s = np.maximum(state.s + config.lr_slack * (mu_drive - state.s), 0.0)
    return replace(state, theta=theta, x=x, s=np.asarray(s))


def dual_update(state: TrainerState, batch: Batch, config: TrainerConfig,
                stats: BatchStats | None = None) -> TrainerState:
    """Projected descent on ``lam`` and ``mu``."""
    if stats is None:
        stats = batch_capacity(state.theta, batch)
    m = state.x.size
    lam = np.maximum(state.lam - config.lr_lambda * (stats.mean_rates - state.x), 0.0)
    mu = np.maximum(
        state.mu - config.lr_mu * (state.x + _slack_vec(state.s, m) - config.c_min), 0.0
    )
    return replace(state, lam=lam, mu=mu)


def iterate(state: TrainerState, batch: Batch, config: TrainerConfig) -> tuple[TrainerState, BatchStats]:
    """One full primal-dual step, every update reading the pre-step iterate."""
    stats = batch_capacity(state.theta, batch)
    primal = primal_update(state, batch, config, stats)
    dual = dual_update(state, batch, config, stats)
    return replace(primal, lam=dual.lam, mu=dual.mu, k=state.k + 1), stats


@dataclass
class TrainingLog:
    rows: list[dict] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for r in self.rows:
                w.writerow([r["iter"]] + [repr(float(r[c])) for c in LOG_COLUMNS[1:]])


def train(config: TrainerConfig, drops: Iterable[Drop], env: Environment,
          regnn_config: RegnnConfig | None = None, seed: int = 0,
          state: TrainerState | None = None,
          callback: Callable[[TrainerState], None] | None = None,
          ) -> tuple[RegnnParams, TrainingLog, TrainerState]:
    """Run one primal-dual iteration per drop, using that drop's batch.

    The network size is taken from the first drop; every drop must match.
    ``callback`` sees the state after each iteration.
    """
    regnn_config = regnn_config or RegnnConfig(p_max=env.p_max)
    log = TrainingLog()
    for drop in drops:
        if state is None:
            state = init_state(regnn_config, drop.num_pairs, config, seed)
        elif drop.num_pairs != state.x.size:
            raise ValueError(f"drop of size {drop.num_pairs} in a size-{state.x.size} run")
        batch = make_batch(drop, env, config.batch_size)
        state, stats = iterate(state, batch, config)
        log.rows.append({
            "iter": state.k,
            "s": float(np.mean(state.s)),
            "mean_lambda": float(state.lam.mean()),
            "mean_mu": float(state.mu.mean()),
            "utility": float(state.x.sum()),
            "batch_sum_rate": float(stats.mean_rates.sum()),
            "batch_p5_rate": percentile_rate(stats.mean_rates, 0.05),
        })
        if callback is not None:
            callback(state)
    if state is None:
        raise ValueError("no training drops")
    return state.theta, log, state


@dataclass
class DropMetrics:
    rates: np.ndarray  # per-receiver ergodic rate over the drop's steps
    sum_rate: float
    p5_rate: float


def drop_metrics(rates: np.ndarray) -> DropMetrics:
    return DropMetrics(rates, float(rates.sum()), percentile_rate(rates, 0.05))


def evaluate_policy(policy: Callable[[Batch], np.ndarray], drops: Iterable[Drop],
                    env: Environment, num_steps: int | None = None) -> list[DropMetrics]:
    """Per-drop metrics of ``policy``, which maps a batch to ``(T, m)`` powers."""
    out = []
    for drop in drops:
        steps = drop.params.steps_per_drop if num_steps is None else num_steps
        batch = make_batch(drop, env, steps)
        p = np.asarray(policy(batch))
        out.append(drop_metrics(capacity(batch.H, p).mean(axis=0)))
    return out


def regnn_policy(theta: RegnnParams, binarize_output: bool = True,
                 threshold: float = 0.5) -> Callable[[Batch], np.ndarray]:
    def policy(batch: Batch) -> np.ndarray:
        p, _ = forward(batch.gso.S, theta)
        return binarize(p, theta.config.p_max, threshold) if binarize_output else p
    return policy


def evaluate(theta: RegnnParams, drops: Iterable[Drop], env: Environment,
             binarize_flag: bool = True, num_steps: int | None = None) -> list[DropMetrics]:
    return evaluate_policy(regnn_policy(theta, binarize_flag), drops, env, num_steps)


def summarize(metrics: list[DropMetrics]) -> tuple[float, float]:
    """Mean sum-rate over drops and the 5th percentile of all receivers' rates pooled."""
    if not metrics:
        raise ValueError("no drops to summarize")
    sum_rate = float(np.mean([d.sum_rate for d in metrics]))
    pooled = np.concatenate([d.rates for d in metrics])
    return sum_rate, percentile_rate(pooled, 0.05)
