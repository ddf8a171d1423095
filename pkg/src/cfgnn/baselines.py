"""Reference power-control policies: round-robin TDM and scalar WMMSE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .phy import capacity
from .topology import ChannelMatrix


def tdm_policy(step: int, m: int, p_max: float) -> np.ndarray:
    """Only transmitter ``step mod m`` is on, at full power."""
    if m < 1:
        raise ValueError("m must be >= 1")
    p = np.zeros(m)
    p[step % m] = p_max
    return p


def tdm_schedule(num_steps: int, m: int, p_max: float, start: int = 0) -> np.ndarray:
    """Stacked :func:`tdm_policy` for ``num_steps`` consecutive steps."""
    p = np.zeros((num_steps, m))
    p[np.arange(num_steps), (start + np.arange(num_steps)) % m] = p_max
    return p


@dataclass(frozen=True)
class WmmseConfig:
    p_max: float
    max_iters: int = 100
    tol: float = 1e-6
    weights: tuple[float, ...] | None = None
    single_link_fallback: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class WmmseResult:
    power: np.ndarray
    converged: np.ndarray
    iterations: int
    history: np.ndarray  # weighted sum-rate after each sweep, (iters + 1, ...)


def wmmse(H: ChannelMatrix, config: WmmseConfig) -> WmmseResult:
    """Scalar-channel WMMSE from full power.

    Alternates the MMSE receive gain ``u``, the MSE weight ``w`` and the
    transmit amplitude ``v`` (clamped to ``[0, sqrt(P_max)]``). Each
    sweep is a block-coordinate step on the weighted-MSE reformulation, so
    the weighted sum-rate never decreases. Channels with leading batch
    dimensions are solved jointly; iteration stops once every instance's
    objective moves by less than ``tol``.

    WMMSE only reaches a stationary point. With ``single_link_fallback`` the
    result is replaced by the best single-active-link allocation whenever
    that scores higher; for two links this makes the answer globally
    optimal, since the two-link optimum is always binary.
    """
    gain = H.gain
    noise = H.noise_power
    m = gain.shape[-1]
    amp = np.sqrt(gain)
    direct = np.diagonal(amp, axis1=-2, axis2=-1)
    alpha = np.ones(m) if config.weights is None else np.asarray(config.weights, float)
    if alpha.shape != (m,) or np.any(alpha <= 0):
        raise ValueError("weights must be m positive values")
    vmax = np.sqrt(config.p_max)
    v = np.full(gain.shape[:-1], vmax)

    def objective(v):
        return (alpha * capacity((gain, noise), v * v)).sum(axis=-1)

    history = [objective(v)]
    converged = np.zeros(gain.shape[:-2], dtype=bool)
    it = 0
    for it in range(1, config.max_iters + 1):
        rx_total = noise + np.einsum("...ji,...j->...i", gain, v * v)
        u = direct * v / rx_total
        w = 1.0 / (1.0 - u * direct * v)
        num = alpha * w * u * direct
        # Tx_i's v-update sums over every receiver it reaches: gain[i, j].
        den = np.einsum("...ij,...j->...i", gain, alpha * w * u * u)
        v = np.clip(np.divide(num, den, out=np.zeros_like(num), where=den > 0), 0.0, vmax)
        history.append(objective(v))
        converged = np.abs(history[-1] - history[-2]) < config.tol
        if np.all(converged):
            break
    power = v * v
    if config.single_link_fallback:
        solo = alpha * np.log2(1.0 + direct ** 2 * config.p_max / noise)
        best = np.argmax(solo, axis=-1)
        better = np.take_along_axis(solo, best[..., None], -1)[..., 0] > history[-1]
        one_hot = np.where(np.arange(m) == best[..., None], config.p_max, 0.0)
        power = np.where(better[..., None], one_hot, power)
    return WmmseResult(power, np.asarray(converged), it, np.stack(history))


def tdm_rates(H: ChannelMatrix, p_max: float, start: int = 0) -> np.ndarray:
    """Per-receiver ergodic rates of round-robin TDM over the steps of ``H``."""
    T, m = H.h.shape[0], H.num_pairs
    return capacity(H, tdm_schedule(T, m, p_max, start)).mean(axis=0)
