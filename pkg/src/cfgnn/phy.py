"""SINR, Shannon rates and their gradient with respect to transmit power.

All functions broadcast over leading batch dimensions: ``gain`` is
``(..., m, m)`` with ``gain[..., i, j] = |h_ij|^2`` (Tx_i -> Rx_j) and ``p``
is ``(..., m)``. Rates are spectral efficiencies in bits/s/Hz.
"""

from __future__ import annotations

import math

import numpy as np

from .topology import ChannelMatrix

_INV_LN2 = 1.0 / math.log(2.0)


def _split(H, p):
    if isinstance(H, ChannelMatrix):
        gain, noise = H.gain, H.noise_power
    else:
        gain, noise = H
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != gain.shape[-1]:
        raise ValueError(f"power vector of length {p.shape[-1]} for {gain.shape[-1]} pairs")
    return gain, float(noise), p


def _terms(gain, noise, p):
    direct = np.diagonal(gain, axis1=-2, axis2=-1)
    signal = direct * p
    # Received power at Rx_i from every Tx_j is gain[j, i] * p_j.
    total = np.einsum("...ji,...j->...i", gain, p)
    interference = noise + total - signal
    return direct, signal, interference


def sinr(H, p) -> np.ndarray:
    """``|h_ii|^2 p_i / (noise + sum_{j != i} |h_ji|^2 p_j)``.

    ``H`` is a :class:`ChannelMatrix` or a ``(gain, noise_power)`` pair.
    """
    gain, noise, p = _split(H, p)
    _, signal, interference = _terms(gain, noise, p)
    return signal / interference


def capacity(H, p) -> np.ndarray:
    return np.log2(1.0 + sinr(H, p))


def capacity_jacobian(H, p) -> np.ndarray:
    """``J[..., i, j] = dC_i / dp_j`` in closed form."""
    gain, noise, p = _split(H, p)
    direct, signal, interference = _terms(gain, noise, p)
    total = interference + signal
    # Off-diagonal: -(1/ln2) SINR_i |h_ji|^2 / total_i, laid out as [i, j].
    jac = -_INV_LN2 * (signal / interference / total)[..., :, None] * np.swapaxes(gain, -1, -2)
    diag = _INV_LN2 * direct / total
    idx = np.arange(gain.shape[-1])
    jac[..., idx, idx] = diag
    return jac


def sum_rate(x) -> float:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("sum_rate of an empty rate vector")
    return float(x.sum())


def percentile_rate(x, q: float = 0.05) -> float:
    """Empirical ``q``-quantile with linear interpolation between order statistics.

    Position ``(n - 1) q`` in the sorted sample (numpy's default "linear"
    method), so ``{1, ..., 100}`` at ``q = 0.05`` gives 5.95.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("percentile_rate of an empty rate vector")
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    return float(np.quantile(x, q, method="linear"))
