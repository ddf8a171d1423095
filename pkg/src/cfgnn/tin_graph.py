"""Conflict-graph shift operator from the TIN optimality test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .topology import ChannelMatrix


@dataclass(frozen=True)
class TinParams:
    p_max: float
    noise_power: float
    M: float = 1.0
    eta: float = 0.6
    squared: bool = True  # edge weights |h|^2, else |h|

    def __post_init__(self):
        if not self.M > 0:
            raise ValueError("M must be positive")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")


@dataclass
class Gso:
    S: np.ndarray
    normalized: bool = True


def tin_indicator(H: ChannelMatrix, params: TinParams) -> np.ndarray:
    """Boolean ``I[..., i, j]``: keep the interference edge Tx_i -> Rx_j.

    An edge is kept when its interference SNR reaches ``M`` times the weaker
    of the two direct SNRs raised to ``eta`` (ties keep the edge). Direct
    links are always kept.
    """
    gain = H.gain
    snr = params.p_max * gain / H.noise_power
    direct = np.diagonal(snr, axis1=-2, axis2=-1)
    weaker = np.minimum(direct[..., :, None], direct[..., None, :])
    with np.errstate(over="ignore"):
        ind = snr >= params.M * weaker ** params.eta
    m = gain.shape[-1]
    ind[..., np.arange(m), np.arange(m)] = True
    return ind


def spectral_norm(A, tol: float = 1e-8, max_iter: int = 1000) -> float:
    """Largest singular value of a square matrix by power iteration on ``A^T A``.

    Starts from the all-ones vector; if that start lies in the null space a
    seeded random start is tried. Stops when the estimate changes by less
    than ``tol`` relative, or after ``max_iter`` iterations.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[1]
    starts = [np.ones(n), np.random.default_rng(0).standard_normal(n)]
    for v in starts:
        v = v / np.linalg.norm(v)
        est = 0.0
        for _ in range(max_iter):
            w = A.T @ (A @ v)
            nw = np.linalg.norm(w)
            if nw == 0.0:
                est = 0.0
                break
            v = w / nw
            new = np.sqrt(nw)
            if abs(new - est) <= tol * new:
                est = new
                break
            est = new
        if est > 0.0:
            return float(_ritz_refine((A.T @ A)[None], v[None])[0])
    return 0.0


def _ritz_refine(AtA: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Top singular value from a Rayleigh-Ritz step on ``span{v, Bv, B^2 v}``.

    Power iteration stalls when the two leading singular values nearly
    coincide; the small Krylov space resolves the pair. The result is never
    below the Rayleigh quotient at ``v``.
    """
    q = min(3, v.shape[-1])
    basis = [v]
    for _ in range(q - 1):
        w = np.einsum("bij,bj->bi", AtA, basis[-1])
        basis.append(w / np.maximum(np.linalg.norm(w, axis=1, keepdims=True), 1e-300))
    Q, _ = np.linalg.qr(np.stack(basis, axis=-1))
    T = np.swapaxes(Q, -1, -2) @ AtA @ Q
    return np.sqrt(np.maximum(np.linalg.eigvalsh(T)[:, -1], 0.0))


def batched_spectral_norm(A: np.ndarray, tol: float = 1e-8, max_iter: int = 1000) -> np.ndarray:
    """Row-wise :func:`spectral_norm` over a ``(B, n, n)`` stack."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 2:
        return np.asarray(spectral_norm(A, tol, max_iter))
    flat = A.reshape((-1,) + A.shape[-2:])
    B, _, n = flat.shape
    AtA = np.swapaxes(flat, -1, -2) @ flat
    v = np.full((B, n), 1.0 / np.sqrt(n))
    est = np.zeros(B)
    active = np.ones(B, dtype=bool)
    for _ in range(max_iter):
        w = np.einsum("bij,bj->bi", AtA[active], v[active])
        nw = np.linalg.norm(w, axis=1)
        safe = np.where(nw > 0, nw, 1.0)
        new = np.sqrt(nw)
        done = np.abs(new - est[active]) <= tol * np.where(new > 0, new, 1.0)
        v[active] = w / safe[:, None]
        est[active] = new
        idx = np.flatnonzero(active)
        active[idx[done]] = False
        if not active.any():
            break
    out = np.where(est > 0, _ritz_refine(AtA, v), 0.0)
    # All-ones start orthogonal to the top singular space: redo those singly.
    for b in np.flatnonzero(out == 0.0):
        out[b] = spectral_norm(flat[b], tol, max_iter)
    return out.reshape(A.shape[:-2])


def build_gso(H: ChannelMatrix, params: TinParams) -> Gso:
    """``S = (I * |H|^2) / ||I * |H|^2||_2`` per channel in the batch."""
    weights = H.gain if params.squared else np.abs(H.h)
    masked = np.where(tin_indicator(H, params), weights, 0.0)
    norm = batched_spectral_norm(masked)
    if np.any(norm <= 0):
        raise ValueError("masked channel matrix is all zero; degenerate drop")
    return Gso(masked / np.asarray(norm)[..., None, None], normalized=True)
