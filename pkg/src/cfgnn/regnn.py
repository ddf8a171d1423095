"""Random-edge graph neural network power policy.

Each layer is a bank of polynomial graph filters,
``Z = sum_k S^k Y A_k`` with taps ``A_k`` of shape ``(F_in, F_out)``,
followed by a pointwise nonlinearity: ReLU on hidden layers, a logistic
scaled to ``[0, P_max]`` on the output. The input signal is all-ones, so the
policy depends on the channel only through the shift operator ``S``.

Everything broadcasts over leading batch dimensions of ``S``.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class RegnnConfig:
    features: tuple[int, ...] = (1, 4, 4, 1)
    taps: tuple[int, ...] = (4, 4, 4)
    p_max: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(int(f) for f in self.features))
        object.__setattr__(self, "taps", tuple(int(k) for k in self.taps))
        if len(self.taps) < 1 or len(self.features) != len(self.taps) + 1:
            raise ValueError("need L >= 1 tap counts and L + 1 feature counts")
        if self.features[0] != 1 or self.features[-1] != 1:
            raise ValueError("first and last feature counts must be 1")
        if min(self.taps) < 1 or min(self.features) < 1:
            raise ValueError("tap and feature counts must be positive")
        if not self.p_max > 0:
            raise ValueError("p_max must be positive")

    @property
    def num_layers(self) -> int:
        return len(self.taps)

    def shapes(self) -> list[tuple[int, int, int]]:
        return [(k, self.features[l], self.features[l + 1]) for l, k in enumerate(self.taps)]

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes())


@dataclass
class RegnnParams:
    config: RegnnConfig
    taps: list[np.ndarray]

    def __post_init__(self):
        shapes = self.config.shapes()
        if len(self.taps) != len(shapes):
            raise ValueError(f"expected {len(shapes)} tap tensors, got {len(self.taps)}")
        for l, (a, s) in enumerate(zip(self.taps, shapes)):
            if a.shape != s:
                raise ValueError(f"layer {l}: taps of shape {a.shape}, expected {s}")

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.taps])

    @classmethod
    def from_flat(cls, config: RegnnConfig, vec) -> "RegnnParams":
        vec = np.asarray(vec, dtype=float)
        if vec.size != config.num_params:
            raise ValueError(f"expected {config.num_params} values, got {vec.size}")
        taps, pos = [], 0
        for s in config.shapes():
            n = int(np.prod(s))
            taps.append(vec[pos:pos + n].reshape(s).copy())
            pos += n
        return cls(config, taps)

    @classmethod
    def zeros(cls, config: RegnnConfig) -> "RegnnParams":
        return cls(config, [np.zeros(s) for s in config.shapes()])

    def copy(self) -> "RegnnParams":
        return RegnnParams(self.config, [a.copy() for a in self.taps])

    def axpy(self, step: float, other: "RegnnParams") -> "RegnnParams":
        """``self + step * other`` as a new object."""
        return RegnnParams(self.config, [a + step * b for a, b in zip(self.taps, other.taps)])


def init_params(config: RegnnConfig, seed: int = 0) -> RegnnParams:
    """Gaussian taps with std ``1/sqrt(K_l F_{l-1})``."""
    rng = np.random.default_rng(seed)
    taps = [rng.normal(0.0, 1.0 / np.sqrt(k * fin), size=(k, fin, fout))
            for k, fin, fout in config.shapes()]
    return RegnnParams(config, taps)


@dataclass
class ForwardTape:
    shifted: list[list[np.ndarray]] = field(default_factory=list)  # per layer: [S^k Y_l]
    pre: list[np.ndarray] = field(default_factory=list)             # per layer: Z_l


def _gso_array(S) -> np.ndarray:
    return np.asarray(getattr(S, "S", S), dtype=float)


def _shifts(S: np.ndarray, Y: np.ndarray, K: int) -> list[np.ndarray]:
    out = [Y]
    for _ in range(K - 1):
        out.append(S @ out[-1])
    return out


def graph_conv(S, Y, taps) -> np.ndarray:
    """``sum_k S^k Y taps[k]`` by repeated shifting; ``Y`` is ``(..., m, F_in)``."""
    S = _gso_array(S)
    Y = np.asarray(Y, dtype=float)
    taps = np.asarray(taps, dtype=float)
    if Y.shape[-2] != S.shape[-1] or taps.ndim != 3 or taps.shape[1] != Y.shape[-1]:
        raise ValueError(
            f"incompatible shapes: S {S.shape}, Y {Y.shape}, taps {taps.shape}"
        )
    return sum(z @ a for z, a in zip(_shifts(S, Y, taps.shape[0]), taps))


def forward(S, params: RegnnParams) -> tuple[np.ndarray, ForwardTape]:
    """Power vector ``(..., m)`` in ``(0, P_max)`` and the tape for :func:`backward`."""
    S = _gso_array(S)
    cfg = params.config
    Y = np.ones(S.shape[:-1] + (1,))
    tape = ForwardTape()
    for l, A in enumerate(params.taps):
        if Y.shape[-2] != S.shape[-1]:
            raise ValueError("signal and shift operator sizes differ")
        shifted = _shifts(S, Y, A.shape[0])
        Z = sum(z @ a for z, a in zip(shifted, A))
        tape.shifted.append(shifted)
        tape.pre.append(Z)
        Y = np.maximum(Z, 0.0) if l < cfg.num_layers - 1 else Z
    p = cfg.p_max * expit(Y[..., 0])
    return p, tape


def backward(tape: ForwardTape, S, params: RegnnParams, dL_dp) -> RegnnParams:
    """Gradient of ``sum(dL_dp * p)`` (summed over any batch) with respect to every tap."""
    S = _gso_array(S)
    cfg = params.config
    if len(tape.pre) != cfg.num_layers:
        raise ValueError("tape does not match parameter depth")
    dL_dp = np.asarray(dL_dp, dtype=float)
    z_out = tape.pre[-1][..., 0]
    if dL_dp.shape != z_out.shape:
        raise ValueError(f"dL_dp shape {dL_dp.shape} does not match output {z_out.shape}")
    sig = expit(z_out)
    dZ = (dL_dp * cfg.p_max * sig * (1.0 - sig))[..., None]
    St = np.swapaxes(S, -1, -2)
    grads = [None] * cfg.num_layers
    for l in range(cfg.num_layers - 1, -1, -1):
        A = params.taps[l]
        shifted = tape.shifted[l]
        dZ_flat = dZ.reshape(-1, dZ.shape[-1])
        grads[l] = np.stack([z.reshape(-1, z.shape[-1]).T @ dZ_flat for z in shifted])
        if l == 0:
            break
        # Adjoint of Y -> S^k Y is (S^T)^k; accumulate Horner-style.
        dY = dZ @ A[-1].T
        for k in range(A.shape[0] - 2, -1, -1):
            dY = St @ dY + dZ @ A[k].T
        dZ = dY * (tape.pre[l - 1] > 0.0)
    return RegnnParams(cfg, grads)


def binarize(p, p_max: float, threshold: float = 0.5) -> np.ndarray:
    """Map each power to 0 or ``p_max``: on when ``p > threshold * p_max``.

    A zero threshold switches on every transmitter with positive power. The
    map is idempotent for thresholds in ``[0, 1)``.
    """
    p = np.asarray(p, dtype=float)
    return np.where(p > threshold * p_max, p_max, 0.0)


# -- checkpoints ------------------------------------------------------------

CHECKPOINT_MAGIC = b"REGNN-CKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(params: RegnnParams, path, extra: dict | None = None) -> None:
    """Text header of ``key=value`` lines, blank line, then little-endian float64 taps."""
    cfg = params.config
    head = [
        f"{CHECKPOINT_MAGIC.decode()} {CHECKPOINT_VERSION}",
        "features=" + ",".join(map(str, cfg.features)),
        "taps=" + ",".join(map(str, cfg.taps)),
        f"p_max={cfg.p_max!r}",
        f"count={cfg.num_params}",
    ]
    for key, val in (extra or {}).items():
        head.append(f"{key}={val}")
    buf = io.BytesIO()
    buf.write(("\n".join(head) + "\n\n").encode("ascii"))
    vec = params.flat()
    buf.write(struct.pack(f"<{vec.size}d", *vec))
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[RegnnParams, dict]:
    raw = Path(path).read_bytes()
    head, sep, body = raw.partition(b"\n\n")
    if not sep or not head.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a REGNN checkpoint")
    lines = head.decode("ascii").split("\n")
    version = int(lines[0].split()[1])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    meta = dict(line.split("=", 1) for line in lines[1:])
    cfg = RegnnConfig(
        features=tuple(int(v) for v in meta.pop("features").split(",")),
        taps=tuple(int(v) for v in meta.pop("taps").split(",")),
        p_max=float(meta.pop("p_max")),
    )
    count = int(meta.pop("count"))
    if count != cfg.num_params or len(body) != 8 * count:
        raise ValueError(f"{path}: truncated or inconsistent tap array")
    vec = np.array(struct.unpack(f"<{count}d", body))
    return RegnnParams.from_flat(cfg, vec), meta
