"""Random network drops and channel processes.

A drop places ``m`` transmitters uniformly in a square (with a minimum
pairwise separation) and one receiver per transmitter in an annulus around
it. Long-term gains combine a dual-slope path loss with log-normal
shadowing; short-term Rayleigh fading evolves per step from a
sum-of-sinusoids generator.

Index convention: ``longterm_gain[i, j]`` and ``H[i, j]`` describe the link
from transmitter ``i`` to receiver ``j``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

class PlacementError(RuntimeError):
    """Raised when transmitters cannot be placed with the requested separation."""


@dataclass(frozen=True)
class PathLossModel:
    """Dual-slope path loss, in dB, referenced to 1 m."""

    pl_ref_db: float = 30.0
    exponent_near: float = 2.0
    exponent_far: float = 4.0
    breakpoint: float = 100.0

    def __call__(self, distance):
        return pathloss_db(distance, self)


@dataclass(frozen=True)
class DropParams:
    num_pairs: int
    area_side: float = 500.0
    min_tx_separation: float = 35.0
    rx_annulus_inner: float = 10.0
    rx_annulus_outer: float = 100.0
    steps_per_drop: int = 200
    seed: int = 0
    rx_radius_exponent: float = 2.0
    shadowing_std_db: float = 7.0
    pathloss: PathLossModel = field(default_factory=PathLossModel)
    max_placement_attempts: int = 10_000

    def __post_init__(self):
        if self.num_pairs < 1:
            raise ValueError("num_pairs must be >= 1")
        if not self.rx_annulus_inner < self.rx_annulus_outer:
            raise ValueError("rx_annulus_inner must be below rx_annulus_outer")
        if self.min_tx_separation <= 0 or self.area_side <= 0:
            raise ValueError("area_side and min_tx_separation must be positive")
        if self.rx_annulus_inner < 0:
            raise ValueError("rx_annulus_inner must be nonnegative")

    def with_seed(self, seed: int) -> "DropParams":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw["seed"] = int(seed)
        return DropParams(**kw)


@dataclass
class Drop:
    params: DropParams
    tx_positions: np.ndarray
    rx_positions: np.ndarray
    longterm_gain: np.ndarray

    @property
    def num_pairs(self) -> int:
        return self.tx_positions.shape[0]

    def distances(self) -> np.ndarray:
        """Matrix of Tx_i -> Rx_j distances in meters."""
        diff = self.tx_positions[:, None, :] - self.rx_positions[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])


@dataclass
class ChannelMatrix:
    """Complex gains ``h[i, j]`` (Tx_i -> Rx_j) plus receiver noise power in watts.

    ``h`` may carry leading batch dimensions, ``(..., m, m)``.
    """

    h: np.ndarray
    noise_power: float

    def __post_init__(self):
        self.h = np.asarray(self.h)
        if self.h.ndim < 2 or self.h.shape[-1] != self.h.shape[-2]:
            raise ValueError(f"channel matrix must be square, got shape {self.h.shape}")
        if not self.noise_power > 0:
            raise ValueError("noise_power must be positive")
        if not np.all(np.isfinite(self.h)):
            raise ValueError("channel matrix has non-finite entries")

    @property
    def gain(self) -> np.ndarray:
        """Power gains |h_ij|^2."""
        return np.abs(self.h) ** 2

    @property
    def num_pairs(self) -> int:
        return self.h.shape[-1]

    def __getitem__(self, idx) -> "ChannelMatrix":
        return ChannelMatrix(self.h[idx], self.noise_power)

    def __len__(self) -> int:
        if self.h.ndim == 2:
            raise TypeError("unbatched channel matrix has no length")
        return self.h.shape[0]


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def noise_power(psd_dbm_hz: float = -174.0, bandwidth_hz: float = 10e6) -> float:
    """Thermal noise power in watts for a PSD in dBm/Hz over ``bandwidth_hz``."""
    return float(dbm_to_watts(psd_dbm_hz + 10.0 * math.log10(bandwidth_hz)))


def pathloss_db(distance, model: PathLossModel = PathLossModel()):
    """Dual-slope path loss in dB.

    ``PL_ref + 10 n1 log10(d)`` up to the breakpoint, then a steeper slope
    ``10 n2 log10(d / d_break)`` on top of the breakpoint loss.
    """
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    at_break = model.pl_ref_db + 10.0 * model.exponent_near * math.log10(model.breakpoint)
    near = model.pl_ref_db + 10.0 * model.exponent_near * np.log10(d)
    far = at_break + 10.0 * model.exponent_far * np.log10(d / model.breakpoint)
    out = np.where(d <= model.breakpoint, near, far)
    return float(out) if out.ndim == 0 else out


def sample_shadowing(rng: np.random.Generator, size=None, std_db: float = 7.0):
    """Log-normal shadowing: zero-mean Gaussian in the dB domain."""
    return rng.normal(0.0, std_db, size=size)


def _seed_streams(seed: int):
    """Independent placement, shadowing and fading generators for one drop."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFF_FFFF_FFFF_FFFF)
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def _place_transmitters(params: DropParams, rng: np.random.Generator) -> np.ndarray:
    m = params.num_pairs
    min_sq = params.min_tx_separation ** 2
    pts = np.empty((m, 2))
    placed = 0
    attempts = 0
    while placed < m:
        if attempts >= params.max_placement_attempts:
            raise PlacementError(
                f"placed {placed}/{m} transmitters after {attempts} attempts; "
                f"separation {params.min_tx_separation} m is too dense for a "
                f"{params.area_side} m square"
            )
        attempts += 1
        cand = rng.uniform(0.0, params.area_side, size=2)
        if placed and np.min(np.sum((pts[:placed] - cand) ** 2, axis=1)) < min_sq:
            continue
        pts[placed] = cand
        placed += 1
    return pts


def generate_drop(params: DropParams) -> Drop:
    """Draw one drop; deterministic in ``params.seed``."""
    place_rng, shadow_rng, _ = _seed_streams(params.seed)
    m = params.num_pairs
    tx = _place_transmitters(params, place_rng)

    # Radius skewed toward the serving transmitter: r = r_in + (r_out - r_in) u^a.
    u = place_rng.uniform(0.0, 1.0, size=m)
    radius = params.rx_annulus_inner + (
        params.rx_annulus_outer - params.rx_annulus_inner
    ) * u ** params.rx_radius_exponent
    angle = place_rng.uniform(0.0, 2.0 * math.pi, size=m)
    rx = tx + radius[:, None] * np.column_stack([np.cos(angle), np.sin(angle)])

    drop = Drop(params, tx, rx, np.empty((m, m)))
    # Clamp at the 1 m reference distance so close interferers stay physical.
    dist = np.maximum(drop.distances(), 1.0)
    loss_db = pathloss_db(dist, params.pathloss)
    loss_db = loss_db + sample_shadowing(shadow_rng, (m, m), params.shadowing_std_db)
    drop.longterm_gain = 10.0 ** (-np.asarray(loss_db) / 10.0)
    return drop


class FadingProcess:
    """Sum-of-sinusoids Rayleigh fading for every link of an ``m x m`` channel.

    Each link uses the statistical SoS model with quarter-circle arrival
    angles ``alpha_n = (2 pi n - pi + theta) / (4 N)``::

        g(t) = (X_c(t) + j X_s(t)) / sqrt(2)
        X_c(t) = sqrt(2/N) sum_n cos(2 pi f t cos(alpha_n) + phi_n)
        X_s(t) = sqrt(2/N) sum_n cos(2 pi f t sin(alpha_n) + psi_n)

    with ``f`` the normalized Doppler per step, so that ``E|g|^2 = 1`` and the
    autocorrelation approaches ``J0(2 pi f tau)``.
    """

    def __init__(self, num_pairs: int, rng: np.random.Generator,
                 num_sinusoids: int = 20, normalized_doppler: float = 0.01):
        if num_sinusoids < 1:
            raise ValueError("num_sinusoids must be >= 1")
        self.num_pairs = num_pairs
        self.num_sinusoids = num_sinusoids
        self.normalized_doppler = normalized_doppler
        self.step_index = 0
        shape = (num_pairs, num_pairs)
        n = np.arange(1, num_sinusoids + 1)
        theta = rng.uniform(-math.pi, math.pi, size=shape + (1,))
        alpha = (2.0 * math.pi * n - math.pi + theta) / (4.0 * num_sinusoids)
        omega = 2.0 * math.pi * normalized_doppler
        self._w_c = omega * np.cos(alpha)
        self._w_s = omega * np.sin(alpha)
        self._phi_c = rng.uniform(-math.pi, math.pi, size=shape + (num_sinusoids,))
        self._phi_s = rng.uniform(-math.pi, math.pi, size=shape + (num_sinusoids,))

    def gains_at(self, t) -> np.ndarray:
        """Complex gains at the given step indices; shape ``t.shape + (m, m)``."""
        t = np.asarray(t, dtype=float)
        tt = t.reshape(t.shape + (1, 1, 1))
        scale = math.sqrt(1.0 / self.num_sinusoids)
        xc = np.cos(tt * self._w_c + self._phi_c).sum(axis=-1)
        xs = np.cos(tt * self._w_s + self._phi_s).sum(axis=-1)
        return scale * (xc + 1j * xs)

    def step(self) -> np.ndarray:
        g = self.gains_at(self.step_index)
        self.step_index += 1
        return g

    def run(self, num_steps: int) -> np.ndarray:
        """Advance ``num_steps`` at once; returns ``(num_steps, m, m)`` gains."""
        t = np.arange(self.step_index, self.step_index + num_steps)
        self.step_index += num_steps
        return self.gains_at(t)


def step_fading(process: FadingProcess) -> np.ndarray:
    return process.step()


def fading_for(drop: Drop, num_sinusoids: int = 20,
               normalized_doppler: float = 0.01) -> FadingProcess:
    """The fading process seeded from the drop's own fading sub-stream."""
    _, _, fade_rng = _seed_streams(drop.params.seed)
    return FadingProcess(drop.num_pairs, fade_rng, num_sinusoids, normalized_doppler)


def channel_matrix(drop: Drop, fading: np.ndarray, noise: float) -> ChannelMatrix:
    """Combine long-term gains with fading; ``fading`` is ``(..., m, m)``."""
    fading = np.asarray(fading)
    if fading.shape[-2:] != drop.longterm_gain.shape:
        raise ValueError(
            f"fading shape {fading.shape} does not match drop of size {drop.num_pairs}"
        )
    return ChannelMatrix(np.sqrt(drop.longterm_gain) * fading, noise)


def drop_channels(drop: Drop, noise: float, num_steps: int | None = None,
                  num_sinusoids: int = 20,
                  normalized_doppler: float = 0.01) -> ChannelMatrix:
    """All fading steps of a drop as one batched ``(T, m, m)`` channel."""
    steps = drop.params.steps_per_drop if num_steps is None else num_steps
    process = fading_for(drop, num_sinusoids, normalized_doppler)
    return channel_matrix(drop, process.run(steps), noise)


# -- drop files -------------------------------------------------------------

_DROP_MAGIC = "# cfgnn-drop v1"


def save_drop(drop: Drop, path) -> None:
    """Write a drop as text: header with all parameters, positions in m, gains in dB."""
    p = drop.params
    lines = [_DROP_MAGIC]
    flat = asdict(p)
    pl = flat.pop("pathloss")
    for key, val in flat.items():
        lines.append(f"# {key} = {val!r}")
    for key, val in pl.items():
        lines.append(f"# pathloss.{key} = {val!r}")
    m = drop.num_pairs
    for i in range(m):
        x, y = drop.tx_positions[i]
        lines.append(f"tx {i} {float(x)!r} {float(y)!r}")
    for i in range(m):
        x, y = drop.rx_positions[i]
        lines.append(f"rx {i} {float(x)!r} {float(y)!r}")
    gain_db = 10.0 * np.log10(drop.longterm_gain)
    for i in range(m):
        for j in range(m):
            lines.append(f"gain_db {i} {j} {float(gain_db[i, j])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_drop(path) -> Drop:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != _DROP_MAGIC:
        raise ValueError(f"{path}: not a drop file")
    header, pl = {}, {}
    rows = []
    for line in text[1:]:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition("=")
            key, val = key.strip(), val.strip()
            if key.startswith("pathloss."):
                pl[key[len("pathloss."):]] = float(val)
            else:
                header[key] = val
            continue
        rows.append(line.split())
    types = {f.name: f.type for f in fields(DropParams)}
    kw = {}
    for key, val in header.items():
        if key not in types:
            raise ValueError(f"{path}: unknown header key {key!r}")
        kw[key] = int(val) if types[key] in ("int", int) else float(val)
    params = DropParams(pathloss=PathLossModel(**pl), **kw)
    m = params.num_pairs
    tx, rx = np.zeros((m, 2)), np.zeros((m, 2))
    gain_db = np.full((m, m), np.nan)
    for row in rows:
        kind = row[0]
        if kind in ("tx", "rx"):
            target = tx if kind == "tx" else rx
            target[int(row[1])] = float(row[2]), float(row[3])
        elif kind == "gain_db":
            gain_db[int(row[1]), int(row[2])] = float(row[3])
        else:
            raise ValueError(f"{path}: unknown record {kind!r}")
    if np.isnan(gain_db).any():
        raise ValueError(f"{path}: incomplete gain table")
    return Drop(params, tx, rx, 10.0 ** (gain_db / 10.0))
