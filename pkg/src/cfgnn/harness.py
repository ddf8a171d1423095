"""Experiment orchestration: configs, seeded drop sweeps, train/eval runs, CSV output.

Config files are flat ``section.key = value`` lines; ``#`` starts a comment.
Sections: ``experiment``, ``topology``, ``pathloss``, ``radio``, ``regnn``,
``trainer``, ``wmmse``. Unset keys keep their defaults.

Output files, all in ``experiment.output_dir``:

``train_m{m}.csv``
    iter, s, mean_lambda, mean_mu, utility, batch_sum_rate, batch_p5_rate
``regnn_m{m}.ckpt``
    REGNN checkpoint (see :mod:`cfgnn.regnn`)
``eval_summary.csv`` / ``baselines.csv``
    size, policy, sum_rate, p5_rate, n_drops, seed
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .baselines import WmmseConfig, tdm_schedule, wmmse
from .regnn import RegnnConfig, load_checkpoint, save_checkpoint
from .topology import (DropParams, PathLossModel, dbm_to_watts, generate_drop,
                       noise_power, save_drop)
from .trainer import (Environment, TrainerConfig, evaluate_policy,
                      regnn_policy, summarize, train)

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("size", "policy", "sum_rate", "p5_rate", "n_drops", "seed")

# Seed-derivation purposes.
TRAIN, TEST, INIT = 1, 2, 3


@dataclass(frozen=True)
class TopologyConfig:
    area_side: float = 500.0
    min_tx_separation: float = 35.0
    rx_annulus_inner: float = 10.0
    rx_annulus_outer: float = 100.0
    steps_per_drop: int = 200
    rx_radius_exponent: float = 2.0
    shadowing_std_db: float = 7.0


@dataclass(frozen=True)
class RadioConfig:
    p_max_dbm: float = 10.0
    noise_psd_dbm_hz: float = -174.0
    bandwidth_hz: float = 10e6
    tin_M: float = 1.0
    tin_eta: float = 0.6
    num_sinusoids: int = 20
    normalized_doppler: float = 0.01
    gso_per_step: bool = True

    def environment(self) -> Environment:
        return Environment(
            p_max=float(dbm_to_watts(self.p_max_dbm)),
            noise_power=noise_power(self.noise_psd_dbm_hz, self.bandwidth_hz),
            tin_M=self.tin_M, tin_eta=self.tin_eta,
            num_sinusoids=self.num_sinusoids,
            normalized_doppler=self.normalized_doppler,
            gso_per_step=self.gso_per_step,
        )


@dataclass(frozen=True)
class RegnnSection:
    features: tuple[int, ...] = (1, 4, 4, 1)
    taps: tuple[int, ...] = (4, 4, 4)


@dataclass(frozen=True)
class WmmseSection:
    max_iters: int = 100
    tol: float = 1e-6
    single_link_fallback: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    sizes: tuple[int, ...] = (6, 8, 10, 12, 14)
    train_drops: int = 4000
    test_drops: int = 500
    seed: int = 0
    output_dir: str = "runs"
    eval_binarize: bool = True
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    pathloss: PathLossModel = field(default_factory=PathLossModel)
    radio: RadioConfig = field(default_factory=RadioConfig)
    regnn: RegnnSection = field(default_factory=RegnnSection)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    wmmse: WmmseSection = field(default_factory=WmmseSection)

    def __post_init__(self):
        if not self.sizes:
            raise ValueError("experiment.sizes must not be empty")
        if min(self.sizes) < 1:
            raise ValueError("network sizes must be >= 1")
        if self.train_drops < 1 or self.test_drops < 1:
            raise ValueError("train_drops and test_drops must be >= 1")

    @property
    def env(self) -> Environment:
        return self.radio.environment()

    def regnn_config(self) -> RegnnConfig:
        return RegnnConfig(self.regnn.features, self.regnn.taps, self.env.p_max)

    def wmmse_config(self) -> WmmseConfig:
        w = self.wmmse
        return WmmseConfig(self.env.p_max, w.max_iters, w.tol,
                           single_link_fallback=w.single_link_fallback)

    def drop_params(self, m: int, seed: int) -> DropParams:
        t = self.topology
        return DropParams(m, t.area_side, t.min_tx_separation, t.rx_annulus_inner,
                          t.rx_annulus_outer, t.steps_per_drop, seed,
                          t.rx_radius_exponent, t.shadowing_std_db, self.pathloss)


DESK_OVERRIDES = {
    "experiment.sizes": "6, 14",
    "experiment.train_drops": "200",
    "experiment.test_drops": "100",
    "experiment.output_dir": "runs/desk",
}


# -- config parsing ---------------------------------------------------------

def _convert(raw: str, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, tuple):
        return tuple(int(v) for v in raw.replace(",", " ").split())
    if isinstance(default, int):
        return int(float(raw)) if "e" in raw.lower() else int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply ``section.key = value`` lines on top of ``base``."""
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep or "." not in key:
            raise ValueError(f"line {lineno}: expected 'section.key = value'")
        entries[key.strip()] = val.strip()
    return apply_overrides(base or ExperimentConfig(), entries)


def apply_overrides(cfg: ExperimentConfig, entries: dict[str, str]) -> ExperimentConfig:
    top, nested = {}, {}
    for key, val in entries.items():
        section, _, name = key.partition(".")
        if section == "experiment":
            top[name] = val
        else:
            nested.setdefault(section, {})[name] = val
    updates = {}
    for name, val in top.items():
        if name not in {f.name for f in fields(cfg)} or name in _SECTIONS:
            raise ValueError(f"unknown key experiment.{name}")
        updates[name] = _convert(val, getattr(cfg, name))
    for section, kv in nested.items():
        if section not in _SECTIONS:
            raise ValueError(f"unknown config section {section!r}")
        current = getattr(cfg, section)
        valid = {f.name for f in fields(current)}
        sub = {}
        for name, val in kv.items():
            if name not in valid:
                raise ValueError(f"unknown key {section}.{name}")
            sub[name] = _convert(val, getattr(current, name))
        updates[section] = replace(current, **sub)
    return replace(cfg, **updates)


_SECTIONS = ("topology", "pathloss", "radio", "regnn", "trainer", "wmmse")


def load_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text())


def desk_config() -> ExperimentConfig:
    return apply_overrides(ExperimentConfig(), DESK_OVERRIDES)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(cfg):
        val = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            for g in fields(val):
                lines.append(f"{f.name}.{g.name} = {_fmt(getattr(val, g.name))}")
        else:
            lines.append(f"experiment.{f.name} = {_fmt(val)}")
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(map(str, v))
    return str(v).lower() if isinstance(v, bool) else str(v)


# -- seeded drop streams ----------------------------------------------------

def derive_seed(seed: int, purpose: int, index: int) -> int:
    """64-bit seed for drop ``index`` of a purpose; independent of network size."""
    a, b = np.random.SeedSequence([seed, purpose, index]).generate_state(2, np.uint32)
    return (int(a) << 32) | int(b)


def drop_stream(cfg: ExperimentConfig, m: int, purpose: int, count: int):
    for i in range(count):
        yield generate_drop(cfg.drop_params(m, derive_seed(cfg.seed, purpose, i)))


# -- runs -------------------------------------------------------------------

def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def checkpoint_path(cfg: ExperimentConfig, m: int) -> Path:
    return Path(cfg.output_dir) / f"regnn_m{m}.ckpt"


def run_train(cfg: ExperimentConfig, callback=None) -> dict[int, tuple[Path, Path]]:
    """Train one model per network size; returns ``{m: (checkpoint, log_csv)}``."""
    out = _outdir(cfg)
    env = cfg.env
    results = {}
    for m in cfg.sizes:
        log.info("training m=%d on %d drops", m, cfg.train_drops)
        theta, tlog, _ = train(
            cfg.trainer, drop_stream(cfg, m, TRAIN, cfg.train_drops), env,
            cfg.regnn_config(), seed=derive_seed(cfg.seed, INIT, m), callback=callback,
        )
        ckpt, csv_path = checkpoint_path(cfg, m), out / f"train_m{m}.csv"
        try:
            save_checkpoint(theta, ckpt, {"num_pairs": m, "seed": cfg.seed,
                                          "iterations": cfg.train_drops})
            tlog.write_csv(csv_path)
        except OSError as exc:
            raise OSError(f"writing training outputs for m={m} to {out}: {exc}") from exc
        results[m] = (ckpt, csv_path)
    return results


def _baseline_policies(cfg: ExperimentConfig) -> dict:
    env, wcfg = cfg.env, cfg.wmmse_config()
    return {
        "TDM": lambda b: tdm_schedule(len(b), b.H.num_pairs, env.p_max),
        "WMMSE": lambda b: wmmse(b.H, wcfg).power,
    }


def _evaluate_sizes(cfg: ExperimentConfig, policies_for) -> list[dict]:
    env = cfg.env
    rows = []
    for m in cfg.sizes:
        drops = list(drop_stream(cfg, m, TEST, cfg.test_drops))
        for name, policy in policies_for(m).items():
            sum_rate, p5 = summarize(evaluate_policy(policy, drops, env))
            rows.append({"size": m, "policy": name, "sum_rate": sum_rate,
                         "p5_rate": p5, "n_drops": len(drops), "seed": cfg.seed})
            log.info("m=%d %-6s sum=%.3f p5=%.4f", m, name, sum_rate, p5)
    return rows


def write_summary(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([r["size"], r["policy"], repr(float(r["sum_rate"])),
                        repr(float(r["p5_rate"])), r["n_drops"], r["seed"]])


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["size"], r["n_drops"], r["seed"] = int(r["size"]), int(r["n_drops"]), int(r["seed"])
        r["sum_rate"], r["p5_rate"] = float(r["sum_rate"]), float(r["p5_rate"])
    return rows


def run_eval(cfg: ExperimentConfig, checkpoints: dict[int, Path] | None = None) -> list[dict]:
    """CF-GNN, TDM and WMMSE on the test drops of every size; writes ``eval_summary.csv``."""
    checkpoints = dict(checkpoints or {})
    for m in cfg.sizes:
        path = Path(checkpoints.get(m, checkpoint_path(cfg, m)))
        if not path.exists():
            raise FileNotFoundError(f"no checkpoint for network size m={m} at {path}")
        checkpoints[m] = path
    base = _baseline_policies(cfg)

    def policies(m):
        theta, _ = load_checkpoint(checkpoints[m])
        return {"CF-GNN": regnn_policy(theta, cfg.eval_binarize), **base}

    rows = _evaluate_sizes(cfg, policies)
    write_summary(rows, _outdir(cfg) / "eval_summary.csv")
    return rows


def run_baselines(cfg: ExperimentConfig) -> list[dict]:
    base = _baseline_policies(cfg)
    rows = _evaluate_sizes(cfg, lambda m: base)
    write_summary(rows, _outdir(cfg) / "baselines.csv")
    return rows


def gen_drops(cfg: ExperimentConfig, m: int, count: int, outdir=None) -> list[Path]:
    out = Path(outdir) if outdir is not None else _outdir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, drop in enumerate(drop_stream(cfg, m, TEST, count)):
        path = out / f"drop_m{m}_{i:04d}.txt"
        save_drop(drop, path)
        paths.append(path)
    return paths
