"""
config.py - pvlab
Experiment configuration: JSON defaults from data/default_config.json with a
user document merged on top. Unknown keys are rejected at every level.
"""

import copy
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import BlurSchedule, HeatSchedule, MarkovOrder, NoiseSchedule, linear_beta_schedule, log_heat_schedule
from .errors import ArgumentError, ConfigError
from .gauss_oracle import ChainKind, GaussianSource

logger = logging.getLogger("pvlab.config")

ROOT           = Path(__file__).resolve().parents[2]
DEFAULTS_FILE  = ROOT / "data" / "default_config.json"
CONFIG_VERSION = 1

AUGMENT_FAMILIES = ("blur", "heat", "noise-first-order", "noise-high-order")
CHAIN_FAMILIES   = ("first-order", "high-order")
ORACLE_FAMILIES  = CHAIN_FAMILIES + ("discrete",)
PREDICTOR_KINDS  = ("oracle", "fitted", "shared")


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{where}' must be an object")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def load_defaults() -> dict:
    return json.loads(DEFAULTS_FILE.read_text(encoding="utf-8"))


def resolve(user: dict | None = None, seed: int | None = None) -> dict:
    """Defaults <- user document <- --seed override."""
    user = dict(user or {})
    version = user.pop("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"config version {version!r} != supported version {CONFIG_VERSION}")
    resolved = _merge(load_defaults(), user)
    resolved["version"] = CONFIG_VERSION
    if seed is not None:
        resolved["seed"] = seed
    return resolved


def canonical_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def config_hash(doc: dict) -> str:
    return hashlib.sha256(canonical_json(doc).encode("utf-8")).hexdigest()


# ══════════════════════════════════════════════════════════════════════════════
# Typed views
# ══════════════════════════════════════════════════════════════════════════════

def _need(cond: bool, message: str):
    if not cond:
        raise ConfigError(message)


@dataclass(frozen=True)
class ChainConfig:
    betas: tuple | None
    n_frames: int
    beta_start: float
    beta_end: float
    dim: int
    var: float

    @classmethod
    def from_dict(cls, d: dict) -> "ChainConfig":
        betas = None if d["betas"] is None else tuple(float(b) for b in d["betas"])
        _need(int(d["dim"]) >= 1, "chain.dim must be >= 1")
        _need(float(d["var"]) > 0, "chain.var must be > 0")
        return cls(betas, int(d["n_frames"]), float(d["beta_start"]), float(d["beta_end"]),
                   int(d["dim"]), float(d["var"]))

    def schedule(self) -> NoiseSchedule:
        if self.betas is not None:
            return NoiseSchedule(self.betas)
        return linear_beta_schedule(self.n_frames, self.beta_start, self.beta_end)

    def source(self) -> GaussianSource:
        return GaussianSource(np.zeros(self.dim), self.var * np.eye(self.dim))

    def kind(self, family: str) -> ChainKind:
        _need(family in CHAIN_FAMILIES, f"unknown chain family '{family}'")
        return ChainKind(MarkovOrder(family), self.schedule())


@dataclass(frozen=True)
class AugmentConfig:
    input_dir: Path
    family: str
    blur: BlurSchedule
    heat: HeatSchedule
    noise: NoiseSchedule

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        _need(d["family"] in AUGMENT_FAMILIES, f"augment.family must be one of {AUGMENT_FAMILIES}")
        h, nz = d["heat"], d["noise"]
        return cls(
            Path(d["input_dir"]),
            d["family"],
            BlurSchedule(**d["blur"]),
            log_heat_schedule(h["n_frames"], h["t_min"], h["t_max"], h["sigma_h"]),
            linear_beta_schedule(nz["n_frames"], nz["beta_start"], nz["beta_end"]),
        )


@dataclass(frozen=True)
class OracleConfig:
    families: tuple
    contexts: tuple | None         # offsets from T, e.g. ((1,), (1, 2))
    K: int
    orders: tuple
    value_map: tuple | None

    @classmethod
    def from_dict(cls, d: dict) -> "OracleConfig":
        families = tuple(d["families"])
        for f in families:
            _need(f in ORACLE_FAMILIES, f"oracle family '{f}' not in {ORACLE_FAMILIES}")
        contexts = None if d["contexts"] is None else tuple(tuple(int(o) for o in c) for c in d["contexts"])
        disc = d["discrete"]
        value_map = None if disc["value_map"] is None else tuple(float(v) for v in disc["value_map"])
        return cls(families, contexts, int(disc["K"]), tuple(int(m) for m in disc["orders"]), value_map)


@dataclass(frozen=True)
class FitConfig:
    families: tuple
    k_small: int
    k_large: int
    n_train: int
    n_test: int
    ridge: float
    convergence_ns: tuple
    mlp: dict

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        families = tuple(d["families"])
        for f in families:
            _need(f in CHAIN_FAMILIES, f"fit family '{f}' not in {CHAIN_FAMILIES}")
        _need(1 <= int(d["k_small"]) <= int(d["k_large"]), "fit needs 1 <= k_small <= k_large")
        _need(int(d["n_test"]) >= 1, "fit.n_test must be >= 1")
        return cls(families, int(d["k_small"]), int(d["k_large"]), int(d["n_train"]), int(d["n_test"]),
                   float(d["ridge"]), tuple(int(n) for n in d["convergence_ns"]), dict(d["mlp"]))

    def check_sizes(self, dim: int):
        """Minimum training size is one more than the widest regression input."""
        need = self.k_large * dim + 1
        if self.n_train < need:
            raise ArgumentError(f"fit.n_train={self.n_train} below the minimum {need} for k={self.k_large}, d={dim}")


@dataclass(frozen=True)
class GenerateConfig:
    family: str
    context_window: int
    n_videos: int
    predictors: str
    n_train: int
    ridge: float
    residual_std: float | None
    teacher_forced: bool
    compare_modes: bool
    write_videos: int

    @classmethod
    def from_dict(cls, d: dict) -> "GenerateConfig":
        _need(d["family"] in CHAIN_FAMILIES, f"generate.family must be one of {CHAIN_FAMILIES}")
        _need(d["predictors"] in PREDICTOR_KINDS, f"generate.predictors must be one of {PREDICTOR_KINDS}")
        std = d["residual_std"]
        return cls(d["family"], int(d["context_window"]), int(d["n_videos"]), d["predictors"],
                   int(d["n_train"]), float(d["ridge"]), None if std is None else float(std),
                   bool(d["teacher_forced"]), bool(d["compare_modes"]), int(d["write_videos"]))


@dataclass(frozen=True)
class VerifyConfig:
    gauss_configs: int
    max_dim: int
    max_frames: int
    strict_min_beta: float
    discrete_seeds: int
    discrete_max_K: int
    discrete_max_T: int
    empirical_n: int

    @classmethod
    def from_dict(cls, d: dict) -> "VerifyConfig":
        _need(int(d["max_frames"]) >= 3, "verify.max_frames must be >= 3")
        _need(int(d["discrete_max_T"]) >= 3, "verify.discrete_max_T must be >= 3")
        return cls(int(d["gauss_configs"]), int(d["max_dim"]), int(d["max_frames"]),
                   float(d["strict_min_beta"]), int(d["discrete_seeds"]), int(d["discrete_max_K"]),
                   int(d["discrete_max_T"]), int(d["empirical_n"]))


@dataclass(frozen=True)
class ExperimentConfig:
    version: int
    seed: int
    chain: ChainConfig
    augment: AugmentConfig
    oracle: OracleConfig
    fit: FitConfig
    generate: GenerateConfig
    verify: VerifyConfig
    resolved: dict

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        try:
            return cls(
                version=doc["version"],
                seed=int(doc["seed"]),
                chain=ChainConfig.from_dict(doc["chain"]),
                augment=AugmentConfig.from_dict(doc["augment"]),
                oracle=OracleConfig.from_dict(doc["oracle"]),
                fit=FitConfig.from_dict(doc["fit"]),
                generate=GenerateConfig.from_dict(doc["generate"]),
                verify=VerifyConfig.from_dict(doc["verify"]),
                resolved=doc,
            )
        except ArgumentError as e:
            raise ConfigError(f"invalid schedule in config: {e}") from e
        except (TypeError, ValueError, KeyError) as e:
            raise ConfigError(f"malformed config: {e}") from e


def load_config(path=None, seed: int | None = None) -> ExperimentConfig:
    user = None
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from e
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        if "version" not in user:
            raise ConfigError(f"{path}: missing top-level \"version\"")
    config = ExperimentConfig.from_dict(resolve(user, seed))
    logger.debug("Config resolved, hash %s", config_hash(config.resolved)[:12])
    return config
