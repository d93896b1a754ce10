"""Experiment and sweep configuration.

One human-readable YAML file per experiment; CLI flags override file keys
(flag > file > built-in default).  Quantizer policies appear as small
mappings, e.g. ``{kind: fixed, word: 8, frac: 6, round: stochastic}`` or
``{kind: bfp, word: 8, exp: 8, block: small, round: stochastic}``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .optim import LrSchedule, QuantizerSet, TrainConfig

__all__ = [
    "ArmSpec",
    "ExperimentConfig",
    "SweepSpec",
    "ConfigError",
    "load_experiment_config",
    "load_sweep_config",
    "experiment_from_dict",
    "sweep_from_dict",
]

KNOWN_MODELS = ("quadratic", "linreg", "logreg", "mlp")
SWEEP_PARAMETERS = ("frac_bits", "cycle", "swa_word_bits")


class ConfigError(ValueError):
    """Configuration is malformed; raised before any compute starts."""


@dataclass(frozen=True)
class ArmSpec:
    """One comparison arm: an algorithm plus config overrides."""

    name: str
    algorithm: str = "swalp"  # "sgd" or "swalp"
    quantizers: dict = field(default_factory=dict)
    cycle: int | None = None
    momentum: float | None = None

    def __post_init__(self):
        if self.algorithm not in ("sgd", "swalp"):
            raise ConfigError(f"arm {self.name!r}: unknown algorithm {self.algorithm!r}")


@dataclass
class ExperimentConfig:
    exp_id: str
    model: str
    arms: list[ArmSpec]
    train: dict
    dataset: dict = field(default_factory=dict)
    model_params: dict = field(default_factory=dict)
    batch_size: int = 100
    seed: int = 0
    out_dir: str = "runs"
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in KNOWN_MODELS:
            raise ConfigError(f"unknown model {self.model!r}")
        if not self.arms:
            raise ConfigError("arms list must not be empty")
        names = [a.name for a in self.arms]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate arm names in {names}")

    def train_config_for(self, arm: ArmSpec) -> TrainConfig:
        """Base train section with the arm's overrides applied."""
        t = dict(self.train)
        base_q = QuantizerSet.from_dict(t.get("quantizers", {}))
        if arm.quantizers:
            merged = base_q.to_dict()
            for key, value in arm.quantizers.items():
                if key not in merged:
                    raise ConfigError(f"arm {arm.name!r}: unknown quantizer slot {key!r}")
                merged[key] = value
            base_q = QuantizerSet.from_dict(merged)
        return TrainConfig(
            total_iters=int(t["total_iters"]),
            warmup_iters=int(t.get("warmup_iters", 0)),
            cycle=int(arm.cycle if arm.cycle is not None else t.get("cycle", 1)),
            momentum=float(
                arm.momentum if arm.momentum is not None else t.get("momentum", 0.0)
            ),
            schedule=LrSchedule.from_dict(t.get("schedule", {"alpha": 0.01})),
            quantizers=base_q,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["arms"] = [dataclasses.asdict(a) for a in self.arms]
        return d


@dataclass
class SweepSpec:
    """A swept parameter, its values, and the base experiment."""

    parameter: str
    values: list
    base: ExperimentConfig

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(
                f"unknown sweep parameter {self.parameter!r}; "
                f"expected one of {SWEEP_PARAMETERS}"
            )
        if len(self.values) != len(set(self.values)):
            raise ConfigError("sweep values must be distinct")
        if not self.values:
            raise ConfigError("sweep values must not be empty")


def _as_arm(entry: dict | str) -> ArmSpec:
    if isinstance(entry, str):
        return ArmSpec(name=entry)
    known = {"name", "algorithm", "quantizers", "cycle", "momentum"}
    extra = set(entry) - known
    if extra:
        raise ConfigError(f"arm {entry.get('name')!r}: unknown keys {sorted(extra)}")
    return ArmSpec(
        name=entry["name"],
        algorithm=entry.get("algorithm", "swalp"),
        quantizers=entry.get("quantizers", {}) or {},
        cycle=entry.get("cycle"),
        momentum=entry.get("momentum"),
    )


def experiment_from_dict(d: dict, overrides: dict | None = None) -> ExperimentConfig:
    d = dict(d)
    if overrides:
        for key, value in overrides.items():
            if value is not None:
                d[key] = value
    try:
        arms = [_as_arm(a) for a in d.get("arms", [])]
        cfg = ExperimentConfig(
            exp_id=str(d["id"]),
            model=str(d["model"]),
            arms=arms,
            train=dict(d["train"]),
            dataset=dict(d.get("dataset", {}) or {}),
            model_params=dict(d.get("model_params", {}) or {}),
            batch_size=int(d.get("batch_size", 100)),
            seed=int(d.get("seed", 0)),
            out_dir=str(d.get("out_dir", "runs")),
            tolerances=dict(d.get("tolerances", {}) or {}),
        )
    except KeyError as exc:
        raise ConfigError(f"missing config key: {exc}") from exc
    # fail on malformed arm/train sections before any compute
    for arm in cfg.arms:
        cfg.train_config_for(arm)
    return cfg


def sweep_from_dict(d: dict, overrides: dict | None = None) -> SweepSpec:
    try:
        base = experiment_from_dict(d["base"], overrides)
        return SweepSpec(
            parameter=str(d["parameter"]), values=list(d["values"]), base=base
        )
    except KeyError as exc:
        raise ConfigError(f"missing sweep key: {exc}") from exc


def load_experiment_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    with open(path) as f:
        return experiment_from_dict(yaml.safe_load(f), overrides)


def load_sweep_config(path: str | Path, overrides: dict | None = None) -> SweepSpec:
    with open(path) as f:
        return sweep_from_dict(yaml.safe_load(f), overrides)


def force_literal_exponent(cfg: ExperimentConfig) -> ExperimentConfig:
    """Switch every BFP quantizer in the config to the literal exponent
    reading (comparison mode)."""

    def patch(qdict: dict) -> dict:
        out = {}
        for slot, spec in qdict.items():
            if isinstance(spec, dict) and spec.get("kind") == "bfp":
                spec = dict(spec, literal_exponent=True)
            out[slot] = spec
        return out

    train = dict(cfg.train)
    if "quantizers" in train:
        train["quantizers"] = patch(train["quantizers"])
    arms = [
        replace(a, quantizers=patch(a.quantizers)) if a.quantizers else a
        for a in cfg.arms
    ]
    cfg = ExperimentConfig(
        exp_id=cfg.exp_id,
        model=cfg.model,
        arms=arms,
        train=train,
        dataset=cfg.dataset,
        model_params=cfg.model_params,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        out_dir=cfg.out_dir,
        tolerances=cfg.tolerances,
    )
    return cfg
