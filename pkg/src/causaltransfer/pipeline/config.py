"""Experiment configuration: one JSON document validated against ``CONFIG_SCHEMA``."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import jsonschema

from .._io import PathLike, canonical_hash, load_json
from ..datagen import FLIP_GRID, Family, GeneratorConfig, family_tasks
from ..errors import ConfigError
from ..tarnet import IpmConfig, LossKind, TrainConfig

DEFAULT_EPOCHS = 300
DEFAULT_FINE_TUNE_FRACTION = 0.2


class Experiment(str, Enum):
    TRANSFER = "transfer"
    SYMMETRY = "symmetry"
    CORRELATION = "correlation"
    EFFICIENCY = "efficiency"
    BUNDLING = "bundling"
    VERIFY_BOUNDS = "verify-bounds"


_TASK_PARAMS = {"type": "object", "additionalProperties": True}

CONFIG_SCHEMA: Dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "causaltransfer experiment",
    "type": "object",
    "required": ["experiment", "family"],
    "additionalProperties": False,
    "properties": {
        "experiment": {"enum": [e.value for e in Experiment]},
        "family": {"enum": [f.value for f in Family]},
        "n": {"type": ["integer", "null"], "minimum": 2},
        "target": _TASK_PARAMS,
        "sources": {"type": ["array", "null"], "items": _TASK_PARAMS},
        "max_sources": {"type": ["integer", "null"], "minimum": 1},
        "alpha_grid": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "p_grid": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}, "minItems": 1},
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 2},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "loss_kind": {"enum": [k.value for k in LossKind]},
                "head_hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "phi_hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "ipm": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "eps": {"type": "number", "exclusiveMinimum": 0},
                        "iters": {"type": "integer", "minimum": 1},
                    },
                },
            },
        },
        "fine_tune_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "gate": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "bound_models": {"type": "integer", "minimum": 1},
        "workers": {"type": "integer", "minimum": 1},
        "paths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"workdir": {"type": "string"}, "out": {"type": "string"}},
        },
    },
}


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = 128
    lr: float = 1e-3
    loss_kind: LossKind = LossKind.SQUARED_ERROR
    head_hidden: Tuple[int, ...] = (16,)
    phi_hidden: Tuple[int, ...] = (64, 32)
    ipm: IpmConfig = field(default_factory=IpmConfig)

    def train_config(self, alpha: float, seed: int, epochs: Optional[int] = None) -> TrainConfig:
        return TrainConfig(alpha=alpha, lr=self.lr, epochs=epochs or self.epochs, batch_size=self.batch_size,
                           seed=seed, loss_kind=self.loss_kind, ipm=self.ipm)

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size, "lr": self.lr,
                "loss_kind": LossKind(self.loss_kind).value, "head_hidden": list(self.head_hidden),
                "phi_hidden": list(self.phi_hidden), "ipm": {"eps": self.ipm.eps, "iters": self.ipm.iters}}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: Experiment
    family: Family
    n: Optional[int] = None
    target: Dict[str, Any] = field(default_factory=dict)
    sources: Optional[List[Dict[str, Any]]] = None
    max_sources: Optional[int] = None
    alpha_grid: Tuple[float, ...] = (1.0,)
    seeds: Tuple[int, ...] = (0,)
    sizes: Tuple[int, ...] = ()
    p_grid: Tuple[float, ...] = FLIP_GRID
    train: TrainSettings = field(default_factory=TrainSettings)
    fine_tune_fraction: float = DEFAULT_FINE_TUNE_FRACTION
    gate: Optional[float] = None
    bound_models: int = 5
    workers: int = 1
    workdir: str = "work"
    out: str = "results"

    def __post_init__(self) -> None:
        object.__setattr__(self, "experiment", Experiment(self.experiment))
        object.__setattr__(self, "family", Family(self.family))
        if not self.seeds:
            raise ConfigError("seed list must not be empty")
        sizes = tuple(int(s) for s in self.sizes)
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigError(f"sizes must be strictly ascending, got {list(sizes)}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def alpha(self) -> float:
        return float(self.alpha_grid[0])

    @property
    def fine_tune_epochs(self) -> int:
        return max(1, int(round(self.fine_tune_fraction * self.train.epochs)))

    def task_grid(self, seed: int) -> List[GeneratorConfig]:
        """The family's tasks, base first, with ``target`` overriding the base."""
        grid = family_tasks(self.family.value, self.n, seed)
        if self.target:
            grid[0] = GeneratorConfig(self.family, {**grid[0].params, **self.target}, self.n, seed)
        if self.sources is not None:
            grid = grid[:1] + [GeneratorConfig(self.family, dict(p), self.n, seed) for p in self.sources]
        if self.max_sources is not None:
            grid = grid[:1 + self.max_sources]
        return grid

    @property
    def digest(self) -> str:
        return canonical_hash(self.to_dict())

    def with_overrides(self, *, seed: Optional[int] = None, out: Optional[str] = None,
                       workers: Optional[int] = None) -> "ExperimentConfig":
        data = self.to_dict()
        if seed is not None:
            data["seeds"] = [seed]
        if out is not None:
            data["paths"]["out"] = out
        if workers is not None:
            data["workers"] = workers
        return config_from_dict(data)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment.value, "family": self.family.value, "n": self.n,
            "target": dict(self.target), "sources": self.sources, "max_sources": self.max_sources,
            "alpha_grid": list(self.alpha_grid), "seeds": list(self.seeds), "sizes": list(self.sizes),
            "p_grid": list(self.p_grid), "train": self.train.to_dict(),
            "fine_tune_fraction": self.fine_tune_fraction, "gate": self.gate,
            "bound_models": self.bound_models, "workers": self.workers,
            "paths": {"workdir": self.workdir, "out": self.out},
        }


def validate(data: Any) -> None:
    first = jsonschema.exceptions.best_match(jsonschema.Draft7Validator(CONFIG_SCHEMA).iter_errors(data))
    if first is not None:
        where = "/".join(str(p) for p in first.absolute_path) or "<root>"
        raise ConfigError(f"invalid experiment config at {where}: {first.message}")


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    validate(data)
    train = dict(data.get("train", {}))
    if "ipm" in train:
        train["ipm"] = IpmConfig(**train["ipm"])
    for key in ("head_hidden", "phi_hidden"):
        if key in train:
            train[key] = tuple(train[key])
    paths = data.get("paths", {})
    return ExperimentConfig(
        experiment=data["experiment"],
        family=data["family"],
        n=data.get("n"),
        target=dict(data.get("target", {})),
        sources=data.get("sources"),
        max_sources=data.get("max_sources"),
        alpha_grid=tuple(data.get("alpha_grid", (1.0,))),
        seeds=tuple(data.get("seeds", (0,))),
        sizes=tuple(data.get("sizes", ())),
        p_grid=tuple(data.get("p_grid", FLIP_GRID)),
        train=TrainSettings(**train),
        fine_tune_fraction=data.get("fine_tune_fraction", DEFAULT_FINE_TUNE_FRACTION),
        gate=data.get("gate"),
        bound_models=data.get("bound_models", 5),
        workers=data.get("workers", 1),
        workdir=paths.get("workdir", "work"),
        out=paths.get("out", "results"),
    )


def load_config(path: PathLike) -> ExperimentConfig:
    path = Path(path)
    try:
        data = load_json(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)
