"""Experiment configuration: TOML in, validated nested dict out."""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..attack import AttackConfig
from ..fedcore import TrainConfig
from ..models import ModelSpec
from ..privacy import DataDomain, PolyB
from .data import SyntheticData
from .seeding import derive_seed

DEFAULTS: dict[str, Any] = {
    "master_seed": 0,
    "output_dir": "out",
    "model": {
        "kind": "logistic-regression",
        "input_dim": 5,
        "hidden_dim": 0,
        "output_dim": 1,
        "bias": True,
    },
    "data": {
        "source": "synthetic",
        "csv_paths": [],
        "lo": 0.0,
        "hi": 1.0,
        "teacher": "logistic",
        "noise": 0.0,
        "num_classes": 2,
        "n_per_client": 0,
    },
    "train": {
        "num_clients": 2,
        "rounds": 3,
        "local_epochs": 1,
        "batch_size": 1,
        "lr": 0.1,
        "aggregation": "size-weighted",
    },
    "attack": {
        "metric": "squared-l2",
        "optimizer": "adaptive-moment",
        "step_size": 0.05,
        "rounds": 2000,
        "init": "gaussian",
        "init_center": None,
        "init_scale": None,
        "reconstruct_labels": False,
        "gradient": "fd",
        "fd_step": 1e-6,
        "client": 0,
        "attack_round": -1,
    },
    "privacy": {
        "D": None,
        "poly_B": ["ln"],
        "distortion": [0.0],
        "trials": 10,
        "lipschitz_pairs": 200,
    },
    "jacobian": {
        "tolerance": 1e-10,
        "fd_step": 1e-6,
        "collision_magnitude": 1e-3,
    },
    "sweep": {
        "batch_size": [],
        "local_epochs": [],
        "n_per_client": [],
    },
    "output": {"trace_stride": 10},
}

# Keys that do not change any numeric result.
_UNHASHED = ("output_dir",)


def _schema() -> dict:
    text = resources.files("fedleak.harness").joinpath("config_schema.json").read_text()
    return json.loads(text)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as TOML literals."""
    raw = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        path, value = item.split("=", 1)
        keys = path.strip().split(".")
        node = raw
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = _parse_value(value.strip())
    return raw


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict

    @classmethod
    def from_dict(cls, d: dict | None = None) -> "ExperimentConfig":
        merged = _merge(DEFAULTS, d or {})
        jsonschema.validate(merged, _schema())
        cfg = cls(merged)
        cfg.model_spec  # dimension checks
        if cfg.raw["data"]["source"] == "synthetic":
            cfg.synthetic(cfg.raw["train"]["batch_size"])
        return cfg

    @classmethod
    def load(cls, path: str | Path | None, overrides: list[str] | None = None) -> "ExperimentConfig":
        d = {}
        if path is not None:
            with open(path, "rb") as f:
                d = tomllib.load(f)
        return cls.from_dict(apply_overrides(d, overrides or []))

    def replace(self, overrides: list[str]) -> "ExperimentConfig":
        return ExperimentConfig.from_dict(apply_overrides(self.raw, overrides))

    # -- derived views -------------------------------------------------------

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def master_seed(self) -> int:
        return int(self.raw["master_seed"])

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["output_dir"])

    @property
    def model_spec(self) -> ModelSpec:
        return ModelSpec.from_dict(self.raw["model"])

    @property
    def domain(self) -> DataDomain:
        d = self.raw["data"]
        return DataDomain.box(self.raw["model"]["input_dim"], d["lo"], d["hi"])

    def synthetic(self, batch_size: int, n_per_client: int | None = None) -> SyntheticData:
        d = self.raw["data"]
        n = d["n_per_client"] if n_per_client is None else n_per_client
        n = n or batch_size
        return SyntheticData(
            input_dim=self.raw["model"]["input_dim"],
            n_per_client=(n,) * self.raw["train"]["num_clients"],
            lo=d["lo"],
            hi=d["hi"],
            teacher=d["teacher"],
            noise=d["noise"],
            num_classes=d["num_classes"],
        )

    def train_config(self, batch_size=None, local_epochs=None, seed=None) -> TrainConfig:
        t = self.raw["train"]
        return TrainConfig(
            num_clients=t["num_clients"],
            rounds=t["rounds"],
            local_epochs=local_epochs or t["local_epochs"],
            batch_size=batch_size or t["batch_size"],
            lr=t["lr"],
            aggregation=t["aggregation"],
            seed=derive_seed(self.master_seed, "train") if seed is None else seed,
        )

    def attack_config(self, seed: int) -> AttackConfig:
        a = self.raw["attack"]
        d = self.raw["data"]
        center = a["init_center"] if a["init_center"] is not None else 0.5 * (d["lo"] + d["hi"])
        scale = a["init_scale"] if a["init_scale"] is not None else 0.5 * (d["hi"] - d["lo"])
        return AttackConfig(
            metric=a["metric"],
            optimizer=a["optimizer"],
            step_size=a["step_size"],
            rounds=a["rounds"],
            init=a["init"],
            init_center=center,
            init_scale=scale,
            seed=seed,
            reconstruct_labels=a["reconstruct_labels"],
            gradient=a["gradient"],
            fd_step=a["fd_step"],
        )

    @property
    def poly_choices(self) -> list[PolyB]:
        return [PolyB.parse(s) for s in self.raw["privacy"]["poly_B"]]

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form; key order and output_dir do not matter."""
        d = {k: v for k, v in self.raw.items() if k not in _UNHASHED}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()
