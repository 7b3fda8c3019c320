"""JSON experiment configuration: schema, defaults, dotted overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import jsonschema

from .attacks import AttackConfig
from .data import Dataset, gen_synthetic, load_idx
from .errors import ConfigError
from .losses import Ewat, Gairat, Mail
from .trainer import METHODS, TrainConfig

_NUM = {"type": "number"}
_INT = {"type": "integer"}

_ATTACK = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "epsilon": {"type": "number", "minimum": 0},
        "eta": {"type": "number", "exclusiveMinimum": 0},
        "steps": {"type": "integer", "minimum": 1},
        "restarts": {"type": "integer", "minimum": 1},
        "random_init": {"type": "boolean"},
        "objective": {"enum": ["CE", "LM", "KL"]},
    },
}

_DATASET = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["blobs", "rings", "moons", "idx"]},
        "n": {"type": "integer", "minimum": 1},
        "K": {"type": "integer", "minimum": 2},
        "noise": {"type": "number", "minimum": 0},
        "seed": _INT,
        "images": {"type": "string"},
        "labels": {"type": "string"},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dataset", "out", "seed"],
    "properties": {
        "dataset": _DATASET,
        "val_dataset": {"oneOf": [_DATASET, {"type": "null"}]},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "init_seed": _INT,
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": list(METHODS)},
                "epochs": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "lr": {"type": "number", "minimum": 0},
                "lr_milestones": {
                    "type": "array",
                    "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                },
                "momentum": {"type": "number", "minimum": 0},
                "weight_decay": {"type": "number", "minimum": 0},
                "m_percent": {"type": "number", "minimum": 0, "maximum": 100},
                "lam": {"type": "number", "minimum": 0},
                "beta_t": {"type": "number", "minimum": 0},
                "scheme": {"enum": [None, "gairat", "mail", "ewat"]},
                "gairat_lam": _NUM,
                "mail_gamma": {"type": "number", "exclusiveMinimum": 0},
                "mail_beta": _NUM,
                "gairat_burn_in": {"type": "integer", "minimum": 0},
            },
        },
        "attack": _ATTACK,
        "early_stop_attack": _ATTACK,
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epsilon": {"type": "number", "minimum": 0},
                "bins": {"type": "integer", "minimum": 1},
                "bin_lo": _NUM,
                "bin_hi": _NUM,
                "use_attack": {"type": "boolean"},
            },
        },
        "out": {"type": "string"},
        "seed": _INT,
    },
}

DEFAULTS = {
    "val_dataset": None,
    "model": {"hidden": [32, 32], "init_seed": 0},
    "train": {
        "method": "AT", "epochs": 60, "batch_size": 64, "lr": 0.1, "lr_milestones": [],
        "momentum": 0.9, "weight_decay": 5e-4, "m_percent": 40.0, "lam": 0.4, "beta_t": 6.0,
        "scheme": None, "gairat_lam": 3.0, "mail_gamma": 10.0, "mail_beta": 0.5,
        "gairat_burn_in": 0,
    },
    "attack": {"epsilon": 0.1, "eta": 0.025, "steps": 10, "restarts": 1,
               "random_init": True, "objective": "CE"},
    "early_stop_attack": {"epsilon": 0.1, "eta": 0.025, "steps": 10, "restarts": 1,
                          "random_init": True, "objective": "CE"},
    "analysis": {"epsilon": 0.1, "bins": 60, "bin_lo": -25.0, "bin_hi": 10.0,
                 "use_attack": True},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``("train.lr", "0.05")`` style pairs; values parse as JSON when possible.

    Keys must already exist in the merged config or the schema.
    """
    out = copy.deepcopy(raw)
    for key, text in overrides:
        parts = key.split(".")
        node, schema = out, SCHEMA
        for i, p in enumerate(parts):
            props = schema.get("properties", {})
            if p not in props:
                raise ConfigError(f"unknown config key {key!r}")
            schema = props[p]
            if "oneOf" in schema:
                schema = schema["oneOf"][0]
            if i == len(parts) - 1:
                node[p] = _parse_value(text)
            else:
                if not isinstance(node.get(p), dict):
                    node[p] = {}
                node = node[p]
    return out


def validate(raw: dict) -> dict:
    """Fill defaults and check against the schema; returns the merged dict."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    merged = _merge(DEFAULTS, raw)
    try:
        jsonschema.validate(merged, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    for name in ("dataset", "val_dataset"):
        ds = merged.get(name)
        if ds is None:
            continue
        if ds["kind"] == "idx":
            if "images" not in ds or "labels" not in ds:
                raise ConfigError(f"{name}: idx needs images and labels paths")
        else:
            for f in ("n", "K"):
                if f not in ds:
                    raise ConfigError(f"{name}: {ds['kind']} needs {f}")
    if merged["analysis"]["bin_lo"] >= merged["analysis"]["bin_hi"]:
        raise ConfigError("analysis.bin_lo must be < analysis.bin_hi")
    return merged


def load_config(path, overrides=()) -> "ExperimentConfig":
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return ExperimentConfig(validate(apply_overrides(raw, overrides)))


def _attack(d: dict) -> AttackConfig:
    return AttackConfig(epsilon=d["epsilon"], eta=d["eta"], steps=d["steps"],
                        restarts=d["restarts"], random_init=d["random_init"],
                        objective=d["objective"])


def _dataset(d: dict) -> Dataset:
    if d["kind"] == "idx":
        return load_idx(d["images"], d["labels"], d.get("K", 10))
    return gen_synthetic(d["kind"], d["n"], d["K"], d.get("noise", 0.1), d.get("seed", 0))


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated config dict plus builders for the runtime objects."""

    raw: dict

    def section(self, name):
        return self.raw[name]

    @property
    def out(self) -> str:
        return self.raw["out"]

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    def train_set(self) -> Dataset:
        return _dataset(self.raw["dataset"])

    def val_set(self) -> Dataset:
        v = self.raw.get("val_dataset")
        return self.train_set() if v is None else _dataset(v)

    def attack(self) -> AttackConfig:
        return _attack(self.raw["attack"])

    def layer_dims(self, input_dim: int, n_classes: int) -> tuple:
        return (input_dim, *self.raw["model"]["hidden"], n_classes)

    def train_config(self) -> TrainConfig:
        t = self.raw["train"]
        scheme = {
            None: None,
            "gairat": Gairat(lam=t["gairat_lam"], total_steps=self.raw["attack"]["steps"]),
            "mail": Mail(gamma=t["mail_gamma"], beta=t["mail_beta"]),
            "ewat": Ewat(),
        }[t["scheme"]]
        return TrainConfig(
            method=t["method"], epochs=t["epochs"], batch_size=t["batch_size"], lr=t["lr"],
            lr_milestones=tuple(tuple(m) for m in t["lr_milestones"]),
            momentum=t["momentum"], weight_decay=t["weight_decay"],
            m_percent=t["m_percent"], lam=t["lam"], beta_t=t["beta_t"], scheme=scheme,
            gairat_burn_in=t["gairat_burn_in"], attack=self.attack(),
            early_stop_attack=_attack(self.raw["early_stop_attack"]), seed=self.seed,
        )
