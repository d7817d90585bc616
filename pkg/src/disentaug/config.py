"""Run configuration: five named sections with defaults, strict key checking,
and a content digest stamped into every output artifact.

Precedence is flags > config file > defaults; the digest covers the fully
resolved sections (the seed is recorded separately in artifacts).
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json

from .errors import ConfigError

DEFAULTS = {
    "data": {
        "n_base_classes": 20,
        "n_novel_classes": 10,
        "latent_dim": 6,
        "feature_dim": 32,
        "prototype_scale": 1.0,
        "variation_scale": 0.5,
        "n_per_class_base": 100,
        "n_per_class_novel": 50,
        "base_file": None,
        "novel_file": None,
    },
    "model": {
        "backbone": "identity",
        "pooling": "average",
        "encoder_channels": [32, 32, 32],
        "log_var_clamp": 10.0,
    },
    "train": {
        "epochs": 100,
        "batch_size": 16,
        "learning_rate": 0.001,
        "decay_epochs": [40, 80],
        "decay_factor": 0.1,
        "alpha": 4.0,
        "beta": 1.0,
        "weight_decay": 0.0,
        "grad_clip": None,
    },
    "eval": {
        "schemes": ["none", "posterior"],
        "classifiers": ["linear"],
        "n_episodes": 600,
        "way": 5,
        "shot": 1,
        "n_query": 16,
        "n_aug": 5,
        "clf_iterations": 100,
        "clf_batch_size": 4,
        "clf_learning_rate": 0.01,
        "k_neighbors": 1,
        "shrinkage": 0.1,
        "vae_epochs": 30,
    },
    "analysis": {},
}


@dataclasses.dataclass
class RunConfig:
    data: dict
    model: dict
    train: dict
    eval: dict
    analysis: dict

    def sections(self) -> dict:
        return {
            "data": self.data,
            "model": self.model,
            "train": self.train,
            "eval": self.eval,
            "analysis": self.analysis,
        }

    @property
    def digest(self) -> str:
        canonical = json.dumps(self.sections(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("ascii")).hexdigest()


def load_run_config(path=None, overrides=None) -> RunConfig:
    """Resolve defaults <- file <- overrides. Unknown sections or keys are a
    hard error; overrides are {(section, key): value} pairs."""
    resolved = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object of sections")
        for section, entries in raw.items():
            if section not in resolved:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(entries, dict):
                raise ConfigError(f"section {section!r} must be an object")
            for key, value in entries.items():
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"unknown key {key!r} in section {section!r}")
                resolved[section][key] = value
    for (section, key), value in (overrides or {}).items():
        if value is None:
            continue
        if section not in resolved or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown override {section}.{key}")
        resolved[section][key] = value
    return RunConfig(**resolved)
