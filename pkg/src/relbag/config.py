"""Run configuration: defaults, JSON config files, and flag overrides.

A config file may set any subset of the keys below; unknown keys are
rejected with the full dotted path. Command-line flags win over the file,
which wins over the defaults. Every command echoes its effective config
(defaults merged) plus the seed into its output directory.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .synth import SynthSpec


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    return {
        "seed": 7,
        "eval_seed": 0,
        "min_count": 1,
        "paths": {
            "data_dir": None,
            "vocab": None,
            "checkpoint": None,
            "out_dir": None,
        },
        "model": {
            "kind": "passage_att",   # or att | avg | one | shared_q
            "attend_pad": True,
            "instance_len": 0,        # 0 = size from the training data
        },
        "encoder": {
            "num_layers": 2,
            "num_heads": 4,
            "hidden_dim": 64,
            "ffn_dim": 256,
            "L_max": 128,
            "dropout_rate": 0.1,
            "positional": "learned",
        },
        "train": {
            "learning_rate": 2e-5,
            "weight_decay": 1e-5,
            "batch_size_bags": 16,
            "max_epochs": 5,
            "beta1": 0.9,
            "beta2": 0.999,
            "eps": 1e-8,
            "grad_clip_norm": None,
            "seed": 0,
            "eval_every": 0,
        },
        "synth": SynthSpec().to_dict(),
        "analysis": {
            "sample_n": 100,
            "threshold": 0.5,
            "num_bins": 7,
        },
    }


def _merge(base: dict, override: dict, path: str = "") -> dict:
    for key, value in override.items():
        dotted = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {dotted!r}")
        if isinstance(base[key], dict) and isinstance(value, dict) and key != "synth":
            _merge(base[key], value, dotted + ".")
        else:
            base[key] = value
    return base


def load_config(path: str | Path | None) -> dict:
    """Defaults merged with an optional JSON config file."""
    cfg = default_config()
    if path is not None:
        try:
            override = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(override, dict):
            raise ConfigError(f"{path}: config root must be an object")
        # the synth section replaces wholesale at its leaves but still
        # validates key names against the default spec fields
        if "synth" in override:
            synth = dict(default_config()["synth"])
            for key, value in override["synth"].items():
                if key not in synth:
                    raise ConfigError(f"unknown config key 'synth.{key}'")
                synth[key] = value
            override = dict(override)
            override["synth"] = synth
        _merge(cfg, override)
    return cfg


def apply_overrides(cfg: dict, overrides: dict[str, object]) -> dict:
    """Apply dotted-path overrides (CLI flags); None values are ignored."""
    cfg = copy.deepcopy(cfg)
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = cfg
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node[parts[-1]] = value
    return cfg


def echo_config(cfg: dict, out_dir: str | Path):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.json").write_text(
        json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")
