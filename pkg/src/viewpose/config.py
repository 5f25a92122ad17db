"""Run configuration: one YAML file, environment and command-line overrides.

Environment variables ``VIEWPOSE_<SECTION>__<KEY>=value`` and ``--set
section.key=value`` override file values; values are parsed as YAML
scalars. Every command writes the resolved configuration next to its
outputs so the run can be repeated from that file alone.
"""

from __future__ import annotations

import copy
import os
from pathlib import Path

import yaml

from .data.synthetic import SyntheticSceneSpec
from .downstream import HeadConfig
from .losses import LossWeights
from .model import ModelConfig
from .trainer import PretextConfig

ENV_PREFIX = "VIEWPOSE_"
# views 0 and 1 are the training pair; later entries are unseen test views
DEFAULT_AZIMUTHS = (0.0, 90.0, 45.0, 135.0, 22.5, 67.5)
TABLE_SIZES = [40, 70, 100, 130, 160, 190]

DEFAULTS: dict = {
    "seed": 0,
    "data": {
        "azimuths": [0.0, 90.0],
        "resolution": 64,
        "n_sequences": 200,
        "frames_per_sequence": 16,
        "n_subjects": 10,
        "motion_classes": [0, 1, 2, 3],
        "amplitude_levels": None,
    },
    "model": {
        "n_features": 16,
        "width_divisor": 8,
        "dropout_rate": 0.0,
    },
    "pretext": {
        "loss_preset": "full",
        "views": None,  # view indices used for pretext pairs; None = all
        "learning_rate": 1e-3,
        "batch_size": 5,
        "epochs": 20,
        "weights": {"alpha": 1.0, "beta": 0.001, "gamma": 1.0},
        "flip_prob": 0.5,
        "max_shift": None,
    },
    "downstream": {
        "mode": "frozen",
        "task": "classify",
        "n_classes": 4,
        "hidden_size": 512,
        "epochs": 30,
        "learning_rate": 1e-3,
        "batch_size": 8,
        "train_views": [0, 1],
        "test_views": [2],
        "test_subjects": [0, 1, 2],
    },
    "eval": {
        "protocol": "CV",
        "diagnostics": False,
        "action_names": ["W-P", "W-S", "SS-P", "SS-S"],
    },
    "sweep": {
        "sizes": TABLE_SIZES,
        "folds": 2,
        "epochs": 2,
    },
}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_dotted(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def parse_assignment(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ValueError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def env_overrides(environ=None) -> list[tuple[str, object]]:
    environ = os.environ if environ is None else environ
    out = []
    for name, raw in sorted(environ.items()):
        if name.startswith(ENV_PREFIX) and len(name) > len(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower().replace("__", ".")
            out.append((key, yaml.safe_load(raw)))
    return out


def load_config(path=None, overrides=(), environ=None) -> dict:
    """Defaults <- file <- environment <- explicit overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        doc = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(doc, dict):
            raise ValueError(f"config file {path} must hold a mapping")
        cfg = deep_merge(cfg, doc)
    for key, value in env_overrides(environ):
        set_dotted(cfg, key, value)
    for item in overrides:
        key, value = parse_assignment(item) if isinstance(item, str) else item
        set_dotted(cfg, key, value)
    return cfg


def save_config(cfg: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(cfg, sort_keys=True))
    return path


def scene_spec(cfg: dict) -> SyntheticSceneSpec:
    d = cfg["data"]
    return SyntheticSceneSpec(
        azimuths=tuple(d["azimuths"]), resolution=int(d["resolution"]), seed=int(cfg["seed"]),
        motion_classes=tuple(d["motion_classes"]), n_subjects=int(d["n_subjects"]),
        amplitude_levels=d["amplitude_levels"],
    )


def model_config(cfg: dict, resolution: int | None = None) -> ModelConfig:
    m = dict(cfg["model"])
    divisor = int(m.pop("width_divisor", 1))
    res = int(resolution or cfg["data"]["resolution"])
    return ModelConfig.scaled(divisor, resolution=res, **m)


def pretext_config(cfg: dict) -> PretextConfig:
    p = dict(cfg["pretext"])
    preset = p.pop("loss_preset", "full")
    p.pop("views", None)
    p["weights"] = LossWeights(**p["weights"])
    return PretextConfig.with_preset(preset, seed=int(cfg["seed"]), **p)


def head_config(cfg: dict) -> HeadConfig:
    d = cfg["downstream"]
    keys = ("mode", "task", "n_classes", "hidden_size", "epochs", "learning_rate", "batch_size")
    return HeadConfig(seed=int(cfg["seed"]), **{k: d[k] for k in keys})
