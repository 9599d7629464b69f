"""Run configuration: YAML file + presets + command-line overrides.

Schema (all keys optional; missing keys take the ``synthetic`` preset value)::

    preset: synthetic          # synthetic | ped2 | avenue | shanghaitech
    seed: 0                    # init + batch-order seed
    data:
      t: 4                     # previous frames per STC
      flow: file               # file (AMFL files in <clip>/flow) | block (block matching)
      frame_stride: 2          # train on frames whose index is a multiple of this
    model:
      channels: [32, 64, 128]
      fusion: gated            # gated | add | none (frame stream only)
    train:
      lr: 2.0e-4
      decay: 0.8               # multiplied in every `decay_every` epochs
      decay_every: 10
      batch_size: 32
      epochs: 6
      loss_weights: [1, 1, 1, 1]   # intensity, gradient, consistency, weight penalty
    score:
      weights: [0.2, 0.8]      # w_f, w_p
"""

import copy
from pathlib import Path

import yaml

from .data import InvalidConfig
from .losses import LossWeights
from .model import FUSIONS, Architecture
from .scoring import ScoreWeights
from .training import TrainConfig

DEFAULTS = {
    "preset": "synthetic",
    "seed": 0,
    "data": {"t": 4, "flow": "file", "frame_stride": 2},
    "model": {"channels": [32, 64, 128], "fusion": "gated"},
    "train": {"lr": 2e-4, "decay": 0.8, "decay_every": 10, "batch_size": 32, "epochs": 6,
              "loss_weights": [1, 1, 1, 1]},
    "score": {"weights": [0.2, 0.8]},
}

# public-benchmark settings; frame_stride 1 because those runs use every object
PRESETS = {
    "synthetic": {},
    "ped2": {"data": {"frame_stride": 1},
             "train": {"batch_size": 128, "epochs": 60, "loss_weights": [1, 1, 1, 1]},
             "score": {"weights": [1.0, 0.01]}},
    "avenue": {"data": {"frame_stride": 1},
               "train": {"batch_size": 128, "epochs": 40, "loss_weights": [1, 1, 1, 1]},
               "score": {"weights": [0.2, 0.8]}},
    "shanghaitech": {"data": {"frame_stride": 1},
                     "train": {"batch_size": 256, "epochs": 40, "loss_weights": [1, 1, 10, 1]},
                     "score": {"weights": [0.4, 0.6]}},
}


def _merge(base, over, path=""):
    for k, v in over.items():
        if k not in base:
            raise InvalidConfig(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise InvalidConfig(f"config key {path + k!r} must be a mapping")
            _merge(base[k], v, path + k + ".")
        elif v is not None:
            base[k] = v
    return base


def resolve(file=None, overrides=None):
    """Defaults <- preset <- file <- overrides (nested dicts, None values ignored)."""
    user = {}
    if file is not None:
        try:
            user = yaml.safe_load(Path(file).read_text()) or {}
        except (OSError, yaml.YAMLError) as e:
            raise InvalidConfig(f"cannot read config {file}: {e}") from e
        if not isinstance(user, dict):
            raise InvalidConfig(f"config {file} must be a mapping at top level")
    overrides = overrides or {}
    preset = overrides.get("preset") or user.get("preset") or DEFAULTS["preset"]
    if preset not in PRESETS:
        raise InvalidConfig(f"unknown preset {preset!r} (choose from {sorted(PRESETS)})")
    cfg = copy.deepcopy(DEFAULTS)
    _merge(cfg, PRESETS[preset])
    _merge(cfg, user)
    _merge(cfg, overrides)
    cfg["preset"] = preset
    validate(cfg)
    return cfg


def validate(cfg):
    try:
        architecture(cfg)
        train_config(cfg)
        score_weights(cfg)
    except (TypeError, ValueError) as e:
        raise InvalidConfig(str(e)) from e
    if cfg["data"]["flow"] not in ("file", "block"):
        raise InvalidConfig(f"data.flow must be 'file' or 'block', got {cfg['data']['flow']!r}")
    if int(cfg["data"]["frame_stride"]) < 1 or int(cfg["data"]["t"]) < 1:
        raise InvalidConfig("data.t and data.frame_stride must be >= 1")
    if cfg["model"]["fusion"] not in FUSIONS:
        raise InvalidConfig(f"model.fusion must be one of {FUSIONS}")


def architecture(cfg):
    return Architecture(t=int(cfg["data"]["t"]), channels=tuple(cfg["model"]["channels"]),
                        fusion=cfg["model"]["fusion"])


def train_config(cfg):
    tr = cfg["train"]
    lw = tr["loss_weights"]
    if len(lw) != 4:
        raise InvalidConfig("train.loss_weights needs 4 values")
    tc = TrainConfig(lr=float(tr["lr"]), decay=float(tr["decay"]), decay_every=int(tr["decay_every"]),
                     batch_size=int(tr["batch_size"]), epochs=int(tr["epochs"]),
                     weights=LossWeights(*map(float, lw)), seed=int(cfg["seed"]))
    tc.validate()
    return tc


def score_weights(cfg):
    w = cfg["score"]["weights"]
    if len(w) != 2:
        raise InvalidConfig("score.weights needs 2 values")
    return ScoreWeights(float(w[0]), float(w[1]))


def dump(cfg, path):
    Path(path).write_text(yaml.safe_dump(cfg, sort_keys=False))
