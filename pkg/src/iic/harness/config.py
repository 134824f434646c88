"""Run configuration: a flat ``key = value`` text file with ``#`` comments."""

import dataclasses
from dataclasses import dataclass

from ..pairing import TransformPolicy


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    task: str = "cluster"
    # data
    dataset: str = "gauss3"  # gauss3 | textures | mnist | idx | digits
    data_dir: str = ""
    idx_images: str = ""
    idx_labels: str = ""
    n_samples: int = 0  # subset size for image datasets, 0 = all
    n_per_cluster: int = 100
    sigma: float = 1.0
    jitter: float = 0.5
    n_images: int = 200
    image_size: int = 64
    data_seed: int = 0
    split: str = "unsupervised_full"  # unsupervised_full | separated
    train_frac: float = 0.8
    # model
    base: str = "mlp-small"
    dtype: str = "float32"
    k_gt: int = 3
    k_aux: int = 9  # 0 disables auxiliary overclustering
    h: int = 5
    # objective
    r: int = 1
    d: int = 10
    lam: float = 1.0
    average_mode: str = "outside"
    # optimisation
    epochs: int = 200
    batch_size: int = 128
    lr: float = 1e-4
    seed: int = 0
    # pairing
    crop_size: int = 0  # eval-style center crop of originals, 0 = none
    hflip: bool = True
    crop: bool = False
    crop_scale: tuple = (0.8, 1.0)
    color: bool = True
    color_scale: tuple = (0.6, 1.4)
    color_shift: tuple = (-0.25, 0.25)
    rotate: bool = False
    rotation_deg: float = 25.0
    sobel: bool = False
    # outputs
    out: str = "runs/out"
    checkpoint_every: int = 1
    render_predictions: int = 4

    def validate(self):
        if self.task not in ("cluster", "segment"):
            raise ConfigError(f"task must be 'cluster' or 'segment', got {self.task!r}")
        if self.k_gt < 2:
            raise ConfigError(f"k_gt must be >= 2, got {self.k_gt}")
        if self.k_aux != 0 and self.k_aux <= self.k_gt:
            raise ConfigError(f"k_aux ({self.k_aux}) must exceed k_gt ({self.k_gt}) or be 0")
        for name, lo in (("h", 1), ("r", 1), ("d", 0), ("batch_size", 1), ("epochs", 0)):
            if getattr(self, name) < lo:
                raise ConfigError(f"{name} must be >= {lo}, got {getattr(self, name)}")
        if self.lam < 1:
            raise ConfigError(f"lambda must be >= 1, got {self.lam}")
        if self.average_mode not in ("outside", "inside"):
            raise ConfigError(f"average_mode must be 'outside' or 'inside', got {self.average_mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.split not in ("unsupervised_full", "separated"):
            raise ConfigError(f"unknown split protocol {self.split!r}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        return self

    def policy(self):
        return TransformPolicy(
            hflip=self.hflip, crop=self.crop, crop_scale=tuple(self.crop_scale),
            color=self.color, color_scale=tuple(self.color_scale),
            color_shift=tuple(self.color_shift), rotate=self.rotate,
            rotation_deg=self.rotation_deg,
        )

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


# defaults that differ for segmentation runs unless the file sets them
SEGMENT_DEFAULTS = {
    "dataset": "textures", "base": "cnn-small", "h": 1, "r": 1, "batch_size": 8,
    "k_aux": 0, "epochs": 50, "crop": True,
}

ALIASES = {"lambda": "lam"}
_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name, text):
    default = _FIELDS[name].default
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text


def parse_config_text(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = ALIASES.get(key, key)
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, value)
    return values


def config_from_values(values):
    task = values.get("task", RunConfig.task)
    base = dict(SEGMENT_DEFAULTS) if task == "segment" else {}
    base.update(values)
    return RunConfig(**base).validate()


def load_config(path, **overrides):
    with open(path) as f:
        values = parse_config_text(f.read())
    values.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_values(values)


def format_config(cfg):
    lines = []
    for name in _FIELDS:
        value = getattr(cfg, name)
        key = "lambda" if name == "lam" else name
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, tuple):
            value = ",".join(repr(float(v)) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
