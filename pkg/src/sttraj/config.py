"""Run configuration: defaults, named profiles and ``key=value`` files."""
import dataclasses
from dataclasses import dataclass

from .errors import ConfigError


@dataclass
class RunConfig:
    dataset_dir: str = ""
    test_scene: str = ""
    epochs: int = 250
    batch_size: int = 128
    lr_initial: float = 0.01
    lr_after: float = 0.002
    lr_switch_epoch: int = 150
    momentum: float = 0.9
    clip_grad: float = 10.0
    alpha: float = 0.3
    eval_k: int = 20
    seed: int = 0
    variant: str = "ST"
    output_dir: str = "runs"
    d_model: int = 16
    heads: int = 4
    tcnn_refine_layers: int = 1
    kernel_width: int = 3
    coord_mode: str = "relative"
    mmd_sample_count: int = 4
    stride: int = 1
    val_fraction: float = 0.0
    profile: str = "paper"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr_initial <= 0 or self.lr_after <= 0:
            raise ConfigError("learning rates must be > 0")
        if not 0 <= self.lr_switch_epoch < self.epochs:
            raise ConfigError(f"lr_switch_epoch ({self.lr_switch_epoch}) must be below epochs ({self.epochs})")
        if self.clip_grad < 0:
            raise ConfigError("clip_grad must be >= 0 (0 disables clipping)")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.eval_k < 1:
            raise ConfigError("eval_k must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in [0, 1)")
        return self

    def lr_at(self, epoch):
        """Learning rate for 1-based ``epoch``: lr_initial through lr_switch_epoch."""
        return self.lr_initial if epoch <= self.lr_switch_epoch else self.lr_after

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


# "paper" keeps the published protocol; "desk" is sized for quick runs on synthetic data.
PROFILES = {
    "paper": {},
    "desk": {"epochs": 20, "batch_size": 16, "lr_initial": 0.01, "lr_after": 0.002, "lr_switch_epoch": 15},
}


def profile_config(name="paper", **overrides):
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}")
    values = dict(PROFILES[name], profile=name)
    values.update(overrides)
    return RunConfig(**values)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def coerce(key, raw):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = type(_FIELDS[key].default)
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return str(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from None


def parse_config_text(text):
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        values[key] = coerce(key, raw)
    return values


def load_config_file(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def dump_config(cfg):
    return "".join(f"{f.name}={getattr(cfg, f.name)}\n" for f in dataclasses.fields(cfg))
