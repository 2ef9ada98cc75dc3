"""
Run configuration: flat ``key = value`` files merged with ``--set`` overrides.

Parsing only yields strings; ``serializers.RunConfigSerializer`` casts and
validates them into the dataclasses below.
"""
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from numerics.exceptions import ConfigError
from segnet.config import ModelConfig, config_text, model_config_pairs

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    lr_max: float = 1e-4
    lr_min: float = 1e-5
    lr_schedule: str = "cosine"
    epochs: int = 300
    seed: int = 0
    bce_weight: float = 1.0
    dice_weight: float = 1.0
    val_ratio: float = 0.2
    augment: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr_min > self.lr_max:
            raise ConfigError(f"lr_min ({self.lr_min}) exceeds lr_max ({self.lr_max})")

    def with_seed(self, seed):
        return replace(self, seed=seed)


TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))
PATH_KEYS = ("data_dir", "output_dir", "image_size")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data_dir: str = "data"
    output_dir: str = "runs"
    image_size: tuple = None

    def pairs(self):
        """Every resolved key with its text value, in a stable order."""
        out = list(model_config_pairs(self.model))
        out += [(name, config_text(getattr(self.train, name))) for name in TRAIN_KEYS]
        size = "" if self.image_size is None else "{}x{}".format(*self.image_size)
        out += [("data_dir", self.data_dir), ("output_dir", self.output_dir), ("image_size", size)]
        return out


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def parse_overrides(items):
    values = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override must look like key=value, got {item!r}")
        values[key.strip()] = value.strip()
    return values


def read_config_file(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_config_text(text, source=str(path))


def load_run_config(path=None, overrides=()):
    """File values, then ``--set`` overrides, validated into a ``RunConfig``."""
    from .serializers import RunConfigSerializer

    values = read_config_file(path) if path else {}
    values.update(parse_overrides(overrides))
    serializer = RunConfigSerializer(data=values)
    serializer.is_valid(raise_exception=True)
    return serializer.save()


def log_run_config(run_config):
    for key, value in run_config.pairs():
        logger.info("%s = %s", key, value)
