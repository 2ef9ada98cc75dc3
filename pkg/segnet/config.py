from dataclasses import dataclass, field, fields

from kan.layers import MIXERS
from numerics.exceptions import ConfigError
from ssm.scan import STANDARD_DIRECTIONS, parse_directions
from ssm.sem import SemConfig

# Five halvings: three convolution stages and two token stages.
DIVISOR = 32


@dataclass(frozen=True)
class ModelConfig:
    """
    conv_channels = (C1, C2, C3) for the convolution phase and
    token_dims = (D4, D5) for the tokenized phase; the bottleneck runs at D5.
    """
    conv_channels: tuple = (8, 16, 32)
    token_dims: tuple = (64, 128)
    in_channels: int = 3
    out_channels: int = 1
    n_state: int = 8
    token_mixer: str = "kan"
    kan_grid: int = 5
    kan_order: int = 3
    kan_range: float = 1.0
    kan_layers: int = 1
    mlp_hidden: int = None
    norm_groups: int = 4
    sem_directions: tuple = field(default=STANDARD_DIRECTIONS)
    sem_attention_groups: int = 4
    sem_enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "token_dims", tuple(int(d) for d in self.token_dims))
        object.__setattr__(self, "sem_directions", parse_directions(self.sem_directions))
        if len(self.conv_channels) != 3 or len(self.token_dims) != 2:
            raise ConfigError("conv_channels needs 3 widths and token_dims needs 2")
        widths = self.conv_channels + self.token_dims + (self.in_channels, self.out_channels)
        if min(widths) < 1:
            raise ConfigError(f"all widths must be >= 1, got {widths}")
        if self.token_mixer not in MIXERS:
            raise ConfigError(f"token_mixer must be one of {MIXERS}, got {self.token_mixer!r}")
        if self.sem_enabled:
            for c in self.conv_channels:
                if c % self.sem_attention_groups:
                    raise ConfigError(
                        f"conv width {c} is not divisible by sem.attention_groups "
                        f"({self.sem_attention_groups})"
                    )

    def sem_config(self, channels):
        return SemConfig(
            channels=channels,
            n_state=self.n_state,
            directions=self.sem_directions,
            attention_groups=self.sem_attention_groups,
        )

    def tok_options(self):
        return dict(
            mixer=self.token_mixer,
            kan_layers=self.kan_layers,
            grid_size=self.kan_grid,
            order=self.kan_order,
            grid_range=self.kan_range,
            mlp_hidden=self.mlp_hidden,
        )


def config_text(value):
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return ""
    return str(value)


def config_key(name):
    """``sem_directions`` -> ``sem.directions``."""
    return "sem." + name[4:] if name.startswith("sem_") else name


def model_config_pairs(cfg):
    """Ordered ``(key, text)`` pairs as written to run configs and checkpoints."""
    return [(config_key(f.name), config_text(getattr(cfg, f.name))) for f in fields(cfg)]


MODEL_KEYS = tuple(config_key(f.name) for f in fields(ModelConfig))
