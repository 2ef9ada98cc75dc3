"""
Selective-scan efficient multi-scale attention (SEM).

Feature extraction: every configured direction unfolds the map, runs the
selective scan and folds back; the branches are summed. Attention: channel
groups move into the batch axis, a 1x1 and a 3x3 convolution are summed,
and their sigmoid gates the grouped input.
"""
from dataclasses import dataclass

import numpy as np

from numerics import ops
from numerics.exceptions import ConfigError
from numerics.module import Module, parameter

from .s6 import S6Params, selective_scan
from .scan import STANDARD_DIRECTIONS, fold, parse_directions, rmerge, unfold


@dataclass(frozen=True)
class SemConfig:
    channels: int
    n_state: int = 16
    directions: tuple = STANDARD_DIRECTIONS
    attention_groups: int = 4

    def __post_init__(self):
        object.__setattr__(self, "directions", parse_directions(self.directions))
        if self.channels < 1 or self.n_state < 1 or self.attention_groups < 1:
            raise ConfigError("SEM channels, n_state and attention_groups must be >= 1")
        if self.channels % self.attention_groups:
            raise ConfigError(
                f"SEM channels ({self.channels}) must be divisible by attention_groups "
                f"({self.attention_groups})"
            )


class SemParams(Module):
    """One S6 parameter set shared by all directions, plus the two attention convolutions."""

    def __init__(self, s6, w1, b1, w3, b3):
        self.s6 = s6
        self.w1 = w1
        self.b1 = b1
        self.w3 = w3
        self.b3 = b3

    @classmethod
    def init(cls, cfg, rng):
        cg = cfg.channels // cfg.attention_groups
        bound1 = 1.0 / np.sqrt(cg)
        bound3 = 1.0 / np.sqrt(cg * 9)
        return cls(
            s6=S6Params.init(cfg.channels, cfg.n_state, rng),
            w1=parameter(rng.uniform(-bound1, bound1, size=(cg, cg, 1, 1)), name="w1"),
            b1=parameter(np.zeros(cg), name="b1"),
            w3=parameter(rng.uniform(-bound3, bound3, size=(cg, cg, 3, 3)), name="w3"),
            b3=parameter(np.zeros(cg), name="b3"),
        )

    @staticmethod
    def count(cfg):
        cg = cfg.channels // cfg.attention_groups
        return S6Params.count(cfg.channels, cfg.n_state) + (cg * cg + cg) + (cg * cg * 9 + cg)


def sem_extract(x, cfg, params):
    """Sum over directions of fold(selective_scan(unfold(x)))."""
    b, _, h, w = x.shape
    seqs = [unfold(x, d) for d in cfg.directions]
    # Directions share parameters, so they ride one recurrence pass stacked on the batch axis.
    stacked = ops.concat(seqs, axis=0) if len(seqs) > 1 else seqs[0]
    ys = selective_scan(stacked, params.s6)
    branches = []
    for k, direction in enumerate(cfg.directions):
        part = ops.slice_axis(ys, k * b, (k + 1) * b, axis=0) if len(seqs) > 1 else ys
        branches.append(fold(part, direction, h, w))
    return rmerge(branches)


def multiscale_attention(x, params, attention_groups):
    b, c, h, w = x.shape
    if c % attention_groups:
        raise ConfigError(f"{c} channels cannot be split into {attention_groups} attention groups")
    grouped = ops.reshape(x, (b * attention_groups, c // attention_groups, h, w))
    cross = ops.add(
        ops.conv2d(grouped, params.w1, params.b1),
        ops.conv2d(grouped, params.w3, params.b3, padding=1),
    )
    gated = ops.mul(grouped, ops.sigmoid(cross))
    return ops.reshape(gated, (b, c, h, w))


def sem_forward(x, cfg, params):
    return multiscale_attention(sem_extract(x, cfg, params), params, cfg.attention_groups)


class SemBlock(Module):
    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.params = SemParams.init(cfg, rng)

    def forward(self, x):
        return sem_forward(x, self.cfg, self.params)
