"""
KM-UNet: a convolution phase with SEM attention, a tokenized KAN phase,
a mirrored decoder fused with additive skips, and a 1x1 logit head.

Resolution walk for an H x W input (C = conv_channels, D = token_dims)::

    stem      C1  H
    enc1      C1  H/2     conv + SEM
    enc2      C2  H/4     conv + SEM
    enc3      C3  H/8     conv + SEM
    enc4      D4  H/16    Tok block
    enc5      D5  H/32    Tok block
    bottleneck D5 H/32    Tok block
    dec4..dec0 mirror the encoder; dec0 fuses the stem and feeds the head.
"""
import logging
from math import gcd

import numpy as np

from kan.layers import TokBlock
from numerics import ops
from numerics.exceptions import DimensionError
from numerics.module import Module, parameter
from ssm.sem import SemBlock, SemParams

from .config import DIVISOR

logger = logging.getLogger(__name__)


def _he_uniform(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def map_to_tokens(x):
    """[B,C,H,W] -> [B,H*W,C] in row-major order."""
    b, c, h, w = x.shape
    return ops.transpose(ops.reshape(x, (b, c, h * w)), (0, 2, 1))


def tokens_to_map(z, h, w):
    b, _, d = z.shape
    return ops.reshape(ops.transpose(z, (0, 2, 1)), (b, d, h, w))


# --------------------------
# BUILDING BLOCKS
# --------------------------
class ConvBlock(Module):
    """conv3x3 -> group norm -> silu. The conv has no bias: the norm removes it."""

    def __init__(self, cin, cout, rng, norm_groups=4):
        self.groups = gcd(cout, norm_groups)
        self.weight = parameter(_he_uniform(rng, (cout, cin, 3, 3)), name="weight")
        self.gamma = parameter(np.ones(cout), name="gamma")
        self.beta = parameter(np.zeros(cout), name="beta")

    @staticmethod
    def count(cin, cout):
        return cout * cin * 9 + 2 * cout

    def forward(self, x):
        y = ops.conv2d(x, self.weight, padding=1)
        return ops.silu(ops.group_norm(y, self.groups, self.gamma, self.beta))


class Downsample(Module):
    """Patch merging: stride-2 3x3 convolution."""

    def __init__(self, cin, cout, rng):
        self.weight = parameter(_he_uniform(rng, (cout, cin, 3, 3)), name="weight")
        self.bias = parameter(np.zeros(cout), name="bias")

    @staticmethod
    def count(cin, cout):
        return cout * cin * 9 + cout

    def forward(self, x):
        h, w = x.shape[2:]
        if h % 2 or w % 2:
            raise DimensionError(f"downsample needs even spatial dims, got {h}x{w}")
        return ops.conv2d(x, self.weight, self.bias, padding=1, stride=2)


class Upsample(Module):
    """Patch expansion: 2x nearest neighbour, then a 1x1 convolution."""

    def __init__(self, cin, cout, rng):
        self.weight = parameter(_he_uniform(rng, (cout, cin, 1, 1)), name="weight")
        self.bias = parameter(np.zeros(cout), name="bias")

    @staticmethod
    def count(cin, cout):
        return cout * cin + cout

    def forward(self, x):
        return ops.conv2d(ops.upsample_nearest(x, 2), self.weight, self.bias)


class ConvStage(Module):
    """Encoder stage: downsample, conv block, residual SEM."""

    def __init__(self, cin, cout, cfg, rng):
        self.down = Downsample(cin, cout, rng)
        self.block = ConvBlock(cout, cout, rng, cfg.norm_groups)
        self.sem = SemBlock(cfg.sem_config(cout), rng) if cfg.sem_enabled else None

    def forward(self, x):
        y = self.block(self.down(x))
        if self.sem is not None:
            y = ops.add(y, self.sem(y))
        return y


class TokenStage(Module):
    def __init__(self, cin, dim, cfg, rng):
        self.down = Downsample(cin, dim, rng)
        self.tok = TokBlock(dim, rng, **cfg.tok_options())

    def forward(self, x):
        y = self.down(x)
        h, w = y.shape[2:]
        return tokens_to_map(self.tok(map_to_tokens(y), h, w), h, w)


class Bottleneck(Module):
    def __init__(self, dim, cfg, rng):
        self.tok = TokBlock(dim, rng, **cfg.tok_options())

    def forward(self, x):
        h, w = x.shape[2:]
        return tokens_to_map(self.tok(map_to_tokens(x), h, w), h, w)


class DecoderConvStage(Module):
    def __init__(self, cin, cout, cfg, rng):
        self.up = Upsample(cin, cout, rng)
        self.block = ConvBlock(cout, cout, rng, cfg.norm_groups)
        self.sem = SemBlock(cfg.sem_config(cout), rng) if cfg.sem_enabled else None

    def forward(self, x, skip):
        y = self.block(ops.add(self.up(x), skip))
        if self.sem is not None:
            y = ops.add(y, self.sem(y))
        return y


class DecoderTokenStage(Module):
    def __init__(self, cin, dim, cfg, rng):
        self.up = Upsample(cin, dim, rng)
        self.tok = TokBlock(dim, rng, **cfg.tok_options())

    def forward(self, x, skip):
        y = ops.add(self.up(x), skip)
        h, w = y.shape[2:]
        return tokens_to_map(self.tok(map_to_tokens(y), h, w), h, w)


class Head(Module):
    def __init__(self, cin, cout, rng):
        self.up = Upsample(cin, cin, rng)
        self.weight = parameter(_he_uniform(rng, (cout, cin, 1, 1)), name="weight")
        self.bias = parameter(np.zeros(cout), name="bias")

    def forward(self, x, stem):
        y = ops.add(self.up(x), stem)
        return ops.conv2d(y, self.weight, self.bias)


# --------------------------
# NETWORK
# --------------------------
class KmUnet(Module):
    def __init__(self, cfg, rng):
        c1, c2, c3 = cfg.conv_channels
        d4, d5 = cfg.token_dims
        self.cfg = cfg
        self.stem = ConvBlock(cfg.in_channels, c1, rng, cfg.norm_groups)
        self.encoder = [
            ConvStage(c1, c1, cfg, rng),
            ConvStage(c1, c2, cfg, rng),
            ConvStage(c2, c3, cfg, rng),
            TokenStage(c3, d4, cfg, rng),
            TokenStage(d4, d5, cfg, rng),
        ]
        self.bottleneck = Bottleneck(d5, cfg, rng)
        self.decoder = [
            DecoderTokenStage(d5, d4, cfg, rng),
            DecoderConvStage(d4, c3, cfg, rng),
            DecoderConvStage(c3, c2, cfg, rng),
            DecoderConvStage(c2, c1, cfg, rng),
        ]
        self.head = Head(c1, cfg.out_channels, rng)

    def check_input(self, x):
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise DimensionError(f"expected [B,{self.cfg.in_channels},H,W] input, got {x.shape}")
        h, w = x.shape[2:]
        if h % DIVISOR or w % DIVISOR:
            raise DimensionError(f"input dimensions must be divisible by {DIVISOR}, got {h}x{w}")

    def encode(self, x):
        """Stem output, the five encoder stage outputs and the bottleneck."""
        self.check_input(x)
        stem = self.stem(x)
        skips = []
        y = stem
        for stage in self.encoder:
            y = stage(y)
            skips.append(y)
        return stem, skips, self.bottleneck(y)

    def forward(self, x):
        stem, skips, y = self.encode(x)
        for stage, skip in zip(self.decoder, reversed(skips[:-1])):
            y = stage(y, skip)
        return self.head(y, stem)

    def stage_activations(self, x):
        _, skips, bottleneck = self.encode(x)
        return skips + [bottleneck]


def build(cfg, seed):
    model = KmUnet(cfg, np.random.default_rng(seed))
    logger.debug("built KM-UNet with %d parameters (seed %d)", model.parameter_count(), seed)
    return model


# --------------------------
# ANALYTIC ORACLES
# --------------------------
def count_parameters(cfg):
    """Closed-form parameter count, independent of the module tree."""
    c1, c2, c3 = cfg.conv_channels
    d4, d5 = cfg.token_dims
    tok = cfg.tok_options()
    tok.pop("grid_range")

    def sem(c):
        return SemParams.count(cfg.sem_config(c)) if cfg.sem_enabled else 0

    def conv_stage(cin, cout, resample):
        return resample(cin, cout) + ConvBlock.count(cout, cout) + sem(cout)

    def tok_stage(cin, dim, resample):
        return resample(cin, dim) + TokBlock.count(dim, **tok)

    total = ConvBlock.count(cfg.in_channels, c1)
    total += conv_stage(c1, c1, Downsample.count)
    total += conv_stage(c1, c2, Downsample.count)
    total += conv_stage(c2, c3, Downsample.count)
    total += tok_stage(c3, d4, Downsample.count)
    total += tok_stage(d4, d5, Downsample.count)
    total += TokBlock.count(d5, **tok)
    total += tok_stage(d5, d4, Upsample.count)
    total += conv_stage(d4, c3, Upsample.count)
    total += conv_stage(c3, c2, Upsample.count)
    total += conv_stage(c2, c1, Upsample.count)
    total += Upsample.count(c1, c1) + cfg.out_channels * c1 + cfg.out_channels
    return total


def _conv_macs(cin, cout, k, h, w, groups=1):
    return h * w * cout * (cin // groups) * k * k


def _sem_macs(cfg, c, h, w):
    if not cfg.sem_enabled:
        return 0
    n, length = cfg.n_state, h * w
    per_direction = length * (c * c + 2 * n * c) + length * c * n * 3
    cg = c // cfg.sem_attention_groups
    attention = cfg.sem_attention_groups * (_conv_macs(cg, cg, 1, h, w) + _conv_macs(cg, cg, 3, h, w))
    return len(cfg.sem_directions) * per_direction + attention


def _tok_macs(cfg, d, h, w):
    length = h * w
    if cfg.token_mixer == "kan":
        mixer = cfg.kan_layers * length * d * d * (cfg.kan_grid + cfg.kan_order + 1)
    else:
        hidden = cfg.mlp_hidden or d
        mixer = 2 * length * d * hidden
    return mixer + _conv_macs(d, d, 3, h, w, groups=d)


def estimate_macs(cfg, h, w):
    """
    Multiply-accumulate estimate for one H x W image: convolutions, SEM
    projections and recurrences, token mixers. Norms and pointwise ops are
    not counted.
    """
    c1, c2, c3 = cfg.conv_channels
    d4, d5 = cfg.token_dims
    total = _conv_macs(cfg.in_channels, c1, 3, h, w)
    widths = [c1, c1, c2, c3]
    for i in range(1, 4):
        hs, ws = h >> i, w >> i
        cin, cout = widths[i - 1], widths[i]
        enc = _conv_macs(cin, cout, 3, hs, ws) + _conv_macs(cout, cout, 3, hs, ws)
        dec_in = d4 if i == 3 else widths[i + 1]
        dec = _conv_macs(dec_in, cout, 1, hs, ws) + _conv_macs(cout, cout, 3, hs, ws)
        total += enc + dec + 2 * _sem_macs(cfg, cout, hs, ws)
    total += _conv_macs(c3, d4, 3, h >> 4, w >> 4) + _tok_macs(cfg, d4, h >> 4, w >> 4)
    total += _conv_macs(d4, d5, 3, h >> 5, w >> 5) + 2 * _tok_macs(cfg, d5, h >> 5, w >> 5)
    total += _conv_macs(d5, d4, 1, h >> 4, w >> 4) + _tok_macs(cfg, d4, h >> 4, w >> 4)
    total += _conv_macs(c1, c1, 1, h, w) + _conv_macs(c1, cfg.out_channels, 1, h, w)
    return total

