"""
64-bit finite-difference suites behind the ``gradcheck`` command.

Each suite builds small random inputs, runs ``grad_check`` on every
differentiable piece it covers and returns ``(label, report)`` rows.
"""
import logging
from dataclasses import dataclass

import numpy as np

from kan.layers import KanLayer, TokBlock, tok_kan_forward, tok_mlp_forward
from numerics import ops
from numerics.exceptions import ConfigError
from numerics.gradcheck import grad_check
from numerics.tensor import Tensor, precision
from ssm.s6 import S6Params, project, selective_scan
from ssm.sem import SemConfig, SemParams, multiscale_attention, sem_forward
from training.losses import bce_dice_loss

from .config import ModelConfig
from .model import Downsample, Upsample, build

logger = logging.getLogger(__name__)

SUITE_NAMES = ("numerics", "s6", "kan", "sem", "model")
STEP = 1e-6
TOL = 1e-5

# Smallest network that still has every stage: 32 x 32 input, 1 x 1 bottleneck.
MICRO_MODEL = dict(conv_channels=(4, 4, 4), token_dims=(8, 8), n_state=2, sem_attention_groups=2)


@dataclass
class SuiteResult:
    name: str
    rows: list

    @property
    def worst(self):
        return max(self.rows, key=lambda row: row[1].max_rel_error)

    @property
    def passed(self):
        return all(report.passed for _, report in self.rows)


class _Probe:
    """Random 64-bit inputs and fixed random read-out weights from one seed."""

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def tensor(self, *shape, scale=1.0):
        return Tensor(self.rng.normal(0.0, scale, size=shape), dtype=np.float64)

    def readout(self, out):
        weights = self.rng.normal(size=out.shape)

        def scalar(t):
            return ops.sum(ops.mul(t, weights))

        return scalar


def _check(label, fn, inputs, max_coords=None):
    report = grad_check(fn, inputs, step=STEP, tol=TOL, max_coords=max_coords)
    logger.debug("%-28s max rel err %.3e over %d coords", label, report.max_rel_error, report.checked)
    return label, report


def _numerics_suite(seed):
    p = _Probe(seed)
    rows = []
    a, b = p.tensor(3, 4), p.tensor(4, 2)
    read = p.readout(ops.matmul(a, b))
    rows.append(_check("matmul", lambda x, y: read(ops.matmul(x, y)), [a, b]))

    x, w, bias = p.tensor(2, 4, 5, 5), p.tensor(4, 2, 3, 3, scale=0.3), p.tensor(4)
    conv = lambda xx, ww, bb: ops.conv2d(xx, ww, bb, padding=1, stride=2, groups=2)
    read = p.readout(conv(x, w, bias))
    rows.append(_check("conv2d", lambda *t: read(conv(*t)), [x, w, bias]))

    x, g, beta = p.tensor(2, 3, 6), p.tensor(6), p.tensor(6)
    read = p.readout(x)
    rows.append(_check("layernorm", lambda *t: read(ops.layernorm(*t)), [x, g, beta]))

    x, g, beta = p.tensor(2, 4, 3, 3), p.tensor(4), p.tensor(4)
    read = p.readout(x)
    rows.append(_check("group_norm", lambda xx, gg, bb: read(ops.group_norm(xx, 2, gg, bb)), [x, g, beta]))

    for name in ops.POINTWISE:
        x = p.tensor(9, scale=2.0)
        if name == "relu":
            # keep every coordinate away from the kink
            x.data = np.where(np.abs(x.data) < 1e-2, 0.5, x.data)
        read = p.readout(x)
        rows.append(_check(name, lambda v, n=name: read(ops.pointwise(n, v)), x))
    return rows


def _s6_suite(seed):
    p = _Probe(seed)
    with precision(np.float64):
        params = S6Params.init(4, 3, p.rng)
    x = p.tensor(2, 7, 4)
    reads = [p.readout(t) for t in project(x, params)]

    def proj(*_):
        delta, bmat, cmat = project(x, params)
        return reads[0](delta) + reads[1](bmat) + reads[2](cmat)

    read = p.readout(x)
    rows = [_check("s6.project", proj, [x] + params.parameters())]
    rows.append(_check("s6.selective_scan", lambda *_: read(selective_scan(x, params)), [x] + params.parameters()))
    return rows


def _kan_suite(seed):
    p = _Probe(seed)
    with precision(np.float64):
        layer = KanLayer(3, 4, p.rng)
        kan_block = TokBlock(4, p.rng)
        mlp_block = TokBlock(4, p.rng, mixer="mlp")
    z = p.tensor(2, 3, 3, scale=0.6)
    read = p.readout(layer(z))
    rows = [_check("kan.layer", lambda *_: read(layer(z)), [z] + layer.parameters())]
    tokens = p.tensor(1, 6, 4, scale=0.6)
    read = p.readout(tokens)
    rows.append(_check(
        "kan.tok_kan", lambda *_: read(tok_kan_forward(tokens, kan_block, 2, 3)),
        [tokens] + kan_block.parameters(), max_coords=12,
    ))
    rows.append(_check(
        "kan.tok_mlp", lambda *_: read(tok_mlp_forward(tokens, mlp_block, 2, 3)),
        [tokens] + mlp_block.parameters(), max_coords=12,
    ))
    return rows


def _sem_suite(seed):
    p = _Probe(seed)
    cfg = SemConfig(channels=4, n_state=2, directions=("tl_br", "tr_bl", "spiral_in"), attention_groups=2)
    with precision(np.float64):
        params = SemParams.init(cfg, p.rng)
    x = p.tensor(1, 4, 3, 4)
    read = p.readout(x)
    rows = [_check(
        "sem.multiscale_attention", lambda *_: read(multiscale_attention(x, params, 2)),
        [x, params.w1, params.b1, params.w3, params.b3],
    )]
    rows.append(_check(
        "sem.forward", lambda *_: read(sem_forward(x, cfg, params)), [x] + params.parameters(), max_coords=10,
    ))
    return rows


def _model_suite(seed):
    p = _Probe(seed)
    with precision(np.float64):
        down, up = Downsample(3, 4, p.rng), Upsample(4, 3, p.rng)
        model = build(ModelConfig(**MICRO_MODEL), seed)
    x = p.tensor(1, 3, 8, 8)
    read = p.readout(x)
    pair = [x] + down.parameters() + up.parameters()
    rows = [_check("model.down_up", lambda *_: read(up(down(x))), pair, max_coords=20)]

    image = Tensor(p.rng.uniform(0.0, 1.0, size=(1, 3, 32, 32)), dtype=np.float64)
    target = Tensor((p.rng.uniform(size=(1, 1, 32, 32)) > 0.5).astype(np.float64), dtype=np.float64)
    rows.append(_check(
        "model.loss", lambda *_: bce_dice_loss(model(image), target), model.parameters(), max_coords=2,
    ))
    return rows


SUITES = {
    "numerics": _numerics_suite,
    "s6": _s6_suite,
    "kan": _kan_suite,
    "sem": _sem_suite,
    "model": _model_suite,
}


def run_suites(module="all", seed=0):
    names = SUITE_NAMES if module == "all" else (module,)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ConfigError(f"unknown gradcheck module {unknown[0]!r}; expected all or one of {SUITE_NAMES}")
    results = []
    for name in names:
        results.append(SuiteResult(name=name, rows=SUITES[name](seed)))
    return results
