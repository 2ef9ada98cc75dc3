"""
Kolmogorov-Arnold layers: every input-output edge carries a learnable
B-spline plus a silu residual path,

    out[o] = sum_i base_weight[o, i] * silu(z_i) + sum_j coeffs[o, i, j] * B_j(z_i)

and the tokenized block  Z' = LN(Z + DwConv(Phi(Z)))  with Phi either a KAN
stack or a two-layer MLP.
"""
import numpy as np

from numerics import ops
from numerics.exceptions import ConfigError, DimensionError
from numerics.module import Module, parameter
from numerics.tensor import record

MIXERS = ("kan", "mlp")


# --------------------------
# B-SPLINE BASIS
# --------------------------
def uniform_knots(grid_size, order, grid_range=1.0):
    """G intervals over [-r, r], extended by ``order`` knots on each side."""
    if grid_size < 1 or order < 1 or grid_range <= 0:
        raise ConfigError(f"invalid spline grid: G={grid_size}, k={order}, range={grid_range}")
    h = 2.0 * grid_range / grid_size
    return np.linspace(-grid_range - order * h, grid_range + order * h, grid_size + 2 * order + 1)


def _basis_levels(x, knots, order):
    """Cox-de Boor; levels[p] holds the order-p bases, shape [..., len(knots) - 1 - p]."""
    x = x[..., None]
    b = ((x >= knots[:-1]) & (x < knots[1:])).astype(x.dtype)
    levels = [b]
    for p in range(1, order + 1):
        left = (x - knots[:-(p + 1)]) / (knots[p:-1] - knots[:-(p + 1)]) * b[..., :-1]
        right = (knots[p + 1:] - x) / (knots[p + 1:] - knots[1:-p]) * b[..., 1:]
        b = left + right
        levels.append(b)
    return levels


def bspline_basis(x, knots, order):
    """G + k basis values per input, inputs clamped to the grid range."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = knots[order], knots[-order - 1]
    return _basis_levels(np.clip(x, lo, hi), knots, order)[order]


def spline_basis(x, knots, order):
    """Differentiable basis of an already clamped tensor: [...] -> [..., G + k]."""
    levels = _basis_levels(x.data, knots.astype(x.dtype), order)
    h = knots[1] - knots[0]

    def backward(g):
        lower = levels[order - 1]
        d_basis = (lower[..., :-1] - lower[..., 1:]) / h
        return ((g * d_basis).sum(axis=-1),)

    return record(levels[order], (x,), backward, "spline_basis")


def fit_coefficients(f, knots, order, samples=200):
    """Least-squares coefficients so that sum_j c_j B_j(x) ~ f(x) on the grid range."""
    lo, hi = knots[order], knots[-order - 1]
    xs = np.linspace(lo, hi, samples)
    basis = bspline_basis(xs, knots, order)
    coeffs, *_ = np.linalg.lstsq(basis, f(xs), rcond=None)
    return coeffs


# --------------------------
# LAYERS
# --------------------------
class KanLayer(Module):
    def __init__(self, in_dim, out_dim, rng, grid_size=5, order=3, grid_range=1.0):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.order = order
        self.grid_range = grid_range
        self.knots = uniform_knots(grid_size, order, grid_range)
        n_basis = grid_size + order

        coeffs = rng.normal(0.0, 0.01, size=(out_dim, in_dim, n_basis))
        if in_dim == out_dim:
            # Identity-leaning: the diagonal edges start as phi(x) = x on the grid.
            identity = fit_coefficients(lambda v: v, self.knots, order)
            coeffs[np.arange(in_dim), np.arange(in_dim)] += identity
        bound = 0.1 / np.sqrt(in_dim)
        self.base_weight = parameter(rng.uniform(-bound, bound, size=(out_dim, in_dim)), name="base_weight")
        self.spline_coeffs = parameter(coeffs, name="spline_coeffs")

    @property
    def n_basis(self):
        return self.spline_coeffs.shape[-1]

    @staticmethod
    def count(in_dim, out_dim, grid_size, order):
        return out_dim * in_dim * (grid_size + order) + out_dim * in_dim

    def forward(self, z):
        if z.shape[-1] != self.in_dim:
            raise DimensionError(f"KAN layer expects {self.in_dim} features, got {z.shape}")
        base = ops.linear(ops.silu(z), self.base_weight)
        clamped = ops.clamp(z, -self.grid_range, self.grid_range)
        bases = spline_basis(clamped, self.knots, self.order)
        flat = ops.reshape(bases, z.shape[:-1] + (self.in_dim * self.n_basis,))
        weights = ops.reshape(self.spline_coeffs, (self.out_dim, self.in_dim * self.n_basis))
        return ops.add(base, ops.linear(flat, weights))


def kan_layer_forward(z, layer):
    return layer(z)


class KanMixer(Module):
    kind = "kan"

    def __init__(self, dim, rng, depth=1, grid_size=5, order=3, grid_range=1.0):
        self.layers = [KanLayer(dim, dim, rng, grid_size, order, grid_range) for _ in range(depth)]

    @staticmethod
    def count(dim, depth, grid_size, order):
        return depth * KanLayer.count(dim, dim, grid_size, order)

    def forward(self, z):
        for layer in self.layers:
            z = layer(z)
        return z


class MlpMixer(Module):
    kind = "mlp"

    def __init__(self, dim, rng, hidden=None):
        hidden = hidden or dim
        b0, b1 = 1.0 / np.sqrt(dim), 1.0 / np.sqrt(hidden)
        self.w0 = parameter(rng.uniform(-b0, b0, size=(hidden, dim)), name="w0")
        self.b0 = parameter(np.zeros(hidden), name="b0")
        self.w1 = parameter(rng.uniform(-b1, b1, size=(dim, hidden)), name="w1")
        self.b1 = parameter(np.zeros(dim), name="b1")

    @staticmethod
    def count(dim, hidden=None):
        hidden = hidden or dim
        return dim * hidden + hidden + hidden * dim + dim

    def forward(self, z):
        return ops.linear(ops.silu(ops.linear(z, self.w0, self.b0)), self.w1, self.b1)


# --------------------------
# TOKENIZED BLOCK
# --------------------------
class TokBlock(Module):
    """Z' = LN(Z + DwConv(Phi(Z))) over tokens laid out on an H x W grid."""

    def __init__(self, dim, rng, mixer="kan", kan_layers=1, grid_size=5, order=3,
                 grid_range=1.0, mlp_hidden=None):
        if mixer not in MIXERS:
            raise ConfigError(f"token_mixer must be one of {MIXERS}, got {mixer!r}")
        self.dim = dim
        if mixer == "kan":
            self.mixer = KanMixer(dim, rng, kan_layers, grid_size, order, grid_range)
        else:
            self.mixer = MlpMixer(dim, rng, mlp_hidden)
        self.dw_weight = parameter(rng.uniform(-1.0 / 3, 1.0 / 3, size=(dim, 1, 3, 3)), name="dw_weight")
        self.dw_bias = parameter(np.zeros(dim), name="dw_bias")
        self.ln_gamma = parameter(np.ones(dim), name="ln_gamma")
        self.ln_beta = parameter(np.zeros(dim), name="ln_beta")

    @staticmethod
    def count(dim, mixer="kan", kan_layers=1, grid_size=5, order=3, mlp_hidden=None):
        if mixer == "kan":
            phi = KanMixer.count(dim, kan_layers, grid_size, order)
        else:
            phi = MlpMixer.count(dim, mlp_hidden)
        return phi + dim * 9 + dim + 2 * dim

    def forward(self, z, h, w):
        b, length, d = z.shape
        if length != h * w or d != self.dim:
            raise DimensionError(f"token block expects [B,{h * w},{self.dim}] for a {h}x{w} grid, got {z.shape}")
        phi = self.mixer(z)
        grid = ops.transpose(ops.reshape(phi, (b, h, w, d)), (0, 3, 1, 2))
        conv = ops.conv2d(grid, self.dw_weight, self.dw_bias, padding=1, groups=d)
        back = ops.reshape(ops.transpose(conv, (0, 2, 3, 1)), (b, length, d))
        return ops.layernorm(ops.add(z, back), self.ln_gamma, self.ln_beta)


def tok_kan_forward(z, block, h, w):
    if block.mixer.kind != "kan":
        raise ConfigError("tok_kan_forward needs a block built with token_mixer = kan")
    return block(z, h, w)


def tok_mlp_forward(z, block, h, w):
    if block.mixer.kind != "mlp":
        raise ConfigError("tok_mlp_forward needs a block built with token_mixer = mlp")
    return block(z, h, w)
