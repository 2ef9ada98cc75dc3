"""
Selective state space block: input-dependent step size and input/output
couplings, zero-order-hold discretization, and the causal linear recurrence

    h_t = Abar_t * h_{t-1} + Bbar_t * x_t,    y_t = C_t . h_t + D * x_t
"""
import numpy as np

from numerics import ops
from numerics.exceptions import ContractError, DimensionError
from numerics.module import Module, parameter
from numerics.tensor import Tensor, record

DT_MIN = 1e-3
DT_MAX = 1e-1


def inverse_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


class S6Params(Module):
    """
    ``log_neg_a`` stores log(-A) so the effective A = -exp(log_neg_a) is
    always strictly negative.
    """

    def __init__(self, log_neg_a, d_skip, w_delta, b_delta, w_b, b_b, w_c, b_c):
        self.log_neg_a = log_neg_a
        self.d_skip = d_skip
        self.w_delta = w_delta
        self.b_delta = b_delta
        self.w_b = w_b
        self.b_b = b_b
        self.w_c = w_c
        self.b_c = b_c

    @property
    def d_model(self):
        return self.d_skip.shape[0]

    @property
    def n_state(self):
        return self.log_neg_a.shape[1]

    @classmethod
    def from_arrays(cls, **arrays):
        return cls(**{name: parameter(value, name=name) for name, value in arrays.items()})

    @classmethod
    def init(cls, d_model, n_state, rng):
        """A = -(1..N) per state, D = 1, step sizes log-uniform in [DT_MIN, DT_MAX]."""
        bound = 1.0 / np.sqrt(d_model)
        dt = np.exp(rng.uniform(np.log(DT_MIN), np.log(DT_MAX), size=d_model))
        return cls.from_arrays(
            log_neg_a=np.log(np.tile(np.arange(1, n_state + 1, dtype=np.float64), (d_model, 1))),
            d_skip=np.ones(d_model),
            w_delta=rng.uniform(-bound, bound, size=(d_model, d_model)),
            b_delta=inverse_softplus(dt),
            w_b=rng.uniform(-bound, bound, size=(n_state, d_model)),
            b_b=np.zeros(n_state),
            w_c=rng.uniform(-bound, bound, size=(n_state, d_model)),
            b_c=np.zeros(n_state),
        )

    @staticmethod
    def count(d_model, n_state):
        return (
            d_model * n_state              # log_neg_a
            + d_model                      # d_skip
            + d_model * d_model + d_model  # delta projection
            + 2 * (n_state * d_model + n_state)
        )

    def effective_a(self):
        return ops.neg(ops.exp(self.log_neg_a))


# --------------------------
# PROJECTION / DISCRETIZATION
# --------------------------
def project(x, p):
    """Delta [B,L,D] (softplus-positive), B [B,L,N], C [B,L,N]."""
    if x.ndim != 3 or x.shape[-1] != p.d_model:
        raise DimensionError(f"S6 expects [B,L,{p.d_model}] tokens, got {x.shape}")
    delta = ops.softplus(ops.linear(x, p.w_delta, p.b_delta))
    bmat = ops.linear(x, p.w_b, p.b_b)
    cmat = ops.linear(x, p.w_c, p.b_c)
    return delta, bmat, cmat


def _discretize(delta, a, b):
    z = ops.mul(delta, a)
    abar = ops.exp(z)
    bbar = ops.mul(ops.mul(delta, ops.exprel(z)), b)
    return abar, bbar


def discretize(delta, a, b):
    """
    Zero-order hold, elementwise: Abar = exp(delta*a), Bbar = (exp(delta*a) - 1)/a * b.

    Written as delta * exprel(delta*a) * b, which equals the series limit
    delta * b when |delta*a| is below 1e-8.
    """
    delta, a, b = (np.asarray(v, dtype=np.float64) for v in (delta, a, b))
    if np.any(delta <= 0) or np.any(a >= 0):
        raise ContractError("discretize needs delta > 0 and a < 0")
    abar, bbar = _discretize(*(Tensor(v, dtype=np.float64) for v in (delta, a, b)))
    if abar.ndim == 0:
        return float(abar.data), float(bbar.data)
    return abar.data, bbar.data


# --------------------------
# RECURRENCE
# --------------------------
def linear_recurrence(abar, u, c):
    """
    y[b,t,d] = sum_n c[b,t,n] * h[b,t,d,n] with h_t = abar_t * h_{t-1} + u_t, h_0 = 0.

    abar, u: [B,L,D,N]; c: [B,L,N]. Sequential in t, vectorized over the
    independent (batch, channel, state) lanes.
    """
    a, uu, cc = abar.data, u.data, c.data
    bsz, length, d, n = a.shape
    hs = np.empty_like(uu)
    h = np.zeros((bsz, d, n), dtype=uu.dtype)
    for t in range(length):
        h = a[:, t] * h + uu[:, t]
        hs[:, t] = h
    y = np.einsum("bldn,bln->bld", hs, cc)

    def backward(g):
        gc = np.einsum("bld,bldn->bln", g, hs)
        direct = g[..., None] * cc[:, :, None, :]
        ga = np.empty_like(a)
        gu = np.empty_like(uu)
        dh = np.zeros((bsz, d, n), dtype=uu.dtype)
        for t in range(length - 1, -1, -1):
            dh = dh + direct[:, t]
            gu[:, t] = dh
            if t > 0:
                ga[:, t] = dh * hs[:, t - 1]
            else:
                ga[:, t] = 0.0
            dh = a[:, t] * dh
        return ga, gu, gc

    return record(y, (abar, u, c), backward, "linear_recurrence")


def selective_scan(x, p):
    """[B,L,D] -> [B,L,D]; causal in L."""
    delta, bmat, cmat = project(x, p)
    bsz, length, d = x.shape
    n = p.n_state
    delta4 = ops.reshape(delta, (bsz, length, d, 1))
    abar, bbar = _discretize(delta4, p.effective_a(), ops.reshape(bmat, (bsz, length, 1, n)))
    u = ops.mul(bbar, ops.reshape(x, (bsz, length, d, 1)))
    y = linear_recurrence(abar, u, cmat)
    return ops.add(y, ops.mul(x, p.d_skip))


class S6Block(Module):
    def __init__(self, d_model, n_state, rng):
        self.params = S6Params.init(d_model, n_state, rng)

    def forward(self, x):
        return selective_scan(x, self.params)


def default_params(d_model, n_state, seed=0):
    """Convenience for benchmarks and ad-hoc checks."""
    return S6Params.init(d_model, n_state, np.random.default_rng(seed))


def naive_selective_scan(x, p):
    """Per-step reference loop over plain numpy values; no tape involvement."""
    x = np.asarray(x, dtype=np.float64)
    w_delta, b_delta, w_b, b_b, w_c, b_c = (
        t.data.astype(np.float64) for t in (p.w_delta, p.b_delta, p.w_b, p.b_b, p.w_c, p.b_c)
    )
    a = -np.exp(p.log_neg_a.data.astype(np.float64))
    d_skip = p.d_skip.data.astype(np.float64)
    bsz, length, d = x.shape
    y = np.zeros_like(x)
    for b in range(bsz):
        h = np.zeros_like(a)
        for t in range(length):
            xt = x[b, t]
            delta = np.logaddexp(0.0, w_delta @ xt + b_delta)
            bt = w_b @ xt + b_b
            ct = w_c @ xt + b_c
            for ch in range(d):
                for n in range(a.shape[1]):
                    z = delta[ch] * a[ch, n]
                    bbar = np.expm1(z) / a[ch, n] * bt[n]
                    h[ch, n] = np.exp(z) * h[ch, n] + bbar * xt[ch]
                y[b, t, ch] = ct @ h[ch] + d_skip[ch] * xt[ch]
    return y
