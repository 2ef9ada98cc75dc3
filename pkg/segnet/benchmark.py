import logging
import time
from dataclasses import dataclass

import numpy as np

from numerics.exceptions import ConfigError
from numerics.tensor import Tensor
from ssm.s6 import default_params, selective_scan

from .model import count_parameters, estimate_macs

logger = logging.getLogger(__name__)

BENCH_OPS = ("selective_scan",)


@dataclass
class Timing:
    length: int
    seconds: float

    @property
    def tokens_per_second(self):
        return self.length / self.seconds if self.seconds > 0 else float("inf")


def time_selective_scan(lengths, d_model=16, n_state=16, repeats=3, seed=0):
    """Best-of-``repeats`` forward time for a [1, L, d_model] sequence per length."""
    params = default_params(d_model, n_state, seed)
    rng = np.random.default_rng(seed)
    timings = []
    for length in lengths:
        if length < 1:
            raise ConfigError(f"sequence length must be >= 1, got {length}")
        x = Tensor(rng.normal(size=(1, length, d_model)))
        best = float("inf")
        for _ in range(max(1, repeats)):
            start = time.perf_counter()
            selective_scan(x, params)
            best = min(best, time.perf_counter() - start)
        logger.debug("selective_scan L=%d: %.4fs", length, best)
        timings.append(Timing(length=length, seconds=best))
    return timings


def run_benchmark(op, lengths, repeats=3, seed=0):
    if op not in BENCH_OPS:
        raise ConfigError(f"unknown benchmark op {op!r}; expected one of {BENCH_OPS}")
    return time_selective_scan(lengths, repeats=repeats, seed=seed)


def model_cost(cfg, h, w):
    """Parameter count and the analytic multiply-accumulate estimate."""
    return count_parameters(cfg), estimate_macs(cfg, h, w)
