"""
Synthetic segmentation set: 1-3 filled ellipses or star-shaped polygons on a
textured background. Every sample draws from its own spawned seed, so the
set is identical whether it is generated serially or on a thread pool.
"""
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from PIL import Image, ImageDraw

from numerics.exceptions import ConfigError, ContractError

from .samples import Sample, check_size

logger = logging.getLogger(__name__)

NOISE_SIGMA = 0.1
FOREGROUND_RANGE = (0.02, 0.60)
MAX_SHAPES = 3
MAX_ATTEMPTS = 200
ELLIPSE_VERTICES = 48


def sample_id(index):
    return f"sample_{index:04d}"


def _ellipse(rng, h, w):
    cy, cx = rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w
    ry, rx = rng.uniform(0.08, 0.28) * h, rng.uniform(0.08, 0.28) * w
    theta = rng.uniform(0.0, np.pi)
    t = np.linspace(0.0, 2.0 * np.pi, ELLIPSE_VERTICES, endpoint=False)
    ys = ry * np.sin(t)
    xs = rx * np.cos(t)
    px = cx + xs * np.cos(theta) - ys * np.sin(theta)
    py = cy + xs * np.sin(theta) + ys * np.cos(theta)
    return list(zip(px.tolist(), py.tolist()))


def _polygon(rng, h, w):
    cy, cx = rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w
    radius = rng.uniform(0.1, 0.3) * min(h, w)
    k = int(rng.integers(3, 9))
    angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, size=k))
    radii = radius * rng.uniform(0.6, 1.0, size=k)
    px = cx + radii * np.cos(angles)
    py = cy + radii * np.sin(angles)
    return list(zip(px.tolist(), py.tolist()))


SHAPES = {"ellipse": _ellipse, "polygon": _polygon}


def draw_mask(rng, h, w):
    canvas = Image.new("L", (w, h), 0)
    draw = ImageDraw.Draw(canvas)
    names = tuple(SHAPES)
    for _ in range(int(rng.integers(1, MAX_SHAPES + 1))):
        shape = SHAPES[names[int(rng.integers(len(names)))]]
        draw.polygon(shape(rng, h, w), fill=1)
    return np.asarray(canvas, dtype=np.uint8)


def render(rng, mask):
    h, w = mask.shape
    fg = rng.uniform(0.55, 0.95, size=3)
    bg = rng.uniform(0.05, 0.45, size=3)
    base = np.where(mask[None] == 1, fg[:, None, None], bg[:, None, None])
    noisy = base + rng.normal(0.0, NOISE_SIGMA, size=(3, h, w))
    return np.clip(noisy, 0.0, 1.0).astype(np.float32)


def synth_sample(seed_seq, index, h, w):
    rng = np.random.default_rng(seed_seq)
    lo, hi = FOREGROUND_RANGE
    for _ in range(MAX_ATTEMPTS):
        mask = draw_mask(rng, h, w)
        if lo <= mask.mean() <= hi:
            return Sample(id=sample_id(index), image=render(rng, mask), mask=mask[None])
    raise ContractError(f"could not draw a {h}x{w} mask with foreground in {FOREGROUND_RANGE}")


def gen_synthetic(n, h, w, seed, workers=None):
    if n <= 0:
        raise ConfigError(f"number of samples must be positive, got {n}")
    check_size(h, w)
    children = np.random.SeedSequence(seed).spawn(n)
    jobs = [(child, i, h, w) for i, child in enumerate(children)]
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(lambda job: synth_sample(*job), jobs))
    else:
        samples = [synth_sample(*job) for job in jobs]
    logger.info("generated %d synthetic %dx%d samples (seed %d)", n, h, w, seed)
    return samples
