import logging
import re
from dataclasses import dataclass

import numpy as np

from numerics.exceptions import ConfigError, ContractError, DimensionError
from segnet.config import DIVISOR

logger = logging.getLogger(__name__)

_SIZE = re.compile(r"^\s*(\d+)\s*[xX]\s*(\d+)\s*$")


@dataclass(frozen=True, eq=False)
class Sample:
    """
    One image and its mask. ``image`` is float32 [3,H,W] in [0,1],
    ``mask`` is uint8 [1,H,W] in {0,1}; both are read-only.
    """
    id: str
    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        image = np.array(self.image, dtype=np.float32)
        raw_mask = np.asarray(self.mask)
        if not np.all((raw_mask == 0) | (raw_mask == 1)):
            raise ContractError(f"sample {self.id}: mask is not binary")
        mask = np.array(raw_mask, dtype=np.uint8)
        if image.ndim != 3 or image.shape[0] != 3:
            raise DimensionError(f"sample {self.id}: image must be [3,H,W], got {image.shape}")
        if mask.shape != (1,) + image.shape[1:]:
            raise DimensionError(f"sample {self.id}: mask {mask.shape} does not match image {image.shape}")
        if not np.all(np.isfinite(image)):
            raise ContractError(f"sample {self.id}: image has non-finite values")
        image.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "mask", mask)

    @property
    def height(self):
        return self.image.shape[1]

    @property
    def width(self):
        return self.image.shape[2]

    def same_as(self, other):
        return (
            self.id == other.id
            and np.array_equal(self.image, other.image)
            and np.array_equal(self.mask, other.mask)
        )


def check_size(h, w):
    if h < DIVISOR or w < DIVISOR or h % DIVISOR or w % DIVISOR:
        raise ConfigError(f"dimensions must be divisible by {DIVISOR}, got {h}x{w}")
    return h, w


def parse_size(text):
    """``"96x64"`` -> ``(96, 64)`` as (height, width)."""
    match = _SIZE.match(str(text))
    if not match:
        raise ConfigError(f"size must look like HxW, got {text!r}")
    return check_size(int(match.group(1)), int(match.group(2)))


def split(samples, ratio, seed):
    """Shuffle with ``seed`` and cut at ``round(n * ratio)``; returns (train, val)."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must lie in (0, 1), got {ratio}")
    samples = list(samples)
    n_train = round(len(samples) * ratio)
    if n_train == 0 or n_train == len(samples):
        raise ConfigError(f"split of {len(samples)} samples at {ratio} leaves one side empty")
    order = np.random.default_rng(seed).permutation(len(samples))
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:]]
    logger.debug("split %d samples into %d train / %d val", len(samples), len(train), len(val))
    return train, val


def stack_batch(samples):
    """Images [B,3,H,W] and masks [B,1,H,W], both float32."""
    sizes = {(s.height, s.width) for s in samples}
    if len(sizes) > 1:
        raise DimensionError(f"cannot batch samples of different sizes: {sorted(sizes)}")
    images = np.stack([s.image for s in samples]).astype(np.float32)
    masks = np.stack([s.mask for s in samples]).astype(np.float32)
    return images, masks
