"""
Binary PGM (P5) / PPM (P6) reading and writing through Pillow.

Only 8-bit P5 and P6 files are accepted; the magic bytes are checked before
Pillow sees the file. Masks are binarised at ``MASK_THRESHOLD``.
"""
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from numerics.exceptions import ContractError, SampleIOError

from .samples import Sample

logger = logging.getLogger(__name__)

PNM_MODES = {b"P5": "L", b"P6": "RGB"}
MASK_THRESHOLD = 128


def _check_magic(path):
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic not in PNM_MODES:
        raise SampleIOError(f"{path}: not a binary PGM/PPM file (magic {magic!r})")


def read_pnm(path, mode=None):
    """uint8 array, [H,W] for P5 and [H,W,3] for P6, optionally converted to ``mode``."""
    path = Path(path)
    try:
        _check_magic(path)
        with Image.open(path) as img:
            img.load()
            if img.mode not in PNM_MODES.values():
                raise SampleIOError(f"{path}: only 8-bit images are supported (mode {img.mode})")
            if mode and img.mode != mode:
                img = img.convert(mode)
            return np.asarray(img, dtype=np.uint8)
    except SampleIOError:
        raise
    except (OSError, ValueError, SyntaxError) as exc:
        raise SampleIOError(f"{path}: {exc}") from exc


def write_pnm(path, array):
    path = Path(path)
    array = np.asarray(array, dtype=np.uint8)
    if array.ndim not in (2, 3) or (array.ndim == 3 and array.shape[2] != 3):
        raise ContractError(f"PNM data must be [H,W] or [H,W,3], got {array.shape}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(array).save(path, format="PPM")
    except OSError as exc:
        raise SampleIOError(f"{path}: {exc}") from exc


def resize_nearest(array, size):
    h, w = size
    if array.shape[:2] == (h, w):
        return array
    return np.asarray(Image.fromarray(array).resize((w, h), Image.Resampling.NEAREST))


def to_image(array):
    """uint8 [H,W] or [H,W,3] -> float32 [3,H,W] in [0,1]."""
    if array.ndim == 2:
        array = np.repeat(array[:, :, None], 3, axis=2)
    return (array.astype(np.float32) / 255.0).transpose(2, 0, 1)


def to_mask(array):
    return (array >= MASK_THRESHOLD).astype(np.uint8)[None]


def load_image(path, size=None):
    array = read_pnm(path)
    if size is not None:
        array = resize_nearest(array, size)
    return to_image(array)


def load_pair(image_path, mask_path, size=None, sample_id=None):
    image = read_pnm(image_path)
    mask = read_pnm(mask_path, mode="L")
    if image.shape[:2] != mask.shape:
        ih, iw = image.shape[:2]
        mh, mw = mask.shape
        raise SampleIOError(
            f"size mismatch: {image_path} is {iw}x{ih} but {mask_path} is {mw}x{mh}"
        )
    if size is not None:
        image, mask = resize_nearest(image, size), resize_nearest(mask, size)
    return Sample(
        id=sample_id or Path(image_path).stem,
        image=to_image(image),
        mask=to_mask(mask),
    )


def save_mask(mask, path):
    """Writes a P5 file holding 0 and 255."""
    mask = np.asarray(mask)
    if mask.ndim == 3 and mask.shape[0] == 1:
        mask = mask[0]
    if mask.ndim != 2:
        raise ContractError(f"mask must be [H,W] or [1,H,W], got {mask.shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise ContractError("mask must be binary")
    write_pnm(path, mask.astype(np.uint8) * 255)


def save_image(image, path):
    """[3,H,W] in [0,1] -> P6."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ContractError(f"image must be [3,H,W], got {image.shape}")
    pixels = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    write_pnm(path, pixels.transpose(1, 2, 0))
