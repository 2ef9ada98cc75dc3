"""
Dataset directories::

    <root>/index.txt          one sample id per line
    <root>/images/<id>.ppm
    <root>/masks/<id>.pgm
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from numerics.exceptions import SampleIOError

from .pnm import load_pair, save_image, save_mask

logger = logging.getLogger(__name__)

INDEX_FILE = "index.txt"
IMAGE_DIR = "images"
MASK_DIR = "masks"


def sample_paths(root, sample_id):
    root = Path(root)
    return root / IMAGE_DIR / f"{sample_id}.ppm", root / MASK_DIR / f"{sample_id}.pgm"


def save_dataset(samples, root):
    root = Path(root)
    for sample in samples:
        image_path, mask_path = sample_paths(root, sample.id)
        save_image(sample.image, image_path)
        save_mask(sample.mask, mask_path)
    try:
        (root / INDEX_FILE).write_text("".join(f"{s.id}\n" for s in samples), encoding="utf-8")
    except OSError as exc:
        raise SampleIOError(f"{root / INDEX_FILE}: {exc}") from exc
    logger.info("wrote %d samples to %s", len(samples), root)


def read_index(root):
    path = Path(root) / INDEX_FILE
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise SampleIOError(f"{path}: {exc.strerror or exc}") from exc
    return [line.strip() for line in lines if line.strip()]


def load_dataset(root, size=None, workers=None):
    ids = read_index(root)

    def load(sample_id):
        image_path, mask_path = sample_paths(root, sample_id)
        return load_pair(image_path, mask_path, size=size, sample_id=sample_id)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(load, ids))
    else:
        samples = [load(sample_id) for sample_id in ids]
    logger.debug("loaded %d samples from %s", len(samples), root)
    return samples
