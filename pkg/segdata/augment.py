import numpy as np

from .samples import Sample

# Each op acts on the last two axes of a [C,H,W] array.
AUGMENTATIONS = {
    "identity": lambda a: a,
    "hflip": lambda a: a[..., ::-1],
    "vflip": lambda a: a[..., ::-1, :],
    "rot90": lambda a: np.rot90(a, 1, axes=(-2, -1)),
    "rot180": lambda a: np.rot90(a, 2, axes=(-2, -1)),
    "rot270": lambda a: np.rot90(a, 3, axes=(-2, -1)),
}

SHAPE_PRESERVING = ("identity", "hflip", "vflip", "rot180")


def available_augmentations(height, width):
    """Quarter turns swap H and W, so they are only offered for square samples."""
    return tuple(AUGMENTATIONS) if height == width else SHAPE_PRESERVING


def apply_augmentation(sample, name):
    op = AUGMENTATIONS[name]
    return Sample(
        id=sample.id,
        image=np.ascontiguousarray(op(sample.image)),
        mask=np.ascontiguousarray(op(sample.mask)),
    )


def augment(sample, rng):
    names = available_augmentations(sample.height, sample.width)
    return apply_augmentation(sample, names[int(rng.integers(len(names)))])
