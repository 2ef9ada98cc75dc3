import numpy as np

from numerics import ops
from numerics.exceptions import ContractError, DimensionError
from numerics.tensor import as_tensor

DICE_EPS = 1e-6


def _check_target(logits, target):
    if logits.shape != target.shape:
        raise DimensionError(f"logits {logits.shape} and target {target.shape} differ in shape")
    values = target.data
    if not np.all((values == 0) | (values == 1)):
        raise ContractError("segmentation targets must be binary (0 or 1)")


def bce_term(logits, target):
    """Mean binary cross-entropy in logit form: softplus(l) - l * g."""
    return ops.mean(ops.sub(ops.softplus(logits), ops.mul(logits, target)))


def dice_term(logits, target, eps=DICE_EPS):
    """Soft Dice loss 1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps) over the whole batch."""
    p = ops.sigmoid(logits)
    inter = ops.sum(ops.mul(p, target))
    denom = ops.add(ops.add(ops.sum(p), float(target.data.sum())), eps)
    return ops.sub(1.0, ops.div(ops.add(ops.mul(inter, 2.0), eps), denom))


def bce_dice_loss(logits, target, bce_weight=1.0, dice_weight=1.0):
    target = as_tensor(target, like=logits)
    _check_target(logits, target)
    return ops.add(
        ops.mul(bce_term(logits, target), bce_weight),
        ops.mul(dice_term(logits, target), dice_weight),
    )
