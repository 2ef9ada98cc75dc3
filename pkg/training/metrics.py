import numpy as np

from numerics.exceptions import ContractError, DimensionError


def _binary(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    for m in (pred, gt):
        if m.dtype != bool and not np.all((m == 0) | (m == 1)):
            raise ContractError("masks must be binary")
    return pred.astype(bool), gt.astype(bool)


def _counts(pred, gt):
    p, g = _binary(pred, gt)
    inter = int(np.count_nonzero(p & g))
    return inter, int(np.count_nonzero(p)), int(np.count_nonzero(g))


# Both metrics score 1.0 when prediction and truth are empty.
def iou(pred, gt):
    inter, np_, ng = _counts(pred, gt)
    union = np_ + ng - inter
    return 1.0 if union == 0 else inter / union


def f1_dice(pred, gt):
    inter, np_, ng = _counts(pred, gt)
    total = np_ + ng
    return 1.0 if total == 0 else 2 * inter / total


def threshold_logits(logits, threshold=0.5):
    """sigmoid(logits) > threshold, evaluated in logit space."""
    if not 0.0 < threshold < 1.0:
        raise ContractError(f"threshold must lie in (0, 1), got {threshold}")
    cut = 0.0 if threshold == 0.5 else float(np.log(threshold / (1.0 - threshold)))
    return np.asarray(logits) > cut
