import numpy as np

from transtab.io import check_labels


def numc(labels) -> float:
    """Number of distinct target classes present."""
    y = check_labels(labels)
    if y.size == 0:
        raise ValueError("numc needs at least one label")
    return float(len(np.unique(y)))
