"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import InvalidInputError


def check_image_stack(X, *, min_size=16, square=False):
    """Coerce ``X`` to a finite float64 array of shape ``(n, H, W)``.

    Accepts a single 2-D image, a 3-D stack, or a sequence of
    :class:`~sparsect.tomo.Image` objects.
    """
    if isinstance(X, (list, tuple)) and X and hasattr(X[0], "data"):
        X = [x.data for x in X]
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise InvalidInputError(f"expected an image or a stack of images, got {X.ndim}-D input")
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_all_finite=True, ensure_min_samples=1)
    if min(X.shape[1:]) < min_size:
        raise InvalidInputError(f"images must be at least {min_size}x{min_size}, got {X.shape[1:]}")
    if square and X.shape[1] != X.shape[2]:
        raise InvalidInputError(f"images must be square, got {X.shape[1:]}")
    return X


def check_same_grid(X, shape):
    if X.shape[1:] != tuple(shape):
        raise InvalidInputError(f"images are {X.shape[1:]} but the estimator was fitted on {tuple(shape)}")
