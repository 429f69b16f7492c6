"""Small input checks shared by the estimators."""
from __future__ import annotations

import numpy as np


class InvalidRange(ValueError):
    pass


def check_ranges(lower, upper, n_features=None):
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if lower.shape != upper.shape or lower.ndim != 1:
        raise InvalidRange("lower and upper bounds must be 1-D and the same length")
    if n_features is not None and lower.size != n_features:
        raise InvalidRange(f"expected {n_features} bounds, got {lower.size}")
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise InvalidRange("bounds must be finite")
    if np.any(lower >= upper):
        bad = np.flatnonzero(lower >= upper).tolist()
        raise InvalidRange(f"lower >= upper in component(s) {bad}")
    return lower, upper


def as_evaluator(model):
    """Accept either a plain batch callable or a fitted estimator with ``predict``."""
    if hasattr(model, "predict"):
        return model.predict
    if callable(model):
        return model
    raise TypeError(f"{type(model).__name__} is neither callable nor has predict()")
