"""Input validation helpers in the spirit of ``sklearn.utils.validation``.

Observations may be zero-dimensional (unconditional tasks), which plain
``check_array`` rejects by default, so every entry point goes through these
wrappers instead.
"""

import numbers

import numpy as np
from sklearn.utils import check_array

from ..exceptions import ShapeError


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``.

    ``None`` and integers build a fresh PCG64 generator; an existing
    ``Generator`` is returned unchanged so callers can share a stream.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, numbers.Integral):
        return np.random.default_rng(seed)
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    raise ValueError(f"{seed!r} cannot be used to seed a numpy Generator")


def check_actions(a, n_actions=None, name="actions"):
    """Validate an action batch and return it as a 2D float array."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None] if n_actions == 1 else a[None, :]
    a = check_array(a, dtype=np.float64, ensure_min_features=1, input_name=name)
    if n_actions is not None and a.shape[1] != n_actions:
        raise ShapeError(f"{name}: expected {n_actions} columns, got {a.shape[1]}")
    return a


def check_observations(X, n_samples=None, n_obs=None):
    """Validate observations; ``None`` means an unconditional task.

    Returns an ``(n, n_obs)`` float array, possibly with zero columns.
    """
    if X is None:
        if n_samples is None:
            raise ShapeError("observations are None and no sample count was given")
        return np.zeros((n_samples, 0 if n_obs is None else n_obs))
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :] if n_samples is None else X.reshape(n_samples, -1)
    X = check_array(X, dtype=np.float64, ensure_min_features=0, input_name="X")
    if n_samples is not None and X.shape[0] == 1 and n_samples > 1:
        X = np.repeat(X, n_samples, axis=0)
    if n_samples is not None and X.shape[0] != n_samples:
        raise ShapeError(f"X: expected {n_samples} rows, got {X.shape[0]}")
    if n_obs is not None and X.shape[1] != n_obs:
        raise ShapeError(f"X: expected {n_obs} columns, got {X.shape[1]}")
    return X


def check_xy(X, y):
    """Validate a demonstration dataset of ``(observation, action)`` pairs."""
    y = check_actions(y, name="y")
    X = check_observations(X, n_samples=y.shape[0])
    if y.shape[0] < 1:
        raise ShapeError("empty dataset")
    return X, y
