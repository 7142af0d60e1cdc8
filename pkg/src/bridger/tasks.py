"""Synthetic target distributions and dataset files.

Each task draws ``n`` demonstration pairs ``(x, a)``. With observation mode
``"none"`` the observation is empty; with ``"label"`` it is the one-hot index
of the mixture component (or cell) that produced the action, which makes
the conditional target unimodal.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError
from .utils import check_random_state

GENERATORS = ("gaussian-mixture", "ring", "two-moons", "checker", "trajectory-1d")
OBS_MODES = ("none", "label")
MIN_SAMPLES = 100


@dataclass(frozen=True)
class TaskSpec:
    """A named target generator.

    ``params`` by generator:

    * ``gaussian-mixture``: ``centers`` (k, dim), ``stds`` (k,) isotropic or
      ``covs`` (k, dim, dim), optional ``weights``.
    * ``ring``: ``center``, ``radius``, ``noise``.
    * ``two-moons``: ``noise``, ``scale``, ``offset``.
    * ``checker``: ``cells`` (grid size per side), ``cell_size``.
    * ``trajectory-1d``: ``length`` T, ``noise``; each action is a whole
      length-T trajectory.
    """

    name: str
    generator: str
    params: dict = field(default_factory=dict)
    obs_mode: str = "none"
    n: int = 2000

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ConfigError(f"unknown generator {self.generator!r}; expected one of {GENERATORS}")
        if self.obs_mode not in OBS_MODES:
            raise ConfigError(f"unknown observation mode {self.obs_mode!r}")
        if int(self.n) < MIN_SAMPLES:
            raise ConfigError(f"task needs n >= {MIN_SAMPLES}, got {self.n}")
        _validate_params(self.generator, self.params)

    def to_dict(self):
        return {"name": self.name, "generator": self.generator, "params": _jsonable(self.params),
                "obs_mode": self.obs_mode, "n": int(self.n)}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "name" in d and d["name"] in CANONICAL_TASKS and "generator" not in d:
            base = CANONICAL_TASKS[d["name"]]
            return cls(base.name, base.generator, base.params, d.get("obs_mode", base.obs_mode),
                       int(d.get("n", base.n)))
        try:
            return cls(d["name"], d["generator"], dict(d.get("params", {})), d.get("obs_mode", "none"),
                       int(d.get("n", 2000)))
        except KeyError as exc:
            raise ConfigError(f"task is missing field {exc}") from None

    @property
    def n_actions(self):
        if self.generator == "gaussian-mixture":
            return int(np.asarray(self.params["centers"]).shape[1])
        if self.generator == "trajectory-1d":
            return int(self.params.get("length", 16))
        return 2

    @property
    def n_components(self):
        g, p = self.generator, self.params
        if g == "gaussian-mixture":
            return len(p["centers"])
        if g == "two-moons":
            return 2
        if g == "checker":
            return _checker_cells(p).shape[0]
        return 1

    def sample(self, n=None, random_state=None):
        """Draw ``(X, A)``; ``X`` has 0 columns unless ``obs_mode == "label"``."""
        n = self.n if n is None else int(n)
        rng = check_random_state(random_state)
        A, labels = _SAMPLERS[self.generator](self.params, n, rng)
        if self.obs_mode == "label":
            X = np.eye(self.n_components)[labels]
        else:
            X = np.zeros((n, 0))
        return X, A


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def _validate_params(gen, p):
    try:
        if gen == "gaussian-mixture":
            centers = np.asarray(p["centers"], dtype=float)
            if centers.ndim != 2 or centers.shape[0] < 1:
                raise ConfigError("gaussian-mixture centers must be a nonempty (k, dim) list")
            if "covs" in p:
                covs = np.asarray(p["covs"], dtype=float)
                if covs.shape != (centers.shape[0], centers.shape[1], centers.shape[1]):
                    raise ConfigError("gaussian-mixture covs must have shape (k, dim, dim)")
                for cov in covs:
                    np.linalg.cholesky(cov)
            else:
                stds = np.asarray(p.get("stds", [0.3] * centers.shape[0]), dtype=float)
                if stds.shape != (centers.shape[0],) or np.any(stds <= 0):
                    raise ConfigError("gaussian-mixture stds must be k positive numbers")
            if "weights" in p:
                w = np.asarray(p["weights"], dtype=float)
                if w.shape != (centers.shape[0],) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
                    raise ConfigError("gaussian-mixture weights must be k nonnegative numbers summing to 1")
        elif gen == "ring":
            if not float(p.get("radius", 2.0)) > 0 or not float(p.get("noise", 0.1)) >= 0:
                raise ConfigError("ring needs radius > 0 and noise >= 0")
        elif gen == "two-moons":
            if not float(p.get("noise", 0.1)) >= 0 or not float(p.get("scale", 1.0)) > 0:
                raise ConfigError("two-moons needs noise >= 0 and scale > 0")
        elif gen == "checker":
            if int(p.get("cells", 4)) < 2 or not float(p.get("cell_size", 1.0)) > 0:
                raise ConfigError("checker needs cells >= 2 and cell_size > 0")
        elif gen == "trajectory-1d":
            if int(p.get("length", 16)) < 3 or not float(p.get("noise", 0.02)) >= 0:
                raise ConfigError("trajectory-1d needs length >= 3 and noise >= 0")
    except np.linalg.LinAlgError:
        raise ConfigError("gaussian-mixture covariances must be positive definite") from None


def _gaussian_mixture(p, n, rng):
    centers = np.asarray(p["centers"], dtype=float)
    k, dim = centers.shape
    w = np.asarray(p.get("weights", np.full(k, 1.0 / k)), dtype=float)
    labels = rng.choice(k, size=n, p=w)
    z = rng.standard_normal((n, dim))
    if "covs" in p:
        chol = np.linalg.cholesky(np.asarray(p["covs"], dtype=float))
        noise = np.einsum("nij,nj->ni", chol[labels], z)
    else:
        noise = np.asarray(p.get("stds", [0.3] * k), dtype=float)[labels, None] * z
    return centers[labels] + noise, labels


def _ring(p, n, rng):
    center = np.asarray(p.get("center", [0.0, 0.0]), dtype=float)
    theta = rng.uniform(0.0, 2 * np.pi, n)
    r = float(p.get("radius", 2.0)) + float(p.get("noise", 0.1)) * rng.standard_normal(n)
    return center + r[:, None] * np.column_stack([np.cos(theta), np.sin(theta)]), np.zeros(n, dtype=int)


def _two_moons(p, n, rng):
    labels = rng.integers(0, 2, n)
    theta = rng.uniform(0.0, np.pi, n)
    upper = np.column_stack([np.cos(theta), np.sin(theta)])
    lower = np.column_stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)])
    A = np.where(labels[:, None] == 0, upper, lower)
    A = A + float(p.get("noise", 0.1)) * rng.standard_normal((n, 2))
    return float(p.get("scale", 1.0)) * A + np.asarray(p.get("offset", [0.0, 0.0]), dtype=float), labels


def _checker_cells(p):
    """Lower-left corners of the occupied (dark) cells, centered on the origin."""
    m, size = int(p.get("cells", 4)), float(p.get("cell_size", 1.0))
    ij = np.array([(i, j) for i in range(m) for j in range(m) if (i + j) % 2 == 0], dtype=float)
    return (ij - m / 2.0) * size


def _checker(p, n, rng):
    corners = _checker_cells(p)
    labels = rng.integers(0, corners.shape[0], n)
    return corners[labels] + float(p.get("cell_size", 1.0)) * rng.random((n, 2)), labels


def _trajectory_1d(p, n, rng):
    T = int(p.get("length", 16))
    s = np.linspace(0.0, 1.0, T)
    amp = rng.uniform(0.5, 1.5, (n, 1))
    phase = rng.uniform(0.0, 2 * np.pi, (n, 1))
    A = amp * np.sin(2 * np.pi * s[None, :] + phase) + float(p.get("noise", 0.02)) * rng.standard_normal((n, T))
    return A, np.zeros(n, dtype=int)


_SAMPLERS = {
    "gaussian-mixture": _gaussian_mixture,
    "ring": _ring,
    "two-moons": _two_moons,
    "checker": _checker,
    "trajectory-1d": _trajectory_1d,
}


CANONICAL_TASKS = {
    "two-cluster": TaskSpec("two-cluster", "gaussian-mixture", {"centers": [[1.0, 3.0], [5.0, 3.0]], "stds": [0.3, 0.3]}),
    "four-cluster": TaskSpec(
        "four-cluster", "gaussian-mixture",
        {"centers": [[-2.0, -2.0], [-2.0, 2.0], [2.0, -2.0], [2.0, 2.0]], "stds": [0.3] * 4},
    ),
    "gauss-1d": TaskSpec("gauss-1d", "gaussian-mixture", {"centers": [[3.0]], "stds": [0.5]}, n=5000),
    "ring": TaskSpec("ring", "ring", {"center": [0.0, 0.0], "radius": 2.0, "noise": 0.1}),
    "two-moons": TaskSpec("two-moons", "two-moons", {"noise": 0.1, "scale": 1.5, "offset": [-0.75, -0.25]}),
    "checker": TaskSpec("checker", "checker", {"cells": 4, "cell_size": 1.0}),
    "trajectory-1d": TaskSpec("trajectory-1d", "trajectory-1d", {"length": 16, "noise": 0.02}),
}


def get_task(name_or_spec):
    if isinstance(name_or_spec, TaskSpec):
        return name_or_spec
    if isinstance(name_or_spec, dict):
        return TaskSpec.from_dict(name_or_spec)
    try:
        return CANONICAL_TASKS[name_or_spec]
    except KeyError:
        raise ConfigError(f"unknown task {name_or_spec!r}; known: {sorted(CANONICAL_TASKS)}") from None


def write_jsonl(path, X, A):
    with open(path, "w") as fh:
        for x, a in zip(X, A):
            fh.write(json.dumps({"x": [float(v) for v in x], "a": [float(v) for v in a]}) + "\n")


def read_jsonl(path):
    X, A = [], []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                X.append(row["x"])
                A.append(row["a"])
    A = np.asarray(A, dtype=float)
    X = np.asarray(X, dtype=float).reshape(A.shape[0], -1)
    return X, A


def summary(A):
    A = np.asarray(A, dtype=float)
    return {"n": int(A.shape[0]), "dim": int(A.shape[1]), "mean": A.mean(axis=0).tolist(), "std": A.std(axis=0).tolist()}


def gen_data(task, seed, path=None):
    """Sample ``task`` with ``seed``; write JSONL rows ``{x, a}`` if ``path`` is given.

    Returns:
        ``(X, A, stats)``.
    """
    task = get_task(task)
    X, A = task.sample(random_state=seed)
    if path is not None:
        write_jsonl(path, X, A)
    return X, A, summary(A)
