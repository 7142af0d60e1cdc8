"""Sample-set metrics: exact EMD, trajectory roughness, empirical Lipschitz constants, moments."""

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .exceptions import ShapeError
from .numeric import ACTIVATION_LIPSCHITZ
from .utils import check_random_state

EMD_MAX_POINTS = 512


def _as_set(A, name):
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2 or A.shape[0] < 1:
        raise ShapeError(f"{name} must be a nonempty (n, dim) array")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite values")
    return A


def emd(A, B, *, max_points=EMD_MAX_POINTS, random_state=0, return_n=False):
    """Earth Mover's Distance between equal-size sample sets.

    Exact optimal assignment under the Euclidean ground metric, divided by
    ``n``. Sets larger than ``max_points`` are both subsampled (without
    replacement, seeded) to ``max_points`` first.

    Returns:
        The distance, or ``(distance, n_used)`` if ``return_n``.
    """
    A, B = _as_set(A, "A"), _as_set(B, "B")
    if A.shape != B.shape:
        raise ShapeError(
            f"EMD needs equal-size sets of equal dimension, got {A.shape} and {B.shape}; "
            "subsample upstream to a common size"
        )
    n = A.shape[0]
    if max_points is not None and n > max_points:
        rng = check_random_state(random_state)
        A = A[rng.choice(n, max_points, replace=False)]
        B = B[rng.choice(n, max_points, replace=False)]
        n = max_points
    cost = cdist(A, B)
    rows, cols = linear_sum_assignment(cost)
    value = float(cost[rows, cols].sum() / n)
    return (value, n) if return_n else value


def greedy_matching_cost(A, B):
    """Cost of repeatedly matching the globally closest remaining pair (upper bound on EMD)."""
    A, B = _as_set(A, "A"), _as_set(B, "B")
    cost = cdist(A, B)
    n = A.shape[0]
    order = np.dstack(np.unravel_index(np.argsort(cost, axis=None), cost.shape))[0]
    used_a, used_b = np.zeros(n, bool), np.zeros(n, bool)
    total, matched = 0.0, 0
    for i, j in order:
        if not used_a[i] and not used_b[j]:
            used_a[i] = used_b[j] = True
            total += cost[i, j]
            matched += 1
            if matched == n:
                break
    return total / n


def roughness(traj):
    """Mean norm of the unit-spacing second difference ``a[i+1] - 2 a[i] + a[i-1]``.

    ``traj`` is ``(T,)`` or ``(T, dim)``; values are comparable only across
    trajectories of equal length.
    """
    traj = np.asarray(traj, dtype=float)
    if traj.ndim == 1:
        traj = traj[:, None]
    if traj.shape[0] < 3:
        raise ValueError(f"roughness needs at least 3 points, got {traj.shape[0]}")
    second = traj[2:] - 2.0 * traj[1:-1] + traj[:-2]
    return float(np.mean(np.linalg.norm(second, axis=1)))


def lipschitz_estimate(field, probes, t=0.5, radius=0.05, rng=None, *, n_perturb=8, X=None, max_anchors=256):
    """Largest observed ``|f(a + delta) - f(a)| / |delta|`` over random local pairs.

    ``field(t, A, X)`` must accept a batch. Each anchor gets ``n_perturb``
    perturbations with uniform direction and norm in ``(radius/2, radius]``;
    drawing anchor by anchor keeps the estimate monotone when more anchors
    are added under the same seed.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    probes = _as_set(probes, "probes")[:max_anchors]
    n, dim = probes.shape
    rng = check_random_state(rng)
    X = np.zeros((n, 0)) if X is None else np.asarray(X, dtype=float)[:n]
    deltas = np.empty((n, n_perturb, dim))
    for i in range(n):
        u = rng.standard_normal((n_perturb, dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        deltas[i] = u * (radius * (0.5 + 0.5 * rng.random((n_perturb, 1))))
    base = np.asarray(field(t, probes, X))
    Xr = np.repeat(X, n_perturb, axis=0)
    moved = np.asarray(field(t, (probes[:, None, :] + deltas).reshape(-1, dim), Xr)).reshape(n, n_perturb, -1)
    num = np.linalg.norm(moved - base[:, None, :], axis=2)
    den = np.linalg.norm(deltas, axis=2)
    return float(np.max(num / den))


def spectral_norm(W, n_iter=500, seed=0):
    """Largest singular value by power iteration on ``W^T W``."""
    W = np.asarray(W, dtype=float)
    v = np.random.default_rng(seed).standard_normal(W.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(n_iter):
        w = W.T @ (W @ v)
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        v = w / norm
        sigma = float(np.sqrt(norm))
    return sigma


def mlp_lipschitz_bound(net, input_slice=None):
    """Product of layer spectral norms times activation slopes.

    ``input_slice`` restricts the first layer to the inputs that vary (for
    example only the action columns of a field network).
    """
    lip = ACTIVATION_LIPSCHITZ[net.activation]
    weights = net.params[0::2]
    first = weights[0] if input_slice is None else weights[0][input_slice]
    bound = np.linalg.norm(first, 2)
    for W in weights[1:]:
        bound *= lip * np.linalg.norm(W, 2)
    return float(bound)


def moments(A):
    """Sample mean and unbiased covariance (``n - 1`` divisor)."""
    A = _as_set(A, "A")
    if A.shape[0] < 2:
        raise ValueError("covariance needs at least 2 samples")
    return A.mean(axis=0), np.cov(A, rowvar=False, ddof=1).reshape(A.shape[1], A.shape[1])
