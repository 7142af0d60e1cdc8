"""Comparison policies: DDPM-trained noise predictor sampled with DDIM, and a residual regressor.

Both reuse the same MLP and sinusoidal time features as the bridge policy
so that parameter counts can be matched.
"""

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, clone

from .exceptions import DivergenceError, NotFittedError, ShapeError
from .numeric import Adam, Mlp, load_checkpoint, save_checkpoint, time_embed
from .sources import GaussianSource, source_from_dict
from .utils import check_actions, check_observations, check_random_state, check_xy


# ---------------------------------------------------------------------------
# DDPM / DDIM


def linear_beta_schedule(n_train_steps, beta_start=None, beta_end=None):
    """Noise schedule ``beta_k`` for ``n_train_steps`` training steps.

    With explicit endpoints the schedule is linear between them. By default
    it discretizes a linear continuous rate ``0.1 + 19.9 s`` on ``s in
    [0, 1]``: ``beta_k = 1 - exp(-rate(s_k) / T)``. For ``T = 1000`` this
    reproduces the classic endpoints (1e-4, 0.02) to three digits, and for
    any ``T`` the final cumulative product stays near ``exp(-10)``.
    """
    T = int(n_train_steps)
    if T < 1:
        raise ValueError("n_train_steps must be >= 1")
    if beta_start is None and beta_end is None:
        s = np.linspace(0.0, 1.0, T)
        betas = -np.expm1(-(0.1 + 19.9 * s) / T)
    else:
        betas = np.linspace(1e-4 if beta_start is None else beta_start, 0.02 if beta_end is None else beta_end, T)
    if np.any(betas <= 0) or np.any(betas >= 1):
        raise ValueError("betas must lie in (0, 1)")
    return betas


@dataclass
class DdpmModel:
    """Noise predictor ``g(a_k | time_embed(k) | x)`` and its schedule (0-based steps)."""

    g_net: Mlp
    alphas: np.ndarray
    alpha_bars: np.ndarray
    n_obs: int
    n_actions: int
    time_embed_width: int = 8

    @property
    def n_train_steps(self):
        return self.alphas.size

    def step_time(self, k):
        return (np.asarray(k, dtype=float) + 1.0) / self.n_train_steps

    def inputs(self, A, k, X):
        k = np.broadcast_to(np.asarray(k), (A.shape[0],))
        return np.hstack([A, time_embed(self.step_time(k), self.time_embed_width), X])

    def predict_noise(self, A, k, X):
        return self.g_net(self.inputs(A, k, X))


def ddpm_init(n_actions, n_obs, n_train_steps=100, hidden=(64, 64), activation="gelu",
              time_embed_width=8, rng=None, betas=None):
    betas = linear_beta_schedule(n_train_steps) if betas is None else np.asarray(betas, dtype=float)
    alphas = 1.0 - betas
    net = Mlp.init([n_actions + time_embed_width + n_obs, *hidden, n_actions], activation, check_random_state(rng))
    return DdpmModel(net, alphas, np.cumprod(alphas), n_obs, n_actions, time_embed_width)


def ddpm_loss_batch(model, X, A1, rng=None, *, k=None, z=None, compute_grads=True):
    """Noise-prediction loss ``mean |z - g(sqrt(abar_k) a1 + sqrt(1 - abar_k) z, k)|^2``."""
    A1 = check_actions(A1, model.n_actions, name="a1")
    n = A1.shape[0]
    X = check_observations(X, n_samples=n, n_obs=model.n_obs)
    if k is None or z is None:
        rng = check_random_state(rng)
    if k is None:
        k = rng.integers(0, model.n_train_steps, size=n)
    if z is None:
        z = rng.standard_normal(A1.shape)
    k = np.broadcast_to(np.asarray(k), (n,))
    ab = model.alpha_bars[k][:, None]
    noisy = np.sqrt(ab) * A1 + np.sqrt(1.0 - ab) * z
    feats = model.inputs(noisy, k, X)
    if not compute_grads:
        resid = model.g_net(feats) - z
        return float(np.mean(np.sum(resid**2, axis=1))), None
    out, cache = model.g_net.forward(feats, return_cache=True)
    resid = out - z
    grads, _ = model.g_net.backward(cache, 2.0 * resid / n)
    return float(np.mean(np.sum(resid**2, axis=1))), grads


def _lr_at(lr, decay, every, epoch):
    return lr * decay ** (epoch // every) if every else lr


def ddpm_train(X, A, rng, *, n_train_steps=100, hidden=(64, 64), activation="gelu", time_embed_width=8,
               epochs=300, batch_size=256, lr=2e-3, lr_decay=0.5, lr_decay_every=100, divergence_threshold=1e6,
               betas=None):
    """Fit a noise predictor with uniformly sampled diffusion steps.

    Returns:
        (model, per-epoch mean losses)
    """
    X, A = check_xy(X, A)
    rng = check_random_state(rng)
    model = ddpm_init(A.shape[1], X.shape[1], n_train_steps, hidden, activation, time_embed_width, rng, betas)
    opt = Adam(model.g_net.params, lr, names=[f"g_net[{i}]" for i in range(len(model.g_net.params))])
    n = A.shape[0]
    bs = min(batch_size, n)
    history = []
    for epoch in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = perm[start : start + bs]
            loss, grads = ddpm_loss_batch(model, X[idx], A[idx], rng)
            if not math.isfinite(loss) or loss > divergence_threshold:
                raise DivergenceError(f"DDPM training diverged at epoch {epoch} (loss {loss})", epoch=epoch)
            opt.step(grads, _lr_at(lr, lr_decay, lr_decay_every, epoch))
            total += loss * idx.size
        history.append(total / n)
    return model, history


def ddim_timesteps(n_train_steps, n_infer_steps):
    """Uniform subsequence of ``n_infer_steps`` training steps ending at the last one."""
    if n_infer_steps < 1:
        raise ValueError("empty DDIM subsequence: n_infer_steps must be >= 1")
    if n_infer_steps > n_train_steps:
        raise ValueError(f"n_infer_steps={n_infer_steps} exceeds n_train_steps={n_train_steps}")
    steps = np.round(np.linspace(0, n_train_steps - 1, n_infer_steps + 1)[1:]).astype(int)
    if n_infer_steps == n_train_steps:
        steps = np.arange(n_train_steps)
    return steps


def ddim_sample(model, X, n_infer_steps, rng=None, *, a_init=None, n=None, return_path=False):
    """Deterministic (eta = 0) DDIM sampling from ``a_init ~ N(0, I)``.

    Each step maps ``a_k`` to
    ``sqrt(abar_prev) * a0_hat + sqrt(1 - abar_prev) * g`` with
    ``a0_hat = (a_k - sqrt(1 - abar_k) g) / sqrt(abar_k)``; the last step
    lands on ``abar_prev = 1``.
    """
    steps = ddim_timesteps(model.n_train_steps, n_infer_steps)
    if a_init is None:
        rng = check_random_state(rng)
        if n is None:
            n = 1 if X is None else np.atleast_2d(X).shape[0]
        a_init = rng.standard_normal((n, model.n_actions))
    a = check_actions(a_init, model.n_actions, name="a_init").copy()
    X = check_observations(X, n_samples=a.shape[0], n_obs=model.n_obs)
    path = [a.copy()] if return_path else None
    for i in reversed(range(steps.size)):
        k = steps[i]
        ab = model.alpha_bars[k]
        ab_prev = model.alpha_bars[steps[i - 1]] if i > 0 else 1.0
        eps = model.predict_noise(a, k, X)
        a0_hat = (a - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)
        a = math.sqrt(ab_prev) * a0_hat + math.sqrt(1.0 - ab_prev) * eps
        if not np.all(np.isfinite(a)):
            raise DivergenceError(f"non-finite DDIM state at training step {k}", step=int(k))
        if return_path:
            path.append(a.copy())
    return (a, path) if return_path else a


class _Policy(BaseEstimator):
    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def predict(self, X):
        return self.sample(X)


class DdimPolicy(_Policy):
    """Diffusion policy trained as a DDPM and sampled with deterministic DDIM."""

    def __init__(self, n_train_steps=100, n_steps=20, hidden=(64, 64), activation="gelu", time_embed_width=8,
                 epochs=300, batch_size=256, lr=2e-3, lr_decay=0.5, lr_decay_every=100, beta_start=None,
                 beta_end=None, random_state=0):
        self.n_train_steps = n_train_steps
        self.n_steps = n_steps
        self.hidden = hidden
        self.activation = activation
        self.time_embed_width = time_embed_width
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay = lr_decay
        self.lr_decay_every = lr_decay_every
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_xy(X, y)
        betas = None
        if self.beta_start is not None or self.beta_end is not None:
            betas = linear_beta_schedule(self.n_train_steps, self.beta_start, self.beta_end)
        self.model_, self.loss_curve_ = ddpm_train(
            X, y, check_random_state(self.random_state),
            n_train_steps=self.n_train_steps, hidden=tuple(self.hidden), activation=self.activation,
            time_embed_width=self.time_embed_width, epochs=self.epochs, batch_size=self.batch_size,
            lr=self.lr, lr_decay=self.lr_decay, lr_decay_every=self.lr_decay_every, betas=betas,
        )
        self.n_features_in_ = X.shape[1]
        self.n_actions_ = y.shape[1]
        return self

    def sample(self, X=None, n=None, *, a_init=None, n_steps=None, random_state=None, return_path=False):
        self._check_fitted()
        rng = check_random_state(self.random_state if random_state is None else random_state)
        if a_init is not None:
            n = np.atleast_2d(a_init).shape[0]
        if X is None and n is None:
            raise ShapeError("pass observations X or a sample count n")
        X = check_observations(X, n_samples=n, n_obs=self.n_features_in_)
        if a_init is None:
            a_init = rng.standard_normal((X.shape[0], self.n_actions_))
        return ddim_sample(self.model_, X, n_steps or self.n_steps, a_init=a_init, return_path=return_path)

    def save(self, path, config=None):
        self._check_fitted()
        m = self.model_
        sections = {
            "g_net": m.g_net,
            "schedule": {"alphas": m.alphas.tolist()},
            "dims": {"n_obs": m.n_obs, "n_actions": m.n_actions, "time_embed_width": m.time_embed_width},
            "estimator": _params(self),
        }
        seed = self.random_state if isinstance(self.random_state, int) else None
        return save_checkpoint(path, sections, method="ddpm", rng_seed=seed, config=config)

    @classmethod
    def load(cls, path):
        sec = _load_sections(path, "ddpm")
        est = cls(**sec["estimator"])
        alphas = np.asarray(sec["schedule"]["alphas"], dtype=float)
        dims = sec["dims"]
        est.model_ = DdpmModel(Mlp.from_dict(sec["g_net"]), alphas, np.cumprod(alphas),
                               dims["n_obs"], dims["n_actions"], dims["time_embed_width"])
        est.n_features_in_, est.n_actions_ = dims["n_obs"], dims["n_actions"]
        return est


# ---------------------------------------------------------------------------
# Residual policy


@dataclass
class ResidualModel:
    """``r(a0 | x)`` predicting ``a1 - a0`` for a fresh source draw ``a0``."""

    r_net: Mlp
    source: object
    n_obs: int
    n_actions: int


def residual_loss_batch(model, X, A1, rng=None, *, a0=None, compute_grads=True):
    """MSE between ``r(a0, x)`` and ``a1 - a0`` over independently paired draws."""
    A1 = check_actions(A1, model.n_actions, name="a1")
    n = A1.shape[0]
    X = check_observations(X, n_samples=n, n_obs=model.n_obs)
    if a0 is None:
        a0 = model.source.sample(X, check_random_state(rng))
    a0 = check_actions(a0, model.n_actions, name="a0")
    feats = np.hstack([a0, X])
    out, cache = model.r_net.forward(feats, return_cache=True)
    resid = out - (A1 - a0)
    loss = float(np.mean(np.sum(resid**2, axis=1)))
    if not compute_grads:
        return loss, None
    grads, _ = model.r_net.backward(cache, 2.0 * resid / n)
    return loss, grads


def residual_train(X, A, source, rng, *, hidden=(64, 64), activation="gelu", epochs=300, batch_size=256,
                   lr=2e-3, lr_decay=0.5, lr_decay_every=100, divergence_threshold=1e6):
    X, A = check_xy(X, A)
    rng = check_random_state(rng)
    net = Mlp.init([A.shape[1] + X.shape[1], *hidden, A.shape[1]], activation, rng)
    model = ResidualModel(net, source, X.shape[1], A.shape[1])
    opt = Adam(net.params, lr, names=[f"r_net[{i}]" for i in range(len(net.params))])
    n = A.shape[0]
    bs = min(batch_size, n)
    history = []
    for epoch in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = perm[start : start + bs]
            loss, grads = residual_loss_batch(model, X[idx], A[idx], rng)
            if not math.isfinite(loss) or loss > divergence_threshold:
                raise DivergenceError(f"residual training diverged at epoch {epoch} (loss {loss})", epoch=epoch)
            opt.step(grads, _lr_at(lr, lr_decay, lr_decay_every, epoch))
            total += loss * idx.size
        history.append(total / n)
    return model, history


def residual_sample(model, X, rng=None, *, a0=None):
    """``a0 + r(a0, x)`` with ``a0`` drawn from the source unless given."""
    if a0 is None:
        a0 = model.source.sample(X, check_random_state(rng))
    a0 = check_actions(a0, model.n_actions, name="a0")
    X = check_observations(X, n_samples=a0.shape[0], n_obs=model.n_obs)
    return a0 + model.r_net(np.hstack([a0, X]))


class ResidualPolicy(_Policy):
    """Source sample plus a regressed correction; unimodal by construction."""

    def __init__(self, source=None, hidden=(64, 64), activation="gelu", epochs=300, batch_size=256, lr=2e-3,
                 lr_decay=0.5, lr_decay_every=100, random_state=0):
        self.source = source
        self.hidden = hidden
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay = lr_decay
        self.lr_decay_every = lr_decay_every
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_xy(X, y)
        src = self.source if self.source is not None else GaussianSource()
        self.source_ = src if hasattr(src, "n_actions_") else clone(src).fit(X, y)
        self.model_, self.loss_curve_ = residual_train(
            X, y, self.source_, check_random_state(self.random_state),
            hidden=tuple(self.hidden), activation=self.activation, epochs=self.epochs,
            batch_size=self.batch_size, lr=self.lr, lr_decay=self.lr_decay, lr_decay_every=self.lr_decay_every,
        )
        self.n_features_in_ = X.shape[1]
        self.n_actions_ = y.shape[1]
        return self

    def sample(self, X=None, n=None, *, a0=None, random_state=None, **_):
        self._check_fitted()
        rng = check_random_state(self.random_state if random_state is None else random_state)
        if a0 is not None:
            n = np.atleast_2d(a0).shape[0]
        if X is None and n is None:
            raise ShapeError("pass observations X or a sample count n")
        X = check_observations(X, n_samples=n, n_obs=self.n_features_in_)
        return residual_sample(self.model_, X, rng, a0=a0)

    def save(self, path, config=None):
        self._check_fitted()
        sections = {
            "r_net": self.model_.r_net,
            "source": self.source_.to_dict(),
            "dims": {"n_obs": self.model_.n_obs, "n_actions": self.model_.n_actions},
            "estimator": _params(self),
        }
        seed = self.random_state if isinstance(self.random_state, int) else None
        return save_checkpoint(path, sections, method="residual", rng_seed=seed, config=config)

    @classmethod
    def load(cls, path):
        sec = _load_sections(path, "residual")
        est = cls(**sec["estimator"])
        est.source_ = source_from_dict(sec["source"])
        dims = sec["dims"]
        est.model_ = ResidualModel(Mlp.from_dict(sec["r_net"]), est.source_, dims["n_obs"], dims["n_actions"])
        est.n_features_in_, est.n_actions_ = dims["n_obs"], dims["n_actions"]
        return est


def _params(est):
    params = est.get_params(deep=False)
    params.pop("source", None)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in params.items()}


def _load_sections(path, method):
    payload = load_checkpoint(path)
    if payload["method"] != method:
        raise ValueError(f"checkpoint holds a {payload['method']!r} model, not {method}")
    return payload["sections"]
