"""Source policies pi_0(a | x): samplers the bridge starts from.

Every source follows a small estimator protocol: ``fit(X, y)`` reads the
demonstrations (most heuristics only need their dimension or centroid) and
``sample(X, random_state)`` returns one action per observation row. No
source ever exposes a density.
"""

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import DivergenceError, NotFittedError, ShapeError
from .numeric import Adam, Mlp
from .utils import check_actions, check_observations, check_random_state, check_xy


class SourcePolicy(BaseEstimator):
    """Base class; subclasses implement ``_sample(X, rng)``."""

    def fit(self, X, y):
        X, y = check_xy(X, y)
        self.n_actions_ = y.shape[1]
        self.n_obs_ = X.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "n_actions_"):
            raise NotFittedError("source policy not trained")

    def sample(self, X=None, random_state=None, n=None):
        """Draw one action per row of ``X`` (or ``n`` actions if ``X`` is None)."""
        self._check_fitted()
        if X is None and n is None:
            raise ShapeError("pass observations X or a sample count n")
        X = check_observations(X, n_samples=n, n_obs=None)
        rng = check_random_state(random_state)
        out = self._sample(X, rng)
        if not np.all(np.isfinite(out)):
            raise DivergenceError(f"{type(self).__name__} produced non-finite actions")
        return out

    def to_dict(self):
        self._check_fitted()
        d = {"kind": type(self).__name__, "params": _jsonable(self.get_params(deep=False))}
        d["fitted"] = {"n_actions_": self.n_actions_, "n_obs_": self.n_obs_}
        d["fitted"].update(self._fitted_state())
        return d

    def _fitted_state(self):
        return {}

    def _load_fitted_state(self, state):
        pass


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.random.Generator):
        return None
    return v


def sample_source(policy, x, rng, n):
    """Draw ``n`` i.i.d. actions from ``policy`` at a single observation ``x``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if x is None or np.size(x) == 0:
        X = np.zeros((n, getattr(policy, "n_obs_", 0)))
    else:
        X = np.repeat(np.atleast_2d(np.asarray(x, dtype=float)), n, axis=0)
    return policy.sample(X, rng)


def source_from_dict(d):
    cls = SOURCE_KINDS[d["kind"]]
    src = cls(**{k: v for k, v in d["params"].items() if k != "random_state"})
    fitted = dict(d["fitted"])
    src.n_actions_ = fitted.pop("n_actions_")
    src.n_obs_ = fitted.pop("n_obs_")
    src._load_fitted_state(fitted)
    return src


class GaussianSource(SourcePolicy):
    """Isotropic Gaussian ``N(mean, scale^2 I)``; the standard choice is ``N(0, I)``."""

    def __init__(self, mean=0.0, scale=1.0):
        self.mean = mean
        self.scale = scale

    def _sample(self, X, rng):
        z = rng.standard_normal((X.shape[0], self.n_actions_))
        return np.asarray(self.mean, dtype=float) + self.scale * z


class MixtureSource(SourcePolicy):
    """Gaussian mixture with explicit weights, means and covariances."""

    def __init__(self, weights=(1.0,), means=((0.0, 0.0),), covariances=None):
        self.weights = weights
        self.means = means
        self.covariances = covariances

    def _components(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
            raise ValueError(f"mixture weights must be nonnegative and sum to 1, got {w}")
        if mu.shape[0] != w.size:
            raise ShapeError("one mean per mixture component is required")
        dim = mu.shape[1]
        if self.covariances is None:
            cov = np.repeat(np.eye(dim)[None], w.size, axis=0)
        else:
            cov = np.asarray(self.covariances, dtype=float).reshape(w.size, dim, dim)
        chol = np.linalg.cholesky(cov)  # raises LinAlgError if not PD
        return w, mu, chol

    def fit(self, X, y):
        super().fit(X, y)
        _, mu, _ = self._components()
        if mu.shape[1] != self.n_actions_:
            raise ShapeError(f"mixture means have dim {mu.shape[1]}, data has {self.n_actions_}")
        return self

    def _sample(self, X, rng):
        w, mu, chol = self._components()
        n = X.shape[0]
        comp = rng.choice(w.size, size=n, p=w)
        z = rng.standard_normal((n, mu.shape[1]))
        return mu[comp] + np.einsum("nij,nj->ni", chol[comp], z)


class RingSource(SourcePolicy):
    """Noisy ring (sphere in higher dimensions) around a center point.

    Heuristic source in the style of sampling poses on a sphere around an
    object. If ``center`` is None the demonstrations' centroid is used. In
    2D the angle is uniform on ``[angle - spread/2, angle + spread/2]``; in
    other dimensions directions are uniform on the sphere.
    """

    def __init__(self, center=None, radius=2.0, angle=0.0, angular_spread=2 * math.pi, radial_noise=0.05):
        self.center = center
        self.radius = radius
        self.angle = angle
        self.angular_spread = angular_spread
        self.radial_noise = radial_noise

    def fit(self, X, y):
        super().fit(X, y)
        if not self.radius > 0:
            raise ValueError("ring radius must be positive")
        y = check_actions(y)
        self.center_ = np.mean(y, axis=0) if self.center is None else np.asarray(self.center, dtype=float)
        return self

    def _fitted_state(self):
        return {"center_": self.center_.tolist()}

    def _load_fitted_state(self, state):
        self.center_ = np.asarray(state["center_"], dtype=float)

    def _sample(self, X, rng):
        n, dim = X.shape[0], self.n_actions_
        if dim == 2:
            theta = self.angle + self.angular_spread * (rng.random(n) - 0.5)
            u = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        else:
            u = rng.standard_normal((n, dim))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = self.radius + self.radial_noise * rng.standard_normal(n)
        return self.center_ + r[:, None] * u


# ---------------------------------------------------------------------------
# Conditional VAE


@dataclass
class CvaeConfig:
    latent_dim: int = 2
    hidden: tuple = (64, 64)
    kl_weight: float = 1.0
    recon_weight: float = 1.0
    decoder_std: float = 0.1
    epochs: int = 2000
    batch_size: int = 256
    lr: float = 1e-3
    activation: str = "tanh"


@dataclass
class CvaeModel:
    """Encoder ``q(z | a, x) -> (mu, log var)`` and decoder ``p(a | z, x)`` (mean)."""

    encoder: Mlp
    decoder: Mlp
    latent_dim: int
    n_obs: int
    n_actions: int


def cvae_init(n_actions, n_obs, config, rng):
    enc = Mlp.init([n_actions + n_obs, *config.hidden, 2 * config.latent_dim], config.activation, rng)
    dec = Mlp.init([config.latent_dim + n_obs, *config.hidden, n_actions], config.activation, rng)
    return CvaeModel(enc, dec, config.latent_dim, n_obs, n_actions)


def cvae_loss(model, X, A, xi, config, compute_grads=True):
    """Negative ELBO per sample (mean over the batch) with reparameterized noise ``xi``.

    loss = recon_weight * |a - dec|^2 / (2 decoder_std^2) + kl_weight * KL(q || N(0, I))
    """
    n, L = A.shape[0], model.latent_dim
    h, enc_cache = model.encoder.forward(np.hstack([A, X]), return_cache=True)
    mu, logvar = h[:, :L], h[:, L:]
    std = np.exp(0.5 * logvar)
    z = mu + std * xi
    dec, dec_cache = model.decoder.forward(np.hstack([z, X]), return_cache=True)
    var_dec = config.decoder_std**2
    resid = A - dec
    recon = np.sum(resid**2, axis=1) / (2 * var_dec)
    kl = 0.5 * np.sum(np.exp(logvar) + mu**2 - 1.0 - logvar, axis=1)
    loss = float(np.mean(config.recon_weight * recon + config.kl_weight * kl))
    if not compute_grads:
        return loss, None
    g_dec = -config.recon_weight * resid / var_dec / n
    dec_grads, g_in = model.decoder.backward(dec_cache, g_dec)
    g_z = g_in[:, :L]
    g_mu = g_z + config.kl_weight * mu / n
    g_logvar = g_z * xi * 0.5 * std + config.kl_weight * 0.5 * (np.exp(logvar) - 1.0) / n
    enc_grads, _ = model.encoder.backward(enc_cache, np.hstack([g_mu, g_logvar]))
    return loss, (enc_grads, dec_grads)


def train_cvae(X, A, config, rng):
    """Fit a CVAE by minimizing the negative ELBO with Adam.

    Returns:
        (model, per-epoch mean losses)
    """
    X, A = check_xy(X, A)
    rng = check_random_state(rng)
    model = cvae_init(A.shape[1], X.shape[1], config, rng)
    opt_e = Adam(model.encoder.params, config.lr, names=[f"encoder[{i}]" for i in range(len(model.encoder.params))])
    opt_d = Adam(model.decoder.params, config.lr, names=[f"decoder[{i}]" for i in range(len(model.decoder.params))])
    n = A.shape[0]
    bs = min(config.batch_size, n)
    history = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = perm[start : start + bs]
            xi = rng.standard_normal((idx.size, model.latent_dim))
            loss, (ge, gd) = cvae_loss(model, X[idx], A[idx], xi, config)
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"CVAE loss became non-finite at epoch {epoch}; last finite epoch {epoch - 1}",
                    epoch=epoch,
                    last_finite_epoch=epoch - 1,
                )
            opt_e.step(ge)
            opt_d.step(gd)
            total += loss * idx.size
        history.append(total / n)
    return model, history


def sample_cvae(model, X, rng, n=None):
    """Decode ``z ~ N(0, I)`` (one per observation row) to actions."""
    rng = check_random_state(rng)
    X = check_observations(X, n_samples=n, n_obs=model.n_obs)
    z = rng.standard_normal((X.shape[0], model.latent_dim))
    return model.decoder.forward(np.hstack([z, X]))


class CvaeSource(SourcePolicy):
    """Data-driven source: a lightweight conditional VAE fitted to the demonstrations."""

    def __init__(
        self,
        latent_dim=2,
        hidden=(64, 64),
        kl_weight=1.0,
        recon_weight=1.0,
        decoder_std=0.1,
        epochs=2000,
        batch_size=256,
        lr=1e-3,
        activation="tanh",
        random_state=0,
    ):
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.kl_weight = kl_weight
        self.recon_weight = recon_weight
        self.decoder_std = decoder_std
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.activation = activation
        self.random_state = random_state

    def _config(self):
        return CvaeConfig(
            latent_dim=self.latent_dim,
            hidden=tuple(self.hidden),
            kl_weight=self.kl_weight,
            recon_weight=self.recon_weight,
            decoder_std=self.decoder_std,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            activation=self.activation,
        )

    def fit(self, X, y):
        X, y = check_xy(X, y)
        self.model_, self.loss_curve_ = train_cvae(X, y, self._config(), check_random_state(self.random_state))
        self.n_actions_ = y.shape[1]
        self.n_obs_ = X.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("source policy not trained")

    def _sample(self, X, rng):
        return sample_cvae(self.model_, X, rng)

    def _fitted_state(self):
        return {"encoder": self.model_.encoder.to_dict(), "decoder": self.model_.decoder.to_dict()}

    def _load_fitted_state(self, state):
        enc, dec = Mlp.from_dict(state["encoder"]), Mlp.from_dict(state["decoder"])
        self.model_ = CvaeModel(enc, dec, self.latent_dim, self.n_obs_, self.n_actions_)


SOURCE_KINDS = {
    cls.__name__: cls for cls in (GaussianSource, MixtureSource, RingSource, CvaeSource)
}

SOURCE_ALIASES = {"gaussian": GaussianSource, "mixture": MixtureSource, "ring": RingSource, "cvae": CvaeSource}


def make_source(kind, **params):
    """Unfitted source from a short kind name (``gaussian``, ``mixture``, ``ring``, ``cvae``)."""
    cls = SOURCE_ALIASES.get(kind) or SOURCE_KINDS.get(kind)
    if cls is None:
        raise ValueError(f"unknown source kind {kind!r}; expected one of {sorted(SOURCE_ALIASES)}")
    try:
        return cls(**params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {kind} source: {exc}") from None
