"""Interpolant-based policy diffusion: training losses, forward-SDE sampler, estimator.

Three fields are learned jointly, each an MLP over ``time_embed(t) | a | x``:

* ``b``  - velocity, regressed on ``dI/dt + gamma_dot z``;
* ``s_hat`` - rescaled score, regressed on ``-z``; the score is ``s_hat / gamma``;
* ``v``  - the part of the velocity left after removing the score term,
  regressed on ``dI/dt``, so that ``b = v - gamma_dot gamma s``.

Sampling integrates ``da = (b + eps s) dt + sqrt(2 eps) dW`` from a source
draw at ``t = 0`` to ``t = 1`` with a uniform Euler-Maruyama grid.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, clone

from .exceptions import DivergenceError, NotFittedError, ShapeError
from .interpolant import InterpolantSpec, alpha_beta, dI_dt, epsilon, gamma, gamma_dot
from .numeric import Adam, Mlp, load_checkpoint, save_checkpoint, time_embed
from .sources import GaussianSource, source_from_dict
from .utils import check_actions, check_observations, check_random_state, check_xy

VELOCITY_MODES = ("direct", "decomposed")
NOISE_MODES = ("euler_maruyama", "unscaled")
TIME_GRIDS = ("right", "left", "midpoint")
NET_NAMES = ("b", "s", "v")


@dataclass
class FieldModel:
    b_net: Mlp
    s_hat_net: Mlp
    v_net: Mlp
    spec: InterpolantSpec
    n_obs: int
    n_actions: int
    time_embed_width: int = 8

    @classmethod
    def init(cls, n_actions, n_obs, spec, hidden=(64, 64), activation="gelu", time_embed_width=8, rng=None):
        rng = check_random_state(rng)
        widths = [time_embed_width + n_actions + n_obs, *hidden, n_actions]
        nets = [Mlp.init(widths, activation, rng) for _ in range(3)]
        return cls(*nets, spec, n_obs, n_actions, time_embed_width)

    @property
    def nets(self):
        return {"b": self.b_net, "s": self.s_hat_net, "v": self.v_net}

    def inputs(self, t, A, X):
        A = np.asarray(A, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), (A.shape[0],))
        return np.hstack([time_embed(t, self.time_embed_width), A, X])

    def score(self, t, A, X):
        """``s = s_hat / max(gamma(t), gamma_floor)`` on the clamped time domain."""
        t = self.spec.clamp(t)
        g = np.maximum(gamma(t, self.spec), self.spec.gamma_floor)
        return self.s_hat_net(self.inputs(t, A, X)) / np.reshape(g, (-1, 1) if np.ndim(g) else ())

    def velocity(self, t, A, X, mode="decomposed"):
        """Velocity ``b``: the b-network, or ``v - gamma_dot * s_hat`` when decomposed."""
        t = self.spec.clamp(t)
        feats = self.inputs(t, A, X)
        if mode == "direct":
            return self.b_net(feats)
        gd = np.reshape(gamma_dot(t, self.spec), (-1, 1) if np.ndim(t) else ())
        return self.v_net(feats) - gd * self.s_hat_net(feats)

    def to_sections(self):
        return {
            "b_net": self.b_net,
            "s_hat_net": self.s_hat_net,
            "v_net": self.v_net,
            "spec": self.spec.to_dict(),
            "dims": {"n_obs": self.n_obs, "n_actions": self.n_actions, "time_embed_width": self.time_embed_width},
        }

    @classmethod
    def from_sections(cls, sec):
        return cls(
            Mlp.from_dict(sec["b_net"]),
            Mlp.from_dict(sec["s_hat_net"]),
            Mlp.from_dict(sec["v_net"]),
            InterpolantSpec.from_dict(sec["spec"]),
            sec["dims"]["n_obs"],
            sec["dims"]["n_actions"],
            sec["dims"]["time_embed_width"],
        )


@dataclass
class TrainConfig:
    """Optimization settings; one epoch is one shuffled pass over the data.

    The learning rate is multiplied by ``lr_decay`` every ``lr_decay_every``
    epochs. ``t_bounds=None`` means ``[gamma_floor, 1 - gamma_floor]``.
    """

    batch_size: int = 256
    epochs: int = 300
    lr: float = 2e-3
    lr_decay: float = 0.5
    lr_decay_every: int = 100
    t_bounds: tuple = None
    loss_weights: tuple = (1.0, 1.0, 1.0)
    hidden: tuple = (64, 64)
    activation: str = "gelu"
    time_embed_width: int = 8
    holdout_fraction: float = 0.0
    divergence_threshold: float = 1e6

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if any(w < 0 for w in self.loss_weights):
            raise ValueError("loss weights must be nonnegative")

    def lr_at(self, epoch):
        if not self.lr_decay_every:
            return self.lr
        return self.lr * self.lr_decay ** (epoch // self.lr_decay_every)


@dataclass
class SamplerConfig:
    """Forward-SDE integration settings.

    ``time_grid`` fixes where step ``k`` (0-based) evaluates drift and
    diffusion: ``"right"`` at ``(k + 1) / K`` (the loop runs ``k = 1..K``
    over ``t_k = k / K``), ``"left"`` at ``k / K``, ``"midpoint"`` at
    ``(k + 1/2) / K``. ``noise_mode="unscaled"`` drops the ``sqrt(dt)``
    factor of Euler-Maruyama.
    """

    n_steps: int = 20
    velocity_mode: str = "decomposed"
    noise_mode: str = "euler_maruyama"
    time_grid: str = "right"

    def step_time(self, k):
        K = self.n_steps
        return {"right": (k + 1) / K, "left": k / K, "midpoint": (k + 0.5) / K}[self.time_grid]

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.velocity_mode not in VELOCITY_MODES:
            raise ValueError(f"velocity_mode must be one of {VELOCITY_MODES}")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
        if self.time_grid not in TIME_GRIDS:
            raise ValueError(f"time_grid must be one of {TIME_GRIDS}")


@dataclass
class BatchLoss:
    L_b: float
    L_s: float
    L_v: float
    grads: dict = field(default_factory=dict)

    @property
    def total(self):
        return self.L_b + self.L_s + self.L_v


def loss_batch(model, X, A1, source=None, rng=None, *, a0=None, t=None, z=None,
               weights=(1.0, 1.0, 1.0), t_bounds=None, compute_grads=True):
    """Monte-Carlo estimates of the three regression losses on one batch.

    Missing ``a0``, ``t`` and ``z`` are drawn (``a0`` from ``source``,
    independently per row). Losses are batch means of squared Euclidean
    norms; ``grads[name]`` holds the weighted parameter gradients.
    """
    A1 = check_actions(A1, model.n_actions, name="a1")
    n = A1.shape[0]
    X = check_observations(X, n_samples=n, n_obs=model.n_obs)
    spec = model.spec
    if a0 is None or t is None or z is None:
        rng = check_random_state(rng)
    if a0 is None:
        a0 = source.sample(X, rng)
    if t is None:
        lo, hi = t_bounds or (spec.gamma_floor, 1.0 - spec.gamma_floor)
        t = rng.uniform(lo, hi, size=n)
    if z is None:
        z = rng.standard_normal(A1.shape)
    a0 = check_actions(a0, model.n_actions, name="a0")
    t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
    z = np.asarray(z, dtype=float).reshape(A1.shape)

    alpha, beta, _, _ = alpha_beta(t, spec)
    g = gamma(t, spec)
    a_t = alpha[:, None] * a0 + beta[:, None] * A1 + g[:, None] * z
    di = dI_dt(t, a0, A1, spec)
    gd = gamma_dot(t, spec)

    feats = model.inputs(t, a_t, X)
    targets = {"b": di + gd[:, None] * z, "s": -z, "v": di}
    losses, grads = {}, {}
    for (name, net), w in zip(model.nets.items(), weights):
        if compute_grads:
            out, cache = net.forward(feats, return_cache=True)
        else:
            out = net.forward(feats)
        resid = out - targets[name]
        losses[name] = float(np.mean(np.sum(resid**2, axis=1)))
        if not math.isfinite(losses[name]):
            bad = int(np.argmax(~np.isfinite(np.sum(resid**2, axis=1))))
            raise DivergenceError(
                f"non-finite loss L_{name} at t={t[bad]:.6g}, gamma={g[bad]:.6g}",
                t=float(t[bad]), gamma=float(g[bad]), loss=name,
            )
        if compute_grads:
            grads[name], _ = net.backward(cache, (2.0 * w / n) * resid)
    return BatchLoss(losses["b"], losses["s"], losses["v"], grads)


def train(X, A, source, spec, config, rng, model=None):
    """Jointly fit the b, s_hat and v networks with Adam.

    Returns:
        (model, curves) with per-epoch mean training losses ``loss_b``,
        ``loss_s``, ``loss_v`` and, when ``holdout_fraction > 0``,
        ``val_loss_v`` (index 0 is the untrained model).
    """
    X, A = check_xy(X, A)
    rng = check_random_state(rng)
    if model is None:
        model = FieldModel.init(
            A.shape[1], X.shape[1], spec, config.hidden, config.activation, config.time_embed_width, rng
        )
    n = A.shape[0]
    curves = {"loss_b": [], "loss_s": [], "loss_v": []}
    val = None
    if config.holdout_fraction > 0:
        n_val = max(1, int(round(config.holdout_fraction * n)))
        perm = rng.permutation(n)
        vi, ti = perm[:n_val], perm[n_val:]
        val_rng = np.random.default_rng(rng.integers(2**63))
        Xv, Av = X[vi], A[vi]
        val = dict(
            a0=source.sample(Xv, val_rng),
            t=val_rng.uniform(spec.gamma_floor, 1 - spec.gamma_floor, size=n_val),
            z=val_rng.standard_normal(Av.shape),
        )
        X, A, n = X[ti], A[ti], ti.size
        curves["val_loss_v"] = [loss_batch(model, Xv, Av, compute_grads=False, **val).L_v]
    opts = {
        name: Adam(net.params, config.lr, names=[f"{name}_net[{i}]" for i in range(len(net.params))])
        for name, net in model.nets.items()
    }
    bs = min(config.batch_size, n)
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        perm = rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, bs):
            idx = perm[start : start + bs]
            res = loss_batch(
                model, X[idx], A[idx], source, rng, weights=config.loss_weights, t_bounds=config.t_bounds
            )
            batch = np.array([res.L_b, res.L_s, res.L_v])
            if np.any(batch > config.divergence_threshold):
                raise DivergenceError(
                    f"training diverged at epoch {epoch}: losses {batch.tolist()}",
                    epoch=epoch, losses=batch.tolist(),
                )
            for name in NET_NAMES:
                opts[name].step(res.grads[name], lr)
            sums += batch * idx.size
        for key, value in zip(("loss_b", "loss_s", "loss_v"), sums / n):
            curves[key].append(float(value))
        if val is not None:
            curves["val_loss_v"].append(loss_batch(model, Xv, Av, compute_grads=False, **val).L_v)
    return model, curves


def drift_bF(model, t, A, X, velocity_mode="decomposed"):
    """Forward-SDE drift ``b + eps * s`` at a single time ``t``.

    Direct mode uses the b-network; decomposed mode evaluates
    ``v + (eps / gamma~ - gamma_dot) * s_hat`` with ``gamma~ = max(gamma, floor)``.
    """
    spec = model.spec
    tc = float(spec.clamp(t))
    A = np.asarray(A, dtype=float)
    feats = model.inputs(tc, A, X)
    g = max(float(gamma(tc, spec)), spec.gamma_floor)
    eps = float(epsilon(tc, spec))
    s_hat = model.s_hat_net(feats)
    if velocity_mode == "direct":
        out = model.b_net(feats) + (eps / g) * s_hat
    elif velocity_mode == "decomposed":
        out = model.v_net(feats) + (eps / g - float(gamma_dot(tc, spec))) * s_hat
    else:
        raise ValueError(f"velocity_mode must be one of {VELOCITY_MODES}")
    if not np.all(np.isfinite(out)):
        raise DivergenceError(f"non-finite drift at t={tc:.6g} (gamma~={g:.6g}, eps={eps:.6g})", t=tc, gamma=g, eps=eps)
    return out


def sample(model, X, a0, config=None, rng=None, return_path=False):
    """Integrate the forward SDE from ``a0`` with ``K`` uniform Euler steps of size ``1/K``.

    Step ``k`` evaluates drift and ``eps`` at ``config.step_time(k)``.
    ``euler_maruyama`` noise is ``sqrt(2 eps(t_k) dt) z``; ``unscaled``
    drops the ``sqrt(dt)``. With ``c = 0`` the map is deterministic.
    """
    config = config or SamplerConfig()
    a = check_actions(a0, model.n_actions, name="a0").copy()
    X = check_observations(X, n_samples=a.shape[0], n_obs=model.n_obs)
    rng = check_random_state(rng)
    K = config.n_steps
    dt = 1.0 / K
    path = [a.copy()] if return_path else None
    for k in range(K):
        t = config.step_time(k)
        try:
            b = drift_bF(model, t, a, X, config.velocity_mode)
        except DivergenceError as exc:
            raise DivergenceError(f"step {k}: {exc}", step=k, **exc.diagnostics) from exc
        eps = float(epsilon(t, model.spec))
        scale = math.sqrt(2.0 * eps * dt) if config.noise_mode == "euler_maruyama" else math.sqrt(2.0 * eps)
        a = a + b * dt
        if scale > 0:
            a = a + scale * rng.standard_normal(a.shape)
        if not np.all(np.isfinite(a)):
            raise DivergenceError(f"non-finite state after step {k}", step=k)
        if return_path:
            path.append(a.copy())
    return (a, path) if return_path else a


class BridgerPolicy(BaseEstimator):
    """Policy that diffuses actions from a source policy to the demonstrations.

    Parameters mirror :class:`InterpolantSpec`, :class:`TrainConfig` and
    :class:`SamplerConfig`. ``source`` is any :class:`~bridger.sources.SourcePolicy`;
    an unfitted source is cloned and fitted on the demonstrations, a fitted
    one is used as is. ``fit(X, y)`` takes observations ``X`` (``None`` for
    unconditional tasks) and actions ``y``.
    """

    def __init__(
        self,
        source=None,
        interpolant="power3",
        m=3,
        gamma_scale=0.3,
        epsilon_scale=1.0,
        gamma_floor=1e-2,
        hidden=(64, 64),
        activation="gelu",
        time_embed_width=8,
        epochs=300,
        batch_size=256,
        lr=2e-3,
        lr_decay=0.5,
        lr_decay_every=100,
        loss_weights=(1.0, 1.0, 1.0),
        n_steps=20,
        velocity_mode="decomposed",
        noise_mode="euler_maruyama",
        time_grid="right",
        holdout_fraction=0.0,
        random_state=0,
    ):
        self.source = source
        self.interpolant = interpolant
        self.m = m
        self.gamma_scale = gamma_scale
        self.epsilon_scale = epsilon_scale
        self.gamma_floor = gamma_floor
        self.hidden = hidden
        self.activation = activation
        self.time_embed_width = time_embed_width
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay = lr_decay
        self.lr_decay_every = lr_decay_every
        self.loss_weights = loss_weights
        self.n_steps = n_steps
        self.velocity_mode = velocity_mode
        self.noise_mode = noise_mode
        self.time_grid = time_grid
        self.holdout_fraction = holdout_fraction
        self.random_state = random_state

    def _spec(self):
        return InterpolantSpec(self.interpolant, self.m, self.gamma_scale, self.epsilon_scale, self.gamma_floor)

    def _train_config(self):
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            lr=self.lr,
            lr_decay=self.lr_decay,
            lr_decay_every=self.lr_decay_every,
            loss_weights=tuple(self.loss_weights),
            hidden=tuple(self.hidden),
            activation=self.activation,
            time_embed_width=self.time_embed_width,
            holdout_fraction=self.holdout_fraction,
        )

    def fit(self, X, y):
        X, y = check_xy(X, y)
        src = self.source if self.source is not None else GaussianSource()
        self.source_ = src if hasattr(src, "n_actions_") else clone(src).fit(X, y)
        rng = check_random_state(self.random_state)
        self.model_, self.curves_ = train(X, y, self.source_, self._spec(), self._train_config(), rng)
        self.n_features_in_ = X.shape[1]
        self.n_actions_ = y.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def sample(self, X=None, n=None, *, a0=None, n_steps=None, velocity_mode=None, noise_mode=None,
               random_state=None, return_path=False):
        """Generate one action per observation row (or ``n`` for unconditional tasks)."""
        self._check_fitted()
        rng = check_random_state(self.random_state if random_state is None else random_state)
        if a0 is not None:
            a0 = check_actions(a0, self.n_actions_, name="a0")
            n = a0.shape[0]
        if X is None and n is None:
            raise ShapeError("pass observations X or a sample count n")
        X = check_observations(X, n_samples=n, n_obs=self.n_features_in_)
        if a0 is None:
            a0 = self.source_.sample(X, rng)
        cfg = SamplerConfig(
            n_steps or self.n_steps, velocity_mode or self.velocity_mode, noise_mode or self.noise_mode,
            self.time_grid,
        )
        return sample(self.model_, X, a0, cfg, rng, return_path=return_path)

    def predict(self, X):
        return self.sample(X)

    def save(self, path, config=None):
        self._check_fitted()
        sections = self.model_.to_sections()
        sections["source"] = self.source_.to_dict()
        sections["estimator"] = _estimator_params(self)
        seed = self.random_state if isinstance(self.random_state, int) else None
        return save_checkpoint(path, sections, method="bridger", rng_seed=seed, config=config)

    @classmethod
    def load(cls, path):
        payload = load_checkpoint(path)
        if payload["method"] != "bridger":
            raise ValueError(f"checkpoint holds a {payload['method']!r} model, not bridger")
        sec = payload["sections"]
        est = cls(**sec["estimator"])
        est.model_ = FieldModel.from_sections(sec)
        est.source_ = source_from_dict(sec["source"])
        est.n_features_in_ = est.model_.n_obs
        est.n_actions_ = est.model_.n_actions
        return est


def _estimator_params(est):
    params = est.get_params(deep=False)
    params.pop("source", None)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in params.items()}
