"""Spatially linear stochastic interpolants and their noise schedules.

A path between a source action ``a0`` and a target action ``a1`` is

    a_t = alpha(t) a0 + beta(t) a1 + gamma(t) z,   z ~ N(0, I)

with ``gamma(t) = d sqrt(2 t (1 - t))`` and sampling diffusion coefficient
``epsilon(t) = c (1 - t)``. All functions accept scalar ``t`` or a 1D array
of per-row times.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ShapeError

KINDS = ("linear", "power3")


@dataclass(frozen=True)
class InterpolantSpec:
    """Interpolant family and schedule scales.

    Attributes:
        kind: ``"linear"`` or ``"power3"``.
        m: Exponent of the power interpolant.
        d: Scale of the latent noise ``gamma``.
        c: Scale of the sampling diffusion ``epsilon``.
        gamma_floor: Guard for the ``1/gamma`` and ``gamma_dot`` singularities
            at the endpoints; times are clamped to ``[floor, 1 - floor]``.
    """

    kind: str = "power3"
    m: int = 3
    d: float = 0.3
    c: float = 1.0
    gamma_floor: float = 1e-2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"interpolant kind must be one of {KINDS}, got {self.kind!r}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m}")
        if not self.d > 0:
            raise ValueError(f"gamma scale d must be positive, got {self.d}")
        if not self.c >= 0:
            raise ValueError(f"epsilon scale c must be nonnegative, got {self.c}")
        if not 0 < self.gamma_floor <= 1e-2:
            raise ValueError(f"gamma_floor must lie in (0, 1e-2], got {self.gamma_floor}")

    @property
    def label(self):
        name = "linear" if self.kind == "linear" else f"power{self.m}"
        return f"{name}-d{self.d:g}-c{self.c:g}"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=str(d.get("kind", "power3")).lower(),
            m=int(d.get("m", 3)),
            d=float(d.get("d", 0.3)),
            c=float(d.get("c", 1.0)),
            gamma_floor=float(d.get("gamma_floor", 1e-2)),
        )

    def clamp(self, t):
        return np.clip(t, self.gamma_floor, 1.0 - self.gamma_floor)


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0) or np.any(t > 1.0) or not np.all(np.isfinite(t)):
        raise ValueError("time must lie in [0, 1]")
    return t


def alpha_beta(t, spec):
    """Return ``(alpha, beta, alpha_dot, beta_dot)`` at ``t``."""
    t = _check_time(t)
    if spec.kind == "linear":
        one = np.ones_like(t)
        return 1.0 - t, t * 1.0, -one, one
    s = 1.0 - t
    alpha = s**spec.m
    rate = spec.m * s ** (spec.m - 1)
    return alpha, 1.0 - alpha, -rate, rate


def gamma(t, spec):
    t = _check_time(t)
    return spec.d * np.sqrt(2.0 * t * (1.0 - t))


def gamma_dot(t, spec):
    """Derivative of ``gamma``, evaluated on the clamped time domain."""
    t = spec.clamp(_check_time(t))
    return spec.d * (1.0 - 2.0 * t) / np.sqrt(2.0 * t * (1.0 - t))


def epsilon(t, spec):
    t = _check_time(t)
    return spec.c * (1.0 - t)


@dataclass
class PathSample:
    t: object
    a0: np.ndarray
    a1: np.ndarray
    z: np.ndarray
    a_t: np.ndarray
    x: object = None


def _coef(c, like):
    c = np.asarray(c, dtype=float)
    return c[..., None] if c.ndim and like.ndim == 2 else c


def _check_dims(*arrays):
    shapes = {np.shape(a)[-1] for a in arrays}
    if len(shapes) != 1:
        raise ShapeError(f"action dimension mismatch: {[np.shape(a) for a in arrays]}")


def interpolate(t, a0, a1, z, x=None, spec=None):
    """Build ``a_t = alpha a0 + beta a1 + gamma z`` (one row per time if batched)."""
    spec = spec or InterpolantSpec()
    a0, a1, z = (np.asarray(v, dtype=float) for v in (a0, a1, z))
    _check_dims(a0, a1, z)
    alpha, beta, _, _ = alpha_beta(t, spec)
    g = gamma(t, spec)
    a_t = _coef(alpha, a0) * a0 + _coef(beta, a0) * a1 + _coef(g, a0) * z
    return PathSample(t=t, a0=a0, a1=a1, z=z, a_t=a_t, x=x)


def dI_dt(t, a0, a1, spec):
    """Time derivative of the deterministic part, ``alpha_dot a0 + beta_dot a1``."""
    a0, a1 = np.asarray(a0, dtype=float), np.asarray(a1, dtype=float)
    _check_dims(a0, a1)
    _, _, alpha_d, beta_d = alpha_beta(t, spec)
    return _coef(alpha_d, a0) * a0 + _coef(beta_d, a0) * a1
