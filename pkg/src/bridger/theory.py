"""Finite-support checks of the source-improvement bounds.

Distributions are probability vectors over ``S`` atoms. An improvement
chain ``p_0, ..., p_K`` on a time grid ``0 = t_0 < ... < t_K = 1`` is
admissible when each step lowers ``F(p_k, target)`` by an amount in
``[eps_min dt_k, eps_max dt_k]``. For two admissible chains started from
different sources the final gap is bounded by the initial gap plus
``eps_max - eps_min``; with a Boltzmann target ``exp(-c) / Z`` and
``F = cross-entropy`` the same holds for expected costs, because
``E_p[c] = -ln Z + H(p, target)``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .exceptions import ShapeError
from .utils import check_random_state

PROB_TOL = 1e-12
SLACK_TOL = 1e-9


def check_dist(p, name="p"):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 1:
        raise ShapeError(f"{name} must be a nonempty probability vector")
    if not np.all(np.isfinite(p)) or np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL * max(1, p.size):
        raise ValueError(f"{name} is not a probability vector (sum={p.sum()!r})")
    return p


def cross_entropy(p, q):
    """``H(p, q) = -sum_i p_i ln q_i``; requires ``q_i > 0`` wherever ``p_i > 0``."""
    p, q = check_dist(p, "p"), check_dist(q, "q")
    if p.shape != q.shape:
        raise ShapeError(f"support mismatch: {p.size} vs {q.size}")
    mask = p > 0
    if np.any(q[mask] <= 0):
        raise ValueError("q has zero mass where p is positive; cross-entropy is infinite")
    return float(-np.sum(p[mask] * np.log(q[mask])))


def entropy(p):
    return cross_entropy(p, p)


def kl(p, q):
    return cross_entropy(p, q) - entropy(p)


def boltzmann(c):
    """``exp(-c) / Z`` computed with a max shift."""
    c = np.asarray(c, dtype=float)
    if not np.all(np.isfinite(c)):
        raise ValueError("costs must be finite")
    w = np.exp(-(c - c.min()))
    return w / w.sum()


def log_partition(c):
    """``ln Z = ln sum_i exp(-c_i)``."""
    return float(logsumexp(-np.asarray(c, dtype=float)))


def expected_cost(p, c):
    p = check_dist(p)
    return float(np.dot(p, np.asarray(c, dtype=float)))


DIVERGENCES = {"cross_entropy": cross_entropy, "kl": kl}


@dataclass
class ImprovementChain:
    dists: list
    target: np.ndarray
    grid: np.ndarray
    eps_min: float
    eps_max: float
    divergence: str = "cross_entropy"

    @property
    def K(self):
        return len(self.dists) - 1

    def phi(self):
        F = DIVERGENCES[self.divergence]
        return np.array([F(p, self.target) for p in self.dists])

    def decrements(self):
        return -np.diff(self.phi())

    def violations(self, tol=PROB_TOL):
        """Steps whose decrement leaves ``[eps_min dt_k, eps_max dt_k]`` (beyond ``tol``)."""
        dt = np.diff(self.grid)
        dec = self.decrements()
        bad = []
        for k, (d, h) in enumerate(zip(dec, dt), start=1):
            if d < self.eps_min * h - tol or d > self.eps_max * h + tol:
                bad.append({"step": k, "decrement": float(d), "lo": self.eps_min * h, "hi": self.eps_max * h})
        return bad

    def is_admissible(self, tol=PROB_TOL):
        return not self.violations(tol)


def uniform_grid(K):
    return np.linspace(0.0, 1.0, K + 1)


def random_grid(K, rng):
    """Strictly increasing grid from 0 to 1 with random spacing."""
    gaps = rng.uniform(0.2, 1.0, size=K)
    grid = np.concatenate([[0.0], np.cumsum(gaps) / gaps.sum()])
    grid[-1] = 1.0
    return grid


def make_chain(p0, target, K, eps_min, eps_max, rng=None, *, grid=None, mode="random", divergence="cross_entropy"):
    """Build an admissible chain by mixing toward ``target`` one step at a time.

    Step ``k`` sets ``p <- (1 - lam) p + lam target`` with ``lam`` found by
    root bracketing so that ``F`` drops by ``delta_k``; ``delta_k`` is uniform
    on ``[eps_min dt_k, eps_max dt_k]`` (``mode="random"``) or pinned to
    the lower/upper end (``"min"``/``"max"``). Monotonicity of ``F`` along
    each mixing segment is checked, not assumed.
    """
    p0, target = check_dist(p0, "p0"), check_dist(target, "target")
    if not eps_max >= eps_min > 0:
        raise ValueError("need eps_max >= eps_min > 0")
    rng = check_random_state(rng)
    grid = uniform_grid(K) if grid is None else np.asarray(grid, dtype=float)
    if grid.size != K + 1 or grid[0] != 0.0 or grid[-1] != 1.0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must increase strictly from 0 to 1 with K + 1 points")
    F = DIVERGENCES[divergence]
    floor = F(target, target)
    dists = [p0]
    p = p0
    for k, dt in enumerate(np.diff(grid), start=1):
        lo, hi = eps_min * dt, eps_max * dt
        delta = {"random": lo + (hi - lo) * rng.random(), "min": lo, "max": hi}[mode]
        f0 = F(p, target)
        if f0 - delta < floor:
            achievable = _achievable_steps(dists, grid, eps_min, F, target, floor)
            raise ValueError(
                f"infeasible decrement at step {k}: F={f0:.6g} cannot drop by {delta:.6g} "
                f"without passing the floor {floor:.6g}; about {achievable} steps are achievable"
            )

        def gap(lam):
            return F((1 - lam) * p + lam * target, target) - (f0 - delta)

        lam = 1.0 if gap(1.0) >= 0 else brentq(gap, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        p_new = (1 - lam) * p + lam * target
        p_new = p_new / p_new.sum()
        mid = F((1 - lam / 2) * p + lam / 2 * target, target)
        if not (F(p_new, target) - 1e-12 <= mid <= f0 + 1e-12):
            raise ValueError(f"F is not monotone along the mixing segment at step {k}")
        dists.append(p_new)
        p = p_new
    return ImprovementChain(dists, target, grid, float(eps_min), float(eps_max), divergence)


def _achievable_steps(dists, grid, eps_min, F, target, floor):
    remaining = F(dists[-1], target) - floor
    done = len(dists) - 1
    dt = np.diff(grid)[done:]
    need = np.cumsum(eps_min * dt)
    return done + int(np.searchsorted(need, remaining, side="right"))


@dataclass
class TheoremCheck:
    """Outcome of one bound check.

    ``holds`` refers to the inequality itself; when either chain violates
    the improvement assumption, ``admissible`` is False and a failing bound
    is an assumption violation rather than a counterexample.
    """

    lhs: float
    rhs: float
    holds: bool
    slack: float
    admissible: bool = True
    assumption_violations: dict = field(default_factory=dict)
    lemma_violations: list = field(default_factory=list)

    @property
    def theorem_failure(self):
        return self.admissible and (not self.holds or bool(self.lemma_violations))


def _check_pair(chain_pi, chain_rho):
    if chain_pi.K != chain_rho.K or not np.array_equal(chain_pi.grid, chain_rho.grid):
        raise ValueError("chains must share the time grid")
    if not np.array_equal(chain_pi.target, chain_rho.target):
        raise ValueError("chains must share the target distribution")
    if (chain_pi.eps_min, chain_pi.eps_max) != (chain_rho.eps_min, chain_rho.eps_max):
        raise ValueError("chains must share eps_min and eps_max")
    viol = {name: ch.violations() for name, ch in (("pi", chain_pi), ("rho", chain_rho))}
    viol = {k: v for k, v in viol.items() if v}
    return not viol, viol


def check_theorem_discrete(chain_pi, chain_rho, tol=SLACK_TOL):
    """``phi_pi(1) - phi_rho(1) <= phi_pi(0) - phi_rho(0) + eps_max - eps_min``."""
    admissible, viol = _check_pair(chain_pi, chain_rho)
    phi_pi, phi_rho = chain_pi.phi(), chain_rho.phi()
    lhs = phi_pi[-1] - phi_rho[-1]
    rhs = phi_pi[0] - phi_rho[0] + chain_pi.eps_max - chain_pi.eps_min
    slack = rhs - lhs
    return TheoremCheck(float(lhs), float(rhs), bool(slack >= -tol), float(slack), admissible, viol)


def check_theorem_cost(chain_pi, chain_rho, c, tol=SLACK_TOL):
    """Expected-cost form of the bound plus both per-step cost lemmas.

    Per step ``k`` and for each chain:
    ``E_{p_k}[c] <= E_{p_{k-1}}[c] - eps_min dt_k`` and
    ``E_{p_k}[c] >= E_{p_{k-1}}[c] - eps_max dt_k``.
    """
    c = np.asarray(c, dtype=float)
    target = boltzmann(c)
    for ch in (chain_pi, chain_rho):
        if ch.divergence != "cross_entropy":
            raise ValueError("the cost bound requires cross-entropy chains")
        if np.max(np.abs(ch.target - target)) > 1e-12:
            raise ValueError("chain target is not boltzmann(c)")
    admissible, viol = _check_pair(chain_pi, chain_rho)
    cost_pi = np.array([expected_cost(p, c) for p in chain_pi.dists])
    cost_rho = np.array([expected_cost(p, c) for p in chain_rho.dists])
    lhs = cost_pi[-1] - cost_rho[-1]
    rhs = cost_pi[0] - cost_rho[0] + chain_pi.eps_max - chain_pi.eps_min
    slack = rhs - lhs
    lemmas = []
    dt = np.diff(chain_pi.grid)
    for name, costs in (("pi", cost_pi), ("rho", cost_rho)):
        for k in range(1, costs.size):
            upper = costs[k - 1] - chain_pi.eps_min * dt[k - 1]
            lower = costs[k - 1] - chain_pi.eps_max * dt[k - 1]
            if costs[k] > upper + tol:
                lemmas.append({"chain": name, "step": k, "lemma": "upper", "excess": float(costs[k] - upper)})
            if costs[k] < lower - tol:
                lemmas.append({"chain": name, "step": k, "lemma": "lower", "excess": float(lower - costs[k])})
    return TheoremCheck(float(lhs), float(rhs), bool(slack >= -tol), float(slack), admissible, viol, lemmas)


def random_dist(S, rng, concentration=1.0):
    return rng.dirichlet(np.full(S, concentration))


def _random_instance(rng, support_max, steps_max, mode_pi="random", mode_rho="random"):
    """Draw costs, two sources and shared eps bounds admitting K-step chains."""
    while True:
        S = int(rng.integers(2, support_max + 1))
        K = int(rng.integers(1, steps_max + 1))
        c = rng.normal(0.0, 2.0, size=S)
        target = boltzmann(c)
        floor = cross_entropy(target, target)
        # sources leaning toward high-cost atoms sit far from the target
        p_pi = random_dist(S, rng, 0.5) * 0.5 + boltzmann(-c) * 0.5
        p_rho = random_dist(S, rng, 0.5) * 0.5 + boltzmann(-c) * 0.5
        gap = min(cross_entropy(p_pi, target), cross_entropy(p_rho, target)) - floor
        if gap > 1e-3:
            break
    eps_max = gap * rng.uniform(0.1, 0.9)
    eps_min = eps_max * rng.uniform(0.05, 0.95)
    grid = uniform_grid(K) if rng.random() < 0.5 else random_grid(K, rng)
    chain_pi = make_chain(p_pi, target, K, eps_min, eps_max, rng, grid=grid, mode=mode_pi)
    chain_rho = make_chain(p_rho, target, K, eps_min, eps_max, rng, grid=grid, mode=mode_rho)
    return c, chain_pi, chain_rho


def run_theory_check(instances=1000, support_max=10, steps_max=20, seed=0):
    """Fuzz both bounds and the per-step lemmas over random admissible chain pairs.

    Every fourth instance is extremal (``pi`` at minimum decrements, ``rho``
    at maximum), where the bound is tight.

    Returns:
        JSON-able report ``{instances, min_slack, violations, ...}``.
    """
    rng = check_random_state(seed)
    min_slack = math.inf
    min_slack_cost = math.inf
    violations = []
    for i in range(instances):
        modes = ("min", "max") if i % 4 == 3 else ("random", "random")
        c, chain_pi, chain_rho = _random_instance(rng, support_max, steps_max, *modes)
        entropy_check = check_theorem_discrete(chain_pi, chain_rho)
        cost_check = check_theorem_cost(chain_pi, chain_rho, c)
        min_slack = min(min_slack, entropy_check.slack)
        min_slack_cost = min(min_slack_cost, cost_check.slack)
        for name, res in (("discrete_bound", entropy_check), ("cost_bound", cost_check)):
            if not res.admissible:
                violations.append({"instance": i, "check": name, "kind": "assumption", "detail": res.assumption_violations})
            elif not res.holds:
                violations.append({"instance": i, "check": name, "kind": "bound", "slack": res.slack})
        for lem in cost_check.lemma_violations:
            violations.append({"instance": i, "check": f"cost_lemma_{lem['lemma']}", "kind": "lemma", **lem})
    return {
        "instances": instances,
        "support_max": support_max,
        "steps_max": steps_max,
        "seed": seed,
        "min_slack": min(min_slack, min_slack_cost),
        "min_slack_discrete": min_slack,
        "min_slack_cost": min_slack_cost,
        "violations": violations,
    }


def continuous_limit_check(p0_pi, p0_rho, target, eps_min, eps_max, Ks=(10, 100, 1000), seed=0):
    """Slack of the discrete bound on refining uniform grids (the continuous-time case as K grows)."""
    rng = check_random_state(seed)
    out = {}
    for K in Ks:
        chain_pi = make_chain(p0_pi, target, K, eps_min, eps_max, rng)
        chain_rho = make_chain(p0_rho, target, K, eps_min, eps_max, rng)
        out[K] = check_theorem_discrete(chain_pi, chain_rho).slack
    return out
