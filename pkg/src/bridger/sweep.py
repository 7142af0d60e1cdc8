"""Experiment sweeps: configs, per-cell training and sampling, CSV/SVG/JSON artifacts.

A sweep trains each (method, source, interpolant) once per seed and samples
it at every step count K. Rows are written in config order, so the CSV
depends only on the config and seeds, never on timing.

Config schema (TOML)::

    name = "two-cluster-sources"
    task = "two-cluster"              # canonical name, or a [task] table
    methods = ["bridger", "ddim", "residual"]
    steps = [0, 5, 20]                # K = 0 rows score the raw source samples
    seeds = [0, 1, 2]
    n_eval = 512                      # generated and reference samples per cell

    [[sources]]                       # default: one standard Gaussian
    name = "ring-near"
    kind = "ring"                     # gaussian | mixture | ring | cvae
    params = { radius = 2.0, radial_noise = 0.3 }

    [[interpolants]]                  # default: power3 over d in {0.03, 0.3}, c in {1, 3}
    kind = "power3"                   # lists expand to their cross product
    d = [0.03, 0.3]
    c = [1.0, 3.0]

    [bridger]                         # BridgerPolicy keyword arguments
    [ddim]                            # DdimPolicy kwargs; hidden = "matched" sizes it to bridger
    [residual]                        # ResidualPolicy kwargs
    [output]                          # plots, panels, checkpoints, lipschitz
"""

import csv
import io
import itertools
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import DdimPolicy, ResidualPolicy
from .core import BridgerPolicy
from .exceptions import ConfigError, DivergenceError
from .interpolant import InterpolantSpec
from .metrics import emd, lipschitz_estimate, roughness
from .numeric import config_hash, derive_seed, make_rng, matched_hidden, mlp_param_count
from .sources import make_source
from .tasks import TaskSpec, get_task

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

METHODS = ("bridger", "ddim", "residual")
CSV_COLUMNS = ("task", "method", "source", "interpolant", "K", "seed", "emd", "roughness", "lip_b", "lip_s")
DEFAULT_D = (0.03, 0.3)
DEFAULT_C = (1.0, 3.0)
NO_ENTRY = "-"


@dataclass(frozen=True)
class SourceConfig:
    name: str
    kind: str
    params: dict = field(default_factory=dict)

    def build(self, seed):
        params = dict(self.params)
        if self.kind == "cvae":
            params.setdefault("random_state", derive_seed(seed, "source", self.name))
        return make_source(self.kind, **params)


def interpolant_label(spec):
    return spec.label


@dataclass
class ExperimentConfig:
    name: str
    task: TaskSpec
    sources: list
    interpolants: list
    steps: list
    seeds: list
    methods: list
    n_eval: int = 512
    bridger: dict = field(default_factory=dict)
    ddim: dict = field(default_factory=dict)
    residual: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def hash(self):
        return config_hash(self.raw)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        try:
            task = get_task(d.get("task", "two-cluster"))
            sources = [
                SourceConfig(str(s.get("name", s["kind"])), str(s["kind"]), dict(s.get("params", {})))
                for s in d.get("sources", [{"name": "gaussian", "kind": "gaussian"}])
            ]
            interpolants = _expand_interpolants(d.get("interpolants"))
            steps = [int(k) for k in _as_list(d.get("steps", [0, 5, 20]))]
            seeds = [int(s) for s in _as_list(d.get("seeds", [0, 1, 2]))]
            methods = [str(m) for m in _as_list(d.get("methods", ["bridger"]))]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from None
        for label, values in (("sources", sources), ("interpolants", interpolants), ("steps", steps),
                              ("seeds", seeds), ("methods", methods)):
            if not values:
                raise ConfigError(f"config list {label!r} must be nonempty")
        unknown = set(methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}; expected a subset of {METHODS}")
        if min(steps) < 0:
            raise ConfigError("step counts K must be >= 0")
        names = [s.name for s in sources]
        if len(set(names)) != len(names):
            raise ConfigError("source names must be unique")
        n_eval = int(d.get("n_eval", 512))
        if n_eval < 2:
            raise ConfigError("n_eval must be >= 2")
        return cls(
            name=str(d.get("name", task.name)), task=task, sources=sources, interpolants=interpolants,
            steps=steps, seeds=seeds, methods=methods, n_eval=n_eval,
            bridger=dict(d.get("bridger", {})), ddim=dict(d.get("ddim", {})), residual=dict(d.get("residual", {})),
            output=dict(d.get("output", {})), raw=d,
        )


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _expand_interpolants(entries):
    if entries is None:
        entries = [{"kind": "power3", "d": list(DEFAULT_D), "c": list(DEFAULT_C)}]
    specs = []
    for e in entries:
        e = dict(e)
        kinds, ds, cs = _as_list(e.get("kind", "power3")), _as_list(e.get("d", 0.3)), _as_list(e.get("c", 1.0))
        for kind, d, c in itertools.product(kinds, ds, cs):
            try:
                specs.append(InterpolantSpec(kind, int(e.get("m", 3)), float(d), float(c),
                                             float(e.get("gamma_floor", InterpolantSpec.gamma_floor))))
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
    return specs


def load_config(path):
    """Parse a TOML experiment config; any problem raises :class:`ConfigError`."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from None
    return ExperimentConfig.from_dict(raw)


@dataclass
class RunRecord:
    config_hash: str
    rows: list
    checkpoints: dict
    divergences: list
    wall_clock: float

    def to_dict(self):
        return {"config_hash": self.config_hash, "rows": self.rows, "checkpoints": self.checkpoints,
                "divergences": self.divergences, "wall_clock": self.wall_clock}


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def rows_to_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([_fmt(r.get(c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _row(config, method, source, interp, K, seed, A_gen, A_ref, lip=(None, None)):
    rough = None
    if config.task.generator == "trajectory-1d":
        rough = float(np.mean([roughness(a) for a in A_gen]))
    return {"task": config.task.name, "method": method, "source": source, "interpolant": interp, "K": int(K),
            "seed": int(seed), "emd": emd(A_gen, A_ref), "roughness": rough, "lip_b": lip[0], "lip_s": lip[1]}


def _bridger_kwargs(config, spec):
    kw = dict(config.bridger)
    kw.update(interpolant=spec.kind, m=spec.m, gamma_scale=spec.d, epsilon_scale=spec.c, gamma_floor=spec.gamma_floor)
    if "hidden" in kw:
        kw["hidden"] = tuple(kw["hidden"])
    return kw


def bridger_param_count(config):
    """Total trainable parameters of the three bridge networks for this config."""
    defaults = BridgerPolicy().get_params()
    hidden = tuple(config.bridger.get("hidden", defaults["hidden"]))
    tew = int(config.bridger.get("time_embed_width", defaults["time_embed_width"]))
    n_obs = config.task.n_components if config.task.obs_mode == "label" else 0
    n_a = config.task.n_actions
    return 3 * mlp_param_count([n_a + tew + n_obs, *hidden, n_a])


def _ddim_kwargs(config):
    kw = dict(config.ddim)
    if kw.get("hidden", "matched") == "matched":
        tew = int(kw.get("time_embed_width", 8))
        n_obs = config.task.n_components if config.task.obs_mode == "label" else 0
        n_a = config.task.n_actions
        kw["hidden"] = matched_hidden(bridger_param_count(config), n_a + tew + n_obs, n_a)
    else:
        kw["hidden"] = tuple(kw["hidden"])
    return kw


def run_sweep(config, out_dir=None, *, log=None):
    """Run every cell of ``config``; write artifacts to ``out_dir`` if given.

    Divergent cells are logged in ``RunRecord.divergences`` and left out of
    the rows; the sweep continues.

    Returns:
        :class:`RunRecord`.
    """
    t_start = time.perf_counter()
    log = log or (lambda msg: None)
    out = config.output
    save_ckpt = bool(out.get("checkpoints", True)) and out_dir is not None
    do_plots = bool(out.get("plots", True)) and out_dir is not None
    do_lip = bool(out.get("lipschitz", True))
    n_panels = int(out.get("panels", 5))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        if save_ckpt:
            os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
        if do_plots:
            os.makedirs(os.path.join(out_dir, "plots"), exist_ok=True)
    rows, checkpoints, divergences = [], {}, []
    model_steps = [K for K in config.steps if K > 0]

    def checkpoint(est, name):
        if not save_ckpt:
            return
        path = os.path.join(out_dir, "checkpoints", f"{name}.json")
        est.save(path, config=config.raw)
        checkpoints[name] = path

    def diverged(cell, exc):
        log(f"divergence in {cell}: {exc}")
        divergences.append({"cell": cell, "error": str(exc), **getattr(exc, "diagnostics", {})})

    for seed in config.seeds:
        X, A = config.task.sample(random_state=make_rng(seed, "data"))
        X_ev, A_ref = config.task.sample(n=config.n_eval, random_state=make_rng(seed, "reference"))
        for src_cfg in config.sources:
            try:
                source = src_cfg.build(seed).fit(X, A)
            except (DivergenceError, FloatingPointError) as exc:
                diverged(f"source={src_cfg.name} seed={seed}", exc)
                continue
            a0 = source.sample(X_ev, make_rng(seed, "a0", src_cfg.name))
            if "bridger" in config.methods:
                for spec in config.interpolants:
                    interp = interpolant_label(spec)
                    if 0 in config.steps:
                        rows.append(_row(config, "bridger", src_cfg.name, interp, 0, seed, a0, A_ref))
                    cell = f"bridger-{src_cfg.name}-{interp}-seed{seed}"
                    log(f"train {cell}")
                    try:
                        est = BridgerPolicy(source=source, random_state=derive_seed(seed, "bridger", src_cfg.name, interp),
                                            **_bridger_kwargs(config, spec)).fit(X, A)
                        lip = (None, None)
                        if do_lip:
                            rng_l = make_rng(seed, "lipschitz", src_cfg.name, interp)
                            m = est.model_
                            lip = (
                                lipschitz_estimate(lambda t, a, x: m.velocity(t, a, x, est.velocity_mode), A_ref,
                                                   rng=rng_l, X=X_ev),
                                lipschitz_estimate(m.score, A_ref, rng=rng_l, X=X_ev),
                            )
                        checkpoint(est, cell)
                        for K in model_steps:
                            A_gen, path = est.sample(X_ev, a0=a0, n_steps=K, return_path=True,
                                                     random_state=derive_seed(seed, "sample", src_cfg.name, interp, K))
                            rows.append(_row(config, "bridger", src_cfg.name, interp, K, seed, A_gen, A_ref, lip))
                            if do_plots and seed == config.seeds[0] and A.shape[1] == 2:
                                _write_panels(os.path.join(out_dir, "plots", f"{cell}-K{K}.svg"), path, A_ref,
                                              n_panels, f"{config.task.name} {src_cfg.name} {interp} K={K}")
                    except DivergenceError as exc:
                        diverged(cell, exc)
            if "residual" in config.methods:
                cell = f"residual-{src_cfg.name}-seed{seed}"
                log(f"train {cell}")
                try:
                    est = ResidualPolicy(source=source, random_state=derive_seed(seed, "residual", src_cfg.name),
                                         **_tuple_hidden(config.residual)).fit(X, A)
                    checkpoint(est, cell)
                    A_gen = est.sample(X_ev, a0=a0)
                    for K in model_steps:
                        rows.append(_row(config, "residual", src_cfg.name, NO_ENTRY, K, seed, A_gen, A_ref))
                except DivergenceError as exc:
                    diverged(cell, exc)
        if "ddim" in config.methods:
            cell = f"ddim-seed{seed}"
            log(f"train {cell}")
            try:
                est = DdimPolicy(random_state=derive_seed(seed, "ddim"), **_ddim_kwargs(config)).fit(X, A)
                checkpoint(est, cell)
                a_init = make_rng(seed, "ddim-noise").standard_normal(A_ref.shape)
                for K in model_steps:
                    A_gen = est.sample(X_ev, a_init=a_init, n_steps=K)
                    rows.append(_row(config, "ddim", NO_ENTRY, NO_ENTRY, K, seed, A_gen, A_ref))
            except DivergenceError as exc:
                diverged(cell, exc)

    rows = _ordered(rows, config)
    record = RunRecord(config.hash, rows, checkpoints, divergences, time.perf_counter() - t_start)
    if out_dir is not None:
        with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
            fh.write(rows_to_csv(rows))
        with open(os.path.join(out_dir, "run_record.json"), "w") as fh:
            json.dump(record.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
    return record


def _tuple_hidden(kw):
    kw = dict(kw)
    if "hidden" in kw:
        kw["hidden"] = tuple(kw["hidden"])
    return kw


def _ordered(rows, config):
    """Sort rows by the config's declaration order: method, source, interpolant, K, seed."""
    m_idx = {m: i for i, m in enumerate(METHODS)}
    s_idx = {s.name: i for i, s in enumerate(config.sources)}
    s_idx[NO_ENTRY] = -1
    i_idx = {interpolant_label(s): i for i, s in enumerate(config.interpolants)}
    i_idx[NO_ENTRY] = -1
    seed_idx = {s: i for i, s in enumerate(config.seeds)}
    return sorted(rows, key=lambda r: (m_idx[r["method"]], s_idx[r["source"]], i_idx[r["interpolant"]],
                                       r["K"], seed_idx[r["seed"]]))


# ---------------------------------------------------------------------------
# Reports


def report_relative_improvement(rows):
    """Source-only EMD over the best bridger EMD, per (task, source, interpolant).

    Each side is the median over seeds; the best is taken over K > 0. For
    EMD lower is better, so a ratio above 1 means the bridge improved on
    its source.

    Returns:
        List of dicts ``{task, source, interpolant, source_emd, best_emd, best_K, ratio}``.
    """
    groups = {}
    for r in rows:
        if r["method"] != "bridger" or r["emd"] in ("", None):
            continue
        key = (r["task"], r["source"], r["interpolant"])
        groups.setdefault(key, {}).setdefault(int(r["K"]), []).append(float(r["emd"]))
    out = []
    for (task, source, interp), by_k in groups.items():
        if 0 not in by_k:
            raise ValueError(f"no K=0 (source-only) rows for {task}/{source}/{interp}")
        src = float(np.median(by_k[0]))
        med = {k: float(np.median(v)) for k, v in by_k.items() if k > 0}
        if not med:
            raise ValueError(f"no K>0 rows for {task}/{source}/{interp}")
        best_k = min(med, key=lambda k: (med[k], k))
        out.append({"task": task, "source": source, "interpolant": interp, "source_emd": src,
                    "best_emd": med[best_k], "best_K": best_k, "ratio": src / med[best_k]})
    return out


def relative_improvement_csv(report):
    cols = ("task", "source", "interpolant", "source_emd", "best_emd", "best_K", "ratio")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for r in report:
        writer.writerow([_fmt(r[c]) for c in cols])
    return buf.getvalue()


def median_emd(rows, **match):
    """Median EMD over rows whose fields equal ``match`` (values compared as strings)."""
    vals = [float(r["emd"]) for r in rows
            if r["emd"] not in ("", None) and all(str(r[k]) == str(v) for k, v in match.items())]
    if not vals:
        raise ValueError(f"no rows match {match}")
    return float(np.median(vals))


# ---------------------------------------------------------------------------
# SVG scatter panels


def _write_panels(path, traj, A_ref, n_panels, title, size=180, pad=12):
    """Side-by-side scatter plots of evenly spaced path states plus the target."""
    K = len(traj) - 1
    ks = sorted(set(int(round(k)) for k in np.linspace(0, K, min(n_panels, K + 1))))
    sets = [(f"k={k}", traj[k]) for k in ks] + [("target", A_ref)]
    allpts = np.vstack([s for _, s in sets])
    lo, hi = np.percentile(allpts, 1, axis=0), np.percentile(allpts, 99, axis=0)
    span = np.maximum(hi - lo, 1e-9) * 1.2
    center = (hi + lo) / 2
    width = len(sets) * (size + pad) + pad
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{size + 3 * pad + 14}" font-family="sans-serif" font-size="11">',
        f'<text x="{pad}" y="{pad + 2}">{_esc(title)}</text>',
    ]
    for i, (label, pts) in enumerate(sets):
        x0, y0 = pad + i * (size + pad), 2 * pad
        parts.append(f'<rect x="{x0}" y="{y0}" width="{size}" height="{size}" fill="none" stroke="#888"/>')
        parts.append(f'<text x="{x0 + 4}" y="{y0 + size + 13}">{label}</text>')
        color = "#c0392b" if label == "target" else "#2c6fbb"
        uv = (pts - center) / span + 0.5
        for u, v in uv[:512]:
            if 0 <= u <= 1 and 0 <= v <= 1:
                parts.append(f'<circle cx="{x0 + u * size:.2f}" cy="{y0 + (1 - v) * size:.2f}" r="1.3" fill="{color}" fill-opacity="0.5"/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def _esc(s):
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
