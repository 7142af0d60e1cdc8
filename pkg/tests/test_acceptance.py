"""End-to-end acceptance criteria, one test each, at their stated tolerances.

Every test prints a ``PASS``/``FAIL`` line to the terminal (bypassing
pytest's capture) before asserting. Run alone with
``pytest tests/test_acceptance.py -v``; the three sweeps take a few
minutes in total.
"""

import itertools
import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from bridger.baselines import ddpm_init, ddpm_loss_batch, residual_loss_batch, ResidualModel
from bridger.core import BridgerPolicy, FieldModel, loss_batch
from bridger.interpolant import InterpolantSpec, interpolate
from bridger.metrics import emd, roughness
from bridger.numeric import Mlp
from bridger.sources import CvaeConfig, GaussianSource, cvae_init, cvae_loss
from bridger.sweep import load_config, median_emd, run_sweep
from bridger.theory import boltzmann, cross_entropy, expected_cost, log_partition
from helpers import fd_grad, grad_rel_error

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")

pytestmark = pytest.mark.slow


@pytest.fixture
def verdict(capsys):
    def report(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return report


def cli(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "bridger.cli", *map(str, args)], capture_output=True, text=True,
                          cwd=cwd, check=False)


@pytest.fixture(scope="module")
def two_cluster_sweep(tmp_path_factory):
    config = load_config(os.path.join(CONFIGS, "two-cluster-sources.toml"))
    start = time.perf_counter()
    record = run_sweep(config, tmp_path_factory.mktemp("two-cluster"))
    return record, time.perf_counter() - start


@pytest.fixture(scope="module")
def four_cluster_sweep(tmp_path_factory):
    return run_sweep(load_config(os.path.join(CONFIGS, "four-cluster-interpolants.toml")),
                     tmp_path_factory.mktemp("four-cluster"))


def test_01_theory_check_cli(verdict, tmp_path):
    start = time.perf_counter()
    proc = cli("theory-check", "--instances", 1000, "--support-max", 10, "--steps-max", 20)
    elapsed = time.perf_counter() - start
    report = json.loads(proc.stdout)
    ok = (proc.returncode == 0 and report["instances"] == 1000 and len(report["violations"]) == 0
          and report["min_slack"] >= -1e-9 and elapsed < 30)
    verdict(1, ok, f"violations={len(report['violations'])} min_slack={report['min_slack']:.3e} "
                   f"time={elapsed:.1f}s (<30s)")


def test_02_cost_identity(verdict):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(10**4):
        S = int(rng.integers(1, 21))
        c = rng.normal(0.0, 3.0, S)
        p = rng.dirichlet(np.full(S, 0.7))
        worst = max(worst, abs(expected_cost(p, c) - (-log_partition(c) + cross_entropy(p, boltzmann(c)))))
    verdict(2, worst <= 1e-10, f"max |E_p[c] + ln Z - H(p, boltzmann(c))| = {worst:.2e} over 10^4 cases (<=1e-10)")


def test_03_gradient_checks(verdict):
    rng = np.random.default_rng(3)
    errors = {}
    spec = InterpolantSpec("power3", d=0.3, c=1.0)
    model = FieldModel.init(2, 1, spec, (12, 10), "tanh", 4, rng)
    X, A1, a0 = rng.standard_normal((6, 1)), rng.standard_normal((6, 2)), rng.standard_normal((6, 2))
    frozen = dict(a0=a0, t=rng.uniform(0.05, 0.95, 6), z=rng.standard_normal((6, 2)))
    res = loss_batch(model, X, A1, **frozen)
    for name, key in (("b", "L_b"), ("s", "L_s"), ("v", "L_v")):
        numeric = fd_grad(lambda: getattr(loss_batch(model, X, A1, compute_grads=False, **frozen), key),
                          model.nets[name].params)
        errors[key] = grad_rel_error(res.grads[name], numeric)

    ddpm = ddpm_init(2, 1, 20, hidden=(16, 16), activation="tanh", time_embed_width=4, rng=rng)
    k, z = rng.integers(0, 20, 6), rng.standard_normal((6, 2))
    _, grads = ddpm_loss_batch(ddpm, X, A1, k=k, z=z)
    errors["DDPM"] = grad_rel_error(grads, fd_grad(
        lambda: ddpm_loss_batch(ddpm, X, A1, k=k, z=z, compute_grads=False)[0], ddpm.g_net.params))

    res_model = ResidualModel(Mlp.init([3, 16, 16, 2], "tanh", rng), None, 1, 2)
    _, grads = residual_loss_batch(res_model, X, A1, a0=a0)
    errors["residual"] = grad_rel_error(grads, fd_grad(
        lambda: residual_loss_batch(res_model, X, A1, a0=a0, compute_grads=False)[0], res_model.r_net.params))

    cfg = CvaeConfig(latent_dim=2, hidden=(16, 16), decoder_std=0.5)
    cvae = cvae_init(2, 1, cfg, rng)
    xi = rng.standard_normal((6, 2))
    _, (ge, gd) = cvae_loss(cvae, X, A1, xi, cfg)
    errors["CVAE ELBO"] = grad_rel_error(ge + gd, fd_grad(
        lambda: cvae_loss(cvae, X, A1, xi, cfg, compute_grads=False)[0], cvae.encoder.params + cvae.decoder.params))
    worst = max(errors.values())
    verdict(3, worst < 1e-4, "relative errors " + ", ".join(f"{k}={v:.1e}" for k, v in errors.items()) + " (<1e-4)")


def test_04_interpolant_boundaries(verdict):
    rng = np.random.default_rng(4)
    worst = 0.0
    for kind in ("linear", "power3"):
        spec = InterpolantSpec(kind, d=float(rng.uniform(0.01, 3)), c=1.0)
        a0, a1, z = rng.normal(0, 100, (3, 10**4, 3))
        worst = max(worst, np.max(np.abs(interpolate(0.0, a0, a1, z, spec=spec).a_t - a0)),
                    np.max(np.abs(interpolate(1.0, a0, a1, z, spec=spec).a_t - a1)))
    verdict(4, worst <= 1e-12, f"max boundary deviation {worst:.1e} over 10^4 inputs per kind (<=1e-12)")


def test_05_emd_brute_force(verdict):
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(200):
        n = int(rng.integers(1, 8))
        dim = int(rng.integers(1, 4))
        A, B = rng.standard_normal((2, n, dim))
        cost = np.linalg.norm(A[:, None] - B[None], axis=2)
        brute = min(sum(cost[j, p[j]] for j in range(n)) for p in itertools.permutations(range(n))) / n
        worst = max(worst, abs(emd(A, B) - brute))
    verdict(5, worst <= 1e-9, f"max |emd - permutation minimum| = {worst:.1e} on 200 instances, n<=7 (<=1e-9)")


def test_06_one_dimensional_gaussian(verdict):
    start = time.perf_counter()
    means, variances = [], []
    for seed in (0, 1, 2):
        y = 3.0 + 0.5 * np.random.default_rng(seed).standard_normal((5000, 1))
        est = BridgerPolicy(source=GaussianSource(), gamma_scale=0.3, epsilon_scale=1.0, n_steps=20,
                            random_state=seed).fit(None, y)
        A = est.sample(n=10**4, random_state=100 + seed)
        means.append(float(A.mean()))
        variances.append(float(A.var(ddof=1)))
    elapsed = time.perf_counter() - start
    mean, var = float(np.median(means)), float(np.median(variances))
    ok = abs(mean - 3.0) <= 0.15 and abs(var - 0.25) <= 0.1 and elapsed < 300
    verdict(6, ok, f"median mean {mean:.3f} (3 +/- 0.15), median variance {var:.3f} (0.25 +/- 0.1), "
                   f"time={elapsed:.0f}s (<300s)")


def test_07_near_source_beats_far_source(verdict, two_cluster_sweep):
    record, _ = two_cluster_sweep
    near = median_emd(record.rows, method="bridger", source="ring-near", K=5)
    far = median_emd(record.rows, method="bridger", source="gaussian", K=5)
    verdict(7, near < far, f"K=5 median EMD ring-near {near:.3f} < gaussian {far:.3f}")


def test_08_bridger_beats_matched_ddim(verdict, two_cluster_sweep):
    record, elapsed = two_cluster_sweep
    bridger = median_emd(record.rows, method="bridger", source="ring-near", K=5)
    ddim = median_emd(record.rows, method="ddim", K=5)
    ok = bridger < ddim and elapsed < 1800 and not record.divergences
    verdict(8, ok, f"K=5 median EMD bridger(ring-near) {bridger:.3f} < ddim(matched) {ddim:.3f}; "
                   f"sweep {elapsed:.0f}s (<1800s)")


def test_09_residual_worse_than_bridger(verdict, two_cluster_sweep):
    record, _ = two_cluster_sweep
    parts, ok = [], True
    for source in ("gaussian", "ring-near"):
        for K in (5, 20):
            res = median_emd(record.rows, method="residual", source=source, K=K)
            bri = median_emd(record.rows, method="bridger", source=source, K=K)
            ok &= res > bri
            parts.append(f"{source} K={K}: residual {res:.3f} > bridger {bri:.3f}")
    verdict(9, ok, "; ".join(parts))


def test_10_power3_not_worse_than_linear(verdict, four_cluster_sweep):
    rows = four_cluster_sweep.rows
    power3 = median_emd(rows, method="bridger", interpolant="power3-d0.3-c1", K=5)
    linear = median_emd(rows, method="bridger", interpolant="linear-d0.3-c1", K=5)
    verdict(10, power3 <= linear + 0.02, f"K=5 median EMD power3 {power3:.3f} <= linear {linear:.3f} + 0.02")


def test_11_roughness(verdict):
    quad = roughness(np.arange(12.0) ** 2)
    # Dyadic slopes and offset keep every point exact, so the line is straight in floating point too.
    line = roughness(3.0 + np.arange(12.0)[:, None] * np.array([0.75, -1.25]))
    verdict(11, quad == 2.0 and line == 0.0, f"quadratic {quad!r} (2.0), line {line!r} (0)")


def test_12_cli_csv_is_byte_identical(verdict, tmp_path):
    config = os.path.join(CONFIGS, "smoke.toml")
    outs = []
    for run in ("a", "b"):
        proc = cli("sweep", "--config", config, "--out", tmp_path / run)
        assert proc.returncode == 0, proc.stderr
        outs.append((tmp_path / run / "metrics.csv").read_bytes())
    n_rows = outs[0].count(b"\n") - 1
    verdict(12, outs[0] == outs[1] and n_rows > 0, f"two runs of the smoke sweep: {n_rows} rows, identical bytes")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
