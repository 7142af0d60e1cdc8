import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bridger.exceptions import ShapeError
from bridger.interpolant import InterpolantSpec, alpha_beta, dI_dt, epsilon, gamma, gamma_dot, interpolate

LINEAR = InterpolantSpec("linear")
POWER3 = InterpolantSpec("power3", m=3)
times = st.floats(0.0, 1.0, allow_nan=False)
vecs = arrays(np.float64, 3, elements=st.floats(-1e3, 1e3, allow_nan=False))


class TestInterpolantSpec:
    @pytest.mark.parametrize("kwargs", [{"d": 0.0}, {"d": -1.0}, {"c": -0.1}, {"m": 0}, {"m": 2.5},
                                        {"gamma_floor": 0.0}, {"gamma_floor": 0.05}, {"kind": "cosine"}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            InterpolantSpec(**kwargs)

    def test_round_trip(self):
        spec = InterpolantSpec("power3", m=5, d=0.03, c=3.0, gamma_floor=1e-3)
        assert InterpolantSpec.from_dict(spec.to_dict()) == spec
        assert spec.label == "power5-d0.03-c3"


class TestAlphaBeta:
    def test_linear_midpoint(self):
        np.testing.assert_allclose(alpha_beta(0.5, LINEAR), (0.5, 0.5, -1.0, 1.0))

    def test_power3_midpoint(self):
        np.testing.assert_allclose(alpha_beta(0.5, POWER3), (0.125, 0.875, -0.75, 0.75))

    @pytest.mark.parametrize("spec", [LINEAR, POWER3, InterpolantSpec("power3", m=1)])
    def test_boundaries(self, spec):
        a0, b0, _, _ = alpha_beta(0.0, spec)
        a1, b1, _, _ = alpha_beta(1.0, spec)
        assert (a0, b0, a1, b1) == (1.0, 0.0, 0.0, 1.0)

    @given(times)
    def test_derivatives_match_finite_differences(self, t):
        t = min(max(t, 1e-4), 1 - 1e-4)
        h = 1e-6
        for spec in (LINEAR, POWER3):
            up, down = alpha_beta(t + h, spec), alpha_beta(t - h, spec)
            _, _, ad, bd = alpha_beta(t, spec)
            assert abs((up[0] - down[0]) / (2 * h) - ad) < 1e-6
            assert abs((up[1] - down[1]) / (2 * h) - bd) < 1e-6

    def test_rejects_time_outside_unit_interval(self):
        with pytest.raises(ValueError):
            alpha_beta(1.5, LINEAR)


class TestGammaEpsilon:
    def test_gamma_peak(self):
        spec = InterpolantSpec(d=0.3)
        assert gamma(0.5, spec) == pytest.approx(0.3 * math.sqrt(0.5), abs=1e-15)
        assert gamma(0.5, spec) == pytest.approx(0.212132, abs=1e-6)
        assert gamma_dot(0.5, spec) == 0.0

    def test_gamma_closed_form(self):
        spec = InterpolantSpec(d=0.03)
        assert gamma(0.25, spec) == pytest.approx(0.03 * math.sqrt(2 * 0.25 * 0.75), abs=1e-15)
        assert gamma(0.25, spec) == pytest.approx(0.0183712, abs=1e-7)

    @given(st.floats(0.001, 10.0))
    def test_gamma_vanishes_at_ends(self, d):
        spec = InterpolantSpec(d=d)
        assert gamma(0.0, spec) == 0.0 and gamma(1.0, spec) == 0.0

    @given(times)
    def test_gamma_symmetry(self, t):
        t = 1 - (1 - t)  # make t and 1 - t exact complements in floating point
        assert gamma(t, POWER3) == pytest.approx(gamma(1 - t, POWER3), abs=1e-15)

    def test_gamma_dot_uses_clamped_time(self):
        spec = InterpolantSpec(d=0.3, gamma_floor=1e-3)
        assert gamma_dot(0.0, spec) == gamma_dot(1e-3, spec)
        assert np.isfinite(gamma_dot(1.0, spec))

    @given(st.floats(0.01, 0.99))
    def test_gamma_dot_finite_difference(self, t):
        h = 1e-7
        fd = (gamma(t + h, POWER3) - gamma(t - h, POWER3)) / (2 * h)
        assert gamma_dot(t, POWER3) == pytest.approx(fd, rel=1e-5, abs=1e-6)

    def test_epsilon_values(self):
        assert epsilon(0.0, InterpolantSpec(c=1.0)) == 1.0
        assert epsilon(1.0, InterpolantSpec(c=3.0)) == 0.0
        assert epsilon(0.5, InterpolantSpec(c=3.0)) == 1.5
        np.testing.assert_array_equal(epsilon(np.linspace(0, 1, 11), InterpolantSpec(c=0.0)), 0.0)


class TestInterpolate:
    def test_linear_example(self):
        spec = InterpolantSpec("linear", d=0.3)
        g = 0.3 * math.sqrt(0.5)
        out = interpolate(0.5, [0.0, 0.0], [2.0, 0.0], [1.0, 1.0], spec=spec)
        np.testing.assert_allclose(out.a_t, [1.0 + g, g], atol=1e-15)

    @given(vecs, vecs, vecs, st.sampled_from([LINEAR, POWER3]))
    def test_boundaries_exact(self, a0, a1, z, spec):
        np.testing.assert_array_equal(interpolate(0.0, a0, a1, z, spec=spec).a_t, a0)
        np.testing.assert_array_equal(interpolate(1.0, a0, a1, z, spec=spec).a_t, a1)

    def test_batched_per_row_times(self, rng):
        t = rng.random(6)
        a0, a1, z = rng.standard_normal((3, 6, 2))
        batch = interpolate(t, a0, a1, z, spec=POWER3).a_t
        rows = [interpolate(t[i], a0[i], a1[i], z[i], spec=POWER3).a_t for i in range(6)]
        np.testing.assert_allclose(batch, rows, atol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            interpolate(0.5, [0.0, 0.0], [1.0, 1.0, 1.0], [0.0, 0.0])


class TestTimeDerivative:
    def test_linear_is_constant_difference(self, rng):
        a0, a1 = rng.standard_normal((2, 4))
        for t in (0.0, 0.3, 1.0):
            np.testing.assert_allclose(dI_dt(t, a0, a1, LINEAR), a1 - a0)

    def test_power3_at_zero(self, rng):
        a0, a1 = rng.standard_normal((2, 4))
        np.testing.assert_allclose(dI_dt(0.0, a0, a1, POWER3), 3 * (a1 - a0))

    @pytest.mark.parametrize("spec", [LINEAR, POWER3])
    def test_matches_finite_difference_of_path(self, spec, rng):
        t = rng.uniform(1e-3, 1 - 1e-3, 1000)
        a0, a1 = rng.standard_normal((2, 1000, 3))
        z = np.zeros_like(a0)
        h = 1e-6
        fd = (interpolate(t + h, a0, a1, z, spec=spec).a_t - interpolate(t - h, a0, a1, z, spec=spec).a_t) / (2 * h)
        assert np.max(np.abs(fd - dI_dt(t, a0, a1, spec))) < 1e-6

    @given(times, vecs, vecs)
    def test_lipschitz_in_endpoints(self, t, a0, a1):
        gap = np.linalg.norm(a1 - a0)
        assert np.linalg.norm(dI_dt(t, a0, a1, POWER3)) <= 3 * gap * (1 + 1e-12) + 1e-12
        assert np.linalg.norm(dI_dt(t, a0, a1, LINEAR)) <= gap * (1 + 1e-12) + 1e-12
