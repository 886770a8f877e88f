import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_flaschka
from oracles import dissipative_rhs_loop
from todaflow.dissipation import (
    DissipationConfig,
    combined_update,
    detect_equilibrium,
    dissipative_drift,
    dissipative_field,
    dissipative_matrix_field,
    energy_decay_rate,
    integral_rate,
    packed_dissipative_field,
    run_dissipative,
)
from todaflow.integrate import OdeRunSpec, packed_flaschka_field, rk4_step
from todaflow.lattice import FlaschkaState
from todaflow.stochastic import stochastic_toda_update


def symbolic_h2_rate(n):
    """dH_2/dt by the chain rule on the component equations, as a sympy lambda."""
    a = sp.symbols(f"a0:{n}")
    b = sp.symbols(f"b0:{n - 1}")
    th = sp.Symbol("theta")
    bb = [0] + list(b) + [0]
    da = []
    for i in range(n):
        expr = 2 * bb[i] ** 2 - 2 * bb[i + 1] ** 2
        if i + 1 < n:
            expr += 2 * th * bb[i + 1] ** 2 * (a[i + 1] - a[i])
        if i > 0:
            expr -= 2 * th * bb[i] ** 2 * (a[i] - a[i - 1])
        da.append(expr)
    db = [b[k] * (a[k] - a[k + 1]) + 2 * th * b[k] * (bb[k] ** 2 - 2 * bb[k + 1] ** 2 + bb[k + 2] ** 2)
          for k in range(n - 1)]
    H = sum(x ** 2 for x in a) / 2 + sum(x ** 2 for x in b)
    rate = sum(sp.diff(H, x) * d for x, d in zip(a, da)) + sum(sp.diff(H, x) * d for x, d in zip(b, db))
    return sp.lambdify((a, b, th), sp.expand(rate))


class TestField:
    def test_two_site_example(self):
        da, db = dissipative_field(np.array([1.0, -1.0]), np.array([1.0]), 0.5)
        np.testing.assert_allclose(da, [-4.0, 4.0])
        np.testing.assert_allclose(db, [0.0], atol=1e-15)

    def test_matches_component_loop(self, rng):
        for n in (2, 3, 6):
            f = random_flaschka(rng, n)
            da, db = dissipative_field(f.a, f.b, 0.7)
            oa, ob = dissipative_rhs_loop(f.a, f.b, 0.7)
            np.testing.assert_allclose(da, oa, atol=1e-14)
            np.testing.assert_allclose(db, ob, atol=1e-14)

    def test_matches_double_bracket_matrix_form(self, rng):
        for n in (2, 4, 7):
            f = random_flaschka(rng, n)
            X = dissipative_matrix_field(f.matrix().dense(), 0.4)
            d = dissipative_drift(f, 0.4)
            np.testing.assert_allclose(np.diag(X), d.a, atol=1e-13)
            np.testing.assert_allclose(np.diag(X, 1), d.b, atol=1e-13)
            i, j = np.indices(X.shape)
            assert np.abs(X[np.abs(i - j) >= 2]).max(initial=0.0) < 1e-14

    def test_theta_zero_is_toda(self, rng):
        f = random_flaschka(rng, 4)
        y = f.pack()
        np.testing.assert_array_equal(packed_dissipative_field(0.0)(y), packed_flaschka_field(y))

    def test_bad_theta(self):
        with pytest.raises(ValueError):
            DissipationConfig(-1.0)


class TestEnergyLaw:
    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_closed_form_matches_sympy(self, n, rng):
        oracle = symbolic_h2_rate(n)
        for _ in range(5):
            f = random_flaschka(rng, n)
            theta = rng.uniform(0, 2)
            assert energy_decay_rate(f, theta) == pytest.approx(oracle(f.a, f.b, theta), rel=1e-12, abs=1e-14)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 7), st.integers(0, 2**32 - 1), st.floats(0, 3))
    def test_nonpositive(self, n, seed, theta):
        f = random_flaschka(np.random.default_rng(seed), n)
        assert energy_decay_rate(f, theta) <= 0.0

    def test_zero_only_without_bonds(self):
        assert energy_decay_rate(FlaschkaState([1.0, 1.0, 1.0], [0.3, 0.3]), 1.0) < 0
        assert energy_decay_rate(FlaschkaState([1.0, -2.0, 5.0], [0.0, 0.0]), 1.0) == 0.0

    def test_integral_rate_k2(self, rng):
        f = random_flaschka(rng, 4)
        assert integral_rate(f, 0.5, 2) == pytest.approx(energy_decay_rate(f, 0.5), rel=1e-12)

    def test_numerical_rate(self, rng):
        f = random_flaschka(rng, 4)
        h = 1e-4
        field = packed_dissipative_field(0.5)
        y0 = f.pack()
        yp, ym = rk4_step(field, y0, h), rk4_step(field, y0, -h)

        def H2(y):
            return 0.5 * np.sum(y[:4] ** 2) + np.sum(y[4:] ** 2)

        rate = (H2(yp) - H2(ym)) / (2 * h)
        assert rate == pytest.approx(energy_decay_rate(f, 0.5), rel=1e-6)


class TestLongTime:
    def test_equilibrium(self):
        f = FlaschkaState([0.2, -0.1, 0.4], [0.5, 0.3])
        tr = run_dissipative(f, 1.0, OdeRunSpec(1e-2, 60.0, 10))
        eq = detect_equilibrium(tr, 1e-6, theta=1.0)
        assert eq.converged
        assert eq.a_limits.sum() == pytest.approx(f.a.sum(), abs=1e-12)
        a, b = tr.flaschka()
        H2 = 0.5 * (a ** 2).sum(1) + (b ** 2).sum(1)
        assert np.all(np.diff(H2) <= 1e-15)

    def test_not_converged(self):
        f = FlaschkaState([0.2, -0.1, 0.4], [0.5, 0.3])
        eq = detect_equilibrium(run_dissipative(f, 0.1, OdeRunSpec(1e-2, 0.5)), 1e-8, theta=0.1)
        assert not eq.converged and eq.time is None


class TestCombined:
    def test_sigma_zero_bitwise(self, rng):
        f = random_flaschka(rng, 4)
        a, b = combined_update(f.a, f.b, np.zeros(3), 0.5, 1e-3, np.ones(3))
        np.testing.assert_array_equal(np.concatenate([a, b]), rk4_step(packed_dissipative_field(0.5), f.pack(), 1e-3))

    def test_theta_zero_is_stochastic_toda(self, rng):
        f = random_flaschka(rng, 4)
        dW = 0.03 * rng.standard_normal(3)
        sigma = np.full(3, 0.2)
        got = combined_update(f.a, f.b, sigma, 0.0, 1e-3, dW)
        ref = stochastic_toda_update(f.a, f.b, sigma, 1e-3, dW)
        np.testing.assert_array_equal(got[0], ref[0])
        np.testing.assert_array_equal(got[1], ref[1])
