import numpy as np
import pytest

from conftest import random_flaschka
from todaflow.algebra import eig_sym_tridiag
from todaflow.exceptions import NonFiniteStateError
from todaflow.integrate import OdeRunSpec, Trajectory, integrate, rk4_step, run_toda
from todaflow.lattice import FlaschkaState, PhysicalState, integrals, physical_from_flaschka


class TestRunSpec:
    def test_steps_and_records(self):
        spec = OdeRunSpec(0.1, 1.0, 3)
        assert spec.n_steps == 10
        assert spec.record_steps() == [0, 3, 6, 9, 10]

    @pytest.mark.parametrize("kw", [
        dict(dt=-1.0, t_end=1.0), dict(dt=0.0, t_end=1.0), dict(dt=1.0, t_end=0.5),
        dict(dt=0.1, t_end=1.0, record_every=0), dict(dt=np.nan, t_end=1.0),
    ])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            OdeRunSpec(**kw)


class TestTrajectory:
    def test_times_must_increase(self):
        with pytest.raises(ValueError):
            Trajectory([0.0, 0.0], np.zeros((2, 3)))

    def test_physical_view(self):
        tr = Trajectory([0.0], [[0.0, 0.0, 2.0, -2.0]], form="physical")
        a, b = tr.flaschka()
        np.testing.assert_array_equal(a, [[-1.0, 1.0]])
        np.testing.assert_array_equal(b, [[0.5]])


class TestRK4:
    def test_exponential_order(self):
        errs = []
        for dt in (0.1, 0.05):
            y = np.array([1.0])
            for _ in range(int(round(1 / dt))):
                y = rk4_step(lambda u: -u, y, dt)
            errs.append(abs(y[0] - np.exp(-1)))
        assert np.log2(errs[0] / errs[1]) == pytest.approx(4, abs=0.2)

    def test_non_finite_raises(self):
        with pytest.raises(NonFiniteStateError), np.errstate(over="ignore", invalid="ignore"):
            rk4_step(lambda u: u ** 8, np.array([1e40]), 1.0)

    def test_unchecked_returns(self):
        with np.errstate(over="ignore", invalid="ignore"):
            out = rk4_step(lambda u: u ** 8, np.array([1e40]), 1.0, check=False)
        assert not np.isfinite(out[0])

    def test_custom_step(self):
        tr = integrate(None, np.zeros(1), OdeRunSpec(1.0, 3.0), step=lambda y, k: y + k)
        np.testing.assert_array_equal(tr.states[:, 0], [0, 0, 1, 3])


class TestTodaRuns:
    def test_integrals_conserved(self, rng):
        f = random_flaschka(rng, 4)
        tr = run_toda("flaschka", f, OdeRunSpec(1e-3, 10.0, 100))
        H = integrals(tr.lax_matrices(), 4)
        assert np.max(np.abs(H - H[0]) / np.abs(H[0])) < 1e-8

    def test_three_forms_agree(self, rng):
        f = random_flaschka(rng, 4)
        spec = OdeRunSpec(1e-3, 5.0, 50)
        ref = run_toda("flaschka", f, spec).flaschka()
        for form, init in (("physical", physical_from_flaschka(f)), ("lax", f.matrix().dense())):
            a, b = run_toda(form, init, spec).flaschka()
            assert np.abs(a - ref[0]).max() < 1e-8
            assert np.abs(b - ref[1]).max() < 1e-8

    def test_time_reversal(self, rng):
        f = random_flaschka(rng, 4)
        spec = OdeRunSpec(1e-3, 3.0, 3000)
        fwd = run_toda("physical", physical_from_flaschka(f), spec)
        x, y = np.split(fwd.states[-1], 2)
        back = run_toda("physical", PhysicalState(x, -y), spec)
        xb, yb = np.split(back.states[-1], 2)
        s0 = physical_from_flaschka(f)
        assert np.abs(xb - s0.x).max() < 1e-8
        assert np.abs(-yb - s0.y).max() < 1e-8

    def test_equilibrium_is_fixed(self):
        f = FlaschkaState([3.0, 1.0, -2.0], [0.0, 0.0])
        tr = run_toda("flaschka", f, OdeRunSpec(0.01, 1.0))
        np.testing.assert_array_equal(tr.states[-1], f.pack())

    def test_sorting(self):
        f = FlaschkaState([0.2, -0.1, 0.4], [0.5, 0.3])
        lam = eig_sym_tridiag(f.matrix())
        tr = run_toda("flaschka", f, OdeRunSpec(1e-2, 60.0, 100))
        a, b = tr.flaschka()
        # da_1/dt = -2 b_1^2 pushes the smallest eigenvalue to the top site
        np.testing.assert_allclose(a[-1], lam, atol=1e-6)
        assert np.abs(b[-1]).max() < 1e-6

    def test_unknown_form(self):
        with pytest.raises(ValueError):
            run_toda("polar", FlaschkaState([0.0, 0.0], [0.5]), OdeRunSpec(0.1, 1.0))
