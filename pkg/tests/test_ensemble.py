import numpy as np
import pytest

from todaflow.ensemble import (
    EnsembleSpec,
    LatticeSystem,
    ObservableSeries,
    energy_bound,
    energy_bound_verdict,
    generator_estimate,
    merge_series,
    run_ensemble,
    spectrum_drift,
    tridiagonality_residual,
    write_series_csv,
)
from todaflow.integrate import OdeRunSpec, run_toda
from todaflow.lattice import FlaschkaState
from todaflow.stochastic import NoiseConfig, run_stochastic_toda

A0 = np.array([0.3, -0.1, 0.2, -0.4])
B0 = np.array([0.5, 0.4, 0.6])


def spec(kind="stochastic", sigma=0.3, theta=0.0, n_paths=40, workers=1, t_end=1.0, seed=7):
    return EnsembleSpec(n_paths, seed, LatticeSystem(kind, A0, B0, sigma, theta), OdeRunSpec(1e-3, t_end, 50), workers)


class TestSystem:
    def test_sigma_broadcast(self):
        s = LatticeSystem("stochastic", A0, B0, 0.1)
        np.testing.assert_array_equal(s.sigma, [0.1, 0.1, 0.1])

    @pytest.mark.parametrize("kind,kw", [
        ("deterministic", dict(sigma=0.1)), ("stochastic", dict(theta=0.1)),
        ("dissipative", dict(sigma=0.1)), ("turbulent", {}),
    ])
    def test_rejects(self, kind, kw):
        with pytest.raises(ValueError):
            LatticeSystem(kind, A0, B0, **kw)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            spec(n_paths=0)


class TestRunEnsemble:
    def test_path_p_is_stream_p(self):
        res = run_ensemble(spec(n_paths=3))
        tr = run_stochastic_toda(FlaschkaState(A0, B0), NoiseConfig(np.full(3, 0.3), 7), OdeRunSpec(1e-3, 1.0, 50))
        np.testing.assert_array_equal(res.first_path, tr.states)

    def test_worker_count_invariance(self):
        names = ("H1", "H2", "H3", "V", "b_max")
        one = run_ensemble(spec(workers=1), names)
        three = run_ensemble(spec(workers=3), names)
        for name in names:
            np.testing.assert_array_equal(one[name].mean, three[name].mean)
            np.testing.assert_array_equal(one[name].variance, three[name].variance)

    def test_deterministic_variance_zero(self):
        res = run_ensemble(spec("deterministic", sigma=0.0, n_paths=5), ("H2",))
        np.testing.assert_array_equal(res["H2"].variance, 0.0)
        assert res["H2"].n_paths == 5
        tr = run_toda("flaschka", FlaschkaState(A0, B0), OdeRunSpec(1e-3, 1.0, 50))
        np.testing.assert_array_equal(res.first_path, tr.states)

    def test_h1_exact(self):
        res = run_ensemble(spec(n_paths=20), ("H1",))
        assert np.abs(res["H1"].mean - A0.sum()).max() < 1e-14

    def test_excluded_paths_counted(self):
        s = EnsembleSpec(6, 1, LatticeSystem("stochastic", 3 * A0, 4 * B0, 40.0), OdeRunSpec(0.05, 5.0), 1)
        res = run_ensemble(s, ("H2",))
        assert len(res.excluded) > 0
        h = res["H2"]
        assert h.n_paths + h.n_excluded == 6
        if h.n_paths:
            assert np.all(np.isfinite(h.mean))

    def test_isospectral_traces(self):
        res = run_ensemble(spec("isospectral", sigma=0.2, n_paths=4), ("H2", "H3"))
        assert res.form == "lax"
        assert np.abs(res["H3"].mean - res["H3"].mean[0]).max() < 1e-5
        assert tridiagonality_residual(res.first_path[-1].reshape(4, 4)) > 0

    def test_unknown_observable(self):
        with pytest.raises(KeyError):
            run_ensemble(spec(n_paths=1), ("Q",))


class TestStatistics:
    def _series(self, values, name="H2"):
        values = np.asarray(values, dtype=float)
        t = np.arange(values.shape[1], dtype=float)
        return ObservableSeries(name, t, values.mean(0), values.var(0, ddof=1), values.shape[0])

    def test_stderr(self):
        s = self._series([[1.0, 2.0], [3.0, 6.0]])
        np.testing.assert_allclose(s.stderr, np.sqrt(s.variance / 2))

    def test_merge_equals_pooled(self, rng):
        vals = rng.standard_normal((50, 4))
        merged = merge_series([self._series(vals[:20]), self._series(vals[20:])])
        full = self._series(vals)
        np.testing.assert_allclose(merged.mean, full.mean, atol=1e-14)
        np.testing.assert_allclose(merged.variance, full.variance, atol=1e-13)
        assert merged.n_paths == 50

    def test_merge_mismatch(self):
        a = self._series([[1.0, 2.0], [3.0, 4.0]])
        b = self._series([[1.0, 2.0, 3.0], [3.0, 4.0, 5.0]])
        with pytest.raises(ValueError):
            merge_series([a, b])

    def test_generator_estimate(self):
        s = ObservableSeries("f", np.array([0.0, 0.5, 1.0]), np.array([1.0, 2.0, 2.5]), np.zeros(3), 3)
        np.testing.assert_allclose(generator_estimate(s), [2.0, 1.0])


class TestEnergyBound:
    def test_sigma_zero_conservation(self):
        res = run_ensemble(spec("deterministic", sigma=0.0, n_paths=2), ("H2",))
        v = energy_bound_verdict(res["H2"], 0.0)
        assert v.holds
        assert np.abs(v.margin).max() < 1e-9

    def test_holds_for_stochastic_ensemble(self):
        res = run_ensemble(spec(sigma=0.1, n_paths=200, t_end=2.0), ("H2",))
        assert energy_bound_verdict(res["H2"], 0.1).holds

    def test_detects_violation(self):
        t = np.linspace(0, 1, 5)
        s = ObservableSeries("H2", t, np.exp(t), np.full(5, 1e-6), 100)
        v = energy_bound_verdict(s, 0.1)
        assert not v.holds
        assert v.margin[-1] < 0

    def test_bound_formula(self):
        np.testing.assert_allclose(energy_bound(2.0, 0.5, [0.0, 1.0]), [2.0, 2.0 * np.e])


class TestDiagnostics:
    def test_tridiagonal_zero(self):
        assert tridiagonality_residual(FlaschkaState(A0, B0).matrix().dense()) == 0.0

    def test_residual_value(self):
        M = np.eye(4)
        M[0, 3] = -0.25
        assert tridiagonality_residual(M) == 0.25

    def test_spectrum_drift_deterministic(self):
        tr = run_toda("flaschka", FlaschkaState(A0, B0), OdeRunSpec(1e-3, 10.0, 500))
        drift = spectrum_drift(tr)
        assert drift.shape == (len(tr),)
        assert drift[0] == 0.0
        assert drift.max() < 1e-8

    def test_spectrum_drift_constant(self):
        M = np.stack([np.diag([1.0, 2.0])] * 3)
        np.testing.assert_array_equal(spectrum_drift(M), 0.0)

    def test_csv(self, tmp_path):
        s = ObservableSeries("H2", np.array([0.0, 1.0]), np.array([1.0, 1.5]), np.array([0.0, 0.25]), 4)
        p = tmp_path / "h2.csv"
        write_series_csv(p, s)
        assert p.read_text().splitlines() == ["t,mean,variance,stderr,n_paths", "0.0,1.0,0.0,0.0,4", "1.0,1.5,0.25,0.25,4"]
