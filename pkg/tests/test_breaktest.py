import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from breakscan.breaktest import (
    ScanConfig,
    StatisticKind,
    WaldScan,
    break_grid,
    fit_two_regime_ivx,
    fit_two_regime_ols,
    scan,
    scan_to_json,
    wald_ivx_at,
    wald_ivx_simplified,
    wald_ols_at,
)
from breakscan.dgp import Sample
from breakscan.errors import (
    DegenerateDenominator,
    EmptyGrid,
    RegimeTooSmall,
    ScanFailed,
    SingularDesign,
)
from breakscan.ivx import IvxConfig, build_instruments

from conftest import make_sample, noiseless

X8 = np.array([0.3, -1.2, 0.8, 2.1, -0.4, 1.5, 0.9, -2.2])
Y8 = np.array([0.5, -0.7, 1.1, 1.8, 0.2, -0.9, 1.4, 0.3])

X10 = np.array([1.0, 1.7, 2.1, 1.4, 0.6, -0.3, 0.4, 1.2, 2.5, 3.1])
Y10 = np.array([0.4, 1.1, 0.9, 0.2, -0.5, 0.8, 0.3, 1.6, 2.0, 0.7])
Z10 = np.array([0.9, 1.2, 0.3, -0.8, -0.9, -0.6, 0.8, 0.6, 1.4, 0.9])


def cramer2(a, b):
    det = a[0][0] * a[1][1] - a[0][1] * a[1][0]
    return np.array([
        (b[0] * a[1][1] - a[0][1] * b[1]) / det,
        (a[0][0] * b[1] - b[0] * a[1][0]) / det,
    ])


def iv_oracle(x, z, y):
    n = len(x)
    a = [[n, sum(x)], [sum(z), sum(z * x)]]
    return cramer2(a, [sum(y), sum(z * y)])


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


class TestFits:
    def test_ols_normal_equations(self):
        fit = fit_two_regime_ols(Sample(y=Y8, x=X8), 4, intercept=True)
        np.testing.assert_allclose(fit.theta1, iv_oracle(X8[:4], X8[:4], Y8[:4]), rtol=1e-12)
        np.testing.assert_allclose(fit.theta2, iv_oracle(X8[4:], X8[4:], Y8[4:]), rtol=1e-12)
        resid = Y8 - np.concatenate([
            fit.theta1[0] + fit.theta1[1] * X8[:4], fit.theta2[0] + fit.theta2[1] * X8[4:]
        ])
        assert fit.sigma2_hat == pytest.approx(np.mean(resid**2), rel=1e-12)

    def test_ivx_explicit_solve(self):
        fit = fit_two_regime_ivx(Sample(y=Y10, x=X10), Z10, 5, intercept=True)
        np.testing.assert_allclose(fit.theta1, iv_oracle(X10[:5], Z10[:5], Y10[:5]), rtol=1e-12)
        np.testing.assert_allclose(fit.theta2, iv_oracle(X10[5:], Z10[5:], Y10[5:]), rtol=1e-12)

    def test_noiseless_recovery(self, rng):
        s = noiseless(np.cumsum(rng.standard_normal(60)))
        for fit in (fit_two_regime_ols(s, 30), fit_two_regime_ivx(s, build_instruments(s.x), 30)):
            np.testing.assert_allclose([fit.theta1[0], fit.theta2[0]], [1.0, 1.0], atol=1e-10)
            assert np.abs(fit.residuals).max() <= 1e-10

    def test_linearity(self):
        s = make_sample(T=60, seed=2)
        a = fit_two_regime_ols(s, 25)
        b = fit_two_regime_ols(Sample(y=2 * s.y, x=s.x), 25)
        np.testing.assert_allclose(b.theta1, 2 * a.theta1, rtol=1e-12)
        assert b.sigma2_hat == pytest.approx(4 * a.sigma2_hat, rel=1e-12)

    def test_z_equal_x_is_ols(self):
        s = make_sample(T=60, seed=3)
        a = fit_two_regime_ols(s, 30, intercept=True)
        b = fit_two_regime_ivx(s, s.x, 30, intercept=True)
        assert np.array_equal(a.theta1, b.theta1) and np.array_equal(a.theta2, b.theta2)
        assert a.sigma2_hat == b.sigma2_hat

    def test_regime_too_small(self):
        s = make_sample(T=40)
        with pytest.raises(RegimeTooSmall):
            fit_two_regime_ols(s, 2)
        with pytest.raises(RegimeTooSmall):
            fit_two_regime_ols(s, 37, intercept=True)

    def test_singular_design(self):
        x = np.concatenate([np.zeros(10), np.ones(10)])
        with pytest.raises(SingularDesign):
            fit_two_regime_ols(Sample(y=np.ones(20), x=x), 10)


class TestWald:
    def test_scalar_closed_form(self, rng):
        x = rng.standard_normal(12)
        y = rng.standard_normal(12)
        k = 5
        b1 = x[:k] @ y[:k] / (x[:k] @ x[:k])
        b2 = x[k:] @ y[k:] / (x[k:] @ x[k:])
        resid = np.concatenate([y[:k] - b1 * x[:k], y[k:] - b2 * x[k:]])
        s2 = np.mean(resid**2)
        s1x, s2x = x[:k] @ x[:k], x[k:] @ x[k:]
        expected = (b1 - b2) ** 2 * s1x * s2x / (s2 * (s1x + s2x))
        assert rel(wald_ols_at(Sample(y=y, x=x), k), expected) < 1e-12

    def test_noiseless_null_is_zero(self, rng):
        s = noiseless(np.cumsum(rng.standard_normal(50)))
        assert wald_ols_at(s, 20) == 0.0
        assert wald_ivx_at(s, build_instruments(s.x), 20) == pytest.approx(0.0, abs=1e-10)

    def test_noiseless_break_is_infinite(self, rng):
        s = noiseless(np.cumsum(rng.standard_normal(50)), beta2=2.0, k=25)
        assert wald_ols_at(s, 25) == np.inf

    def test_z_equal_x_exact(self):
        for seed in range(5):
            s = make_sample(T=80, seed=seed)
            assert wald_ivx_at(s, s.x, 33) == wald_ols_at(s, 33)
            assert wald_ivx_at(s, s.x, 33, intercept=True) == wald_ols_at(s, 33, intercept=True)

    @given(seed=st.integers(0, 10_000), T=st.integers(50, 200), gamma=st.sampled_from([0.5, 1.0]))
    def test_simplified_matches_matrix_form(self, seed, T, gamma):
        s = make_sample(T=T, gamma=gamma, seed=seed, rho=-0.5)
        z = build_instruments(s.x)
        k = T // 3
        assert rel(wald_ivx_simplified(s, z, k), wald_ivx_at(s, z, k)) < 1e-8

    def test_simplified_with_z_equal_x_is_ols_closed_form(self):
        s = make_sample(T=50, seed=4)
        assert rel(wald_ivx_simplified(s, s.x, 20), wald_ols_at(s, 20)) < 1e-10

    def test_simplified_zero_residual(self, rng):
        s = noiseless(np.cumsum(rng.standard_normal(50)))
        assert wald_ivx_simplified(s, build_instruments(s.x), 20) == pytest.approx(0.0, abs=1e-12)

    def test_simplified_degenerate(self):
        x = np.ones(20)
        z = np.concatenate([np.ones(10), -np.ones(10)])
        with pytest.raises(DegenerateDenominator):
            wald_ivx_simplified(Sample(y=np.arange(20.0), x=x), z, 10)

    @pytest.mark.parametrize("intercept", [False, True])
    def test_scale_invariance(self, intercept):
        s = make_sample(T=120, seed=6)
        k = 50
        scaled = Sample(y=3 * s.y, x=2 * s.x)
        cfg = IvxConfig()
        assert rel(wald_ols_at(scaled, k, intercept), wald_ols_at(s, k, intercept)) < 1e-9
        a = wald_ivx_at(s, build_instruments(s.x, cfg), k, intercept)
        b = wald_ivx_at(scaled, build_instruments(scaled.x, cfg), k, intercept)
        assert rel(b, a) < 1e-9

    def test_within_regime_permutation(self, rng):
        s = make_sample(T=90, seed=8)
        z = build_instruments(s.x)
        k = 40
        perm = np.concatenate([rng.permutation(k), k + rng.permutation(90 - k)])
        t = Sample(y=s.y[perm], x=s.x[perm])
        assert rel(wald_ivx_at(t, z[perm], k), wald_ivx_at(s, z, k)) < 1e-10
        assert rel(wald_ols_at(t, k, True), wald_ols_at(s, k, True)) < 1e-10

    def test_slopes_only_schur_oracle(self):
        s = make_sample(T=100, seed=9, beta2=0.3)
        z = build_instruments(s.x)
        k = 45
        fit = fit_two_regime_ivx(s, z, k, intercept=True)
        X = np.column_stack([np.ones(100), s.x[:, 0]])
        Z = np.column_stack([np.ones(100), z])
        Q = np.zeros((2, 2))
        for r in (slice(0, k), slice(k, 100)):
            Ainv = np.linalg.inv(Z[r].T @ X[r])
            Q += Ainv @ (Z[r].T @ Z[r]) @ Ainv.T
        P = np.linalg.inv(Q)
        # (Q_ss)^-1 is the Schur complement of P_aa in P.
        schur = P[1, 1] - P[1, 0] * P[0, 1] / P[0, 0]
        d = fit.theta1[1] - fit.theta2[1]
        expected = d * schur * d / fit.sigma2_hat
        assert rel(wald_ivx_at(s, z, k, intercept=True, slopes_only=True), expected) < 1e-10
        assert wald_ivx_at(s, z, k, intercept=True) >= expected * (1 - 1e-12)


class TestGrid:
    def test_every_k(self):
        pis, ks = break_grid(100, 0.15, 0.85)
        np.testing.assert_array_equal(ks, np.arange(15, 86))
        np.testing.assert_allclose(pis, ks / 100)

    def test_dedupe_keeps_first(self):
        pis, ks = break_grid(20, 0.2, 0.3, step=0.01)
        assert list(ks) == [4, 5, 6]
        np.testing.assert_allclose(pis, [0.2, 0.25, 0.3])

    def test_single_point(self):
        _, ks = break_grid(100, 0.5, 0.5)
        assert list(ks) == [50]


class TestScan:
    def test_matches_exhaustive_oracle(self):
        s = make_sample(T=100, seed=10)
        res = scan(s, ScanConfig(step=0.01))
        oracle = [wald_ols_at(s, int(np.floor(100 * (0.15 + 0.01 * i) + 1e-9))) for i in range(71)]
        assert res.sup_value == pytest.approx(max(oracle), rel=1e-9)
        assert res.sup_value >= res.stats.max()

    @pytest.mark.parametrize("kind", ["ols", "ivx"])
    @pytest.mark.parametrize("intercept,slopes_only", [(False, False), (True, False), (True, True)])
    def test_fast_matches_exact(self, kind, intercept, slopes_only):
        s = make_sample(T=150, seed=11, rho=-0.8, beta2=0.2)
        cfg = ScanConfig(kind=kind, intercept=intercept, slopes_only=slopes_only)
        fast, exact = scan(s, cfg), scan(s, cfg, method="exact")
        np.testing.assert_allclose(fast.stats, exact.stats, rtol=1e-8)
        assert fast.argmax_k == exact.argmax_k

    def test_multiple_regressors(self):
        from breakscan.dgp import BreakDgp, RegressorLaw, simulate_sample
        from breakscan.streams import stream

        dgp = BreakDgp(law=RegressorLaw(p=3, gamma=0.7, c=(1.0, 2.0, 3.0)), T=120)
        s = simulate_sample(dgp, stream(0, 1))
        cfg = ScanConfig(kind="ivx", intercept=True)
        np.testing.assert_allclose(scan(s, cfg).stats, scan(s, cfg, method="exact").stats, rtol=1e-8)

    def test_single_point_grid(self):
        s = make_sample(T=100, seed=12)
        res = scan(s, ScanConfig(pi_lo=0.4, pi_hi=0.4, kind="ivx"))
        assert rel(res.sup_value, wald_ivx_at(s, build_instruments(s.x), 40)) < 1e-10
        assert res.argmax_k == 40

    def test_widening_trimming_never_lowers_sup(self):
        s = make_sample(T=200, seed=13)
        narrow = scan(s, ScanConfig(pi_lo=0.3, pi_hi=0.7)).sup_value
        wide = scan(s, ScanConfig(pi_lo=0.1, pi_hi=0.9)).sup_value
        assert wide >= narrow

    def test_ties_pick_first(self, rng):
        s = noiseless(np.cumsum(rng.standard_normal(60)))
        res = scan(s)
        assert res.sup_value == 0.0 and res.argmax_k == res.ks[0]

    def test_detects_break_location(self):
        s = make_sample(T=400, seed=14, beta1=0.0, beta2=1.0, pi0=0.3)
        res = scan(s, ScanConfig(kind="ivx"))
        assert abs(res.argmax_fraction - 0.3) < 0.05

    def test_empty_grid(self):
        with pytest.raises(EmptyGrid):
            scan(make_sample(T=20), ScanConfig(pi_lo=0.05, pi_hi=0.1))

    def test_many_failures_raise(self, rng):
        x = np.concatenate([np.zeros(30), np.cumsum(rng.standard_normal(70))])
        s = Sample(y=rng.standard_normal(100), x=x)
        with pytest.raises(ScanFailed):
            scan(s, ScanConfig(pi_lo=0.05))

    @pytest.mark.parametrize("method", ["fast", "exact"])
    def test_few_failures_excluded(self, rng, method):
        x = np.concatenate([np.zeros(3), np.cumsum(rng.standard_normal(97))])
        s = Sample(y=rng.standard_normal(100), x=x)
        res = scan(s, ScanConfig(pi_lo=0.03), method=method)
        assert list(res.failures) == [3]
        assert np.isnan(res.stats[0]) and np.isfinite(res.sup_value)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ScanConfig(pi_lo=0.6, pi_hi=0.5)
        with pytest.raises(ValueError):
            ScanConfig(pi_lo=0.0)
        assert ScanConfig(kind="ivx").ivx == IvxConfig()
        assert StatisticKind.parse("WaldOLS") is StatisticKind.OLS

    def test_json_and_csv_round_trip(self):
        s = make_sample(T=80, seed=15)
        res = scan(s, ScanConfig(kind="ivx", step=0.05))
        back = WaldScan.from_dict(json.loads(scan_to_json(res)))
        np.testing.assert_array_equal(back.stats, res.stats)
        assert back.config == res.config and back.sup_value == res.sup_value
        lines = res.to_csv().splitlines()
        assert lines[0] == "pi,k,stat" and len(lines) == len(res.ks) + 1
