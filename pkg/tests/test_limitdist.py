import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from breakscan.errors import SchemaMismatch
from breakscan.limitdist import (
    CriticalValueTable,
    FunctionalKind,
    FunctionalSpec,
    build_table,
    draw_block,
    draw_functional,
    level_key,
    ou_from_brownian,
    ou_functionals,
    p_value,
    simulate_brownian_grid,
    simulate_draws,
)
from breakscan.streams import stream


class Ones:
    def standard_normal(self, size):
        return np.ones(size)


def test_brownian_stub_partial_sums():
    path = simulate_brownian_grid(2, 1, Ones())[:, 0]
    np.testing.assert_allclose(path, [0.0, 1 / np.sqrt(2), 2 / np.sqrt(2)])


def test_brownian_moments():
    w = simulate_brownian_grid(10, 100_000, stream(0, 0))
    assert np.mean(w[-1] ** 2) == pytest.approx(1.0, abs=0.02)
    assert np.mean(w[5] * w[-1]) == pytest.approx(0.5, abs=0.02)
    assert np.array_equal(w[0], np.zeros(100_000))


def test_ou_zero_decay_is_brownian():
    w = simulate_brownian_grid(200, 3, stream(1, 0))
    assert np.array_equal(ou_from_brownian(w, 0.0), w)


def test_ou_stationary_variance():
    c = 10.0
    w = simulate_brownian_grid(1000, 5000, stream(2, 0))
    int_j2 = ou_functionals(ou_from_brownian(w, c))["int_J2"]
    assert abs(np.mean(int_j2) - 1 / (2 * c)) <= 0.15 / (2 * c)


def test_ou_quadratic_mean():
    # E[Q(1)] = 1 + (E J(1)^2 - 1)/2 with E J(1)^2 = (1 - e^{-2c})/(2c)
    c = 1.0
    spec = FunctionalSpec(kind="OUQuadratic", c=c, grid_points=500)
    draws = simulate_draws(spec, 20_000, 3)
    target = 1 + ((1 - np.exp(-2 * c)) / (2 * c) - 1) / 2
    assert abs(draws.mean() - target) < 4 * draws.std() / np.sqrt(draws.size) + 0.01


def test_degenerate_trimming_quantile():
    spec = FunctionalSpec(kind="SupNBB", trimming=(0.5, 0.5))
    table = build_table(spec, 100_000, master_seed=4)
    assert table.critical_value(0.05) == pytest.approx(stats.chi2.ppf(0.95, 1), abs=0.1)


def test_chisq_mean():
    draws = simulate_draws(FunctionalSpec(kind="ChiSq", p=2), 100_000, 5)
    assert draws.mean() == pytest.approx(2.0, abs=0.05)


def test_chisq_median_and_p_value():
    table = build_table(FunctionalSpec(kind="ChiSq"), 100_000, levels=(0.5,), master_seed=6)
    assert table.quantiles[0.5] == pytest.approx(0.4549, abs=0.02)
    full = build_table(FunctionalSpec(kind="ChiSq"), 100_000, master_seed=6, keep_draws=True)
    assert p_value(full, stats.chi2.ppf(0.5, 1)).value == pytest.approx(0.5, abs=0.02)


def test_quantiles_monotone():
    table = build_table(FunctionalSpec(kind="SupNBB", grid_points=200), 5000, master_seed=7)
    q = table.quantiles
    assert q[0.90] <= q[0.95] <= q[0.99]


def test_table_seed_stability(supnbb_table):
    spec = supnbb_table.spec
    other = build_table(spec, 200_000, master_seed=99)
    assert abs(other.critical_value(0.05) - supnbb_table.critical_value(0.05)) <= 0.15


def test_grid_refinement():
    coarse = build_table(FunctionalSpec(kind="SupNBB", grid_points=500), 200_000, master_seed=8)
    fine = build_table(FunctionalSpec(kind="SupNBB", grid_points=2000), 200_000, master_seed=8)
    assert abs(fine.critical_value(0.05) - coarse.critical_value(0.05)) <= 0.2


def test_dimension_additivity():
    spec = FunctionalSpec(kind="ChiSqPlusSupBB", p=2, grid_points=200)
    combined = draw_block(spec, 50, stream(9, 0), stream(9, 1))
    bridge = draw_block(FunctionalSpec(kind="SupNBB", p=2, grid_points=200), 50, stream(9, 0))
    chi = stream(9, 1).chisquare(2, size=50)
    np.testing.assert_allclose(combined, bridge + chi, rtol=1e-14)
    assert simulate_draws(spec, 5000, 10).mean() > 2.0


def test_draw_functional_deterministic():
    spec = FunctionalSpec(kind="SupNBB", grid_points=100)
    assert draw_functional(spec, stream(1, 2)) == draw_functional(spec, stream(1, 2))
    assert draw_functional(spec, stream(1, 2)) >= 0.0


def test_threads_do_not_change_draws():
    spec = FunctionalSpec(kind="SupNBB", grid_points=100)
    np.testing.assert_array_equal(
        simulate_draws(spec, 3500, 11, threads=1), simulate_draws(spec, 3500, 11, threads=2)
    )


class TestPValue:
    @pytest.fixture
    def table(self):
        return CriticalValueTable(
            spec=FunctionalSpec(kind="ChiSq"),
            replications=10_000,
            quantiles={0.90: 2.7, 0.95: 3.8, 0.99: 6.6},
            seed=0,
        )

    def test_below_range_clamped(self, table):
        assert p_value(table, 0.1) == (pytest.approx(0.10), True)

    def test_above_range_clamped(self, table):
        assert p_value(table, 50.0) == (pytest.approx(0.01), True)

    def test_at_quantile(self, table):
        assert p_value(table, 3.8) == (pytest.approx(0.05), False)

    def test_interpolates(self, table):
        assert p_value(table, 3.25).value == pytest.approx(0.075)

    def test_draws_below_all(self):
        t = CriticalValueTable(FunctionalSpec(kind="ChiSq"), 3, {0.5: 1.0}, 0, np.array([1.0, 2.0, 3.0]))
        assert p_value(t, -1.0) == (1.0, True)
        assert p_value(t, 2.0) == (pytest.approx(2 / 3), False)

    def test_critical_value_edges(self, table):
        assert table.critical_value(1.0) == -np.inf
        assert table.critical_value(0.0) == np.inf
        assert table.critical_value(0.05) == 3.8
        with pytest.raises(ValueError):
            table.critical_value(0.5)


def test_json_round_trip(tmp_path):
    table = build_table(FunctionalSpec(kind="SupNBB", grid_points=100), 1000, master_seed=12, keep_draws=True)
    path = tmp_path / "t.json"
    table.save(path)
    back = CriticalValueTable.load(path)
    assert back.quantiles == table.quantiles and back.spec == table.spec
    np.testing.assert_array_equal(back.draws, table.draws)
    payload = json.loads(path.read_text())
    assert set(payload["quantiles"]) == {"0.90", "0.95", "0.99"}
    assert payload["spec"]["trimming"] == [0.15, 0.85]


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"spec": {}}')
    with pytest.raises(SchemaMismatch):
        CriticalValueTable.load(path)
    path.write_text("not json")
    with pytest.raises(SchemaMismatch):
        CriticalValueTable.load(path)


@given(level=st.floats(0.001, 0.999))
def test_level_key_round_trip(level):
    level = round(level, 6)
    assert float(level_key(level)) == pytest.approx(level)


def test_functional_spec_validation():
    with pytest.raises(ValueError):
        FunctionalSpec(kind="SupNBB", grid_points=50)
    with pytest.raises(ValueError):
        FunctionalSpec(kind="OUQuadratic", p=2, c=1.0)
    assert FunctionalKind.parse("sup-nbb") is FunctionalKind.SUP_NBB
    with pytest.raises(ValueError):
        build_table(FunctionalSpec(kind="ChiSq"), 100)
