import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from builders import age_only_surface, enumerated_pv
from mortdrift.errors import DegenerateError, ValidationError
from mortdrift.rng import substream
from mortdrift.surface import CohortRateVector, MortalitySurface
from mortdrift.synthetic import reference_portfolio, synthetic_params
from mortdrift.trend import fit_trend
from mortdrift.valuation import (
    Member,
    Portfolio,
    ValuationConfig,
    ValuationResult,
    annuity_factor,
    cohort_annuity_factor,
    decompose,
    drift_gap,
    expectancy_drift,
    histogram,
    liability,
    life_expectancy,
    load_portfolio,
    omega_n,
    replicate,
    run_valuation,
    save_portfolio,
    simulate_lifetimes,
    value_cohorts,
    write_histogram,
)


def _portfolio(*rows):
    return Portfolio(tuple(Member(str(i), a, r) for i, (a, r) in enumerate(rows)))


def _bernoulli_lifetimes(q, rng, n):
    """Year-by-year survival trials; independent of the inversion sampler."""
    out = np.zeros(n, dtype=int)
    for d in range(n):
        k = 0
        while rng.random() >= q[k]:
            k += 1
        out[d] = k
    return out


# -- portfolio -------------------------------------------------------------


def test_load_single_row():
    p = load_portfolio(io.StringIO("id,age,annuity\nA,60,1000\n"))
    assert len(p) == 1 and p.members[0] == Member("A", 60, 1000.0)


@pytest.mark.parametrize(
    "body, match",
    [
        ("A,60,1000\nA,61,500\n", "duplicate id"),
        ("A,60,0\n", "annuity must be positive"),
        ("A,60\n", "expected 3 fields"),
        ("A,sixty,100\n", "malformed"),
    ],
)
def test_load_portfolio_errors(body, match):
    with pytest.raises(ValidationError, match=match):
        load_portfolio(io.StringIO("id,age,annuity\n" + body))


def test_reference_portfolio_roundtrip():
    p = reference_portfolio()
    buf = io.StringIO()
    save_portfolio(p, buf)
    again = load_portfolio(io.StringIO(buf.getvalue()))
    assert again == p
    summary = again.summary()
    assert summary["size"] == 374
    assert summary["mean_age"] == pytest.approx(63.8, abs=0.01)
    assert summary["mean_annuity"] == pytest.approx(5500.0, rel=1e-12)


def test_replicate():
    p = _portfolio((60, 1.0), (65, 2.0), (70, 3.0))
    assert replicate(p, 1) is p
    p2 = replicate(p, 2)
    assert len(p2) == 6
    assert p2.annuities.sum() == pytest.approx(2 * p.annuities.sum())
    assert len({m.id for m in p2.members}) == 6
    with pytest.raises(ValidationError):
        replicate(p, 0)


# -- lifetimes and liability ----------------------------------------------


def _cohort(q):
    return CohortRateVector(1940, 60, np.array(q, dtype=float))


def test_certain_death_and_certain_survival():
    rng = substream(5, 1)
    assert set(simulate_lifetimes([_cohort([1.0])] * 50, rng)) == {0}
    assert set(simulate_lifetimes([_cohort([0.0, 0.0, 1.0])] * 50, rng)) == {2}


def test_lifetime_distribution_matches_enumeration():
    k = simulate_lifetimes([_cohort([0.5, 0.5, 1.0])] * 100_000, substream(3, 1))
    freq = np.bincount(k, minlength=3) / k.size
    np.testing.assert_allclose(freq, [0.5, 0.25, 0.25], atol=0.01)


def test_inversion_matches_year_by_year_trials():
    q = [0.1, 0.25, 0.4, 0.7, 1.0]
    n = 40_000
    fast = simulate_lifetimes([_cohort(q)] * n, substream(11, 1))
    slow = _bernoulli_lifetimes(q, np.random.default_rng(11), n)
    f1 = np.bincount(fast, minlength=5) / n
    f2 = np.bincount(slow, minlength=5) / n
    # two-sample difference of proportions, 4 standard errors
    se = np.sqrt(2 * f2 * (1 - f2) / n)
    assert np.all(np.abs(f1 - f2) <= 4 * se + 1e-12)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30))
def test_lifetime_never_exceeds_closure(q):
    q = q + [1.0]
    k = simulate_lifetimes([_cohort(q)] * 20, substream(0, 1))
    assert np.all(k <= len(q) - 1) and np.all(k >= 0)


@pytest.mark.parametrize(
    "lifetimes, annuities, i, expected",
    [
        ([2], [1.0], 0.0, 2.0),
        ([1], [1.0], 0.025, 1 / 1.025),
        ([1, 2], [1.0, 2.0], 0.0, 5.0),
        ([0, 0], [3.0, 4.0], 0.05, 0.0),
    ],
)
def test_liability_examples(lifetimes, annuities, i, expected):
    assert liability(lifetimes, annuities, i) == pytest.approx(expected, rel=1e-15)


# -- valuation runs --------------------------------------------------------


def test_certain_death_portfolio_is_degenerate():
    surface = age_only_surface([1.0], first_age=119)
    cfg = ValuationConfig(n_inner=1000, omega_max=120, valuation_year=2000)
    r = run_valuation(cfg, None, None, _portfolio((119, 1000.0)), surface=surface)
    assert np.all(r.samples == 0.0)
    assert r.degenerate and r.std == 0.0 and math.isnan(r.cv)
    assert r.to_dict()["cv"] is None


def test_deterministic_mean_matches_enumeration():
    q_age = [0.1, 0.3, 0.5, 0.7]
    surface = age_only_surface(q_age, first_age=60)
    port = _portfolio((60, 100.0), (61, 250.0), (62, 40.0))
    cfg = ValuationConfig(n_inner=20_000, omega_max=64, valuation_year=2000,
                          discount_rate=0.03, seed=8)
    r = run_valuation(cfg, None, None, port, surface=surface)
    qv = [q_age + [1.0], q_age[1:] + [1.0], q_age[2:] + [1.0]]
    exact = enumerated_pv(qv, port.annuities, 0.03)
    assert abs(r.mean - exact) < 3 * r.std / math.sqrt(r.samples.size)
    # annuity factors give the same expectation in closed form
    closed = sum(m.annuity * annuity_factor(surface, m.age, 2000 - m.age, 0.03, 64)
                 for m in port.members)
    assert closed == pytest.approx(exact, rel=1e-12)


def test_value_cohorts_matches_enumeration():
    qv = [[0.2, 0.5, 1.0], [0.0, 0.9, 1.0]]
    res = value_cohorts([_cohort(q) for q in qv], [1.0, 2.0],
                        ValuationConfig(n_inner=30_000, discount_rate=0.0, seed=4))
    exact = enumerated_pv(qv, [1.0, 2.0], 0.0)
    assert abs(res.mean - exact) < 3 * res.std / math.sqrt(res.samples.size)


@pytest.fixture(scope="module")
def small_model():
    params = synthetic_params(first_age=50, last_age=105)
    return params, fit_trend(params.kappa, params.years)


def test_seed_determinism_independent_of_workers(small_model):
    params, fit = small_model
    port = _portfolio((65, 1000.0), (70, 2000.0), (80, 500.0))
    base = dict(mode="stochastic", n_scenarios=8, n_inner=200, seed=77)
    r1 = run_valuation(ValuationConfig(workers=1, **base), params, fit, port)
    r3 = run_valuation(ValuationConfig(workers=3, **base), params, fit, port)
    assert r1.samples.tobytes() == r3.samples.tobytes()
    det = dict(n_inner=1500, seed=77)
    d1 = run_valuation(ValuationConfig(workers=1, **det), params, fit, port)
    d4 = run_valuation(ValuationConfig(workers=4, **det), params, fit, port)
    assert d1.samples.tobytes() == d4.samples.tobytes()


def test_deterministic_unbiased_against_annuity_factors(small_model):
    params, fit = small_model
    port = _portfolio((62, 1000.0), (75, 3000.0), (90, 800.0))
    cfg = ValuationConfig(n_inner=20_000, seed=3)
    r = run_valuation(cfg, params, fit, port)
    from mortdrift.trend import SurfaceVariant, build_surface

    surf = build_surface(params, fit, None, SurfaceVariant.MEAN_REFERENCE, fit.t_M + 1 + 120 - 62)
    closed = sum(m.annuity * annuity_factor(surf, m.age, fit.t_M + 1 - m.age, 0.025)
                 for m in port.members)
    assert abs(r.mean - closed) < 3 * r.std / math.sqrt(r.samples.size)


def test_stochastic_cv_exceeds_deterministic(small_model):
    params, fit = small_model
    port = replicate(_portfolio((60, 1000.0), (64, 1500.0), (70, 800.0)), 50)
    det = run_valuation(ValuationConfig(n_inner=4000, seed=1), params, fit, port)
    sto = run_valuation(
        ValuationConfig(mode="stochastic", n_scenarios=200, n_inner=20, seed=1), params, fit, port
    )
    assert sto.cv > det.cv
    assert decompose(sto).omega > 0.05


def test_config_validation():
    with pytest.raises(ValidationError):
        ValuationConfig(n_scenarios=2, n_inner=1000)  # deterministic forces one scenario
    with pytest.raises(ValidationError):
        ValuationConfig(n_inner=10)
    with pytest.raises(ValidationError):
        ValuationConfig(discount_rate=-0.01)
    with pytest.raises(ValueError):
        ValuationConfig(mode="both")


def test_stochastic_rejects_mean_reference(small_model):
    params, fit = small_model
    cfg = ValuationConfig(mode="stochastic", n_scenarios=2, n_inner=500, variant="mean_reference")
    with pytest.raises(ValidationError):
        run_valuation(cfg, params, fit, _portfolio((65, 1.0)))


def test_result_statistics():
    samples = np.arange(1.0, 2001.0)
    r = ValuationResult(samples, 1, 2000)
    assert r.mean == 1000.5
    assert r.std == pytest.approx(np.std(samples, ddof=1), rel=1e-14)
    assert r.cv == pytest.approx(r.std / r.mean)
    qs = list(r.quantiles.values())
    assert qs == sorted(qs)
    half = 1.96 * r.std / math.sqrt(2000)
    assert r.ci95 == pytest.approx((1000.5 - half, 1000.5 + half))


# -- variance decomposition ------------------------------------------------


def test_decompose_hand_computed_toy():
    r = ValuationResult(np.array([1.0, 3.0, 5.0, 9.0]), 2, 2)
    d = decompose(r)
    # group means 2, 7; group variances 2, 8
    assert d.within == pytest.approx(5.0, abs=1e-12)
    assert d.between == pytest.approx(12.5 - 5.0 / 2, abs=1e-12)
    assert d.omega == pytest.approx(10.0 / 15.0, abs=1e-12)
    assert d.total == pytest.approx(35.0 / 3.0, abs=1e-12)


def test_decompose_shared_surface_gives_small_omega():
    rng = np.random.default_rng(0)
    r = ValuationResult(rng.normal(100.0, 5.0, 200 * 50), 200, 50)
    assert decompose(r).omega < 0.02


def test_decompose_separated_groups_gives_omega_near_one():
    rng = np.random.default_rng(0)
    centres = np.repeat(np.linspace(0, 1000, 20), 500)
    r = ValuationResult(centres + rng.normal(0, 1.0, centres.size), 20, 500)
    assert decompose(r).omega > 0.999


def test_decompose_law_of_total_variance():
    rng = np.random.default_rng(1)
    centres = np.repeat(rng.normal(0, 3.0, 400), 50)
    r = ValuationResult(centres + rng.normal(0, 10.0, centres.size), 400, 50)
    d = decompose(r)
    assert d.between + d.within == pytest.approx(d.total, rel=0.02)


def test_decompose_errors():
    with pytest.raises(ValidationError):
        decompose(ValuationResult(np.arange(10.0), 1, 10))
    with pytest.raises(DegenerateError):
        decompose(ValuationResult(np.zeros(10), 5, 2))


@pytest.mark.parametrize(
    "omega, n, expected",
    [(0.5, 1, 0.5), (0.2, 4, 0.5), (0.999999, 10, 1.0)],
)
def test_omega_n_examples(omega, n, expected):
    assert omega_n(omega, n) == pytest.approx(expected, abs=1e-6)


@given(st.floats(1e-6, 1.0), st.integers(1, 10_000))
def test_omega_n_properties(omega, n):
    w = omega_n(omega, n)
    assert omega * (1 - 1e-12) <= w <= 1.0
    assert omega_n(omega, n + 1) >= w


def test_omega_n_rejects_out_of_range():
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValidationError):
            omega_n(bad, 2)


# -- expectancy and annuity factors ----------------------------------------


def test_life_expectancy_examples():
    geometric = age_only_surface([0.5] * 60, first_age=60)
    assert life_expectancy(geometric, 60, 1940, omega_max=119) == pytest.approx(1.0, abs=1e-12)
    assert life_expectancy(age_only_surface([1.0, 1.0], 60), 60, 1940, omega_max=62) == 0.0
    assert life_expectancy(age_only_surface([0.2, 0.5], 60), 60, 1940, 62) == pytest.approx(1.2)


def test_annuity_factor_examples():
    assert annuity_factor(age_only_surface([1.0, 1.0], 60), 60, 1940, 0.025, 62) == 0.0
    geometric = age_only_surface([0.5] * 60, first_age=60)
    assert annuity_factor(geometric, 60, 1940, 0.0, 119) == pytest.approx(1.0, abs=1e-12)
    surf = age_only_surface([0.1, 0.2], 60)
    assert annuity_factor(surf, 60, 1940, 0.025, 62) == pytest.approx(1.5633551457465797,
                                                                      rel=1e-14)
    assert cohort_annuity_factor(_cohort([0.1, 0.2, 1.0]), 0.025) == pytest.approx(1.5633551457,
                                                                                rel=1e-10)


def test_expectancy_drift_constant_surface():
    s = MortalitySurface.from_ranges(60, 1900, np.tile(np.linspace(0.01, 0.3, 40)[:, None], 200))
    assert expectancy_drift(s, 60, range(1930, 1960), omega_max=100) == pytest.approx(0, abs=1e-12)
    with pytest.raises(ValidationError):
        expectancy_drift(s, 60, range(1930, 1932), omega_max=100)


def test_drift_gap_both_conventions():
    gap = drift_gap(1.4, 1.8)
    assert gap["relative_to_reference"] == pytest.approx(0.285714, abs=1e-6)
    assert gap["relative_to_other"] == pytest.approx(0.222222, abs=1e-6)


def test_histogram_rows():
    rows = histogram(np.arange(100.0), bins=4)
    assert [r[2] for r in rows] == [25, 25, 25, 25]
    buf = io.StringIO()
    write_histogram(rows, buf)
    assert buf.getvalue().splitlines()[0] == "bin_lo,bin_hi,count"
