import numpy as np
import pytest

from egue import analytic, montecarlo
from egue.ensembles import ModelSpec
from egue.oracle import InfeasibleSpecError, WickOracle


SMALL = ModelSpec(kind="number_conserving", N=4, m=2, k=1, t=1, v_h=1.0, v_o=1.0)


@pytest.fixture(scope="module")
def small_stats():
    return montecarlo.run(SMALL, 60, seed=1)


def test_run_is_deterministic(small_stats):
    again = montecarlo.run(SMALL, 60, seed=1)
    assert small_stats.as_dict() == again.as_dict()


def test_seed_changes_output(small_stats):
    other = montecarlo.run(SMALL, 60, seed=2)
    assert other.moments.value("M20") != small_stats.moments.value("M20")
    assert small_stats.moments.provenance == "mc"


def test_two_samples_give_finite_errors():
    stats = montecarlo.run(SMALL, 2, seed=9)
    for err in list(stats.stderr.values()) + list(stats.odd_err.values()):
        assert np.isfinite(err)
    for val in stats.derived_err.values():
        assert np.isfinite(val)


def test_sample_size_guard():
    with pytest.raises(ValueError):
        montecarlo.run(SMALL, 1, seed=1)


def test_dimension_guard():
    big = ModelSpec(kind="number_conserving", N=30, m=15, k=2, t=2, v_h=1.0, v_o=1.0)
    with pytest.raises(InfeasibleSpecError):
        montecarlo.run(big, 4, seed=1)


def test_agreement_with_oracle(small_stats):
    report = montecarlo.compare(small_stats, WickOracle(SMALL).moment_set())
    assert report.skipped == []
    assert report.max_abs_z <= 3.5
    assert not any(row.flagged for row in report.rows)


def test_compare_flags_wrong_prediction(small_stats):
    ms = WickOracle(SMALL).moment_set()
    ms.set("M20", 2 * ms.value("M20"), "exact")
    report = montecarlo.compare(small_stats, ms)
    bad = {row.key for row in report.rows if row.flagged}
    assert "M20" in bad


def test_compare_skips_partial_prediction(small_stats):
    report = montecarlo.compare(small_stats, analytic.moments(SMALL))
    assert any("M22" in note for note in report.skipped)
    assert all(row.key != "M22" for row in report.rows)


def test_odd_moments_vanish(small_stats):
    # every odd moment averages to zero over the ensemble
    for key, val in small_stats.odd.items():
        err = small_stats.odd_err[key]
        assert abs(val) <= 4 * err, f"{key}: {val} +- {err}"


def test_derived_quantities_present(small_stats):
    for key in ("xi", "mu40", "k40", "k22"):
        assert key in small_stats.derived
    exact_xi = analytic.xi(4, 2, 1, 1)
    assert abs(small_stats.derived["xi"] - exact_xi) <= 5 * small_stats.derived_err["xi"]


class TestStrengthHistogram:
    def test_sum_rule(self):
        hist = montecarlo.strength_histogram(SMALL, 10, seed=1)
        assert hist.sum_rule_dev <= 1e-10

    def test_deterministic(self):
        a = montecarlo.strength_histogram(SMALL, 6, seed=4, bins=11)
        b = montecarlo.strength_histogram(SMALL, 6, seed=4, bins=11)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.ei_edges, b.ei_edges)

    def test_shapes_and_mass(self):
        hist = montecarlo.strength_histogram(SMALL, 8, seed=2, bins=13)
        assert hist.weights.shape == (13, 13)
        assert hist.n_samples == 8
        # nearly all weight falls inside the 4-sigma window
        assert hist.weights.sum() == pytest.approx(hist.total_weight, rel=1e-6)

    def test_moments_track_correlation(self):
        hist = montecarlo.strength_histogram(SMALL, 150, seed=3, bins=31)
        dm = hist.moments()
        exact_xi = analytic.xi(4, 2, 1, 1)
        assert dm["corr"] == pytest.approx(exact_xi, abs=0.15)
        assert dm["var_i"] > 0 and dm["var_f"] > 0

    def test_removal_final_sector(self):
        spec = ModelSpec(kind="removal", N=6, m=3, k=2, k0=1, v_h=1.0, v_o=1.0)
        hist = montecarlo.strength_histogram(spec, 6, seed=5)
        assert hist.sum_rule_dev <= 1e-10


def test_removal_matches_oracle():
    spec = ModelSpec(kind="removal", N=6, m=3, k=2, k0=1, v_h=1.0, v_o=1.0)
    stats = montecarlo.run(spec, 200, seed=7)
    report = montecarlo.compare(stats, WickOracle(spec).moment_set())
    assert report.skipped == []
    assert report.max_abs_z <= 3.5
    # the cross moment with no closed form lands on the oracle value
    assert abs(stats.moments.value("M11") - 30.0) <= 4 * stats.stderr["M11"]


def test_beta_matches_oracle():
    spec = ModelSpec(
        kind="beta_decay", N1=4, N2=4, m1=2, m2=2, k=2, k0=1, v_o=1.0,
        v_h_ij={(0, 2): 1.0, (1, 1): 1.0, (2, 0): 1.0},
    )
    stats = montecarlo.run(spec, 80, seed=11)
    report = montecarlo.compare(stats, WickOracle(spec).moment_set())
    assert report.max_abs_z <= 3.5
