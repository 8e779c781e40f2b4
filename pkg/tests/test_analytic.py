import math

import numpy as np
import pytest

from egue import analytic
from egue.analytic import MomentSet
from egue.ensembles import ModelSpec


def conserving(N, m, k, t, v_h=1.0, v_o=1.0):
    return ModelSpec(kind="number_conserving", N=N, m=m, k=k, t=t, v_h=v_h, v_o=v_o)


class TestHMoments:
    def test_known_values(self):
        assert analytic.h_moments(6, 3, 2) == (30.0, 1881.0)
        assert analytic.h_moments(6, 3, 3) == (20.0, 801.0)

    def test_gue_limit(self):
        # k = m is plain GUE: mu4 = 2 + 1/C^2
        h2, h4 = analytic.h_moments(6, 3, 3)
        C = math.comb(6, 3)
        assert h2 == C
        assert h4 / h2**2 == pytest.approx(2 + 1 / C**2, rel=1e-14)

    def test_rank_zero_is_scalar_gaussian(self):
        assert analytic.h_moments(6, 3, 0) == (1.0, 3.0)

    def test_variance_scaling(self):
        h2, h4 = analytic.h_moments(6, 3, 2, v_h=2.0)
        assert h2 == 60.0
        assert h4 == 4 * 1881.0


class TestNorms:
    def test_conserving(self):
        spec = conserving(6, 3, 1, 2, v_o=2.0)
        assert analytic.oo_norm(spec) == (60.0, 60.0)

    def test_removal_both_orderings(self):
        spec = ModelSpec(kind="removal", N=6, m=3, k=2, k0=1, v_h=1.0, v_o=1.0)
        assert analytic.oo_norm(spec) == (3.0, 3.0)

    def test_beta(self):
        spec = ModelSpec(
            kind="beta_decay", N1=4, N2=4, m1=1, m2=2, k=2, k0=1, v_o=1.0,
            v_h_ij={(0, 2): 1.0, (1, 1): 1.0, (2, 0): 1.0},
        )
        assert analytic.oo_norm(spec) == (6.0, 2.0)

    def test_h2_beta_sectors(self):
        spec = ModelSpec(
            kind="beta_decay", N1=4, N2=4, m1=2, m2=2, k=2, k0=1, v_o=1.0,
            v_h_ij={(0, 2): 1.0, (1, 1): 1.0, (2, 0): 1.0},
        )
        assert analytic.h2_beta(spec, 2, 2) == 48.0
        assert analytic.h2_beta(spec, 3, 1) == 33.0


class TestBivariateMoments:
    def test_m11_conserving(self):
        val, flag = analytic.m11(conserving(4, 2, 1, 1))
        assert flag == "exact"
        assert val == pytest.approx(16.0, rel=1e-14)

    def test_m11_removal_unavailable(self):
        spec = ModelSpec(kind="removal", N=6, m=3, k=2, k0=1, v_h=1.0, v_o=1.0)
        assert analytic.m11(spec) == (None, "unavailable")

    def test_xi_values(self):
        assert analytic.xi(4, 2, 1, 1) == pytest.approx(4 / 9, rel=1e-14)
        # t = 0 makes O a scalar, so initial and final energies coincide
        assert analytic.xi(5, 3, 2, 0) == 1.0

    def test_m31_factorizes_at_t_zero(self):
        h2, h4 = analytic.h_moments(5, 3, 2)
        assert analytic.m31(5, 3, 2, 0) == pytest.approx(h4, rel=1e-14)

    def test_m31_known_value(self):
        # matches the contraction oracle at (4,2,1,1)
        dim = math.comb(4, 2)
        assert analytic.m31(4, 2, 1, 1) * dim == pytest.approx(248.0 * dim, rel=1e-14)
        assert analytic.m31(4, 2, 1, 1) == pytest.approx(248.0, rel=1e-14)

    def test_m22_partial_and_closed(self):
        val, flag = analytic.m22(4, 2, 1, 1)
        assert (val, flag) == (272.0, "partial")
        val, flag = analytic.m22(4, 2, 1, 1, 1.0, 1.0, 576.0)
        assert (val, flag) == (288.0, "exact")

    def test_m22_accepts_rank_table(self):
        table = {0: 25920.0, 1: 0.0, 2: 60480.0, 3: 0.0}
        val, flag = analytic.m22(6, 3, 1, 1, 1.0, 1.0, table)
        assert flag == "exact"
        assert val == pytest.approx(2538.0, rel=1e-12)

    def test_m22_terms_frozen(self):
        assert analytic.m22_terms(4, 2, 1, 1) == (216, 336)


class TestMomentSetAssembly:
    def test_conserving_flags(self):
        ms = analytic.moments(conserving(5, 2, 2, 2))
        assert ms.flags["M11"] == "exact"
        assert ms.flags["M22"] == "partial"

    def test_removal_flags(self):
        spec = ModelSpec(kind="removal", N=6, m=3, k=2, k0=1, v_h=1.0, v_o=1.0)
        ms = analytic.moments(spec)
        for key in ("M00", "M20", "M02", "M40", "M04"):
            assert ms.flags[key] == "exact"
        for key in ("M11", "M31", "M13", "M22"):
            assert ms.flags[key] == "unavailable"
            assert ms.value(key) is None

    def test_factorized_removal_values(self):
        spec = ModelSpec(kind="removal", N=6, m=3, k=2, k0=1, v_h=1.0, v_o=1.0)
        ms = analytic.factorized_moments(spec)
        assert ms.value("M00") == 3.0
        assert ms.value("M20") == 90.0
        assert ms.value("M02") == 45.0
        assert ms.value("M40") == 5643.0
        assert ms.value("M04") == 1353.0

    def test_factorized_beta_h4_unavailable(self):
        spec = ModelSpec(
            kind="beta_decay", N1=4, N2=4, m1=2, m2=2, k=2, k0=1, v_o=1.0,
            v_h_ij={(0, 2): 1.0, (1, 1): 1.0, (2, 0): 1.0},
        )
        ms = analytic.factorized_moments(spec)
        assert ms.flags["M20"] == "exact"
        assert ms.flags["M40"] == "unavailable"


def gaussian_moment_set(xi, s_i=1.3, s_f=0.8, m00=2.0):
    """MomentSet filled with exact bivariate-Gaussian moments."""
    ms = MomentSet()
    ms.set("M00", m00, "exact")
    ms.set("M20", m00 * s_i**2, "exact")
    ms.set("M02", m00 * s_f**2, "exact")
    ms.set("M11", m00 * xi * s_i * s_f, "exact")
    ms.set("M40", m00 * 3 * s_i**4, "exact")
    ms.set("M04", m00 * 3 * s_f**4, "exact")
    ms.set("M31", m00 * 3 * xi * s_i**3 * s_f, "exact")
    ms.set("M13", m00 * 3 * xi * s_i * s_f**3, "exact")
    ms.set("M22", m00 * (1 + 2 * xi**2) * s_i**2 * s_f**2, "exact")
    return ms


class TestCumulants:
    def test_gaussian_input_gives_zero_cumulants(self):
        rep = analytic.cumulants(gaussian_moment_set(0.37))
        assert rep.xi == pytest.approx(0.37, abs=1e-13)
        for val in (rep.k40, rep.k04, rep.k31, rep.k13, rep.k22):
            assert abs(val) < 1e-12

    def test_gue_spec(self):
        ms = analytic.moments(conserving(5, 2, 2, 2))
        rep = analytic.cumulants(ms)
        C = math.comb(5, 2)
        assert rep.xi == pytest.approx(1 / C**2, abs=1e-14)
        assert rep.k40 == pytest.approx(1 / C**2 - 1, abs=1e-12)
        assert rep.k31 == pytest.approx(0.0, abs=1e-14)

    def test_partial_m22_leaves_k22_unset(self):
        ms = analytic.moments(conserving(5, 2, 1, 1))
        rep = analytic.cumulants(ms)
        assert rep.k40 is not None
        assert rep.k22 is None

    def test_missing_normalization_raises(self):
        ms = MomentSet()
        ms.set("M00", 1.0, "exact")
        with pytest.raises(ValueError):
            analytic.cumulants(ms)


class TestAsymptotics:
    def test_dilute_targets(self):
        xi_inf, mu40_inf, mu31_inf, mu22_inf = analytic.asymptotics(6, 2, 2)
        assert xi_inf == pytest.approx(0.4, rel=1e-14)
        assert mu40_inf == pytest.approx(2.4, rel=1e-14)
        assert mu31_inf == pytest.approx(0.96, rel=1e-14)
        assert mu22_inf == pytest.approx(89 / 75, rel=1e-12)

    def test_binomial_ratio_form(self):
        xi_inf, *_ = analytic.asymptotics(12, 2, 2)
        assert xi_inf == pytest.approx(math.comb(10, 2) / math.comb(12, 2), rel=1e-14)

    def test_gue_corner(self):
        assert analytic.asymptotics(3, 3, 3) == (0.0, 2.0, 0.0, 1.0)


class TestGaussianDensity:
    def test_separable_at_zero_correlation(self):
        g = analytic.gaussian_density(1.0, 2.0, 0.0, 5.0)
        marg_i = g.values.sum(axis=1)
        marg_f = g.values.sum(axis=0)
        outer = np.outer(marg_i, marg_f) / g.values.sum()
        assert np.allclose(g.values, outer, atol=1e-9 * g.values.max())

    def test_normalization(self):
        g = analytic.gaussian_density(1.0, 2.0, 0.5, 10.0)
        assert g.cell_area() * g.values.sum() == pytest.approx(10.0, abs=1e-6)

    def test_discrete_moments_recover_correlation(self):
        g = analytic.gaussian_density(1.5, 0.7, 0.5, 1.0)
        dm = g.discrete_moments()
        assert dm["corr"] == pytest.approx(0.5, abs=1e-6)
        assert dm["var_i"] == pytest.approx(1.5**2, rel=1e-5)
        assert dm["var_f"] == pytest.approx(0.7**2, rel=1e-5)
