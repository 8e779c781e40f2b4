"""Closed-form finite-N moments, cumulants, asymptotics, and the Gaussian grid.

Every formula here reduces to integer sums of binomial products divided by
a single sector dimension.  The sums are accumulated exactly and converted
to float once, so agreement checks at 1e-9 relative are limited only by the
final division, never by accumulation order.

Moment index convention: M_PQ is the trace-normalized average of
O^dag H^Q O H^P on the initial sector, so P powers act before the
transition and Q after it.  M20 therefore always lives at the initial
particle number and M02 at the final one.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from egue.combinat import binom, d_irrep, lambda_coeff
from egue.ensembles import ModelSpec

MOMENT_KEYS = ("M00", "M20", "M02", "M11", "M40", "M04", "M31", "M13", "M22")


@dataclass
class MomentSet:
    """Bivariate moments M_PQ with per-entry completeness flags.

    flags values: "exact", "partial" (a known term is missing),
    "unavailable" (no formula in scope; the contraction oracle is the
    source).  provenance records which layer produced the numbers.
    """

    m00: float | None = None
    m20: float | None = None
    m02: float | None = None
    m11: float | None = None
    m40: float | None = None
    m04: float | None = None
    m31: float | None = None
    m13: float | None = None
    m22: float | None = None
    flags: dict[str, str] = field(default_factory=dict)
    provenance: str = "analytic"

    def value(self, key: str) -> float | None:
        return getattr(self, key.lower())

    def set(self, key: str, value: float | None, flag: str) -> None:
        setattr(self, key.lower(), value)
        self.flags[key] = flag

    def as_dict(self) -> dict:
        out = {}
        for key in MOMENT_KEYS:
            out[key] = {"value": self.value(key), "flag": self.flags.get(key, "unavailable")}
        out["provenance"] = self.provenance
        return out


@dataclass
class CumulantReport:
    xi: float | None = None
    mu40: float | None = None
    mu04: float | None = None
    mu31: float | None = None
    mu13: float | None = None
    mu22: float | None = None
    k40: float | None = None
    k04: float | None = None
    k31: float | None = None
    k13: float | None = None
    k22: float | None = None
    xi_inf: float | None = None
    mu40_inf: float | None = None
    mu31_inf: float | None = None
    mu22_inf: float | None = None

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def h_moments(N: int, m: int, k: int, v_h: float = 1.0) -> tuple[float, float]:
    """(<H^2>, <H^4>) for a rank-k ensemble at particle number m.

    <H^2> = v_h * Lambda^0(N, m, k)
    <H^4> = 2 <H^2>^2 + v_h^2 * C(N,m)^-1 *
            sum_nu Lambda^nu(N,m,k) Lambda^nu(N,m,m-k) d(N:nu)
    with nu running to min(k, m-k).  k > m is allowed and gives (0, 0):
    the operator annihilates the whole sector.
    """
    if k > m:
        return 0.0, 0.0
    lam0 = lambda_coeff(N, m, k, 0)
    dim = binom(N, m)
    s = 0
    for nu in range(min(k, m - k) + 1):
        s += lambda_coeff(N, m, k, nu) * lambda_coeff(N, m, m - k, nu) * d_irrep(N, nu)
    h2 = v_h * lam0
    h4 = v_h * v_h * float(Fraction(2 * lam0 * lam0 * dim + s, dim))
    return h2, h4


def h2_beta(spec: ModelSpec, m1s: int, m2s: int) -> float:
    """<H^2> for the beta kind on the (m1s, m2s) sector.

    Each (i, j) family contributes its own variance times the product of
    per-species trace propagators.
    """
    total = 0.0
    for i, j, v in spec.families():
        total += v * lambda_coeff(spec.N1, m1s, i, 0) * lambda_coeff(spec.N2, m2s, j, 0)
    return total


def oo_norm(spec: ModelSpec) -> tuple[float, float]:
    """(<O^dag O>, <O O^dag>), trace-normalized on initial/final sectors."""
    spec.validate()
    if spec.kind == "number_conserving":
        val = spec.v_o * lambda_coeff(spec.N, spec.m, spec.t, 0)
        return val, val
    if spec.kind == "removal":
        return (
            spec.v_o * binom(spec.m, spec.k0),
            spec.v_o * binom(spec.N - spec.m, spec.k0),
        )
    return (
        spec.v_o * binom(spec.N1 - spec.m1, spec.k0) * binom(spec.m2, spec.k0),
        spec.v_o * binom(spec.N2 - spec.m2, spec.k0) * binom(spec.m1, spec.k0),
    )


def _m11_sum(N: int, m: int, k: int, t: int) -> int:
    s = 0
    for nu in range(min(k, m - t) + 1):
        s += (
            lambda_coeff(N, m, t, nu)
            * lambda_coeff(N, m, m - k, nu)
            * d_irrep(N, nu)
        )
    return s


def m11(spec: ModelSpec) -> tuple[float | None, str]:
    """M11 and its completeness flag.

    Exact for the number-conserving kind.  For removal/beta kinds the
    closed form needs U(N) U-coefficient tables with phases that are not
    in scope, so the value is None and the contraction oracle is the
    designated source.
    """
    spec.validate()
    if spec.kind != "number_conserving":
        return None, "unavailable"
    s = _m11_sum(spec.N, spec.m, spec.k, spec.t)
    val = spec.v_o * spec.v_h * float(Fraction(s, binom(spec.N, spec.m)))
    return val, "exact"


def xi(N: int, m: int, k: int, t: int) -> float:
    """Bivariate correlation coefficient, number-conserving kind.

    xi = M11 / (M00 <H^2>); variances cancel, leaving one exact integer
    ratio evaluated in a single float division.
    """
    num = _m11_sum(N, m, k, t)
    den = binom(N, m) * lambda_coeff(N, m, t, 0) * lambda_coeff(N, m, k, 0)
    return num / den


def m31(N: int, m: int, k: int, t: int, v_h: float = 1.0, v_o: float = 1.0) -> float:
    """M31 = M13 for the number-conserving kind."""
    s11 = _m11_sum(N, m, k, t)
    s3 = 0
    for nu in range(min(k, m - k, m - t) + 1):
        s3 += (
            lambda_coeff(N, m, t, nu)
            * lambda_coeff(N, m, k, nu)
            * lambda_coeff(N, m, m - k, nu)
            * d_irrep(N, nu)
        )
    num = 2 * lambda_coeff(N, m, k, 0) * s11 + s3
    return v_o * v_h * v_h * float(Fraction(num, binom(N, m)))


def m22_terms(N: int, m: int, k: int, t: int) -> tuple[int, int]:
    """Integer cores of the two closed M22 terms (variance units stripped).

    term1 = Lambda^0(N,m,t) * Lambda^0(N,m,k)^2         (times v_o v_h^2)
    term2 = C(N,m)^-1 * sum_nu Lambda^nu(N,m,m-t) *
            [Lambda^nu(N,m,k)]^2 * d(N:nu)              (times v_o v_h^2)
    Returned as (term1, sum2) with the division left to the caller.
    """
    term1 = lambda_coeff(N, m, t, 0) * lambda_coeff(N, m, k, 0) ** 2
    s2 = 0
    for nu in range(min(t, m - k) + 1):
        s2 += (
            lambda_coeff(N, m, m - t, nu)
            * lambda_coeff(N, m, k, nu) ** 2
            * d_irrep(N, nu)
        )
    return term1, s2


def m22(
    N: int,
    m: int,
    k: int,
    t: int,
    v_h: float = 1.0,
    v_o: float = 1.0,
    racah_input: float | Mapping[int, float] | None = None,
) -> tuple[float, str]:
    """M22 from its three-term decomposition.

    The first two terms are closed-form.  The third carries a sum of
    squared U(N) Racah coefficients with no closed form; it enters only
    through racah_input, the aggregated weight W3 defined so that
    term3 = v_o v_h^2 W3 / C(N,m)^2.  racah_input may also be a table
    over the irrep label (such as the extraction table the oracle
    produces), in which case its values are summed.  With racah_input
    the result is exact, without it the value is the partial
    term1 + term2.
    """
    term1, s2 = m22_terms(N, m, k, t)
    dim = binom(N, m)
    vv = v_o * v_h * v_h
    partial = vv * (term1 + float(Fraction(s2, dim)))
    if racah_input is None:
        return partial, "partial"
    if isinstance(racah_input, Mapping):
        racah_input = sum(racah_input.values())
    return partial + vv * racah_input / dim**2, "exact"


def factorized_moments(spec: ModelSpec) -> MomentSet:
    """The moments that factorize into norm times H moments, per kind.

    Number conserving: all of M20 = M02, M40 = M04 at particle number m.
    Removal: M_P0 at m, M_0Q at m - k0, same rank-k H coefficients.
    Beta: M20/M02 from the two-species <H^2>; the two-species <H^4> has
    no closed form in scope, so M40/M04 stay unavailable.
    """
    spec.validate()
    ms = MomentSet(provenance="analytic")
    oo_i, _oo_f = oo_norm(spec)
    ms.set("M00", oo_i, "exact")
    if spec.kind == "number_conserving":
        h2, h4 = h_moments(spec.N, spec.m, spec.k, spec.v_h)
        ms.set("M20", oo_i * h2, "exact")
        ms.set("M02", oo_i * h2, "exact")
        ms.set("M40", oo_i * h4, "exact")
        ms.set("M04", oo_i * h4, "exact")
    elif spec.kind == "removal":
        h2_i, h4_i = h_moments(spec.N, spec.m, spec.k, spec.v_h)
        h2_f, h4_f = h_moments(spec.N, spec.m - spec.k0, spec.k, spec.v_h)
        ms.set("M20", oo_i * h2_i, "exact")
        ms.set("M02", oo_i * h2_f, "exact")
        ms.set("M40", oo_i * h4_i, "exact")
        ms.set("M04", oo_i * h4_f, "exact")
    else:
        h2_i = h2_beta(spec, spec.m1, spec.m2)
        h2_f = h2_beta(spec, spec.m1 + spec.k0, spec.m2 - spec.k0)
        ms.set("M20", oo_i * h2_i, "exact")
        ms.set("M02", oo_i * h2_f, "exact")
        ms.set("M40", None, "unavailable")
        ms.set("M04", None, "unavailable")
    return ms


def moments(spec: ModelSpec, racah_input: float | None = None) -> MomentSet:
    """Everything the closed forms can say about a spec, flags included."""
    ms = factorized_moments(spec)
    if spec.kind == "number_conserving":
        val, flag = m11(spec)
        ms.set("M11", val, flag)
        m31_val = m31(spec.N, spec.m, spec.k, spec.t, spec.v_h, spec.v_o)
        ms.set("M31", m31_val, "exact")
        ms.set("M13", m31_val, "exact")
        m22_val, m22_flag = m22(
            spec.N, spec.m, spec.k, spec.t, spec.v_h, spec.v_o, racah_input
        )
        ms.set("M22", m22_val, m22_flag)
    else:
        for key in ("M11", "M31", "M13", "M22"):
            ms.set(key, None, "unavailable")
    return ms


def asymptotics(m: int, k: int, t: int) -> tuple[float, float, float, float]:
    """Dilute-limit (N -> infinity, m/N -> 0) targets: xi, mu40, mu31, mu22."""
    c = binom(m, k)
    xi_inf = binom(m - t, k) / c
    mu40_inf = 2.0 + binom(m - k, k) / c
    mu31_inf = xi_inf * mu40_inf
    mu22_inf = 1.0 + (binom(m - t, k) / c) ** 2 + binom(m - t - k, k) * binom(m - t, k) / c**2
    return xi_inf, mu40_inf, mu31_inf, mu22_inf


def cumulants(ms: MomentSet, asym: tuple[float, float, float, float] | None = None) -> CumulantReport:
    """Scaled moments and fourth-order cumulants from a MomentSet.

    mu_PQ = (M_PQ / M00) / (Mt20^{P/2} Mt02^{Q/2}); k40 = mu40 - 3,
    k31 = mu31 - 3 xi, k22 = mu22 - 2 xi^2 - 1 (and the 04/13 mirrors).
    Entries whose flag is not "exact" are left as None rather than
    reporting a number built from an incomplete moment.
    """
    if ms.m00 is None or ms.m00 <= 0:
        raise ValueError("cumulants need M00 > 0")
    if ms.m20 is None or ms.m02 is None or ms.m20 <= 0 or ms.m02 <= 0:
        raise ValueError("cumulants need positive M20 and M02")

    def ok(key: str) -> bool:
        return ms.flags.get(key) == "exact" and ms.value(key) is not None

    mt20 = ms.m20 / ms.m00
    mt02 = ms.m02 / ms.m00
    rep = CumulantReport()
    if ok("M11"):
        rep.xi = (ms.m11 / ms.m00) / np.sqrt(mt20 * mt02)
    if ok("M40"):
        rep.mu40 = (ms.m40 / ms.m00) / mt20**2
        rep.k40 = rep.mu40 - 3.0
    if ok("M04"):
        rep.mu04 = (ms.m04 / ms.m00) / mt02**2
        rep.k04 = rep.mu04 - 3.0
    if ok("M31"):
        rep.mu31 = (ms.m31 / ms.m00) / (mt20**1.5 * mt02**0.5)
        if rep.xi is not None:
            rep.k31 = rep.mu31 - 3.0 * rep.xi
    if ok("M13"):
        rep.mu13 = (ms.m13 / ms.m00) / (mt20**0.5 * mt02**1.5)
        if rep.xi is not None:
            rep.k13 = rep.mu13 - 3.0 * rep.xi
    if ok("M22"):
        rep.mu22 = (ms.m22 / ms.m00) / (mt20 * mt02)
        if rep.xi is not None:
            rep.k22 = rep.mu22 - 2.0 * rep.xi**2 - 1.0
    if asym is not None:
        rep.xi_inf, rep.mu40_inf, rep.mu31_inf, rep.mu22_inf = asym
    return rep


@dataclass
class GridSpec:
    """Uniform symmetric evaluation grid, in units of marginal sigmas."""

    points: int = 141
    n_sigma: float = 7.0

    def __post_init__(self):
        if self.points < 2:
            raise ValueError("need at least 2 grid points per axis")
        if self.n_sigma <= 0:
            raise ValueError("n_sigma must be positive")


@dataclass
class StrengthDensityGrid:
    ei_axis: np.ndarray
    ef_axis: np.ndarray
    values: np.ndarray
    normalization: float

    def cell_area(self) -> float:
        return float(
            (self.ei_axis[1] - self.ei_axis[0]) * (self.ef_axis[1] - self.ef_axis[0])
        )

    def discrete_moments(self) -> dict:
        """Riemann-sum total, variances, and correlation of the grid."""
        w = self.values * self.cell_area()
        total = float(w.sum())
        ei = self.ei_axis[:, None]
        ef = self.ef_axis[None, :]
        var_i = float((w * ei**2).sum() / total)
        var_f = float((w * ef**2).sum() / total)
        cov = float((w * ei * ef).sum() / total)
        return {
            "total": total,
            "var_i": var_i,
            "var_f": var_f,
            "corr": cov / np.sqrt(var_i * var_f),
        }


def gaussian_density(
    sigma_i: float,
    sigma_f: float,
    xi_val: float,
    norm: float,
    grid_spec: GridSpec | None = None,
) -> StrengthDensityGrid:
    """Zero-centered bivariate Gaussian with correlation xi_val, scaled by norm."""
    if sigma_i <= 0 or sigma_f <= 0:
        raise ValueError("sigmas must be positive")
    if not abs(xi_val) < 1:
        raise ValueError("need |xi| < 1")
    gs = grid_spec or GridSpec()
    ei = np.linspace(-gs.n_sigma * sigma_i, gs.n_sigma * sigma_i, gs.points)
    ef = np.linspace(-gs.n_sigma * sigma_f, gs.n_sigma * sigma_f, gs.points)
    x = (ei / sigma_i)[:, None]
    y = (ef / sigma_f)[None, :]
    q = (x**2 - 2.0 * xi_val * x * y + y**2) / (1.0 - xi_val**2)
    values = norm * np.exp(-q / 2.0) / (
        2.0 * np.pi * sigma_i * sigma_f * np.sqrt(1.0 - xi_val**2)
    )
    return StrengthDensityGrid(ei_axis=ei, ef_axis=ef, values=values, normalization=norm)
