"""Exact integer combinatorial kernels.

Everything in this module is pure integer arithmetic.  These numbers feed
both the closed-form moment expressions and the cross-check machinery, so
they are kept free of floating point on purpose: a downstream comparison at
1e-9 is only meaningful if the combinatorial layer is exact.
"""

from __future__ import annotations

import math


def binom(n: int, r: int) -> int:
    """Binomial coefficient C(n, r), defined as 0 outside 0 <= r <= n.

    The out-of-range convention matters: the moment sums below run over
    ranges where intermediate arguments can go negative, and those terms
    must vanish rather than raise.
    """
    if n < 0 or r < 0 or r > n:
        return 0
    return math.comb(n, r)


def lambda_coeff(Np: int, mp: int, r: int, mu: int) -> int:
    """Propagation coefficient Lambda^mu(N', m', r).

    Lambda^mu(N', m', r) = C(m' - mu, r) * C(N' - m' + r - mu, r).

    mu = 0 gives the trace propagator of an r-body interaction variance
    across particle number; mu > 0 weights the non-scalar parts.
    """
    return binom(mp - mu, r) * binom(Np - mp + r - mu, r)


def d_irrep(N: int, nu: int) -> int:
    """Dimension of the unitary-group irrep labelled nu at N single-particle states.

    d(N: nu) = C(N, nu)^2 - C(N, nu - 1)^2.

    Valid labels satisfy 0 <= nu <= N/2; outside that range the formula
    itself goes negative (or zero), and the raw value is returned as-is so
    callers can use the sign as the validity signal instead of a try/except.
    """
    return binom(N, nu) ** 2 - binom(N, nu - 1) ** 2
