import math

from egue.combinat import binom, d_irrep, lambda_coeff


def test_binom_matches_math_comb():
    assert binom(6, 3) == 20
    assert binom(5, 0) == 1
    assert binom(0, 0) == 1
    for n in range(12):
        for r in range(n + 2):
            assert binom(n, r) == math.comb(n, r)


def test_binom_out_of_range_is_zero():
    assert binom(4, 7) == 0
    assert binom(4, -1) == 0


def test_lambda_known_values():
    # C(m - nu, r) * C(N - m + r - nu, r)
    assert lambda_coeff(6, 3, 2, 0) == 30
    assert lambda_coeff(6, 3, 2, 1) == 6
    assert lambda_coeff(6, 3, 2, 2) == 0
    assert lambda_coeff(4, 2, 1, 0) == 6
    assert lambda_coeff(4, 2, 1, 1) == 2
    assert lambda_coeff(4, 2, 1, 2) == 0


def test_lambda_rank_zero_is_one():
    for N in range(2, 8):
        for m in range(N + 1):
            assert lambda_coeff(N, m, 0, 0) == 1


def test_lambda_is_integer_product():
    for N in range(3, 9):
        for m in range(1, N):
            for r in range(m + 1):
                for nu in range(min(m, N - m) + 1):
                    got = lambda_coeff(N, m, r, nu)
                    want = math.comb(m - nu, r) * math.comb(N - m + r - nu, r)
                    assert got == want


def test_d_irrep_known_values():
    assert d_irrep(6, 0) == 1
    assert d_irrep(6, 1) == 35
    assert d_irrep(6, 2) == 189
    assert d_irrep(4, 2) == 20
    for N in range(1, 10):
        assert d_irrep(N, 0) == 1


def test_d_irrep_telescoping_sum():
    # sum over the operator-space irreps recovers the squared sector dimension
    for N in range(2, 9):
        for m in range(N + 1):
            R = min(m, N - m)
            total = sum(d_irrep(N, nu) for nu in range(R + 1))
            assert total == math.comb(N, m) ** 2
