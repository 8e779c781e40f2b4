"""Exact ensemble averages of bivariate moments by Wick contraction.

This module never samples and never touches the closed-form coefficient
sums: it works directly from the defining covariances and the explicit
annihilator rectangles, so its numbers are an independent check on the
formula layer.  All matrix data is integer-valued and stays below 2^53,
hence every contraction is exact in double precision.

Notation used throughout (row-major vec everywhere):

* K_c: the rectangles of one coefficient family on one sector (for an
  H family, the k-particle annihilators; sector "i" is initial, "f"
  final).  F_rc = K_r^T K_c are the basis operators the family excites.
* D_XY = sum_c K_c^X kron K_c^Y.  The workhorse identity is

      sum_rc tr(A F^X_rc B F^Y_cr) = (D_XY vec(A^T)) . (D_XY vec(B)),

  and the one-sided channel Ch_XY(B) = sum_w F^X_w B F^Y_w-bar is
  mat(D_XY^T D_XY vec B).
* chI_X = Ch_XX(identity).  It is an exact integer multiple of the
  identity (a completeness sum over subsets); the code verifies that and
  uses the scalar where the derivation needs it.
* G_p: the operator basis of O (F_ab for the number-conserving kind, the
  rectangles themselves for removal/beta).  OP = sum_p G_p kron G_p, and
  E_O[tr(O^dag A O B)] = v_o vec(A^T)^T OP vec(B).

Pairing enumeration (hard-coded; the only matchings with P+Q <= 4).
Writing the trace with Hq the final-sector H factors and Hp the initial
ones, the O pair is always (O^dag, O) and the H matchings are:

* M20 / M02 / M40 / M04: H factors sit on one side only.  For four
  factors (positions 4321): (43)(21) -> chI.chI, (41)(32) -> Ch(chI),
  (42)(31) -> cross term sum_w (D vec F_w) . (D vec F_w) weighted by the
  (scalar) O contraction.
* M11 = tr(O^dag Hf O Hi): single matching across O,
  sum_p || D_fi vec(G_p) ||^2.
* M31 = tr(O^dag Hf O Hp3 Hp2 Hp1): (f,p3)(p2,p1) and (f,p1)(p3,p2) both
  reduce to chI_i-scaled M11 cores; (f,p2)(p3,p1) is the interleaved
  term sum_u (OP^T vec F^f_u) . (Ch_ii vec F^i_u).  M13 mirrors with the
  roles of the sectors swapped.
* M22 = tr(O^dag Hf2 Hf1 O Hi2 Hi1): (f2,f1)(i2,i1) gives the double
  chI term; (f2,i1)(f1,i2) the nested term
  sum_p (Ch^g1_fi vec G_p) . (Ch^g2_fi vec G_p); (f2,i2)(f1,i1) the
  double-cross term sum_{p,w} (D_fi vec(G_p F^i_w)) . (D_fi vec(F^f_w G_p)),
  the only piece needing an explicit loop.

For multi-family H (beta kind) every two-pair matching is summed over
ordered family assignments with the per-family variances.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np
import scipy.sparse as sp

from egue import analytic
from egue.combinat import d_irrep, lambda_coeff
from egue.ensembles import ModelSpec, pair_map_set
from egue.fock import MAX_SECTOR_DIM, annihilator_set


class InfeasibleSpecError(Exception):
    """Spec exceeds the oracle's contraction-cost caps."""


@dataclass
class OracleLimits:
    max_dim: int = 300
    max_pairs: int = 10000


def _coo_parts(A):
    C = A.tocoo()
    r, c = (C.coords if hasattr(C, "coords") else (C.row, C.col))
    return r.astype(np.int64), c.astype(np.int64), C.data


def _sum_kron(stack_x, shape_x, stack_y, shape_y) -> sp.csr_array:
    """sum_c KX_c kron KY_c from two row-stacked vec collections."""
    dxo, dxi = shape_x
    dyo, dyi = shape_y
    r, c, v = _coo_parts(stack_x.T @ stack_y)
    x, s = r // dxi, r % dxi
    y, t = c // dyi, c % dyi
    return sp.csr_array(
        (v, (x * dyo + y, s * dyi + t)), shape=(dxo * dyo, dxi * dyi)
    )


def _pair_cols(stacked, nops: int, d_out: int, d_in: int) -> sp.csr_array:
    """Columns vec(F_rc) for all ordered (r, c), F_rc = K_r^T K_c."""
    r, q, v = _coo_parts(stacked)
    x, s = q // d_in, q % d_in
    M = sp.csr_array((v, (x, r * d_in + s)), shape=(d_out, nops * d_in))
    rr, cc, vv = _coo_parts(M.T @ M)
    r_, s_ = rr // d_in, rr % d_in
    c_, t_ = cc // d_in, cc % d_in
    return sp.csr_array(
        (vv, (s_ * d_in + t_, r_ * nops + c_)), shape=(d_in * d_in, nops * nops)
    )


def _fro2(A) -> float:
    if sp.issparse(A):
        return float(A.multiply(A).sum())
    return float((A * A).sum())


def _dot_sum(A, B) -> float:
    """Sum over all entries of the elementwise product (sparse-friendly)."""
    return float(A.multiply(B).sum())


@dataclass
class _HFamily:
    v: float
    nops: int
    stacks: dict
    shapes: dict


class WickOracle:
    """Deterministic contraction engine for one spec.

    Feasibility is checked at construction: sector dimensions against
    limits.max_dim and coefficient-pair counts against limits.max_pairs.
    """

    def __init__(self, spec: ModelSpec, limits: OracleLimits | None = None):
        spec.validate()
        self.spec = spec
        self.limits = limits or OracleLimits()
        self._memo = {}
        self._build()

    # construction -------------------------------------------------------

    def _check_dim(self, dim: int, label: str) -> None:
        if dim > self.limits.max_dim:
            raise InfeasibleSpecError(
                f"{label} dimension {dim} exceeds max_dim={self.limits.max_dim}"
            )

    def _check_pairs(self, n: int, label: str) -> None:
        if n > self.limits.max_pairs:
            raise InfeasibleSpecError(
                f"{label} has {n} coefficient pairs, over max_pairs={self.limits.max_pairs}"
            )

    def _build(self) -> None:
        spec = self.spec
        big = 10**9  # sector cap handled by _check_dim, not the Fock layer
        if spec.kind == "number_conserving":
            self.dim_i = self.dim_f = comb(spec.N, spec.m)
            self._check_dim(self.dim_i, "sector")
            self._check_pairs(comb(spec.N, spec.k) ** 2, "H family")
            self._check_pairs(comb(spec.N, spec.t) ** 2, "O family")
            ah = annihilator_set(spec.N, spec.m, spec.k, big)
            st = {"i": ah.stacked, "f": ah.stacked}
            shp = {"i": ah.maps[0].shape, "f": ah.maps[0].shape}
            self._h = [_HFamily(spec.v_h, len(ah.maps), st, shp)]
            ao = annihilator_set(spec.N, spec.m, spec.t, big)
            nt = len(ao.maps)
            fc = _pair_cols(ao.stacked, nt, *ao.maps[0].shape)
            self._gs = fc.T.tocsr()
            self._n_o = nt * nt
        elif spec.kind == "removal":
            self.dim_i = comb(spec.N, spec.m)
            self.dim_f = comb(spec.N, spec.m - spec.k0)
            self._check_dim(self.dim_i, "initial sector")
            self._check_dim(self.dim_f, "final sector")
            self._check_pairs(comb(spec.N, spec.k) ** 2, "H family")
            self._check_pairs(comb(spec.N, spec.k0), "O family")
            ai = annihilator_set(spec.N, spec.m, spec.k, big)
            st = {"i": ai.stacked}
            shp = {"i": ai.maps[0].shape}
            if spec.k <= spec.m - spec.k0:
                af = annihilator_set(spec.N, spec.m - spec.k0, spec.k, big)
                st["f"] = af.stacked
                shp["f"] = af.maps[0].shape
            else:
                st["f"] = None
                shp["f"] = None
            self._h = [_HFamily(spec.v_h, len(ai.maps), st, shp)]
            ao = annihilator_set(spec.N, spec.m, spec.k0, big)
            self._gs = ao.stacked
            self._n_o = len(ao.maps)
        else:
            self.dim_i = comb(spec.N1, spec.m1) * comb(spec.N2, spec.m2)
            self.dim_f = comb(spec.N1, spec.m1 + spec.k0) * comb(
                spec.N2, spec.m2 - spec.k0
            )
            self._check_dim(self.dim_i, "initial sector")
            self._check_dim(self.dim_f, "final sector")
            self._h = []
            for i, j, v in spec.families():
                nops = comb(spec.N1, i) * comb(spec.N2, j)
                self._check_pairs(nops * nops, f"H family ({i},{j})")
                st, shp = {}, {}
                for key, (m1s, m2s) in (
                    ("i", (spec.m1, spec.m2)),
                    ("f", (spec.m1 + spec.k0, spec.m2 - spec.k0)),
                ):
                    pset = pair_map_set(spec, m1s, m2s, i, j, big)
                    if pset is None:
                        st[key], shp[key] = None, None
                    else:
                        st[key] = pset.stacked
                        shp[key] = (pset.dim_out, pset.dim_in)
                self._h.append(_HFamily(v, nops, st, shp))
            c1, c2 = comb(spec.N1, spec.k0), comb(spec.N2, spec.k0)
            self._check_pairs(c1 * c2, "O family")
            a1 = annihilator_set(spec.N1, spec.m1 + spec.k0, spec.k0, big)
            a2 = annihilator_set(spec.N2, spec.m2, spec.k0, big)
            rows = []
            for K1 in a1.maps:
                for K2 in a2.maps:
                    G = sp.kron(K1.T, K2).tocoo()
                    rows.append(G.reshape(1, self.dim_f * self.dim_i))
            self._gs = sp.vstack(rows).tocsr()
            self._n_o = c1 * c2

        self._gcols = self._gs.T.tocsr()
        self._op = _sum_kron(
            self._gs, (self.dim_f, self.dim_i), self._gs, (self.dim_f, self.dim_i)
        )
        self._opt = self._op.T.tocsr()
        oc_in = self._opt @ np.eye(self.dim_f).reshape(-1)
        self._oc_in = oc_in.reshape(self.dim_i, self.dim_i)
        oc_out = self._op @ np.eye(self.dim_i).reshape(-1)
        self._oc_out = oc_out.reshape(self.dim_f, self.dim_f)
        self._lam_o_in = _scalar_of_identity(self._oc_in, "O contraction (in)")
        self._lam_o_out = _scalar_of_identity(self._oc_out, "O contraction (out)")

    # cached derived pieces ----------------------------------------------

    def _sdim(self, key: str) -> int:
        return self.dim_i if key == "i" else self.dim_f

    def _down(self, g: int, X: str, Y: str):
        """D_XY for family g, or None when the family is dead on a sector."""
        mk = ("D", g, X, Y)
        if mk not in self._memo:
            fam = self._h[g]
            if fam.stacks[X] is None or fam.stacks[Y] is None:
                self._memo[mk] = None
            else:
                self._memo[mk] = _sum_kron(
                    fam.stacks[X], fam.shapes[X], fam.stacks[Y], fam.shapes[Y]
                )
        return self._memo[mk]

    def _chi(self, g: int, X: str) -> tuple[float, np.ndarray | None]:
        """(scalar, matrix) of chI for family g on sector X; (0, None) if dead."""
        mk = ("chI", g, X)
        if mk not in self._memo:
            D = self._down(g, X, X)
            if D is None:
                self._memo[mk] = (0.0, None)
            else:
                d = self._sdim(X)
                w = D @ np.eye(d).reshape(-1)
                mat = (D.T @ w).reshape(d, d)
                self._memo[mk] = (_scalar_of_identity(mat, f"chI[{g},{X}]"), mat)
        return self._memo[mk]

    def _fc(self, g: int, X: str):
        mk = ("FC", g, X)
        if mk not in self._memo:
            fam = self._h[g]
            if fam.stacks[X] is None:
                self._memo[mk] = None
            else:
                self._memo[mk] = _pair_cols(
                    fam.stacks[X], fam.nops, *fam.shapes[X]
                )
        return self._memo[mk]

    def _ch_cols(self, g: int, X: str, Y: str, cols):
        """Apply Ch_XY = D^T D to a batch of vectorized columns."""
        D = self._down(g, X, Y)
        if D is None:
            return None
        return D.T @ (D @ cols)

    # H-only moments -------------------------------------------------------

    def h2(self, sector: str) -> float:
        """<H^2> on a sector, trace-normalized there."""
        total = 0.0
        for g, fam in enumerate(self._h):
            lam, _ = self._chi(g, sector)
            total += fam.v * lam
        return total

    def h4(self, sector: str) -> float:
        d = self._sdim(sector)
        total = 0.0
        for g1, f1 in enumerate(self._h):
            lam1, chi1 = self._chi(g1, sector)
            for g2, f2 in enumerate(self._h):
                lam2, chi2 = self._chi(g2, sector)
                if chi1 is None or chi2 is None:
                    continue
                vv = f1.v * f2.v
                part1 = float(np.einsum("ij,ji->", chi1, chi2))
                vec = self._ch_cols(g1, sector, sector, chi2.reshape(-1))
                part2 = float(vec.reshape(d, d).trace()) if vec is not None else 0.0
                D1 = self._down(g1, sector, sector)
                FC2 = self._fc(g2, sector)
                part3 = _fro2(D1 @ FC2) if D1 is not None and FC2 is not None else 0.0
                total += vv * (part1 + part2 + part3)
        return total / d

    def oo_norms(self) -> tuple[float, float]:
        """(<O^dag O>, <O O^dag>), both trace-normalized on the initial sector.

        The second norm applies O^dag first, i.e. it probes the sector on
        the other side of the initial one (above it for removal, species
        swapped for beta); when that sector does not exist the norm is 0.
        """
        spec = self.spec
        odo = spec.v_o * float(self._oc_in.trace()) / self.dim_i
        if spec.kind == "number_conserving":
            return odo, odo
        if spec.kind == "removal":
            if spec.m + spec.k0 > spec.N:
                return odo, 0.0
            up = annihilator_set(spec.N, spec.m + spec.k0, spec.k0, MAX_SECTOR_DIM)
            ood = spec.v_o * _fro2(up.stacked) / self.dim_i
            return odo, ood
        if spec.k0 > spec.m1 or spec.m2 + spec.k0 > spec.N2:
            return odo, 0.0
        u1 = annihilator_set(spec.N1, spec.m1, spec.k0, MAX_SECTOR_DIM)
        u2 = annihilator_set(spec.N2, spec.m2 + spec.k0, spec.k0, MAX_SECTOR_DIM)
        ood = spec.v_o * _fro2(u1.stacked) * _fro2(u2.stacked) / self.dim_i
        return odo, ood

    # bivariate moments ----------------------------------------------------

    def _m00(self) -> float:
        return self.spec.v_o * float(self._oc_in.trace()) / self.dim_i

    def _m20(self) -> float:
        total = 0.0
        for g, fam in enumerate(self._h):
            _, chi = self._chi(g, "i")
            if chi is not None:
                total += fam.v * float(np.einsum("ij,ji->", self._oc_in, chi))
        return self.spec.v_o * total / self.dim_i

    def _m02(self) -> float:
        total = 0.0
        for g, fam in enumerate(self._h):
            _, chi = self._chi(g, "f")
            if chi is not None:
                total += fam.v * float(np.einsum("ij,ji->", self._oc_out, chi))
        return self.spec.v_o * total / self.dim_i

    def _m11_core(self, g: int) -> float:
        D = self._down(g, "f", "i")
        if D is None:
            return 0.0
        return _fro2(D @ self._gcols)

    def _m11(self) -> float:
        total = sum(fam.v * self._m11_core(g) for g, fam in enumerate(self._h))
        return self.spec.v_o * total / self.dim_i

    def _m_same_side_4(self, sector: str, oc: np.ndarray, lam_o: float) -> float:
        d = self._sdim(sector)
        total = 0.0
        for g1, f1 in enumerate(self._h):
            _, chi1 = self._chi(g1, sector)
            for g2, f2 in enumerate(self._h):
                _, chi2 = self._chi(g2, sector)
                if chi1 is None or chi2 is None:
                    continue
                vv = f1.v * f2.v
                part1 = float(np.einsum("ij,jk,ki->", oc, chi1, chi2))
                vec = self._ch_cols(g1, sector, sector, chi2.reshape(-1))
                part2 = float(np.einsum("ij,ji->", oc, vec.reshape(d, d)))
                D1 = self._down(g1, sector, sector)
                FC2 = self._fc(g2, sector)
                part3 = lam_o * _fro2(D1 @ FC2)
                total += vv * (part1 + part2 + part3)
        return self.spec.v_o * total / self.dim_i

    def _m40(self) -> float:
        return self._m_same_side_4("i", self._oc_in, self._lam_o_in)

    def _m04(self) -> float:
        return self._m_same_side_4("f", self._oc_out, self._lam_o_out)

    def _m31(self) -> float:
        total = 0.0
        for g1, f1 in enumerate(self._h):
            core = self._m11_core(g1)
            fcf = self._fc(g1, "f")
            fci = self._fc(g1, "i")
            for g2, f2 in enumerate(self._h):
                lam2i, _ = self._chi(g2, "i")
                vv = f1.v * f2.v
                term12 = 2.0 * lam2i * core
                cross = 0.0
                if fcf is not None and fci is not None:
                    chcols = self._ch_cols(g2, "i", "i", fci)
                    if chcols is not None:
                        cross = _dot_sum(self._opt @ fcf, chcols)
                total += vv * (term12 + cross)
        return self.spec.v_o * total / self.dim_i

    def _m13(self) -> float:
        total = 0.0
        for g1, f1 in enumerate(self._h):
            core = self._m11_core(g1)
            fcf = self._fc(g1, "f")
            fci = self._fc(g1, "i")
            for g2, f2 in enumerate(self._h):
                lam2f, _ = self._chi(g2, "f")
                vv = f1.v * f2.v
                term12 = 2.0 * lam2f * core
                cross = 0.0
                if fcf is not None and fci is not None:
                    chcols = self._ch_cols(g2, "f", "f", fcf)
                    if chcols is not None:
                        cross = _dot_sum(self._opt @ chcols, fci)
                total += vv * (term12 + cross)
        return self.spec.v_o * total / self.dim_i

    def _dcross(self, g_d: int, g_f: int) -> float:
        """Interleaved M22 matching: family g_d pairs across both H slots
        that sandwich O, family g_f supplies the F_w that thread through."""
        D = self._down(g_d, "f", "i")
        fci = self._fc(g_f, "i")
        fcf = self._fc(g_f, "f")
        if D is None or fci is None or fcf is None:
            return 0.0
        nf = self._h[g_f].nops ** 2
        eye_i = sp.eye_array(self.dim_i, format="csr")
        eye_f = sp.eye_array(self.dim_f, format="csr")
        acc = 0.0
        if self._n_o <= nf:
            for p in range(self._n_o):
                Gp = self._gs[[p], :].tocoo().reshape(self.dim_f, self.dim_i).tocsr()
                A = sp.kron(Gp, eye_i).tocsr() @ fci
                B = sp.kron(eye_f, Gp.T).tocsr() @ fcf
                acc += _dot_sum(D @ A, D @ B)
        else:
            for w in range(nf):
                Fi = fci[:, [w]].tocoo().reshape(self.dim_i, self.dim_i).tocsr()
                Ff = fcf[:, [w]].tocoo().reshape(self.dim_f, self.dim_f).tocsr()
                A = sp.kron(eye_f, Fi.T).tocsr() @ self._gcols
                B = sp.kron(Ff, eye_i).tocsr() @ self._gcols
                acc += _dot_sum(D @ A, D @ B)
        return acc

    def _crossed_probe(self, ranks: list[int]) -> dict[int, float]:
        """Crossed M22 matching with the pair channel swapped for each rank.

        Number-conserving specs only.  Reuses the A, B composites of
        _dcross and pushes them through the rank-r channel D_r^T D_r for
        every requested r in a single (p, w) sweep; rank 0 is the
        identity channel and needs no D at all.  All entries are exact
        integers in float64.
        """
        if self.spec.kind != "number_conserving":
            raise ValueError("channel probe is defined for number_conserving only")
        N, m = self.spec.N, self.spec.m
        dim = self.dim_i
        downs = {}
        for r in ranks:
            if r == 0:
                downs[r] = None
            else:
                aset = annihilator_set(N, m, r, self.limits.max_dim)
                shape = (aset.dim_out, aset.dim_in)
                downs[r] = _sum_kron(aset.stacked, shape, aset.stacked, shape)
        fci = self._fc(0, "i")
        fcf = self._fc(0, "f")
        nf = self._h[0].nops ** 2
        eye = sp.eye_array(dim, format="csr")
        acc = {r: 0.0 for r in ranks}

        def push(A, B):
            for r in ranks:
                D = downs[r]
                if D is None:
                    acc[r] += _dot_sum(A, B)
                else:
                    acc[r] += _dot_sum(D @ A, D @ B)

        if self._n_o <= nf:
            for p in range(self._n_o):
                Gp = self._gs[[p], :].tocoo().reshape(dim, dim).tocsr()
                A = sp.kron(Gp, eye).tocsr() @ fci
                B = sp.kron(eye, Gp.T).tocsr() @ fcf
                push(A, B)
        else:
            for w in range(nf):
                Fi = fci[:, [w]].tocoo().reshape(dim, dim).tocsr()
                Ff = fcf[:, [w]].tocoo().reshape(dim, dim).tocsr()
                A = sp.kron(eye, Fi.T).tocsr() @ self._gcols
                B = sp.kron(Ff, eye).tocsr() @ self._gcols
                push(A, B)
        return acc

    def _m22(self) -> float:
        tr_oc = float(self._oc_in.trace())
        total = 0.0
        for g1, f1 in enumerate(self._h):
            lam1f, _ = self._chi(g1, "f")
            ch1g = self._ch_cols(g1, "f", "i", self._gcols)
            for g2, f2 in enumerate(self._h):
                lam2i, _ = self._chi(g2, "i")
                vv = f1.v * f2.v
                term1 = lam1f * lam2i * tr_oc
                nested = 0.0
                ch2g = self._ch_cols(g2, "f", "i", self._gcols)
                if ch1g is not None and ch2g is not None:
                    nested = _dot_sum(ch1g, ch2g)
                total += vv * (term1 + nested + self._dcross(g1, g2))
        return self.spec.v_o * total / self.dim_i

    # public API -----------------------------------------------------------

    def exact_moment(self, P: int, Q: int) -> float:
        """M_PQ for P+Q <= 4; odd totals are identically zero by symmetry."""
        if P < 0 or Q < 0 or P + Q > 4:
            raise ValueError("need P, Q >= 0 with P + Q <= 4")
        if (P + Q) % 2 == 1:
            return 0.0
        table = {
            (0, 0): self._m00,
            (2, 0): self._m20,
            (0, 2): self._m02,
            (1, 1): self._m11,
            (4, 0): self._m40,
            (0, 4): self._m04,
            (3, 1): self._m31,
            (1, 3): self._m13,
            (2, 2): self._m22,
        }
        return table[(P, Q)]()

    def moment_set(self) -> analytic.MomentSet:
        ms = analytic.MomentSet(provenance="oracle")
        for key, (P, Q) in {
            "M00": (0, 0), "M20": (2, 0), "M02": (0, 2), "M11": (1, 1),
            "M40": (4, 0), "M04": (0, 4), "M31": (3, 1), "M13": (1, 3),
            "M22": (2, 2),
        }.items():
            ms.set(key, self.exact_moment(P, Q), "exact")
        return ms

    def channel_apply(self, which: str, X: np.ndarray,
                      sectors: tuple[str, str] = ("i", "i"),
                      family: int = 0) -> np.ndarray:
        """V^2 sum_w F_w X F_w-bar for an H family, or the O-pair map.

        For which="h", X must be (dim_X, dim_Y)-shaped for the requested
        sector pair.  For which="o", a (dim_i, dim_i) X is pushed to the
        final sector and a (dim_f, dim_f) X is pulled back.
        """
        dtype = complex if np.iscomplexobj(X) else float
        if which == "h":
            dx, dy = self._sdim(sectors[0]), self._sdim(sectors[1])
            if X.shape != (dx, dy):
                raise ValueError(f"X must be {(dx, dy)} for sectors {sectors}")
            D = self._down(family, *sectors)
            if D is None:
                return np.zeros_like(X, dtype=dtype)
            out = D.T @ (D @ np.asarray(X, dtype=dtype).reshape(-1))
            return self._h[family].v * out.reshape(dx, dy)
        if which == "o":
            if X.shape == (self.dim_i, self.dim_i):
                out = self._op @ np.asarray(X, dtype=dtype).reshape(-1)
                return self.spec.v_o * out.reshape(self.dim_f, self.dim_f)
            if X.shape == (self.dim_f, self.dim_f):
                out = self._opt @ np.asarray(X, dtype=dtype).reshape(-1)
                return self.spec.v_o * out.reshape(self.dim_i, self.dim_i)
            raise ValueError("X must be square on the initial or final sector")
        raise ValueError("which must be 'h' or 'o'")


def _scalar_of_identity(mat: np.ndarray, label: str) -> float:
    """Assert an integer-valued matrix is lam * I and return lam.

    These proportionalities are completeness identities of the subset
    sums, exact in the integer arithmetic used here, so any deviation
    means a construction bug rather than roundoff.
    """
    diag = np.diagonal(mat)
    lam = float(diag[0]) if diag.size else 0.0
    off = mat.copy()
    np.fill_diagonal(off, 0.0)
    if diag.size and (not np.all(diag == lam) or off.any()):
        raise AssertionError(f"{label} is not proportional to the identity")
    return lam


def exact_moment(spec: ModelSpec, P: int, Q: int,
                 limits: OracleLimits | None = None) -> float:
    return WickOracle(spec, limits).exact_moment(P, Q)


@dataclass
class RacahExtraction:
    """Third M22 term recovered from the oracle, resolved over nu.

    term3 is the missing term itself (unit variances): oracle M22 minus
    the two closed-form terms.  table maps each irrep label nu to its
    additive share of w3 = term3 * C(N,m)^2, the weight m22 accepts as
    racah_input (a channel's share is its coupling-eigenvalue times the
    projected composite norm; entries below the top channel mix
    orderings and may be negative even though the total is not).

    implied_u2 is the nu = t+k entry re-normalized the way the third
    term enters the scaled moment mu22, so that as N grows at fixed m it
    tends to the squared top-channel recoupling coefficient's limit
    C(m-t,k)/C(m,k).  It is None when that channel carries no weight
    (its coupling eigenvalue vanishes) or does not fit in the sector.
    """

    term3: float
    w3: float
    table: dict[int, float]
    implied_u2: float | None


def _solve_fraction_system(V: list[list[Fraction]], b: list[Fraction]) -> list[Fraction]:
    n = len(b)
    M = [row[:] + [bi] for row, bi in zip(V, b)]
    for col in range(n):
        piv = next(i for i in range(col, n) if M[i][col] != 0)
        M[col], M[piv] = M[piv], M[col]
        for i in range(n):
            if i != col and M[i][col] != 0:
                f = M[i][col] / M[col][col]
                M[i] = [a - f * c for a, c in zip(M[i], M[col])]
    return [M[i][n] / M[i][i] for i in range(n)]


def extract_racah(N: int, m: int, k: int, t: int,
                  limits: OracleLimits | None = None) -> RacahExtraction:
    """Recover the nu-resolved third M22 term by multi-rank channel probing.

    The crossed matching equals sum_nu lam_r(nu) * pi(nu) when its pair
    channel is swapped for the rank-r one, with lam_r(nu) the channel
    eigenvalue Lambda^nu(N,m,r) on the operator-space irrep nu (the
    decomposition is multiplicity free, so the projectors are shared by
    every rank).  Probing all ranks m-R..m gives a triangular exact
    system for the pi(nu); everything stays in integer/rational
    arithmetic until the final floats.
    """
    spec = ModelSpec(kind="number_conserving", N=N, m=m, k=k, t=t, v_h=1.0, v_o=1.0)
    oracle = WickOracle(spec, limits)
    m22_exact = oracle.exact_moment(2, 2)
    partial, _flag = analytic.m22(N, m, k, t, 1.0, 1.0, None)
    dim = comb(N, m)
    term3 = m22_exact - partial

    R = min(m, N - m)
    ranks = list(range(m - R, m + 1))
    dc = oracle._crossed_probe(ranks)
    V = [[Fraction(lambda_coeff(N, m, r, nu)) for nu in range(R + 1)] for r in ranks]
    pi = _solve_fraction_system(V, [Fraction(dc[r]) for r in ranks])

    table_frac = {nu: lambda_coeff(N, m, k, nu) * dim * pi[nu] for nu in range(R + 1)}
    w3_frac = sum(table_frac.values())
    w3 = float(w3_frac)
    check = term3 * dim * dim
    if abs(w3 - check) > 1e-9 * max(1.0, abs(w3)):
        raise AssertionError(
            f"nu-resolved weights sum to {w3}, subtraction gives {check}"
        )

    nustar = t + k
    implied = None
    if nustar <= R and lambda_coeff(N, m, k, nustar) > 0:
        den = (
            Fraction(lambda_coeff(N, m, k, nustar))
            * dim * dim
            * lambda_coeff(N, m, t, 0)
            * lambda_coeff(N, m, k, 0)
        )
        implied = float(table_frac[nustar] / den)
    return RacahExtraction(
        term3=term3,
        w3=w3,
        table={nu: float(v) for nu, v in table_frac.items()},
        implied_u2=implied,
    )
