"""Ensemble definitions, reproducible sampling, and operator realization.

The random layer is counter-based end to end: every draw is keyed by
(seed, stream_id, substream path, draw index) through Philox, raw 64-bit
words are mapped to uniforms by a fixed shift-and-scale, and normals come
from the inverse CDF.  No rejection steps, no shared state, so identical
keys give identical doubles on every platform and at any thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.sparse as sp
from scipy.special import ndtri

from egue.fock import (
    AnnihilatorSet,
    EmbeddedOperator,
    FockBasis,
    ProductBasis,
    annihilator_set,
    build_basis,
    embed_kbody,
    embed_linear,
    two_species_basis,
)

KINDS = ("number_conserving", "removal", "beta_decay")


class RngStream:
    """Deterministic substream of a counter-based generator.

    A stream is identified by (seed, stream_id) plus a tuple of child tags.
    child(tag) derives an independent substream without consuming state, so
    H and O draws (and per-family draws) can never alias.
    """

    def __init__(self, seed: int, stream_id: int, _path: tuple[int, ...] = ()):
        if not 0 <= seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if not 0 <= stream_id < 2**64:
            raise ValueError("stream_id must fit in 64 bits")
        self.seed = seed
        self.stream_id = stream_id
        self.path = _path
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream_id, *_path))
        self._bitgen = np.random.Philox(seed=ss)

    def child(self, tag: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.path + (tag,))

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in (0, 1), from the top 53 bits of each raw word."""
        raw = self._bitgen.random_raw(n)
        return (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54

    def normal(self, n: int) -> np.ndarray:
        """n standard normals via the inverse CDF (keeps the draw count fixed)."""
        return ndtri(self.uniform(n))


def sample_gue(dim: int, v2: float, stream: RngStream) -> np.ndarray:
    """Hermitian dim x dim matrix with E[V_ab V_cd] = v2 * delta_ad delta_bc.

    Equivalently E[|V_ab|^2] = v2 for every entry.  Draw order is fixed:
    the real diagonal first, then upper-triangle (x, y) pairs row by row.
    """
    H = np.zeros((dim, dim), dtype=np.complex128)
    diag = stream.normal(dim) * np.sqrt(v2)
    H[np.diag_indices(dim)] = diag
    n_off = dim * (dim - 1) // 2
    if n_off:
        z = stream.normal(2 * n_off) * np.sqrt(v2 / 2.0)
        iu = np.triu_indices(dim, k=1)
        vals = z[0::2] + 1j * z[1::2]
        H[iu] = vals
        H[(iu[1], iu[0])] = vals.conj()
    return H


def sample_rect(rows: int, cols: int, v2: float, stream: RngStream) -> np.ndarray:
    """Complex rows x cols matrix of iid entries with E[|V|^2] = v2.

    Entries are drawn row-major as (x, y) pairs.
    """
    z = stream.normal(2 * rows * cols) * np.sqrt(v2 / 2.0)
    return (z[0::2] + 1j * z[1::2]).reshape(rows, cols)


@dataclass
class ModelSpec:
    """Parameters of one transition-strength experiment.

    kind selects which fields are meaningful; fields that do not belong to
    the kind must stay None (validate enforces it, mirroring the config
    schema's unknown-key rejection).
    """

    kind: str
    N: int | None = None
    m: int | None = None
    k: int | None = None
    t: int | None = None
    k0: int | None = None
    N1: int | None = None
    N2: int | None = None
    m1: int | None = None
    m2: int | None = None
    v_h: float = 1.0
    v_o: float = 1.0
    v_h_ij: dict[tuple[int, int], float] | None = None

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.v_h <= 0 or self.v_o <= 0:
            raise ValueError("variances must be positive")

        def need(names):
            for n in names:
                if getattr(self, n) is None:
                    raise ValueError(f"field {n} is required for kind {self.kind}")

        def forbid(names):
            for n in names:
                if getattr(self, n) is not None:
                    raise ValueError(f"field {n} must be absent for kind {self.kind}")

        if self.kind == "number_conserving":
            need(["N", "m", "k", "t"])
            forbid(["k0", "N1", "N2", "m1", "m2", "v_h_ij"])
            if not (0 <= self.k <= self.m <= self.N):
                raise ValueError("need 0 <= k <= m <= N")
            if not (0 <= self.t <= self.m):
                raise ValueError("need 0 <= t <= m")
        elif self.kind == "removal":
            need(["N", "m", "k", "k0"])
            forbid(["t", "N1", "N2", "m1", "m2", "v_h_ij"])
            if not (0 <= self.k <= self.m <= self.N):
                raise ValueError("need 0 <= k <= m <= N")
            if not (0 <= self.k0 <= self.m):
                raise ValueError("need 0 <= k0 <= m")
        else:
            need(["N1", "N2", "m1", "m2", "k", "k0"])
            forbid(["N", "m", "t"])
            if not (0 <= self.m1 <= self.N1 and 0 <= self.m2 <= self.N2):
                raise ValueError("need 0 <= m_s <= N_s for each species")
            if self.k < 0 or self.k0 < 0:
                raise ValueError("ranks must be nonnegative")
            if self.k0 > self.m2:
                raise ValueError("need k0 <= m2 (species 2 supplies the converted particles)")
            if self.m1 + self.k0 > self.N1:
                raise ValueError("need m1 + k0 <= N1 (species 1 receives them)")
            if self.v_h_ij is not None:
                for (i, j), v in self.v_h_ij.items():
                    if i < 0 or j < 0 or i + j != self.k:
                        raise ValueError(f"v_h_ij key ({i},{j}) does not split k={self.k}")
                    if v <= 0:
                        raise ValueError("v_h_ij variances must be positive")

    # sector bookkeeping -------------------------------------------------

    def initial_numbers(self) -> tuple[int, ...]:
        if self.kind == "beta_decay":
            return (self.m1, self.m2)
        return (self.m,)

    def final_numbers(self) -> tuple[int, ...]:
        if self.kind == "number_conserving":
            return (self.m,)
        if self.kind == "removal":
            return (self.m - self.k0,)
        return (self.m1 + self.k0, self.m2 - self.k0)

    def families(self) -> list[tuple[int, int, float]]:
        """Beta-kind H families (i, j, variance), i ascending, j = k - i.

        Families whose rank exceeds a species' mode count cannot exist at
        all and are dropped; families that merely exceed a sector's
        particle number still draw coefficients (the draw order is part of
        the contract) and embed to zero there.
        """
        if self.kind != "beta_decay":
            raise ValueError("families() is defined for the beta_decay kind only")
        out = []
        for i in range(self.k + 1):
            j = self.k - i
            if i > self.N1 or j > self.N2:
                continue
            v = self.v_h
            if self.v_h_ij is not None and (i, j) in self.v_h_ij:
                v = self.v_h_ij[(i, j)]
            out.append((i, j, v))
        return out


def _beta_pair_maps(spec: ModelSpec, m1s: int, m2s: int, i: int, j: int, max_dim: int):
    """Kron annihilator rectangles for one beta H family on one sector.

    Returns None when the family cannot act there.  No cross-species sign
    appears: the species-2 annihilators and creators of a family act at
    the same species-1 occupancy, so their crossing phases cancel.
    """
    if i > m1s or j > m2s:
        return None
    a1 = annihilator_set(spec.N1, m1s, i, max_dim)
    a2 = annihilator_set(spec.N2, m2s, j, max_dim)
    maps = []
    for K1 in a1.maps:
        for K2 in a2.maps:
            maps.append(sp.kron(K1, K2).tocsr())
    return maps


@dataclass
class PairMapSet:
    """Duck-typed stand-in for AnnihilatorSet over a two-species family."""

    maps: list
    stacked: sp.csr_array = field(repr=False)

    @property
    def dim_in(self) -> int:
        return self.maps[0].shape[1]

    @property
    def dim_out(self) -> int:
        return self.maps[0].shape[0]


def _stack_maps(maps) -> sp.csr_array:
    d_out, d_in = maps[0].shape
    rows = []
    for K in maps:
        rows.append(sp.coo_array(K).reshape(1, d_out * d_in))
    return sp.vstack(rows).tocsr()


def pair_map_set(spec: ModelSpec, m1s: int, m2s: int, i: int, j: int,
                 max_dim: int = 20000) -> PairMapSet | None:
    maps = _beta_pair_maps(spec, m1s, m2s, i, j, max_dim)
    if maps is None:
        return None
    return PairMapSet(maps=maps, stacked=_stack_maps(maps))


def _conserving_h(N: int, m: int, k: int, coeffs: np.ndarray, max_dim: int) -> np.ndarray:
    if k > m:
        dim = comb(N, m)
        return np.zeros((dim, dim), dtype=np.complex128)
    aset = annihilator_set(N, m, k, max_dim)
    H = embed_kbody(coeffs, aset)
    return (H + H.conj().T) / 2.0


def _beta_h(spec: ModelSpec, m1s: int, m2s: int, draws: list[np.ndarray],
            max_dim: int) -> np.ndarray:
    dim = comb(spec.N1, m1s) * comb(spec.N2, m2s)
    H = np.zeros((dim, dim), dtype=np.complex128)
    for (i, j, _v), V in zip(spec.families(), draws):
        pset = pair_map_set(spec, m1s, m2s, i, j, max_dim)
        if pset is None:
            continue
        H += embed_kbody(V, pset)
    return (H + H.conj().T) / 2.0


def realize_sectors(spec: ModelSpec, stream: RngStream, max_dim: int = 20000):
    """Draw one ensemble member: (H_initial, H_final, O) as plain matrices.

    H in both sectors comes from the same coefficient draw; substream 0 is
    H, substream 1 is O, and beta H families use substream 0's children in
    family order.  O is returned as the map from the initial sector to the
    final sector.
    """
    spec.validate()
    h_stream = stream.child(0)
    o_stream = stream.child(1)

    if spec.kind == "number_conserving":
        V = sample_gue(comb(spec.N, spec.k), spec.v_h, h_stream)
        H = _conserving_h(spec.N, spec.m, spec.k, V, max_dim)
        W = sample_gue(comb(spec.N, spec.t), spec.v_o, o_stream)
        O = _conserving_h(spec.N, spec.m, spec.t, W, max_dim)
        return H, H, O

    if spec.kind == "removal":
        V = sample_gue(comb(spec.N, spec.k), spec.v_h, h_stream)
        H_i = _conserving_h(spec.N, spec.m, spec.k, V, max_dim)
        H_f = _conserving_h(spec.N, spec.m - spec.k0, spec.k, V, max_dim)
        w = sample_rect(1, comb(spec.N, spec.k0), spec.v_o, o_stream)[0]
        aset = annihilator_set(spec.N, spec.m, spec.k0, max_dim)
        O = embed_linear(w, aset).toarray()
        return H_i, H_f, O

    # beta_decay
    draws = []
    for fam_idx, (i, j, v) in enumerate(spec.families()):
        d = comb(spec.N1, i) * comb(spec.N2, j)
        draws.append(sample_gue(d, v, h_stream.child(fam_idx)))
    H_i = _beta_h(spec, spec.m1, spec.m2, draws, max_dim)
    H_f = _beta_h(spec, spec.m1 + spec.k0, spec.m2 - spec.k0, draws, max_dim)

    c1 = comb(spec.N1, spec.k0)
    c2 = comb(spec.N2, spec.k0)
    Ocoef = sample_rect(c1, c2, spec.v_o, o_stream)
    # creation rectangles on species 1: transpose of annihilators in the
    # final (m1 + k0) sector; annihilators on species 2 act in the initial
    # (m2) sector.  Moving a species-2 annihilator past the m1 occupied
    # species-1 modes costs (-1)^(k0*m1) overall.
    a1 = annihilator_set(spec.N1, spec.m1 + spec.k0, spec.k0, max_dim)
    a2 = annihilator_set(spec.N2, spec.m2, spec.k0, max_dim)
    sign = -1.0 if (spec.k0 * spec.m1) % 2 else 1.0
    d_out = comb(spec.N1, spec.m1 + spec.k0) * comb(spec.N2, spec.m2 - spec.k0)
    d_in = comb(spec.N1, spec.m1) * comb(spec.N2, spec.m2)
    O = sp.csr_array((d_out, d_in), dtype=np.complex128)
    for a_idx, K2 in enumerate(a2.maps):
        # creation part: transpose of the weighted annihilator sum, weights
        # taken as-is (the coefficients multiply A_alpha^dag directly)
        W1 = embed_linear(Ocoef[:, a_idx], a1)
        O = O + sp.kron(W1.T, K2) * sign
    return H_i, H_f, sp.csr_array(O).toarray()


def realize(spec: ModelSpec, stream: RngStream, max_dim: int = 20000):
    """One ensemble member as EmbeddedOperators (H on the initial sector)."""
    H_i, _H_f, O = realize_sectors(spec, stream, max_dim)
    if spec.kind == "number_conserving":
        b = build_basis(spec.N, spec.m, max_dim)
        return (
            EmbeddedOperator(b, b, H_i, hermitian=True),
            EmbeddedOperator(b, b, O, hermitian=True),
        )
    if spec.kind == "removal":
        bi = build_basis(spec.N, spec.m, max_dim)
        bf = build_basis(spec.N, spec.m - spec.k0, max_dim)
        return (
            EmbeddedOperator(bi, bi, H_i, hermitian=True),
            EmbeddedOperator(bf, bi, O),
        )
    bi = two_species_basis(spec.N1, spec.m1, spec.N2, spec.m2, max_dim)
    bf = two_species_basis(spec.N1, spec.m1 + spec.k0, spec.N2, spec.m2 - spec.k0, max_dim)
    return (
        EmbeddedOperator(bi, bi, H_i, hermitian=True),
        EmbeddedOperator(bf, bi, O),
    )
