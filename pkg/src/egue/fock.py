"""Fermionic Fock-space sectors and k-body operator embeddings.

Conventions, fixed once here and relied on everywhere else:

* Modes are numbered 0..N-1 and mode i is bit i of the occupation word.
* A sector basis lists occupation words in increasing integer order.
* The k-mode index tuples used to label operators follow the same order
  as the k-particle sector words, so coefficient matrices line up with
  annihilator lists by construction.
* The normalized annihilator for the ascending tuple i = (i_1 < ... < i_k)
  is A_i(k) = c_{i_k} ... c_{i_2} c_{i_1}: the lowest mode is destroyed
  first.  With that ordering, annihilating all m particles of a state
  always carries coefficient +1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import scipy.sparse as sp

MAX_SECTOR_DIM = 20000


@dataclass
class FockBasis:
    """Occupation-word basis of the (N, m) sector."""

    N: int
    m: int
    words: list[int]
    index: dict[int, int] = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.words)

    def occupations(self, idx: int) -> tuple[int, ...]:
        """Occupied modes of basis state idx, ascending."""
        w = self.words[idx]
        return tuple(j for j in range(self.N) if (w >> j) & 1)


def _next_word(w: int) -> int:
    # Gosper's hack: next integer with the same popcount.
    c = w & -w
    r = w + c
    return r | (((w ^ r) >> 2) // c)


def build_basis(N: int, m: int, max_dim: int = MAX_SECTOR_DIM) -> FockBasis:
    """All C(N, m) occupation words of m fermions in N modes, ascending."""
    if not 0 <= m <= N:
        raise ValueError(f"need 0 <= m <= N, got N={N}, m={m}")
    from math import comb

    dim = comb(N, m)
    if dim > max_dim:
        raise ValueError(f"sector dimension {dim} exceeds max_dim={max_dim}")
    if m == 0:
        words = [0]
    else:
        words = []
        w = (1 << m) - 1
        top = 1 << N
        while w < top:
            words.append(w)
            w = _next_word(w)
    assert len(words) == dim
    return FockBasis(N=N, m=m, words=words, index={w: i for i, w in enumerate(words)})


def mode_subsets(N: int, k: int) -> list[tuple[int, ...]]:
    """Ascending k-tuples of modes, ordered like the (N, k) sector words."""
    basis = build_basis(N, k)
    out = []
    for w in basis.words:
        out.append(tuple(j for j in range(N) if (w >> j) & 1))
    return out


@dataclass
class AnnihilatorSet:
    """All normalized k-particle annihilators on the (N, m) sector.

    maps[i] is the matrix of A_i(k) from the (N, m) sector to the
    (N, m - k) sector; entries are 0 or +-1.  stacked holds the same data
    with row i equal to the row-major vectorization of maps[i], which is
    the layout the embedding and the contraction engine both want.
    """

    N: int
    m: int
    k: int
    modes: list[tuple[int, ...]]
    maps: list[sp.csr_array]
    stacked: sp.csr_array = field(repr=False)

    @property
    def dim_in(self) -> int:
        return self.maps[0].shape[1]

    @property
    def dim_out(self) -> int:
        return self.maps[0].shape[0]


def annihilator_set(N: int, m: int, k: int, max_dim: int = MAX_SECTOR_DIM) -> AnnihilatorSet:
    if not 0 <= k <= m:
        raise ValueError(f"need 0 <= k <= m, got k={k}, m={m}")
    basis = build_basis(N, m, max_dim)
    down = build_basis(N, m - k, max_dim)
    subsets = mode_subsets(N, k)
    pos = {s: i for i, s in enumerate(subsets)}
    nops = len(subsets)
    d_in, d_out = basis.dim, down.dim

    op_rows: list[list[int]] = [[] for _ in range(nops)]
    op_cols: list[list[int]] = [[] for _ in range(nops)]
    op_vals: list[list[int]] = [[] for _ in range(nops)]

    half = k * (k - 1) // 2
    for col, w in enumerate(basis.words):
        occ = [j for j in range(N) if (w >> j) & 1]
        below = {j: (w & ((1 << j) - 1)).bit_count() for j in occ}
        for S in combinations(occ, k):
            w2 = w
            tot = 0
            for j in S:
                w2 &= ~(1 << j)
                tot += below[j]
            sign = -1 if (tot - half) & 1 else 1
            i = pos[S]
            op_rows[i].append(down.index[w2])
            op_cols[i].append(col)
            op_vals[i].append(sign)

    maps = []
    st_rows: list[np.ndarray] = []
    st_cols: list[np.ndarray] = []
    st_vals: list[np.ndarray] = []
    for i in range(nops):
        r = np.asarray(op_rows[i], dtype=np.int64)
        c = np.asarray(op_cols[i], dtype=np.int64)
        v = np.asarray(op_vals[i], dtype=np.float64)
        maps.append(sp.csr_array((v, (r, c)), shape=(d_out, d_in)))
        st_rows.append(np.full(r.shape, i, dtype=np.int64))
        st_cols.append(r * d_in + c)
        st_vals.append(v)

    stacked = sp.csr_array(
        (np.concatenate(st_vals), (np.concatenate(st_rows), np.concatenate(st_cols))),
        shape=(nops, d_out * d_in),
    )
    return AnnihilatorSet(N=N, m=m, k=k, modes=subsets, maps=maps, stacked=stacked)


def embed_kbody(coeffs: np.ndarray, aset: AnnihilatorSet) -> np.ndarray:
    """Dense matrix of sum_ij coeffs[i, j] A_i(k)^dag A_j(k) on the (N, m) sector.

    The controlling index order is the one in aset.modes.  Work is chunked
    so the dense intermediate W_i = sum_j coeffs[i, j] A_j never holds more
    than a few million entries at a time.
    """
    nops = len(aset.maps)
    if coeffs.shape != (nops, nops):
        raise ValueError(f"coeffs must be {(nops, nops)}, got {coeffs.shape}")
    d_in, d_out = aset.dim_in, aset.dim_out
    dtype = np.result_type(coeffs.dtype, np.float64)
    H = np.zeros((d_in, d_in), dtype=dtype)

    chunk = max(1, int(8e6) // max(1, d_in * d_out))
    stackedT = aset.stacked.T.tocsc()
    for start in range(0, nops, chunk):
        stop = min(nops, start + chunk)
        # columns of W are vec(W_i) for i in the chunk
        W = stackedT @ coeffs[start:stop].T.astype(dtype, copy=False)
        for i in range(start, stop):
            Wi = W[:, i - start].reshape(d_out, d_in)
            H += aset.maps[i].T @ Wi
    return H


def embed_linear(coeffs: np.ndarray, aset: AnnihilatorSet) -> sp.csr_array:
    """Sparse matrix of sum_i coeffs[i] A_i(k): an (N, m) -> (N, m-k) map."""
    nops = len(aset.maps)
    if coeffs.shape != (nops,):
        raise ValueError(f"coeffs must be ({nops},), got {coeffs.shape}")
    vec = coeffs @ aset.stacked
    return sp.csr_array(vec.reshape(aset.dim_out, aset.dim_in))


@dataclass
class ProductBasis:
    """Two-species sector: species 1 occupies modes below species 2.

    The product index of (i1, i2) is i1 * basis2.dim + i2, which keeps
    plain Kronecker products of per-species matrices aligned with the
    basis without any reshuffling.
    """

    basis1: FockBasis
    basis2: FockBasis

    @property
    def dim(self) -> int:
        return self.basis1.dim * self.basis2.dim


def two_species_basis(
    N1: int, m1: int, N2: int, m2: int, max_dim: int = MAX_SECTOR_DIM
) -> ProductBasis:
    pb = ProductBasis(build_basis(N1, m1, max_dim), build_basis(N2, m2, max_dim))
    if pb.dim > max_dim:
        raise ValueError(f"product dimension {pb.dim} exceeds max_dim={max_dim}")
    return pb


@dataclass
class EmbeddedOperator:
    """A realized operator together with the sectors it connects.

    rows_basis and cols_basis may be FockBasis or ProductBasis.  When
    hermitian is set the matrix is checked, not trusted.
    """

    rows_basis: object
    cols_basis: object
    matrix: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        mr, mc = self.matrix.shape
        if mr != self.rows_basis.dim or mc != self.cols_basis.dim:
            raise ValueError("matrix shape does not match the declared sectors")
        if self.hermitian:
            scale = max(1.0, np.abs(self.matrix).max())
            dev = np.abs(self.matrix - self.matrix.conj().T).max()
            if dev > 1e-12 * scale:
                raise ValueError(f"matrix declared hermitian deviates by {dev:.3e}")
