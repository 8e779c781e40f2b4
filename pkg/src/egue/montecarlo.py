"""Monte Carlo verification of the moment formulas.

Draws ensemble members, estimates the bivariate moments M_PQ from exact
per-sample traces, and bins eigenbasis-resolved transition strengths
|<E_f|O|E_i>|^2 into a two-dimensional histogram.  Moments never touch
the histogram: traces are exact per sample, so the only error left is
statistical.

Determinism contract: sample s draws from RngStream(seed, s), reduction
runs in sample order, and BLAS is pinned to one thread inside the
sampling loops.  Identical (spec, n, seed) therefore give bit-identical
results at any outer thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
from threadpoolctl import threadpool_limits

from egue.analytic import MOMENT_KEYS, MomentSet
from egue.ensembles import ModelSpec, RngStream, realize_sectors
from egue.oracle import InfeasibleSpecError

MC_MAX_DIM = 4000

ODD_KEYS = ("M10", "M01", "M21", "M12")

# (P, Q) exponents per key, P on the initial sector, Q on the final one
_PQ = {
    "M00": (0, 0), "M20": (2, 0), "M02": (0, 2), "M11": (1, 1),
    "M40": (4, 0), "M04": (0, 4), "M31": (3, 1), "M13": (1, 3),
    "M22": (2, 2),
    "M10": (1, 0), "M01": (0, 1), "M21": (2, 1), "M12": (1, 2),
}
_ALL_KEYS = MOMENT_KEYS + ODD_KEYS


def _sector_dims(spec: ModelSpec) -> tuple[int, int]:
    if spec.kind == "number_conserving":
        d = comb(spec.N, spec.m)
        return d, d
    if spec.kind == "removal":
        return comb(spec.N, spec.m), comb(spec.N, spec.m - spec.k0)
    di = comb(spec.N1, spec.m1) * comb(spec.N2, spec.m2)
    df = comb(spec.N1, spec.m1 + spec.k0) * comb(spec.N2, spec.m2 - spec.k0)
    return di, df


def _check_dims(spec: ModelSpec, max_dim: int) -> tuple[int, int]:
    spec.validate()
    di, df = _sector_dims(spec)
    if max(di, df) > max_dim:
        raise InfeasibleSpecError(
            f"sector dimensions ({di}, {df}) exceed the cap {max_dim}"
        )
    return di, df


def _sample_traces(spec: ModelSpec, s: int, seed: int, max_dim: int) -> np.ndarray:
    """All M_PQ trace estimates for sample s, in _ALL_KEYS order."""
    H_i, H_f, O = realize_sectors(spec, RngStream(seed, s), max_dim)
    dim_i = H_i.shape[0]
    pow_i = [np.eye(dim_i, dtype=np.complex128)]
    for _ in range(4):
        pow_i.append(pow_i[-1] @ H_i)
    pow_f = [np.eye(H_f.shape[0], dtype=np.complex128)]
    for _ in range(4):
        pow_f.append(pow_f[-1] @ H_f)
    Od = O.conj().T
    # T_Q = O^dag H_f^Q O, so M_PQ = tr(T_Q H_i^P) / dim_i
    TQ = [Od @ pow_f[q] @ O for q in range(5)]
    out = np.empty(len(_ALL_KEYS))
    for idx, key in enumerate(_ALL_KEYS):
        p, q = _PQ[key]
        val = np.trace(TQ[q] @ pow_i[p]) / dim_i
        out[idx] = val.real
    return out


@dataclass
class EnsembleStats:
    """Sample means and errors for one (spec, n, seed) run.

    moments holds the mean M_PQ with provenance "mc"; stderr maps the
    same keys to the standard error of the mean.  odd and odd_err cover
    the odd moments (zero in expectation, kept as a null check).  The
    scaled quantities xi and the fourth-order cumulants carry jackknife
    errors because they are ratios of correlated means.
    """

    spec: ModelSpec
    n_samples: int
    seed: int
    moments: MomentSet
    stderr: dict[str, float]
    odd: dict[str, float]
    odd_err: dict[str, float]
    derived: dict[str, float]
    derived_err: dict[str, float]

    def as_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "seed": self.seed,
            "moments": self.moments.as_dict(),
            "stderr": dict(self.stderr),
            "odd": dict(self.odd),
            "odd_err": dict(self.odd_err),
            "derived": dict(self.derived),
            "derived_err": dict(self.derived_err),
        }


def _derived_row(mom: np.ndarray) -> np.ndarray:
    """(xi, mu40, mu04, mu31, mu13, mu22, k40, k04, k31, k13, k22)."""
    m = dict(zip(_ALL_KEYS, mom))
    mt20 = m["M20"] / m["M00"]
    mt02 = m["M02"] / m["M00"]
    xi = (m["M11"] / m["M00"]) / np.sqrt(mt20 * mt02)
    mu40 = (m["M40"] / m["M00"]) / mt20**2
    mu04 = (m["M04"] / m["M00"]) / mt02**2
    mu31 = (m["M31"] / m["M00"]) / (mt20**1.5 * mt02**0.5)
    mu13 = (m["M13"] / m["M00"]) / (mt20**0.5 * mt02**1.5)
    mu22 = (m["M22"] / m["M00"]) / (mt20 * mt02)
    return np.array([
        xi, mu40, mu04, mu31, mu13, mu22,
        mu40 - 3.0, mu04 - 3.0,
        mu31 - 3.0 * xi, mu13 - 3.0 * xi,
        mu22 - 2.0 * xi**2 - 1.0,
    ])


DERIVED_KEYS = ("xi", "mu40", "mu04", "mu31", "mu13", "mu22",
                "k40", "k04", "k31", "k13", "k22")


def run(spec: ModelSpec, n: int, seed: int, max_dim: int = MC_MAX_DIM) -> EnsembleStats:
    """Estimate all bivariate moments from n independent samples.

    Moments come from matrix products, not diagonalization, so each
    sample contributes its exact trace.  Scaled quantities (xi, mu_PQ,
    k_PQ) are evaluated on the sample means; their errors are
    leave-one-out jackknife estimates.
    """
    if n < 2:
        raise ValueError("need n >= 2 samples for error estimates")
    _check_dims(spec, max_dim)

    rows = np.empty((n, len(_ALL_KEYS)))
    with threadpool_limits(limits=1):
        for s in range(n):
            rows[s] = _sample_traces(spec, s, seed, max_dim)

    mean = rows.mean(axis=0)
    sem = rows.std(axis=0, ddof=1) / np.sqrt(n)

    ms = MomentSet(provenance="mc")
    stderr = {}
    for idx, key in enumerate(_ALL_KEYS):
        if key in MOMENT_KEYS:
            ms.set(key, float(mean[idx]), "mc")
            stderr[key] = float(sem[idx])
    odd = {k: float(mean[_ALL_KEYS.index(k)]) for k in ODD_KEYS}
    odd_err = {k: float(sem[_ALL_KEYS.index(k)]) for k in ODD_KEYS}

    derived_full = _derived_row(mean)
    # jackknife: recompute the ratios on each leave-one-out mean
    loo = (rows.sum(axis=0)[None, :] - rows) / (n - 1)
    theta = np.array([_derived_row(loo[s]) for s in range(n)])
    dbar = theta.mean(axis=0)
    jerr = np.sqrt((n - 1) * np.mean((theta - dbar) ** 2, axis=0))

    return EnsembleStats(
        spec=spec,
        n_samples=n,
        seed=seed,
        moments=ms,
        stderr=stderr,
        odd=odd,
        odd_err=odd_err,
        derived={k: float(v) for k, v in zip(DERIVED_KEYS, derived_full)},
        derived_err={k: float(v) for k, v in zip(DERIVED_KEYS, jerr)},
    )


@dataclass
class StrengthHistogram:
    """Binned transition strengths accumulated over samples.

    weights[a, b] is the total squared matrix element falling in initial
    bin a and final bin b.  Eigenvalues outside the +-4 sigma window are
    clipped onto the boundary bins rather than dropped, so total_weight
    keeps the completeness sum rule: it equals the sum of tr(O^dag O)
    over samples (checked per sample; sum_rule_dev records the worst
    relative deviation seen).
    """

    ei_edges: np.ndarray
    ef_edges: np.ndarray
    weights: np.ndarray
    total_weight: float
    n_samples: int
    sum_rule_dev: float
    field_names: tuple = field(default=("ei", "ef"), repr=False)

    @property
    def ei_centers(self) -> np.ndarray:
        return 0.5 * (self.ei_edges[:-1] + self.ei_edges[1:])

    @property
    def ef_centers(self) -> np.ndarray:
        return 0.5 * (self.ef_edges[:-1] + self.ef_edges[1:])

    def moments(self) -> dict[str, float]:
        """Weighted first and second moments of the binned cloud."""
        W = self.weights / self.weights.sum()
        ei = self.ei_centers
        ef = self.ef_centers
        wi = W.sum(axis=1)
        wf = W.sum(axis=0)
        mi = float(wi @ ei)
        mf = float(wf @ ef)
        vi = float(wi @ (ei - mi) ** 2)
        vf = float(wf @ (ef - mf) ** 2)
        cov = float((ei - mi) @ W @ (ef - mf))
        return {
            "mean_i": mi, "mean_f": mf,
            "var_i": vi, "var_f": vf,
            "cov": cov,
            "corr": float(cov / np.sqrt(vi * vf)) if vi > 0 and vf > 0 else 0.0,
        }


def _eigh_checked(H: np.ndarray, s: int, which: str) -> tuple[np.ndarray, np.ndarray]:
    w, U = np.linalg.eigh(H)
    resid = np.linalg.norm(H @ U - U * w)
    scale = np.linalg.norm(H)
    if scale > 0 and resid > 1e-10 * scale:
        raise RuntimeError(
            f"eigensolver residual {resid:.3e} exceeds 1e-10*|H| on the "
            f"{which} sector of sample {s}"
        )
    return w, U


def strength_histogram(spec: ModelSpec, n: int, seed: int, bins: int = 25,
                       max_dim: int = MC_MAX_DIM) -> StrengthHistogram:
    """Accumulate |<E_f|O|E_i>|^2 over an n-sample run.

    Every sample is diagonalized in both sectors, O is rotated into the
    eigenbases, and each squared element is recorded at (E_i, E_f).  Bin
    edges span +-4 weighted standard deviations around the weighted mean
    of the pooled cloud; the pooled pass stores per-sample event lists,
    which is fine at the dimensions this is meant for (histograms are a
    shape check, the moments never use them).
    """
    if n < 1:
        raise ValueError("need n >= 1 samples")
    if bins < 1:
        raise ValueError("need bins >= 1")
    _check_dims(spec, max_dim)

    events_i = []
    events_f = []
    events_w = []
    worst_dev = 0.0
    with threadpool_limits(limits=1):
        for s in range(n):
            H_i, H_f, O = realize_sectors(spec, RngStream(seed, s), max_dim)
            wi, Ui = _eigh_checked(H_i, s, "initial")
            if spec.kind == "number_conserving":
                wf, Uf = wi, Ui
            else:
                wf, Uf = _eigh_checked(H_f, s, "final")
            Oe = Uf.conj().T @ O @ Ui
            W = np.abs(Oe) ** 2
            target = float(np.linalg.norm(O) ** 2)
            dev = abs(W.sum() - target) / target if target > 0 else 0.0
            worst_dev = max(worst_dev, dev)
            ef_grid, ei_grid = np.meshgrid(wf, wi, indexing="ij")
            events_i.append(ei_grid.ravel())
            events_f.append(ef_grid.ravel())
            events_w.append(W.ravel())

    ei = np.concatenate(events_i)
    ef = np.concatenate(events_f)
    wt = np.concatenate(events_w)
    total = wt.sum()

    def _edges(x: np.ndarray) -> np.ndarray:
        mu = float(np.average(x, weights=wt))
        sd = float(np.sqrt(np.average((x - mu) ** 2, weights=wt)))
        if sd == 0.0:
            sd = 1.0
        return np.linspace(mu - 4.0 * sd, mu + 4.0 * sd, bins + 1)

    ei_edges = _edges(ei)
    ef_edges = _edges(ef)
    eps_i = 1e-9 * (ei_edges[-1] - ei_edges[0])
    eps_f = 1e-9 * (ef_edges[-1] - ef_edges[0])
    ei_c = np.clip(ei, ei_edges[0], ei_edges[-1] - eps_i)
    ef_c = np.clip(ef, ef_edges[0], ef_edges[-1] - eps_f)
    weights, _, _ = np.histogram2d(ei_c, ef_c, bins=[ei_edges, ef_edges], weights=wt)

    return StrengthHistogram(
        ei_edges=ei_edges,
        ef_edges=ef_edges,
        weights=weights,
        total_weight=float(total),
        n_samples=n,
        sum_rule_dev=float(worst_dev),
    )


@dataclass
class CompareRow:
    key: str
    empirical: float
    predicted: float
    stderr: float
    z: float
    flagged: bool


@dataclass
class CompareReport:
    rows: list[CompareRow]
    skipped: list[str]
    max_abs_z: float

    @property
    def any_flagged(self) -> bool:
        return any(r.flagged for r in self.rows)

    def as_dict(self) -> dict:
        return {
            "rows": [vars(r) for r in self.rows],
            "skipped": list(self.skipped),
            "max_abs_z": self.max_abs_z,
        }


def compare(stats: EnsembleStats, prediction: MomentSet) -> CompareReport:
    """z-scores of empirical moments against a predicted MomentSet.

    Predictions flagged anything other than "exact" are skipped with a
    notice instead of producing a meaningless z.  |z| > 3 rows are
    flagged.
    """
    rows = []
    skipped = []
    for key in MOMENT_KEYS:
        pred = prediction.value(key)
        flag = prediction.flags.get(key, "unavailable")
        if pred is None or flag != "exact":
            skipped.append(f"{key}: prediction flagged '{flag}', skipped")
            continue
        emp = stats.moments.value(key)
        err = stats.stderr.get(key, 0.0)
        if err == 0.0:
            z = 0.0 if emp == pred else np.inf
        else:
            z = (emp - pred) / err
        rows.append(CompareRow(
            key=key, empirical=emp, predicted=pred, stderr=err,
            z=float(z), flagged=bool(abs(z) > 3.0),
        ))
    max_z = max((abs(r.z) for r in rows), default=0.0)
    return CompareReport(rows=rows, skipped=skipped, max_abs_z=float(max_z))
