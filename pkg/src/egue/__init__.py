"""Finite-N moments of transition strength densities for embedded Gaussian unitary ensembles.

The package has three layers that deliberately do not share code paths:

* ``analytic``: closed-form finite-N moment formulas (with ``combinat``
  supplying the exact integer coefficients),
* ``oracle``: an independent Wick-contraction evaluator that computes the
  same ensemble averages directly from the defining covariances,
* ``montecarlo``: sampled realizations in an explicit Fock space
  (``fock`` + ``ensembles``).

Agreement between the layers is the correctness argument; the acceptance
tests codify it.
"""

from egue.combinat import binom, d_irrep, lambda_coeff
from egue.ensembles import ModelSpec, RngStream

__all__ = [
    "binom",
    "lambda_coeff",
    "d_irrep",
    "ModelSpec",
    "RngStream",
]

__version__ = "0.1.0"
