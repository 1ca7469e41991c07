"""mfclab: numerical laboratory for mean-field-control convergence rates.

Subpackages by theme: Fourier-side measure calculus (``spectral``),
Wasserstein-1 transport (``transport``), measure functionals and their
finite-N projections (``functionals``), the three regularization
procedures (``regularize``), torus/window PDE solvers (``pde``), particle
Monte Carlo estimators (``particle``), and the experiment harness with its
CLI (``harness``, ``cli``).
"""

from . import (  # noqa: F401
    errors,
    functionals,
    harness,
    particle,
    pde,
    regularize,
    spectral,
    transport,
)

__version__ = "0.1.0"
