"""Soft-ball adversarial training with an adaptive transport-cost multiplier.

The package trains small dense classifiers against inner maximizers that are
either hard-ball PGD variants (PGD-AT, TRADES, MART), a fixed-multiplier
Lagrangian adversary (WRM), or the soft-ball two-sub-step adversary whose
multiplier lambda is learned online from the transport-cost budget.

Hot numeric loops live in :mod:`udr._kernels` and are compiled with numba by
default; set ``UDR_BACKEND=numpy`` to run the identical source uncompiled.
"""

from udr.backend import active_backend

__all__ = ["active_backend"]
__version__ = "0.1.0"
