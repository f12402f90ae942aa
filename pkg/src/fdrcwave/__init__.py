"""2D acoustic wave toolkit: a staggered-grid FDTD oracle with PML boundaries
and a small convolutional surrogate trained without labels by minimizing the
finite-difference residual of the wave equations.

Submodules are imported explicitly (``from fdrcwave import grid``); this
package root stays import-light so the CLI can cap BLAS threads before numpy
loads.
"""

__version__ = "0.1.0"

__all__ = [
    "grid",
    "fdm",
    "fdrc",
    "nn",
    "optim",
    "pool",
    "trainer",
    "eval",
    "io",
    "cli",
]
