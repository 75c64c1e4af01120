"""Group promotion-abuse detection on fused multi-relation user graphs."""

import os as _os

# single-threaded BLAS keeps float reductions bit-stable across runs
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

__version__ = "0.1.0"
