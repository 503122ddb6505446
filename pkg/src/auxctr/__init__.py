"""Multi-task CTR training with user-item and next-item InfoNCE match tasks."""
import os as _os

# single-threaded BLAS keeps runs bit-reproducible and is faster at these sizes
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

__version__ = "0.1.0"
