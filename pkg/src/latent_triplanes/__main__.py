import os
import sys

if "--deterministic" in sys.argv:
    # pin BLAS to one thread so reductions run in a fixed order
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")

from .cli import main  # noqa: E402

sys.exit(main())
