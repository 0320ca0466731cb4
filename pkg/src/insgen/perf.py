"""Runtime performance knobs.

The model's matrices are small (tens by hundreds); OpenBLAS threading adds
more synchronization than it saves at these sizes, so training and
evaluation run markedly faster with BLAS pinned to one thread.
"""

from __future__ import annotations

import os


def limit_blas_threads(n: int = 1) -> None:
    """Pin BLAS threadpools to n threads; silently does nothing if unsupported."""
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=n, user_api="blas")
    except Exception:
        os.environ.setdefault("OPENBLAS_NUM_THREADS", str(n))
