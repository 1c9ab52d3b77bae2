"""Real-time collision-free video synopsis from tracked object tubes."""

import numba as _numba

# the bundled TBB is too old for numba and would only produce a warning
_numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

__version__ = "0.1.0"
