"""Quadrotor pursuit-evasion lab: simulator, PPO, self-play league, benchmarks."""

import os

# Cap BLAS worker pools before numpy is first imported.
_threads = os.environ.get("PE_ARENA_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
