"""Process-wide execution settings: BLAS thread count and deterministic mode.

All kernels are plain numpy, so the only source of run-to-run variation is a
multi-threaded BLAS splitting reductions differently. Deterministic mode pins
BLAS to one thread, which makes results independent of ``threads``.
"""
from __future__ import annotations

import contextlib

from threadpoolctl import threadpool_limits

_settings = {"threads": None, "deterministic": False}
_limiter = None


def configure(threads: int | None = None, deterministic: bool | None = None) -> None:
    global _limiter
    if threads is not None:
        if threads < 1:
            raise ValueError(f"threads must be >= 1, got {threads}")
        _settings["threads"] = threads
    if deterministic is not None:
        _settings["deterministic"] = bool(deterministic)
    n = effective_threads()
    if _limiter is not None:
        _limiter.restore_original_limits()
        _limiter = None
    if n is not None:
        _limiter = threadpool_limits(limits=n, user_api="blas")


def effective_threads() -> int | None:
    if _settings["deterministic"]:
        return 1
    return _settings["threads"]


def deterministic() -> bool:
    return _settings["deterministic"]


@contextlib.contextmanager
def threads(n: int):
    """Temporarily cap BLAS threads (benchmarks)."""
    with threadpool_limits(limits=n, user_api="blas"):
        yield
