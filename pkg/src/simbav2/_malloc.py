"""Keep glibc from returning mid-sized numpy buffers to the OS.

Batch-sized arrays here are 100-500 KB, above glibc's default mmap threshold,
so every temporary would be a fresh mmap with page faults on first touch.
Raising the thresholds lets freed blocks be reused; this roughly halves the
cost of elementwise work on one core. No-op outside glibc.
"""

import ctypes
import ctypes.util
import sys

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def tune() -> bool:
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        ok = libc.mallopt(_M_MMAP_THRESHOLD, 64 << 20) == 1
        ok = libc.mallopt(_M_TRIM_THRESHOLD, 256 << 20) == 1 and ok
        return ok
    except (OSError, AttributeError):
        return False
