"""Hyperspherical-normalized soft actor-critic on a small numpy autodiff core."""

from ._malloc import tune as _tune_malloc

_tune_malloc()

__version__ = "0.1.0"
