"""Closed-form counts of shortest (monotone) lattice paths across a grid."""

from __future__ import annotations

import math
from typing import Sequence

from ..errors import InvalidInput, Overflow

INT64_MAX = 2 ** 63 - 1


def count_monotone_paths(dims: Sequence[int]) -> int:
    """Number of monotone corner-to-corner paths in an ``l x w [x h]`` grid.

    ``(l+w-2)! / ((l-1)!(w-1)!)`` in 2D and the analogous multinomial in 3D.
    Results that do not fit a signed 64-bit integer raise :class:`Overflow`.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) not in (2, 3) or min(dims) < 1:
        raise InvalidInput(f"need 2D or 3D dims >= 1, got {dims}")
    steps = [d - 1 for d in dims]
    count = math.factorial(sum(steps))
    for s in steps:
        count //= math.factorial(s)
    if count > INT64_MAX:
        raise Overflow(f"path count for {dims} exceeds int64")
    return count
