"""Cut-off profiles with bounded slope."""

from __future__ import annotations

import numpy as np


def emit_profile(a: float, eps: float, grid) -> np.ndarray:
    """``rho(f - a)`` sampled on ``grid`` (values of ``f``).

    Equal to 1 for ``f <= a``, 0 for ``f >= a + 2/eps``, and a reversed
    smoothstep in between.  Its derivative peaks at ``0.75 eps``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.clip((np.asarray(grid, dtype=float) - a) * eps / 2, 0.0, 1.0)
    return 1.0 - x * x * (3 - 2 * x)
