"""Principal branch of the Lambert W function and the lower-branch preimage map.

``lambert_w0(x)`` returns the ``w >= -1`` with ``w * exp(w) = x``. Halley's
iteration is used away from the branch point ``-1/e``; close to it, the
Puiseux series in ``p = sqrt(2 (e x + 1))`` is summed directly, since Halley
loses digits there.
"""
from __future__ import annotations

import math

__all__ = ["lambert_w0", "phi_alpha", "BRANCH_POINT"]

BRANCH_POINT = -math.exp(-1.0)
# 1/e as a double-double so that x + 1/e is exact near the branch point.
_INV_E_HI = 0.36787944117144233
_INV_E_LO = -1.2428753672788363e-17

# Series W = sum c_k p^k around the branch point (Corless et al., 1996).
_BRANCH_SERIES = (
    -1.0,
    1.0,
    -1.0 / 3.0,
    11.0 / 72.0,
    -43.0 / 540.0,
    769.0 / 17280.0,
    -221.0 / 8505.0,
    680863.0 / 43545600.0,
    -1963.0 / 204120.0,
    226287557.0 / 37623398400.0,
)
_SERIES_RADIUS = 1e-6
_MAX_HALLEY = 50


def _shift(x: float) -> float:
    """``x + 1/e`` computed without cancellation for ``x`` near ``-1/e``."""
    return (x + _INV_E_HI) + _INV_E_LO


def _branch_series(x: float) -> float:
    p = math.sqrt(max(0.0, 2.0 * math.e * _shift(x)))
    w = 0.0
    for coef in reversed(_BRANCH_SERIES):
        w = w * p + coef
    return w


def _initial_guess(x: float) -> float:
    if x > math.e:
        lx = math.log(x)
        return lx - math.log(lx)
    if x < -0.32:
        return _branch_series(x)
    # Pade-type rational fit, good to a few percent on [-0.32, e].
    return x * (1.0 + 4.0 / 3.0 * x) / (1.0 + 7.0 / 3.0 * x + 5.0 / 6.0 * x * x)


def lambert_w0(x: float) -> float:
    """Principal branch ``W0(x)`` for real ``x >= -1/e``.

    Raises
    ------
    ValueError
        If ``x`` is below the branch point by more than ``1e-15``.
    """
    x = float(x)
    if math.isnan(x):
        return math.nan
    shifted = _shift(x)
    if shifted < 0.0:
        if shifted < -1e-15:
            raise ValueError(f"lambert_w0 is undefined below -1/e, got {x!r}")
        return -1.0
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return math.inf
    if shifted <= _SERIES_RADIUS:
        return _branch_series(x)

    w = _initial_guess(x)
    for _ in range(_MAX_HALLEY):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        dw = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= dw
        if abs(dw) <= 1e-16 * (1.0 + abs(w)):
            break
    return w


def phi_alpha(alpha: float) -> float:
    """Lower-branch partner of ``alpha``: ``-W0(-alpha exp(-alpha))``.

    For ``alpha >= 1`` this is the unique ``b <= 1`` with
    ``b exp(-b) = alpha exp(-alpha)``.
    """
    alpha = float(alpha)
    if not alpha >= 1.0:
        raise ValueError(f"phi_alpha needs alpha >= 1, got {alpha!r}")
    if alpha == 1.0:
        return 1.0
    return -lambert_w0(-alpha * math.exp(-alpha))
