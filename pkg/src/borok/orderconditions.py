"""Order-condition defects of linearly implicit tableaus.

With ``B = alpha + gamma`` (full ``gamma`` including the diagonal) and
``c = alpha e``, a K-method of order 4 needs the nine conditions listed in
:data:`K_CONDITIONS_4`. The first four of them are the order-3 set used for
the embedded weights. Conditions with a ``gamma``-only factor are the ones a
Krylov Jacobian approximation adds on top of the exact-Jacobian set.
"""
from __future__ import annotations

import numpy as np


def _parts(tab):
    e = np.ones(tab.s)
    B = tab.alpha + tab.gamma
    c = tab.alpha @ e
    return e, B, c


def k_condition_defects(tab, weights=None, order=None):
    """Defects ``lhs - rhs`` of the K-method conditions up to ``order`` (at most 4)."""
    b = tab.b if weights is None else np.asarray(weights)
    order = tab.order_p if order is None else order
    e, B, c = _parts(tab)
    A, G = tab.alpha, tab.gamma
    rows = [("b e = 1", b @ e - 1.0)]
    if order >= 2:
        rows.append(("b B e = 1/2", b @ B @ e - 0.5))
    if order >= 3:
        rows += [("b B^2 e = 1/6", b @ B @ B @ e - 1 / 6),
                 ("b c^2 = 1/3", b @ c ** 2 - 1 / 3)]
    if order >= 4:
        rows += [("b B^3 e = 1/24", b @ B @ B @ B @ e - 1 / 24),
                 ("b c^3 = 1/4", b @ c ** 3 - 0.25),
                 ("b (c * A B e) = 1/8", b @ (c * (A @ (B @ e))) - 1 / 8),
                 ("b A c^2 = 1/12", b @ (A @ c ** 2) - 1 / 12),
                 ("b G c^2 = 0", b @ (G @ c ** 2))]
    return rows


def stability_function(tab, weights=None):
    """``R(z) = 1 + z b (I - z B)^{-1} e`` as a callable."""
    b = tab.b if weights is None else np.asarray(weights)
    e, B, _ = _parts(tab)
    eye = np.eye(tab.s)

    def R(z):
        z = np.asarray(z, dtype=complex)
        out = np.empty(z.shape, dtype=complex)
        for idx, zz in np.ndenumerate(z):
            out[idx] = 1.0 + zz * (b @ np.linalg.solve(eye - zz * B, e))
        return out

    return R
