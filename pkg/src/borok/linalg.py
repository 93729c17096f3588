"""Small dense linear algebra for the reduced (m-dimensional) space.

Everything here is a pure function of its inputs. The shifted solves behind
each stage of a reduced-space step go through :class:`ShiftedLU` so that one
factorization of ``I - scale*T`` serves all stages.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import RankDeficient, SingularSystem, ValidationError

PIVOT_RTOL = 1e-14
RANK_RTOL = 1e-12

STRUCTURES = ("tridiagonal", "tridiagonal-plus-extension", "general")


@dataclass(frozen=True)
class ReducedMatrix:
    """Square reduced matrix with a structure tag.

    ``structure`` is informational except for ``"tridiagonal"``, which is
    validated on construction.
    """

    array: np.ndarray
    structure: str = "general"

    def __post_init__(self):
        a = np.asarray(self.array)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValidationError(f"expected a nonempty square matrix, got {a.shape}", "array")
        if not np.all(np.isfinite(a)):
            raise ValidationError("non-finite entry", "array")
        if self.structure not in STRUCTURES:
            raise ValidationError(f"unknown structure {self.structure!r}", "structure")
        if self.structure == "tridiagonal":
            if np.any(np.triu(a, 2)) or np.any(np.tril(a, -2)):
                raise ValidationError("entries outside the tridiagonal band", "array")
        object.__setattr__(self, "array", a)

    @property
    def dim(self) -> int:
        return self.array.shape[0]


def _as_array(T):
    return T.array if isinstance(T, ReducedMatrix) else np.asarray(T)


def _checked_lu(M):
    with warnings.catch_warnings():
        # exact zero pivots are reported through SingularSystem below
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(M, check_finite=False)
    scale = np.max(np.abs(M)) if M.size else 0.0
    pivots = np.abs(np.diag(lu))
    if not np.all(np.isfinite(lu)) or (pivots.size and pivots.min() <= PIVOT_RTOL * scale):
        raise SingularSystem(
            f"pivot {pivots.min():.3e} below {PIVOT_RTOL:g} x {scale:.3e}")
    return lu, piv


class ShiftedLU:
    """LU factorization of ``I - scale*T`` reused across several right-hand sides."""

    def __init__(self, T, scale):
        T = _as_array(T)
        self.dim = T.shape[0]
        M = np.eye(self.dim, dtype=np.result_type(T, scale, float)) - scale * T
        self._lu = _checked_lu(M)

    def solve(self, rhs):
        rhs = np.asarray(rhs)
        if rhs.shape[0] != self.dim:
            raise ValueError(f"rhs has length {rhs.shape[0]}, expected {self.dim}")
        return sla.lu_solve(self._lu, rhs, check_finite=False)


def solve_shifted(T, scale, rhs):
    """Return ``x`` with ``(I - scale*T) x = rhs``.

    Raises
    ------
    SingularSystem
        If a pivot of the LU factorization is below ``1e-14`` times the
        largest entry of the shifted matrix.
    """
    return ShiftedLU(T, scale).solve(rhs)


def dense_solve(A, B):
    """Solve ``A X = B`` by LU with partial pivoting (small oracle systems)."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got {A.shape}")
    return sla.lu_solve(_checked_lu(A), np.asarray(B), check_finite=False)


def min_norm_least_squares(C, D):
    """Minimum Frobenius-norm ``W`` solving the underdetermined system ``C W = D``.

    ``C`` is ``k x N`` with ``k <= N``. The thin QR factorization of ``C^T``
    is used; rank is judged from the singular values of the triangular factor.

    Raises
    ------
    RankDeficient
        If the smallest singular value of ``C`` is below ``1e-12`` times the
        largest.
    """
    C = np.asarray(C, dtype=float)
    D = np.asarray(D, dtype=float)
    k, n = C.shape
    if k > n:
        raise ValueError(f"need k <= N, got C of shape {C.shape}")
    if D.shape[0] != k:
        raise ValueError(f"D has {D.shape[0]} rows, expected {k}")
    Q, R = np.linalg.qr(C.T)
    sv = sla.svdvals(R)
    if sv.size == 0 or sv[-1] <= RANK_RTOL * sv[0]:
        raise RankDeficient(f"numerical rank below {k} (sigma_min/sigma_max = "
                            f"{(sv[-1] / sv[0]) if sv.size and sv[0] else 0.0:.3e})")
    Y = sla.solve_triangular(R, D, trans="T", check_finite=False)
    return Q @ Y
