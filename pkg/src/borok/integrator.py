"""One-step Rosenbrock-Krylov methods.

The reduced-space step works on any basis object exposing ``V``, ``W``,
``T``, ``theta_next`` and ``remainder_columns``: a :class:`BiorthBasis` gives
the biorthogonal (BOROK) method, an :class:`ArnoldiBasis` (``W = V``,
``T = H``) the orthogonal ROK baseline. ``full_space_row_step`` is the dense
oracle used to check both.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import NonFiniteState
from .krylov import extend_basis
from .linalg import ShiftedLU, _checked_lu
from .tableau import MethodTableau


def rms_norm(y_new, err_vec):
    return float(np.sqrt(np.mean(err_vec ** 2))) if err_vec.size else 0.0


@dataclass
class StageWorkspace:
    """Per-stage vectors of one step.

    ``lam[i]`` is stored at the reduced dimension used by stage ``i``;
    ``sizes[i]`` records that dimension. ``psi`` holds ``W^T F_j`` against
    the final (possibly extended) ``W``.
    """

    F: list = field(default_factory=list)
    psi: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    k: list = field(default_factory=list)
    sizes: list = field(default_factory=list)

    def lam_padded(self, j, size):
        out = np.zeros(size)
        out[: self.lam[j].shape[0]] = self.lam[j]
        return out


@dataclass
class StepRecord:
    y_next: np.ndarray
    err_est: float
    err_vec: np.ndarray | None
    basis_size_used: int
    rhs_evals: int
    matvecs: int = 0
    tmatvecs: int = 0
    stage_residual_norms: list | None = None
    workspace: StageWorkspace | None = None
    basis: object = None


def _finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NonFiniteState(f"non-finite {what}")
    return x


def _rhs_fn(problem):
    return problem if callable(problem) and not hasattr(problem, "rhs") else (lambda y: problem.rhs(0.0, y))


def reduced_step(problem, tableau: MethodTableau, basis, y_n, h, f0=None, extend=False,
                 jac=None, alpha=1.0, norm=rms_norm):
    """Shared reduced-space stage loop.

    With ``extend=True`` the basis is extended with ``F_i`` before each stage
    ``i >= 2`` (requires ``jac``); earlier ``lambda`` vectors are zero padded.
    ``f0``, when given, is reused as ``F_1 = f(y_n)``.
    """
    f = _rhs_fn(problem)
    s = tableau.s
    hg = h * tableau.gamma_diag
    ws = StageWorkspace()
    rhs_evals = 0
    mv0 = (jac.matvec_counter, jac.tmatvec_counter) if jac is not None else (0, 0)
    lu = ShiftedLU(basis.T, hg)
    for i in range(s):
        if i == 0 and f0 is not None:
            Fi = f0
        else:
            Yi = y_n.copy()
            for j in range(i):
                if tableau.alpha[i, j] != 0.0:
                    Yi += tableau.alpha[i, j] * ws.k[j]
            Fi = f(Yi)
            rhs_evals += 1
        _finite(Fi, f"stage {i + 1} right-hand side")
        if extend and i > 0:
            old = basis.size
            basis = extend_basis(basis, Fi, jac, alpha)
            if basis.size != old:
                lu = ShiftedLU(basis.T, hg)
        size = basis.size
        V, W, T = basis.V, basis.W, basis.T
        psi = W.T @ Fi
        acc = np.zeros(size)
        for j in range(i):
            if tableau.gamma_lower[i, j] != 0.0:
                acc += tableau.gamma_lower[i, j] * ws.lam_padded(j, size)
        lam = lu.solve(h * psi + h * (T @ acc))
        k = V @ lam + h * (Fi - V @ psi)
        _finite(k, f"stage {i + 1} vector")
        ws.F.append(Fi)
        ws.psi.append(psi)
        ws.lam.append(lam)
        ws.k.append(k)
        ws.sizes.append(size)
    if extend:
        ws.psi = [basis.W.T @ Fj for Fj in ws.F]
    y_next = y_n.copy()
    for i in range(s):
        y_next += tableau.b[i] * ws.k[i]
    _finite(y_next, "step result")
    err_vec = None
    err = 0.0
    if tableau.b_hat is not None:
        err_vec = np.zeros_like(y_n)
        for i in range(s):
            d = tableau.b[i] - tableau.b_hat[i]
            if d != 0.0:
                err_vec += d * ws.k[i]
        err = norm(y_next, err_vec)
    mv1 = (jac.matvec_counter, jac.tmatvec_counter) if jac is not None else (0, 0)
    return StepRecord(y_next=y_next, err_est=err, err_vec=err_vec, basis_size_used=basis.size,
                      rhs_evals=rhs_evals, matvecs=mv1[0] - mv0[0], tmatvecs=mv1[1] - mv0[1],
                      workspace=ws, basis=basis)


def borok_step(problem, tableau, basis, y_n, h, f0=None, norm=rms_norm):
    """One reduced-space BOROK step on a prebuilt biorthogonal basis.

    Costs ``s`` right-hand side evaluations (``s - 1`` if ``f0`` is supplied)
    and no Jacobian products.
    """
    return reduced_step(problem, tableau, basis, y_n, h, f0=f0, norm=norm)


def borok_step_extended(problem, tableau, basis, y_n, h, jac, f0=None, alpha=1.0, norm=rms_norm):
    """BOROK step whose basis is extended with ``F_i`` before stages ``2..s``.

    Each successful extension costs one product with ``J`` and one with ``J^T``.
    """
    return reduced_step(problem, tableau, basis, y_n, h, f0=f0, extend=True, jac=jac,
                        alpha=alpha, norm=norm)


def rok_step(problem, tableau, basis, y_n, h, f0=None, norm=rms_norm):
    """ROK baseline: the reduced step with an Arnoldi basis (``W = V``, ``T = H``)."""
    return reduced_step(problem, tableau, basis, y_n, h, f0=f0, norm=norm)


def full_space_row_step(problem, tableau, A, y_n, h):
    """Dense reference step ``(I - h gamma A) k_i = h F_i + h A sum_j gamma_ij k_j``.

    ``A`` may be the exact Jacobian or any dense approximation of it; the
    arithmetic follows the dtype of ``y_n`` and ``A`` (complex allowed).
    """
    f = _rhs_fn(problem)
    A = np.asarray(A)
    y_n = np.asarray(y_n)
    dtype = np.result_type(A, y_n, float)
    N = y_n.shape[0]
    lu = _checked_lu(np.eye(N, dtype=dtype) - h * tableau.gamma_diag * A)
    ks = []
    for i in range(tableau.s):
        Yi = y_n.astype(dtype, copy=True)
        acc = np.zeros(N, dtype=dtype)
        for j in range(i):
            Yi = Yi + tableau.alpha[i, j] * ks[j]
            acc = acc + tableau.gamma_lower[i, j] * ks[j]
        rhs = h * np.asarray(f(Yi), dtype=dtype) + h * (A @ acc)
        ks.append(sla.lu_solve(lu, rhs, check_finite=False))
    y = y_n.astype(dtype, copy=True)
    for i in range(tableau.s):
        y = y + tableau.b[i] * ks[i]
    return y


def stability_function_eval(tableau, z):
    """``R(z)``: one full-space step on ``y' = z y`` with ``h = 1``, ``y0 = 1``."""
    z = complex(z)
    return complex(full_space_row_step(lambda y: z * y, tableau, np.array([[z]]),
                                       np.array([1.0 + 0.0j]), 1.0)[0])


def stage_residual_first(basis, lambda_1, h, gamma_diag):
    """First-stage residual norm ``|h gamma theta_{m+1} e_m^T lambda_1|``."""
    lam = np.asarray(lambda_1)
    return abs(h * gamma_diag * basis.theta_next * lam[basis.m - 1])


def stage_residual_full(jac, basis, workspace, tableau, h, i):
    """Closed-form residual vector of stage ``i`` (0-based) of a reduced step.

    Unextended stages use ``-h^2 J sum_j g_ij (F_j - V psi_j) - h theta v_next
    e_m^T sum_j g_ij lambda_j`` (one product with ``J``). Stages run on an
    extended basis use ``-h (I - V W^T) J [v_m, v_{m+1}, ...] sum_j g_ij lambda_hat_j``,
    which needs no new products. ``g`` includes the diagonal ``gamma``.
    """
    G = tableau.gamma
    size = workspace.sizes[i]
    glam = np.zeros(size)
    for j in range(i + 1):
        if G[i, j] != 0.0:
            glam += G[i, j] * workspace.lam_padded(j, size)
    m = basis.m
    if size > m:
        R = basis.remainder_columns(size)
        return -h * (R @ glam[m - 1:size])
    V = basis.V[:, :m]
    W = basis.W[:, :m]
    delta = np.zeros(V.shape[0])
    for j in range(i + 1):
        if G[i, j] != 0.0:
            delta += G[i, j] * (workspace.F[j] - V @ (W.T @ workspace.F[j]))
    out = -h * basis.theta_next * glam[m - 1] * basis.v_next
    if np.any(delta):
        out = out - h * h * jac.apply(delta)
    return out


def stage_residual_direct(jac, workspace, tableau, h, i):
    """Oracle: ``(I - h gamma J) k_i - h F_i - h J sum_{j<i} gamma_ij k_j`` evaluated in full."""
    G = tableau.gamma
    acc = sum((G[i, j] * workspace.k[j] for j in range(i + 1)), np.zeros_like(workspace.k[i]))
    return workspace.k[i] - h * workspace.F[i] - h * jac.apply(acc)
