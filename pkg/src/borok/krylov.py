"""Krylov bases: Arnoldi, Lanczos biorthogonalization and subspace extension.

A :class:`BiorthBasis` carries ``V``, ``W`` with ``W^T V = I`` and the
reduced matrix ``T = W^T J V``. The three-term recurrence follows the
unit-norm-``v`` variant, so ``theta_next`` is the norm of the next unscaled
``v`` and the first-stage residual is simply ``|h gamma theta e_m^T lambda_1|``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import RankDeficient, SeriousBreakdown
from .linalg import ShiftedLU, min_norm_least_squares

BREAKDOWN_RTOL = 1e-12
DEGENERATE_RTOL = 1e-12


@dataclass(frozen=True)
class ExtensionBlock:
    """One appended column pair and its coupling blocks in ``T``."""

    v_a: np.ndarray
    w_a: np.ndarray
    t_v: np.ndarray
    t_w: np.ndarray
    t_vw: float
    alpha: float


@dataclass(frozen=True)
class BiorthBasis:
    """Pair of biorthogonal bases of ``K_m(J, f)`` and ``K_m(J^T, f)``.

    ``m`` counts Krylov columns; ``V``, ``W`` and ``T`` have ``m + ext_count``
    columns once extensions are appended. ``breakdown`` is ``None``,
    ``"lucky"`` (invariant subspace, ``theta_next == 0``) or ``"serious"``.
    ``converged`` is false only when an adaptive build hit ``m_max``.
    """

    V: np.ndarray
    W: np.ndarray
    T: np.ndarray
    theta_next: float
    v_next: np.ndarray
    beta_next: float
    w_next: np.ndarray
    m: int
    ext_count: int = 0
    breakdown: str | None = None
    converged: bool = True
    first_residual: float | None = None
    extensions: tuple = ()
    ext_skipped: int = 0
    jv_ext: tuple = field(default=(), repr=False)

    @property
    def size(self) -> int:
        return self.V.shape[1]

    @property
    def structure(self) -> str:
        if self.ext_count:
            return "tridiagonal-plus-extension"
        band = np.triu(self.T, 2) + np.tril(self.T, -2)
        return "general" if np.any(band) else "tridiagonal"

    def project(self, x):
        """Reduced coordinates ``W^T x``."""
        return self.W.T @ x

    def approx_jac_apply(self, x):
        """Apply ``A = V T W^T`` without forming it."""
        return self.V @ (self.T @ (self.W.T @ x))

    def jv_last_krylov(self):
        """``J v_m`` rebuilt from the recurrence (no product with ``J``)."""
        m = self.m
        return self.V[:, :m] @ self.T[:m, m - 1] + self.theta_next * self.v_next

    def remainder_columns(self, size=None):
        """``(I - V W^T) J [v_m, v_{m+1}, ..., v_size]`` for the leading ``size`` columns.

        These are the only nonzero columns of ``J V - V T``; extension
        columns reuse the products stored when they were appended.
        """
        size = self.size if size is None else size
        cols = [self.jv_last_krylov()] + list(self.jv_ext[: size - self.m])
        Jc = np.column_stack(cols)
        V, W = self.V[:, :size], self.W[:, :size]
        return Jc - V @ (W.T @ Jc)


@dataclass(frozen=True)
class ArnoldiBasis:
    """Orthonormal basis of ``K_m(J, f)`` with Hessenberg ``H = V^T J V``.

    ``W`` and ``T`` alias ``V`` and ``H`` so reduced-space code written for
    biorthogonal bases runs unchanged on it.
    """

    V: np.ndarray
    H: np.ndarray
    h_next: float
    v_next: np.ndarray
    m: int
    breakdown: str | None = None
    converged: bool = True
    first_residual: float | None = None

    ext_count = 0

    @property
    def W(self):
        return self.V

    @property
    def T(self):
        return self.H

    @property
    def theta_next(self):
        return self.h_next

    @property
    def size(self) -> int:
        return self.V.shape[1]

    def project(self, x):
        return self.V.T @ x

    def approx_jac_apply(self, x):
        return self.V @ (self.H @ (self.V.T @ x))

    def jv_last_krylov(self):
        m = self.m
        return self.V @ self.H[:, m - 1] + self.h_next * self.v_next

    def remainder_columns(self, size=None):
        Jc = self.jv_last_krylov()[:, None]
        return Jc - self.V @ (self.V.T @ Jc)


def _first_residual(T, theta, proj, h, gamma):
    lam = ShiftedLU(T, h * gamma).solve(h * proj)
    return abs(h * gamma * theta * lam[-1])


def _lanczos(jac, f, m_max, m_min=None, h=None, gamma=None, res_tol=None, rebiorth=True):
    """Shared recurrence; the residual test is active when ``res_tol`` is given."""
    f = np.asarray(f, dtype=float)
    fnorm = np.linalg.norm(f)
    if not fnorm > 0.0:
        raise ValueError("starting vector must be nonzero")
    if m_max < 1:
        raise ValueError("basis size must be at least 1")
    N = f.shape[0]
    m_max = min(m_max, N)
    adaptive = res_tol is not None
    V = np.zeros((N, m_max + 1))
    W = np.zeros((N, m_max + 1))
    T = np.zeros((m_max, m_max))
    proj = np.zeros(m_max)
    V[:, 0] = W[:, 0] = f / fnorm
    beta_j = theta_j = 0.0
    residual = None
    converged = not adaptive

    def finish(j, theta, vhat, beta, what, breakdown=None):
        v_next = vhat / theta if theta > 0.0 else np.zeros(N)
        if breakdown == "lucky":
            theta = 0.0
        w_next = what / beta if beta != 0.0 else what
        return BiorthBasis(
            V=V[:, :j].copy(), W=W[:, :j].copy(), T=T[:j, :j].copy(),
            theta_next=float(theta), v_next=v_next, beta_next=float(beta if beta != 0.0 else 1.0),
            w_next=w_next, m=j, breakdown=breakdown, converged=converged,
            first_residual=residual)

    for j in range(m_max):
        vj, wj = V[:, j], W[:, j]
        Av = jac.apply(vj)
        Atw = jac.apply_transpose(wj)
        kappa = Av @ wj
        T[j, j] = kappa
        vhat = Av - kappa * vj
        what = Atw - kappa * wj
        if j > 0:
            vhat -= beta_j * V[:, j - 1]
            what -= theta_j * W[:, j - 1]
        if rebiorth:
            # The corrections vanish in exact arithmetic. Folding them into T keeps
            # J V = V T + theta v e^T and J^T W = W T^T + beta w e^T exact while
            # removing the biorthogonality drift of the plain recurrence.
            Vj, Wj = V[:, :j + 1], W[:, :j + 1]
            c_v = Wj.T @ vhat
            c_w = Vj.T @ what
            vhat -= Vj @ c_v
            what -= Wj @ c_w
            diag = 0.5 * (c_v[j] + c_w[j])
            T[:j, j] += c_v[:j]
            T[j, :j] += c_w[:j]
            T[j, j] += diag
        theta = np.sqrt(abs(vhat @ vhat))
        size = j + 1
        if adaptive:
            proj[j] = wj @ f
        if theta <= BREAKDOWN_RTOL * np.linalg.norm(Av):
            if adaptive:
                residual, converged = 0.0, True
            return finish(size, 0.0, vhat, 0.0, what, breakdown="lucky")
        vw = vhat @ what
        serious = abs(vw) <= BREAKDOWN_RTOL * theta * np.linalg.norm(what)
        if adaptive and size >= m_min:
            residual = _first_residual(T[:size, :size], theta, proj[:size], h, gamma)
            if residual <= res_tol:
                converged = True
                return finish(size, theta, vhat, 0.0 if serious else vw / theta, what,
                              breakdown="serious" if serious else None)
        if size == m_max:
            return finish(size, theta, vhat, 0.0 if serious else vw / theta, what,
                          breakdown="serious" if serious else None)
        if serious:
            raise SeriousBreakdown(
                f"Lanczos pairing failure at step {size}",
                basis=finish(size, theta, vhat, 0.0, what, breakdown="serious"))
        beta = vw / theta
        V[:, j + 1] = vhat / theta
        W[:, j + 1] = what / beta
        T[j + 1, j] = theta
        T[j, j + 1] = beta
        beta_j, theta_j = beta, theta
    raise AssertionError("unreachable")


def lanczos_biorth(jac, f, m):
    """Build ``m`` steps of two-sided Lanczos started from ``v_1 = w_1 = f/|f|``.

    Uses exactly one product with ``J`` and one with ``J^T`` per step. A
    lucky breakdown returns a smaller basis with ``breakdown == "lucky"``.

    Raises
    ------
    SeriousBreakdown
        When the pairing ``(v_hat, w_hat)`` vanishes before size ``m``; the
        partial basis is attached to the exception.
    """
    return _lanczos(jac, f, m)


def lanczos_biorth_adaptive(jac, f1, h, gamma, res_tol, m_min=4, m_max=100):
    """Grow the biorthogonal basis until the first-stage residual is below ``res_tol``.

    From size ``m_min`` on, each step solves the reduced first stage and
    stops once ``|h gamma theta_{j+1} e_j^T lambda_1| <= res_tol``. If
    ``m_max`` is reached first the basis is returned with
    ``converged=False``.
    """
    if m_max < m_min:
        raise ValueError("m_max must be >= m_min")
    return _lanczos(jac, f1, m_max, m_min=m_min, h=h, gamma=gamma, res_tol=res_tol)


def _arnoldi(jac, f, m_max, m_min=None, h=None, gamma=None, res_tol=None):
    f = np.asarray(f, dtype=float)
    fnorm = np.linalg.norm(f)
    if not fnorm > 0.0:
        raise ValueError("starting vector must be nonzero")
    if m_max < 1:
        raise ValueError("basis size must be at least 1")
    N = f.shape[0]
    m_max = min(m_max, N)
    adaptive = res_tol is not None
    V = np.zeros((N, m_max + 1))
    H = np.zeros((m_max + 1, m_max))
    V[:, 0] = f / fnorm
    e1 = np.zeros(m_max)
    e1[0] = fnorm
    residual = None
    for j in range(m_max):
        w = jac.apply(V[:, j])
        wnorm = np.linalg.norm(w)
        for _ in range(2):
            # A second sweep restores orthogonality when the new direction is
            # nearly inside the current space.
            for i in range(j + 1):
                c = V[:, i] @ w
                H[i, j] += c
                w -= c * V[:, i]
        hn = np.linalg.norm(w)
        size = j + 1
        lucky = hn <= BREAKDOWN_RTOL * wnorm
        if lucky:
            hn = 0.0
        H[size, j] = hn
        done = lucky or size == m_max
        converged = not adaptive or lucky
        if adaptive and not lucky and size >= m_min:
            residual = _first_residual(H[:size, :size], hn, e1[:size], h, gamma)
            converged = residual <= res_tol
            done = done or converged
        if lucky and adaptive:
            residual = 0.0
        if done:
            return ArnoldiBasis(
                V=V[:, :size].copy(), H=H[:size, :size].copy(), h_next=float(hn),
                v_next=w / hn if hn > 0.0 else np.zeros(N), m=size,
                breakdown="lucky" if lucky else None, converged=converged,
                first_residual=residual)
        V[:, size] = w / hn
    raise AssertionError("unreachable")


def arnoldi(jac, f, m):
    """Arnoldi with two-pass modified Gram-Schmidt: ``m`` products with ``J``, none with ``J^T``."""
    return _arnoldi(jac, f, m)


def arnoldi_adaptive(jac, f1, h, gamma, res_tol, m_min=4, m_max=100):
    """Arnoldi counterpart of :func:`lanczos_biorth_adaptive`."""
    if m_max < m_min:
        raise ValueError("m_max must be >= m_min")
    return _arnoldi(jac, f1, m_max, m_min=m_min, h=h, gamma=gamma, res_tol=res_tol)


def extend_basis(basis, a, jac, alpha=1.0):
    """Append the columns of ``a`` to a biorthogonal basis.

    Each column is processed in turn: ``v_a = (I - V W^T) a / alpha``, then
    ``w_a`` is the minimum-norm solution of ``V^T w_a = 0``,
    ``(alpha v_a)^T w_a = alpha``. ``T`` gains the border ``W^T J v_a``,
    ``w_a^T J V`` and ``w_a^T J v_a``. Columns already in the span (relative
    projector residual below ``1e-12``) or that make the least-squares
    system rank deficient are skipped and counted in ``ext_skipped``.
    """
    if alpha == 0.0:
        raise ValueError("alpha must be nonzero")
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    for col in a.T:
        basis = _extend_one(basis, col, jac, alpha)
    return basis


def _extend_one(basis, a, jac, alpha):
    V, W, T = basis.V, basis.W, basis.T
    resid = a - V @ (W.T @ a)
    rnorm = np.linalg.norm(resid)
    if rnorm <= DEGENERATE_RTOL * np.linalg.norm(a):
        return replace(basis, ext_skipped=basis.ext_skipped + 1)
    v_a = resid / alpha
    # rows rescaled to unit norm; the minimum-norm solution is unchanged
    C = np.vstack([V.T, (resid / rnorm)[None, :]])
    D = np.zeros(C.shape[0])
    D[-1] = alpha / rnorm
    try:
        w_a = min_norm_least_squares(C, D[:, None])[:, 0]
    except RankDeficient:
        return replace(basis, ext_skipped=basis.ext_skipped + 1)
    jv = jac.apply(v_a)
    jtw = jac.apply_transpose(w_a)
    t_v = W.T @ jv
    t_w = V.T @ jtw
    t_vw = float(w_a @ jv)
    k = T.shape[0]
    T_new = np.empty((k + 1, k + 1))
    T_new[:k, :k] = T
    T_new[:k, k] = t_v
    T_new[k, :k] = t_w
    T_new[k, k] = t_vw
    block = ExtensionBlock(v_a=v_a, w_a=w_a, t_v=t_v, t_w=t_w, t_vw=t_vw, alpha=alpha)
    return replace(
        basis, V=np.column_stack([V, v_a]), W=np.column_stack([W, w_a]), T=T_new,
        ext_count=basis.ext_count + 1, extensions=basis.extensions + (block,),
        jv_ext=basis.jv_ext + (jv,))


def project(basis, x):
    """Module-level alias of :meth:`BiorthBasis.project`."""
    return basis.project(x)


def approx_jac_apply(basis, x):
    """Module-level alias of :meth:`BiorthBasis.approx_jac_apply`."""
    return basis.approx_jac_apply(x)
