"""Autonomous initial-value problems and their built-in discretizations.

Every problem exposes ``rhs(t, y)`` and ``linearize(t, y)``. The latter
returns a :class:`JacobianHandle` whose products with ``J`` and ``J^T`` are
counted, so the cost of basis construction can be audited exactly.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .errors import NonFiniteState


class JacobianHandle:
    """Jacobian frozen at a linearization point, with product counters.

    Parameters
    ----------
    matrix : ndarray, scipy sparse matrix or LinearOperator
        The ``N x N`` Jacobian. A ``LinearOperator`` must provide both
        ``matvec`` and ``rmatvec``.
    point : tuple, optional
        ``(t, y)`` where the Jacobian was evaluated.
    """

    def __init__(self, matrix, point=None):
        if sp.issparse(matrix):
            self.matrix = sp.csr_matrix(matrix)
            self._transpose = sp.csr_matrix(self.matrix.T)
        elif isinstance(matrix, LinearOperator):
            self.matrix = matrix
            self._transpose = matrix.T
        else:
            self.matrix = np.asarray(matrix)
            self._transpose = self.matrix.T
        self.point = point
        self.matvec_counter = 0
        self.tmatvec_counter = 0

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, v):
        self.matvec_counter += 1
        return self.matrix @ v

    def apply_transpose(self, w):
        self.tmatvec_counter += 1
        return self._transpose @ w

    def to_dense(self):
        """Dense copy of the matrix; not counted (oracle use only)."""
        if sp.issparse(self.matrix):
            return self.matrix.toarray()
        if isinstance(self.matrix, LinearOperator):
            return self.matrix @ np.eye(self.shape[1])
        return np.array(self.matrix)


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NonFiniteState(f"non-finite entries in {what}")
    return x


class IvpProblem:
    """Base class for ``y' = f(t, y)``, ``y(t0) = y0`` on ``[t0, tF]``.

    Subclasses implement ``_rhs`` and ``_jacobian``; time-dependent ones also
    set ``autonomous = False`` and implement ``_dfdt``.
    """

    autonomous = True
    name = "ivp"

    def __init__(self, y0, t_span):
        self.y0 = np.asarray(y0, dtype=float)
        t0, tf = (float(t) for t in t_span)
        if not t0 < tf:
            raise ValueError(f"need t0 < tF, got {t_span}")
        self.t_span = (t0, tf)
        _check_finite(self.rhs(t0, self.y0), "f(t0, y0)")

    @property
    def dimension(self) -> int:
        return self.y0.shape[0]

    def rhs(self, t, y):
        _check_finite(y, "state")
        return _check_finite(self._rhs(t, y), "right-hand side")

    def jacobian(self, t, y):
        _check_finite(y, "state")
        return self._jacobian(t, y)

    def dfdt(self, t, y):
        if self.autonomous:
            return np.zeros_like(y)
        return self._dfdt(t, y)

    def linearize(self, t, y):
        return JacobianHandle(self.jacobian(t, y), point=(t, np.array(y)))

    def params(self) -> dict:
        """JSON-serializable description used to fingerprint the problem."""
        return {"name": self.name}

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.params(), sort_keys=True).encode())
        h.update(repr(self.t_span).encode())
        h.update(np.ascontiguousarray(self.y0, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def _dfdt(self, t, y):
        raise NotImplementedError


class FunctionProblem(IvpProblem):
    """Problem assembled from plain callables.

    ``jac(t, y)`` returns a dense or sparse matrix; ``dfdt(t, y)`` is only
    needed when ``autonomous`` is false.
    """

    def __init__(self, rhs, jac, y0, t_span, dfdt=None, autonomous=True, name="function"):
        self._f = rhs
        self._j = jac
        self._ft = dfdt
        self.autonomous = autonomous
        self.name = name
        super().__init__(y0, t_span)

    def _rhs(self, t, y):
        return np.asarray(self._f(t, y), dtype=float)

    def _jacobian(self, t, y):
        return self._j(t, y)

    def _dfdt(self, t, y):
        if self._ft is None:
            raise NotImplementedError("non-autonomous problem without dfdt")
        return np.asarray(self._ft(t, y), dtype=float)


class LinearProblem(IvpProblem):
    """``y' = M y`` with a constant dense or sparse ``M``."""

    name = "linear"

    def __init__(self, M, y0, t_span=(0.0, 1.0)):
        self.M = M if sp.issparse(M) else np.asarray(M, dtype=float)
        super().__init__(y0, t_span)

    def _rhs(self, t, y):
        return self.M @ y

    def _jacobian(self, t, y):
        return self.M

    def params(self):
        dense = self.M.toarray() if sp.issparse(self.M) else self.M
        return {"name": self.name,
                "M": hashlib.sha256(np.ascontiguousarray(dense, "<f8").tobytes()).hexdigest()}


class AutonomizedProblem(IvpProblem):
    """State ``(y, tau)`` with ``tau' = 1``; see :func:`autonomize`."""

    def __init__(self, inner):
        self.inner = inner
        self.name = f"autonomized-{inner.name}"
        t0 = inner.t_span[0]
        super().__init__(np.append(inner.y0, t0), inner.t_span)

    def _rhs(self, t, z):
        return np.append(self.inner.rhs(z[-1], z[:-1]), 1.0)

    def _jacobian(self, t, z):
        y, tau = z[:-1], z[-1]
        J = self.inner.jacobian(tau, y)
        col = self.inner.dfdt(tau, y).reshape(-1, 1)
        n = y.shape[0]
        if sp.issparse(J):
            return sp.bmat([[J, sp.csr_matrix(col)],
                            [sp.csr_matrix((1, n)), sp.csr_matrix((1, 1))]], format="csr")
        out = np.zeros((n + 1, n + 1))
        out[:n, :n] = J
        out[:n, n:] = col
        return out

    def params(self):
        return {"name": self.name, "inner": self.inner.params()}


def autonomize(problem):
    """Return an autonomous equivalent of ``problem``.

    Autonomous problems are returned unchanged. Otherwise the result has one
    extra component carrying time, with right-hand side ``(f(tau, y), 1)``.
    """
    if problem.autonomous:
        return problem
    return AutonomizedProblem(problem)


def _central_1d(n, dx, parity):
    """Centered first difference with mirror ghost points (``parity`` = +1 even, -1 odd)."""
    main = np.zeros(n)
    upper = np.full(n - 1, 0.5 / dx)
    lower = np.full(n - 1, -0.5 / dx)
    D = sp.diags([lower, main, upper], [-1, 0, 1], format="lil")
    # ghost f[-1] = parity*f[1], ghost f[n] = parity*f[n-2]
    D[0, 1] = (1.0 - parity) * 0.5 / dx
    D[n - 1, n - 2] = -(1.0 - parity) * 0.5 / dx
    return D.tocsr()


class ShallowWaterProblem(IvpProblem):
    """2D shallow water equations on ``[0,1]^2``, state ``[u; v; h]``.

    The conservation-form fluxes are differenced with second-order centered
    stencils on a node grid with ``dx = dy = 1/(grid_n - 1)``. Walls are
    reflective: the wall-normal velocity is mirrored with odd parity, all
    other quantities with even parity. The momentum tendencies are converted
    to velocity tendencies through ``u_t = ((uh)_t - u h_t) / h``.
    """

    name = "swe"

    def __init__(self, grid_n=64, g=9.81, t_span=(0.0, 5.0), bump_height=0.5, bump_sharpness=100.0):
        if grid_n < 3:
            raise ValueError("grid_n must be at least 3")
        self.grid_n = n = int(grid_n)
        self.g = float(g)
        self.dx = self.dy = 1.0 / (n - 1)
        self.bump_height = float(bump_height)
        self.bump_sharpness = float(bump_sharpness)
        eye = sp.identity(n, format="csr")
        d_odd = _central_1d(n, self.dx, -1)
        d_even = _central_1d(n, self.dx, +1)
        # C-order flattening of a (x, y) indexed field: x is the slow index
        self.Dx_odd = sp.kron(d_odd, eye, format="csr")
        self.Dx_even = sp.kron(d_even, eye, format="csr")
        self.Dy_odd = sp.kron(eye, d_odd, format="csr")
        self.Dy_even = sp.kron(eye, d_even, format="csr")
        x = np.linspace(0.0, 1.0, n)
        X, Y = np.meshgrid(x, x, indexing="ij")
        h0 = 1.0 + self.bump_height * np.exp(-self.bump_sharpness * ((X - 0.5) ** 2 + (Y - 0.5) ** 2))
        y0 = np.concatenate([np.zeros(n * n), np.zeros(n * n), h0.ravel()])
        super().__init__(y0, t_span)

    def split(self, y):
        k = self.grid_n ** 2
        return y[:k], y[k:2 * k], y[2 * k:]

    def _tendencies(self, y):
        u, v, h = self.split(y)
        g = self.g
        rh = -(self.Dx_odd @ (u * h) + self.Dy_odd @ (v * h))
        p = -(self.Dx_even @ (u * u * h + 0.5 * g * h * h) + self.Dy_odd @ (u * v * h))
        q = -(self.Dx_odd @ (u * v * h) + self.Dy_even @ (v * v * h + 0.5 * g * h * h))
        ut = (p - u * rh) / h
        vt = (q - v * rh) / h
        return u, v, h, rh, ut, vt

    def _rhs(self, t, y):
        _, _, h, rh, ut, vt = self._tendencies(y)
        if np.any(h <= 0.0):
            raise NonFiniteState("non-positive water height")
        return np.concatenate([ut, vt, rh])

    def linearize(self, t, y):
        """Matrix-free Jacobian: products cost a few sparse stencil applications."""
        _check_finite(y, "state")
        u, v, h, rh, ut, vt = self._tendencies(y)
        g = self.g
        Dxo, Dxe, Dyo, Dye = self.Dx_odd, self.Dx_even, self.Dy_odd, self.Dy_even
        DxoT, DxeT, DyoT, DyeT = (M.T.tocsr() for M in (Dxo, Dxe, Dyo, Dye))
        uh, vh, uv = u * h, v * h, u * v
        pu_h, qv_h = u * u + g * h, v * v + g * h
        split = self.split

        def matvec(x):
            du, dv, dh = split(np.ravel(x))
            drh = -(Dxo @ (h * du + u * dh) + Dyo @ (h * dv + v * dh))
            dp = -(Dxe @ (2 * uh * du + pu_h * dh) + Dyo @ (vh * du + uh * dv + uv * dh))
            dq = -(Dxo @ (vh * du + uh * dv + uv * dh) + Dye @ (2 * vh * dv + qv_h * dh))
            return np.concatenate([(dp - u * drh - rh * du - ut * dh) / h,
                                   (dq - v * drh - rh * dv - vt * dh) / h,
                                   drh])

        def rmatvec(x):
            a, b, c = split(np.ravel(x))
            al, be = a / h, b / h
            z = c - u * al - v * be
            sp_, rp = DxeT @ al, DyoT @ al
            sq, rq = DxoT @ be, DyeT @ be
            zx, zy = DxoT @ z, DyoT @ z
            return np.concatenate([
                -(2 * uh * sp_ + vh * rp) - vh * sq - h * zx - rh * al,
                -uh * rp - (uh * sq + 2 * vh * rq) - h * zy - rh * be,
                -(pu_h * sp_ + uv * rp) - (uv * sq + qv_h * rq) - u * zx - v * zy
                - (ut * a + vt * b) / h])

        n = y.shape[0]
        op = LinearOperator((n, n), matvec=matvec, rmatvec=rmatvec, dtype=float)
        return JacobianHandle(op, point=(t, np.array(y)))

    def _jacobian(self, t, y):
        """Assembled sparse Jacobian (reference for the matrix-free products)."""
        u, v, h, rh, ut, vt = self._tendencies(y)
        g = self.g
        D = sp.diags
        Dxo, Dxe, Dyo, Dye = self.Dx_odd, self.Dx_even, self.Dy_odd, self.Dy_even
        rh_u = -(Dxo @ D(h))
        rh_v = -(Dyo @ D(h))
        rh_h = -(Dxo @ D(u) + Dyo @ D(v))
        p_u = -(Dxe @ D(2 * u * h) + Dyo @ D(v * h))
        p_v = -(Dyo @ D(u * h))
        p_h = -(Dxe @ D(u * u + g * h) + Dyo @ D(u * v))
        q_u = -(Dxo @ D(v * h))
        q_v = -(Dxo @ D(u * h) + Dye @ D(2 * v * h))
        q_h = -(Dxo @ D(u * v) + Dye @ D(v * v + g * h))
        hinv = D(1.0 / h)
        U, V = D(u), D(v)
        j_uu = hinv @ (p_u - U @ rh_u - D(rh))
        j_uv = hinv @ (p_v - U @ rh_v)
        j_uh = hinv @ (p_h - U @ rh_h) - D(ut / h)
        j_vu = hinv @ (q_u - V @ rh_u)
        j_vv = hinv @ (q_v - V @ rh_v - D(rh))
        j_vh = hinv @ (q_h - V @ rh_h) - D(vt / h)
        return sp.bmat([[j_uu, j_uv, j_uh],
                        [j_vu, j_vv, j_vh],
                        [rh_u, rh_v, rh_h]], format="csr")

    def params(self):
        return {"name": self.name, "grid_n": self.grid_n, "g": self.g,
                "bump_height": self.bump_height, "bump_sharpness": self.bump_sharpness}


class GrayScottProblem(IvpProblem):
    """Gray-Scott reaction-diffusion on a periodic square, state ``[u; v]``.

    Defaults: ``eps1 = 0.2``, ``eps2 = 0.1``, ``F = 0.04``, ``k = 0.06`` on
    ``[0, 2.5]^2`` with ``dx = 2.5 / grid_n``.
    """

    name = "gray-scott"

    def __init__(self, grid_n=128, eps1=0.2, eps2=0.1, feed=0.04, kill=0.06,
                 length=2.5, t_span=(0.0, 2.0), seed=0, perturbation=0.01):
        if grid_n < 3:
            raise ValueError("grid_n must be at least 3")
        self.grid_n = n = int(grid_n)
        self.eps1, self.eps2 = float(eps1), float(eps2)
        self.feed, self.kill = float(feed), float(kill)
        self.length = float(length)
        self.seed = int(seed)
        self.perturbation = float(perturbation)
        self.dx = self.length / n
        d2 = sp.diags([np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], format="lil")
        d2[0, n - 1] = 1.0
        d2[n - 1, 0] = 1.0
        d2 = d2.tocsr() / self.dx ** 2
        eye = sp.identity(n, format="csr")
        self.laplacian = (sp.kron(d2, eye) + sp.kron(eye, d2)).tocsr()
        u = np.ones((n, n))
        v = np.zeros((n, n))
        half = n // 8
        lo, hi = n // 2 - half, n // 2 + half
        u[lo:hi, lo:hi] = 0.5
        v[lo:hi, lo:hi] = 0.25
        rng = np.random.default_rng(self.seed)
        u *= 1.0 + self.perturbation * rng.uniform(-1.0, 1.0, u.shape)
        v *= 1.0 + self.perturbation * rng.uniform(-1.0, 1.0, v.shape)
        super().__init__(np.concatenate([u.ravel(), v.ravel()]), t_span)

    def split(self, y):
        k = self.grid_n ** 2
        return y[:k], y[k:]

    def _rhs(self, t, y):
        u, v = self.split(y)
        uvv = u * v * v
        du = self.eps1 * (self.laplacian @ u) - uvv + self.feed * (1.0 - u)
        dv = self.eps2 * (self.laplacian @ v) + uvv - (self.feed + self.kill) * v
        return np.concatenate([du, dv])

    def _jacobian(self, t, y):
        u, v = self.split(y)
        D = sp.diags
        L = self.laplacian
        return sp.bmat([[self.eps1 * L + D(-v * v - self.feed), D(-2.0 * u * v)],
                        [D(v * v), self.eps2 * L + D(2.0 * u * v - self.feed - self.kill)]],
                       format="csr")

    def params(self):
        return {"name": self.name, "grid_n": self.grid_n, "eps1": self.eps1, "eps2": self.eps2,
                "feed": self.feed, "kill": self.kill, "length": self.length, "seed": self.seed,
                "perturbation": self.perturbation}
