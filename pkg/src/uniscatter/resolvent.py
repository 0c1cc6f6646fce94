"""Resolvent boundary machinery for unitary operators.

For a unitary ``U`` the resolvent is ``R(z) = (1 - z U*)^{-1}`` and the
Poisson-type operator is ``delta(r, theta) = (1 - r^2)/(2 pi) R R*`` at
``z = r e^{i theta}``.  Boundary values as ``r -> 1`` are never taken
literally: quantities are evaluated along an :class:`EpsSchedule` and
extrapolated with :func:`richardson`, which keeps the finite-epsilon sequence
for inspection.
"""

from __future__ import annotations

import logging
import threading
import weakref
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lu_factor, lu_solve
from scipy.special import erfc
from scipy.sparse.linalg import LinearOperator

from .errors import ConvergenceError, PreconditionError, SingularOperatorError
from .operators import (
    PIVOT_TOL,
    BandedPattern,
    SolveResult,
    Structure,
    WindowedOperator,
    _State,
    _check_space,
    fold_permutation,
    op_norm,
    state_from_flat,
)

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class RadialPoint:
    """Point ``z = (1 - eps)^{sign} e^{i theta}`` near the unit circle."""

    eps: float
    sign: int
    theta: float

    def __post_init__(self) -> None:
        if not 0.0 < self.eps < 1.0:
            raise PreconditionError(f"eps must lie in (0, 1), got {self.eps}")
        if self.sign not in (1, -1):
            raise PreconditionError(f"sign must be +1 or -1, got {self.sign}")
        object.__setattr__(self, "theta", float(np.mod(self.theta, TWO_PI)))

    @property
    def radius(self) -> float:
        return (1.0 - self.eps) ** self.sign

    @property
    def z(self) -> complex:
        return self.radius * np.exp(1j * self.theta)

    @property
    def weight(self) -> float:
        """``g(eps) = (1 - r^2)/(2 pi)``; positive inside, negative outside."""
        return (1.0 - self.radius**2) / TWO_PI


@dataclass(frozen=True)
class EpsSchedule:
    """Strictly decreasing regularization parameters and extrapolation order."""

    eps: tuple[float, ...]
    order: int = 2

    def __post_init__(self) -> None:
        eps = tuple(float(e) for e in self.eps)
        object.__setattr__(self, "eps", eps)
        if self.order not in (0, 1, 2):
            raise PreconditionError(f"extrapolation order must be 0, 1 or 2, got {self.order}")
        if len(eps) < self.order + 1:
            raise PreconditionError(f"schedule needs at least {self.order + 1} values, got {len(eps)}")
        if any(not 0.0 < e < 1.0 for e in eps):
            raise PreconditionError("schedule values must lie in (0, 1)")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise PreconditionError("schedule must be strictly decreasing")


@dataclass(frozen=True)
class Extrapolation:
    """Richardson limit together with the finite-step data it came from."""

    value: np.ndarray | complex
    order: int
    steps: tuple[float, ...]
    sequence: tuple
    differences: tuple[float, ...]
    error_estimate: float

    @property
    def monotone(self) -> bool:
        d = self.differences
        return all(b < a for a, b in zip(d, d[1:]))


def richardson(steps: Sequence[float], values: Sequence, order: int) -> Extrapolation:
    """Polynomial extrapolation of ``values(h)`` to ``h = 0``.

    Parameters
    ----------
    steps : sequence of float
        Decreasing step parameters ``h``.
    values : sequence of scalars or arrays
        Values observed at each step.
    order : int
        Polynomial degree; the last ``order + 1`` steps are used.

    Returns
    -------
    Extrapolation
        The error estimate is the distance between the order ``p`` and order
        ``p - 1`` extrapolants (the last step difference when ``p = 0``).
    """
    h = np.asarray(steps, dtype=float)
    vals = [np.asarray(v, dtype=complex) for v in values]
    if len(vals) != h.size or h.size < order + 1:
        raise PreconditionError("richardson needs order + 1 steps with matching values")
    diffs = tuple(float(np.linalg.norm(b - a)) for a, b in zip(vals, vals[1:]))

    def lagrange_at_zero(hs: np.ndarray, vs: list[np.ndarray]) -> np.ndarray:
        out = np.zeros_like(vs[0])
        for i, hi in enumerate(hs):
            w = 1.0
            for j, hj in enumerate(hs):
                if j != i:
                    w *= hj / (hj - hi)
            out = out + w * vs[i]
        return out

    value = lagrange_at_zero(h[-(order + 1):], vals[-(order + 1):])
    if order == 0:
        err = diffs[-1] if diffs else float("inf")
    else:
        lower = lagrange_at_zero(h[-order:], vals[-order:])
        err = float(np.linalg.norm(value - lower))
    if value.ndim == 0:
        value = complex(value)
    return Extrapolation(value, order, tuple(h), tuple(vals), diffs, err)


# ---------------------------------------------------------------------------
# resolvent kernels


class _DenseResolvent:
    def __init__(self, lu, scale):
        self.lu = lu
        self.min_pivot = scale

    def solve(self, b, adjoint=False):
        return lu_solve(self.lu, b, trans=2 if adjoint else 0, check_finite=False)


class _BlockResolvent:
    def __init__(self, parts, bounds):
        self.parts = parts
        self.bounds = bounds

    def solve(self, b, adjoint=False):
        out = np.empty(b.shape, dtype=complex)
        for part, lo, hi in zip(self.parts, self.bounds[:-1], self.bounds[1:]):
            out[lo:hi] = part.solve(b[lo:hi], adjoint)
        return out


class ResolventKernel:
    """Repeated factorization of ``1 - z U*`` for one unitary operator.

    The sparsity pattern and its band layout are computed once; each call to
    :meth:`factor` only refills values.  Factorizations are returned to the
    caller and never cached, so concurrent sweeps do not share state.
    """

    def __init__(self, U: WindowedOperator):
        self.U = U
        self.dim = U.domain.dim
        if U.domain != U.codomain:
            raise PreconditionError("resolvent needs a square operator")
        if U.structure is Structure.BLOCK_DIAGONAL and U.blocks:
            self._parts = [ResolventKernel(b) for b in U.blocks]
            self._bounds = np.concatenate([[0], np.cumsum([b.domain.dim for b in U.blocks])])
            self._mode = "block"
        elif U.structure in (Structure.BANDED, Structure.BLOCK_DIAGONAL):
            adj = U.adjoint_sparse().tocoo()
            n = self.dim
            rows = np.concatenate([adj.row, np.arange(n)])
            cols = np.concatenate([adj.col, np.arange(n)])
            perm = fold_permutation(n // 2) if U.periodic else None
            self._pattern = BandedPattern(rows, cols, n, perm)
            self._adj_vals = adj.data
            self._ones = np.ones(n, dtype=complex)
            self._mode = "banded"
        else:
            self._adj_dense = U.to_dense().conj().T
            self._mode = "dense"

    def factor(self, z: complex):
        if self._mode == "block":
            return _BlockResolvent([p.factor(z) for p in self._parts], self._bounds)
        if self._mode == "banded":
            return self._pattern.factor(np.concatenate([-z * self._adj_vals, self._ones]))
        A = np.eye(self.dim, dtype=complex) - z * self._adj_dense
        lu = lu_factor(A, check_finite=False)
        pmin = float(np.abs(np.diag(lu[0])).min())
        if pmin <= PIVOT_TOL * float(np.abs(A).max()):
            raise SingularOperatorError(f"resolvent pivot {pmin:.3e} at z={z:.6g}", pmin)
        return _DenseResolvent(lu, pmin)


_kernels: "weakref.WeakKeyDictionary[WindowedOperator, ResolventKernel]" = weakref.WeakKeyDictionary()
_kernel_lock = threading.Lock()


def resolvent_kernel(U: WindowedOperator) -> ResolventKernel:
    """Shared (immutable) kernel for ``U``; construction is lock-protected."""
    with _kernel_lock:
        kernel = _kernels.get(U)
        if kernel is None:
            kernel = ResolventKernel(U)
            _kernels[U] = kernel
        return kernel


def _as_z(pt) -> complex:
    return pt.z if isinstance(pt, RadialPoint) else complex(pt)


def _flat(v) -> np.ndarray:
    return v.flat if isinstance(v, _State) else np.asarray(v, dtype=complex)


def _wrap(v, flat):
    return state_from_flat(v.space, v.window, flat) if isinstance(v, _State) else flat


def resolvent_apply(U: WindowedOperator, pt, v, adjoint: bool = False) -> SolveResult:
    """Return ``R(z) v`` (or ``R(z)* v``) with its relative solve residual.

    Parameters
    ----------
    U : WindowedOperator
        Unitary-tagged operator.
    pt : RadialPoint or complex
        Evaluation point ``z``; ``|z| = 1`` is allowed only if the truncated
        operator has no eigenvalue there (the factorization checks pivots).
    v : state or array
    adjoint : bool
    """
    if not U.unitary:
        raise PreconditionError("resolvent_apply requires a unitary-tagged operator")
    _check_space(U, v, False)
    z = _as_z(pt)
    b = _flat(v)
    x = resolvent_kernel(U).factor(z).solve(b, adjoint)
    # (1 - z U*) x  or its adjoint (1 - conj(z) U) x
    back = x - (np.conj(z) * U.matvec(x) if adjoint else z * U.rmatvec(x))
    bn = np.linalg.norm(b)
    residual = float(np.linalg.norm(back - b) / bn) if bn > 0 else float(np.linalg.norm(back))
    return SolveResult(_wrap(v, x), residual)


def delta_apply(U: WindowedOperator, pt: RadialPoint, v):
    """Return ``delta(r, theta) v = (1 - r^2)/(2 pi) R(z) R(z)* v``."""
    _check_space(U, v, False)
    lu = resolvent_kernel(U).factor(pt.z)
    b = _flat(v)
    out = pt.weight * lu.solve(lu.solve(b, adjoint=True))
    return _wrap(v, out)


def delta_form(U: WindowedOperator, pt: RadialPoint, phi, psi) -> complex:
    """``<delta(r, theta) phi, psi>`` evaluated as ``g <R* phi, R* psi>``."""
    lu = resolvent_kernel(U).factor(pt.z)
    a = lu.solve(_flat(phi), adjoint=True)
    b = a if psi is phi else lu.solve(_flat(psi), adjoint=True)
    return complex(pt.weight * np.vdot(b, a))


def poisson_mass(U: WindowedOperator, r: float, v, n_theta: int) -> float:
    """Periodic-trapezoid integral of ``<delta(r, theta) v, v>`` over the circle."""
    if r == 1.0 or r <= 0.0:
        raise PreconditionError("poisson_mass needs r in (0, inf) without r = 1")
    if n_theta < 16 or n_theta & (n_theta - 1):
        raise PreconditionError("n_theta must be a power of two >= 16")
    kernel = resolvent_kernel(U)
    b = _flat(v)
    g = (1.0 - r * r) / TWO_PI
    total = 0.0
    for theta in TWO_PI * np.arange(n_theta) / n_theta:
        y = kernel.factor(r * np.exp(1j * theta)).solve(b, adjoint=True)
        total += float(np.vdot(y, y).real)
    return g * total * TWO_PI / n_theta


@dataclass(frozen=True)
class BoundaryDensity:
    value: complex
    extrapolation: Extrapolation
    warning: bool


def boundary_density(U: WindowedOperator, theta: float, phi, psi, sched: EpsSchedule,
                     sign: int = 1) -> BoundaryDensity:
    """Extrapolated ``lim <delta((1-eps)^{sign}, theta) phi, psi>``.

    The caller keeps ``theta`` away from eigenphases of the truncated operator.
    A non-monotone sequence of step differences sets ``warning``.
    """
    vals = [delta_form(U, RadialPoint(e, sign, theta), phi, psi) for e in sched.eps]
    ex = richardson(sched.eps, vals, sched.order)
    if not ex.monotone:
        logger.warning("boundary density at theta=%.6f: non-monotone step differences %s", theta, ex.differences)
    return BoundaryDensity(complex(ex.value), ex, not ex.monotone)


# ---------------------------------------------------------------------------
# Cayley transform


@dataclass(frozen=True)
class CayleyResult:
    hamiltonian: np.ndarray
    phase: float
    relation_residual: float


def cayley(U: WindowedOperator, phase: float = 0.0, n_test: int = 8, seed: int = 0,
           scan_step: float = 1e-3, max_scan: int = 6284) -> CayleyResult:
    """Self-adjoint Cayley image ``H = i (1 + e^{i phi} U)(1 - e^{i phi} U)^{-1}``.

    The phase is scanned in steps of ``scan_step`` until ``1 - e^{i phi} U`` is
    safely invertible.  The returned residual is the largest relative
    discrepancy between ``R(z)`` and its expression through ``H`` at
    ``n_test`` random points off the circle.
    """
    Ud = U.to_dense()
    n = Ud.shape[0]
    eye = np.eye(n, dtype=complex)
    for step in range(max_scan):
        phi = phase + step * scan_step
        e = np.exp(1j * phi)
        smin = np.linalg.svd(eye - e * Ud, compute_uv=False).min()
        if smin > 1e-6:
            break
    else:
        raise SingularOperatorError("every scanned phase hits an eigenvalue", 0.0)
    H = 1j * (eye + e * Ud) @ np.linalg.inv(eye - e * Ud)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_test):
        rad = rng.uniform(0.2, 0.8) if rng.random() < 0.5 else rng.uniform(1.25, 3.0)
        z = rad * np.exp(1j * rng.uniform(0.0, TWO_PI))
        direct = np.linalg.inv(eye - z * Ud.conj().T)
        w = e * z
        c = 1j * (1 + w) / (1 - w)
        via = eye / (1 - w) + (2j * w / (1 - w) ** 2) * np.linalg.inv(H - c * eye)
        worst = max(worst, float(np.linalg.norm(via - direct) / np.linalg.norm(direct)))
    return CayleyResult(H, float(phi), worst)


# ---------------------------------------------------------------------------
# smoothed spectral filters


def filter_coefficients(arc: tuple[float, float], order: int, taper: float) -> np.ndarray:
    """Fourier coefficients ``c_n``, ``|n| <= order``, of a Gaussian-smoothed arc indicator.

    The indicator of ``[theta1, theta2]`` (counter-clockwise) is convolved with
    a normalized Gaussian of standard deviation ``taper``.
    """
    t1, t2 = float(arc[0]), float(arc[1])
    length = t2 - t1
    n = np.arange(-order, order + 1)
    c = np.zeros(n.size, dtype=complex)
    if length >= TWO_PI:
        c[order] = 1.0
        return c
    length = np.mod(length, TWO_PI)
    nz = n != 0
    c[~nz] = length / TWO_PI
    c[nz] = (np.exp(-1j * n[nz] * t1) - np.exp(-1j * n[nz] * (t1 + length))) / (TWO_PI * 1j * n[nz])
    return c * np.exp(-0.5 * (n * taper) ** 2)


def filter_leakage_bound(order: int, taper: float, distance: float) -> float:
    """Bound on ``|f(mu) - indicator(mu)|`` at distance ``distance`` from both arc edges."""
    n = np.arange(order + 1, order + 20000)
    tail = float(np.sum(2.0 / (np.pi * n) * np.exp(-0.5 * (n * taper) ** 2)))
    return tail + float(erfc(distance / (np.sqrt(2.0) * taper)))


def spectral_filter(U: WindowedOperator, arc: tuple[float, float], order: int,
                    taper: float) -> WindowedOperator:
    """Return ``sum_{|n| <= order} c_n U^n`` for a smoothed arc indicator."""
    if order < 32:
        raise PreconditionError("filter order must be at least 32")
    c = filter_coefficients(arc, order, taper)
    dense = U.structure is Structure.DENSE
    Um = U.to_dense() if dense else U.sparse()
    Ua = Um.conj().T if dense else Um.conj().T.tocsr()
    eye = np.eye(U.domain.dim, dtype=complex) if dense else sp.identity(U.domain.dim, dtype=complex, format="csr")
    total = c[order] * eye
    pos = eye
    neg = eye
    for k in range(1, order + 1):
        pos = Um @ pos
        neg = Ua @ neg
        total = total + c[order + k] * pos + c[order - k] * neg
    if dense:
        return WindowedOperator.dense(total, U.domain, U.codomain, label="spectral filter")
    return WindowedOperator(total, Structure.BANDED, U.domain, U.codomain, periodic=U.periodic,
                            label="spectral filter")


# ---------------------------------------------------------------------------
# smoothness diagnostic


@dataclass(frozen=True)
class SmoothnessReport:
    sup: float
    eps: tuple[float, ...]
    thetas: tuple[float, ...]
    table: np.ndarray = field(repr=False)

    @property
    def growth(self) -> np.ndarray:
        """Ratio of the per-eps maxima to the first one."""
        m = self.table.max(axis=1)
        return m / m[0] if m[0] > 0 else m


def smooth_diagnostic(U: WindowedOperator, T: WindowedOperator, sched: EpsSchedule,
                      thetas: Sequence[float], tol: float = 1e-7) -> SmoothnessReport:
    """Tabulate ``||T delta(1 - eps, theta) T*||`` over a schedule and angle grid.

    A table that stays bounded as ``eps`` decreases is the numerical signature
    of local smoothness of ``T`` with respect to ``U``.
    """
    kernel = resolvent_kernel(U)
    aux = T.codomain.dim
    table = np.zeros((len(sched.eps), len(thetas)))
    for i, e in enumerate(sched.eps):
        for j, th in enumerate(thetas):
            pt = RadialPoint(e, 1, th)
            lu = kernel.factor(pt.z)

            def mv(y, lu=lu, g=pt.weight):
                return T.matvec(g * lu.solve(lu.solve(T.rmatvec(y), adjoint=True)))

            op = LinearOperator((aux, aux), matvec=mv, rmatvec=mv, dtype=complex)
            table[i, j] = op_norm(op, tol=tol)
    return SmoothnessReport(float(table.max()) if table.size else 0.0, tuple(sched.eps),
                            tuple(float(t) for t in thetas), table)
