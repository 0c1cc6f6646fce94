"""Finite-window lattice operators and spinor states.

The window holds sites ``-L..L`` with two spinor components per site.  Flat
vectors use site-major ordering, ``index = 2 * (x + L) + component``; vectors
of the doubled space ``H0 = H + H`` concatenate the left slot and the right
slot.  Nearest-neighbour operators wrap cyclically at the window edge, which
keeps truncated walk operators exactly unitary.  Their linear systems are
solved by a banded LU factorization after a folding permutation that turns the
cyclic band into an ordinary band.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack, lu_factor, lu_solve
from scipy.sparse.linalg import LinearOperator

from .errors import (
    ConvergenceError,
    DimensionMismatchError,
    PreconditionError,
    SingularOperatorError,
    SpaceMismatchError,
)

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-14
"""Relative pivot threshold for every factorization."""


@dataclass(frozen=True)
class LatticeWindow:
    """Sites ``-half_width..half_width`` carrying a two-component spinor."""

    half_width: int

    def __post_init__(self) -> None:
        if int(self.half_width) != self.half_width or self.half_width < 4:
            raise PreconditionError(f"window half-width must be an integer >= 4, got {self.half_width}")

    internal_dim = 2

    @property
    def site_count(self) -> int:
        return 2 * self.half_width + 1

    @property
    def dim(self) -> int:
        return 2 * self.site_count

    @property
    def sites(self) -> np.ndarray:
        return np.arange(-self.half_width, self.half_width + 1)

    def index(self, x: int, component: int = 0) -> int:
        if abs(x) > self.half_width or component not in (0, 1):
            raise PreconditionError(f"site ({x}, {component}) outside the window")
        return 2 * (x + self.half_width) + component

    def flat_sites(self) -> np.ndarray:
        """Site label of every flat index of H."""
        return np.repeat(self.sites, 2)

    def bracket(self, power: float) -> np.ndarray:
        """Per-flat-index weight ``(1 + x^2)^(power/2)``."""
        x = self.flat_sites().astype(float)
        return (1.0 + x * x) ** (0.5 * power)


@dataclass(frozen=True)
class Space:
    """Space tag ("H" or "H0") together with its dimension."""

    tag: str
    dim: int

    @classmethod
    def single(cls, window: LatticeWindow) -> "Space":
        return cls("H", window.dim)

    @classmethod
    def double(cls, window: LatticeWindow) -> "Space":
        return cls("H0", 2 * window.dim)


class _State:
    """Shared arithmetic for immutable window states."""

    __slots__ = ()

    def _rebuild(self, flat: np.ndarray):
        raise NotImplementedError

    @property
    def flat(self) -> np.ndarray:
        raise NotImplementedError

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat))

    def inner(self, other: "_State") -> complex:
        """Inner product, linear in ``self`` and antilinear in ``other``."""
        return complex(np.vdot(other.flat, self.flat))

    def __add__(self, other):
        return self._rebuild(self.flat + other.flat)

    def __sub__(self, other):
        return self._rebuild(self.flat - other.flat)

    def __mul__(self, scalar):
        return self._rebuild(self.flat * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return self._rebuild(-self.flat)

    def support_radius(self, rel_tol: float = 1e-12) -> int:
        """Largest ``|x|`` carrying amplitude above ``rel_tol`` times the peak."""
        amp = np.abs(self.flat).reshape(-1, 2).max(axis=1)
        if amp.max() == 0.0:
            return 0
        n = self.window.site_count
        sites = np.tile(self.window.sites, amp.size // n)
        return int(np.abs(sites[amp > rel_tol * amp.max()]).max())

    def essential_radius(self, tail: float = 1e-8) -> int:
        """Smallest ``R`` with norm outside ``|x| <= R`` at most ``tail`` times the norm."""
        flat = self.flat
        total = float(np.vdot(flat, flat).real)
        if total == 0.0:
            return 0
        n = self.window.site_count
        L = self.window.half_width
        mass = (np.abs(flat) ** 2).reshape(-1, n, 2).sum(axis=(0, 2))
        by_radius = np.zeros(L + 1)
        np.add.at(by_radius, np.abs(self.window.sites), mass)
        # mass strictly outside radius R, summed from the edge inwards
        outside = np.concatenate([np.cumsum(by_radius[::-1])[::-1][1:], [0.0]])
        ok = np.nonzero(outside <= tail * tail * total)[0]
        return int(ok[0]) if ok.size else L


class SpinorState(_State):
    """Element of H: a complex pair per window site."""

    __slots__ = ("window", "values")

    def __init__(self, window: LatticeWindow, values):
        arr = np.array(values, dtype=complex).reshape(window.site_count, 2)
        arr.setflags(write=False)
        self.window = window
        self.values = arr

    @classmethod
    def zeros(cls, window: LatticeWindow) -> "SpinorState":
        return cls(window, np.zeros((window.site_count, 2)))

    @classmethod
    def delta(cls, window: LatticeWindow, x: int, component: int = 0) -> "SpinorState":
        flat = np.zeros(window.dim, dtype=complex)
        flat[window.index(x, component)] = 1.0
        return cls(window, flat)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    @property
    def space(self) -> Space:
        return Space.single(self.window)

    def _rebuild(self, flat):
        return SpinorState(self.window, flat)

    def __repr__(self) -> str:
        return f"SpinorState(L={self.window.half_width}, norm={self.norm():.6g})"


class DirectSumState(_State):
    """Element of ``H0 = H + H``: an ordered (left, right) pair."""

    __slots__ = ("left", "right")

    def __init__(self, left: SpinorState, right: SpinorState):
        if left.window != right.window:
            raise DimensionMismatchError("left and right slots use different windows")
        self.left = left
        self.right = right

    @classmethod
    def zeros(cls, window: LatticeWindow) -> "DirectSumState":
        return cls(SpinorState.zeros(window), SpinorState.zeros(window))

    @classmethod
    def from_flat(cls, window: LatticeWindow, flat) -> "DirectSumState":
        flat = np.asarray(flat, dtype=complex)
        if flat.shape != (2 * window.dim,):
            raise DimensionMismatchError(f"expected H0 vector of length {2 * window.dim}, got {flat.shape}")
        return cls(SpinorState(window, flat[: window.dim]), SpinorState(window, flat[window.dim :]))

    @property
    def window(self) -> LatticeWindow:
        return self.left.window

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.left.flat, self.right.flat])

    @property
    def space(self) -> Space:
        return Space.double(self.window)

    def _rebuild(self, flat):
        return DirectSumState.from_flat(self.window, flat)

    def __repr__(self) -> str:
        return f"DirectSumState(L={self.window.half_width}, norm={self.norm():.6g})"


State = Union[SpinorState, DirectSumState]


def state_from_flat(space: Space, window: LatticeWindow, flat: np.ndarray) -> State:
    if space.tag == "H0":
        return DirectSumState.from_flat(window, flat)
    return SpinorState(window, flat)


# ---------------------------------------------------------------------------
# structured operators


class Structure(enum.Enum):
    BANDED = "block-banded"
    BLOCK_DIAGONAL = "block-diagonal"
    DIAGONAL = "diagonal-weight"
    DENSE = "dense"


class WindowedOperator:
    """Bounded operator between window spaces, stored by structure class.

    Parameters
    ----------
    data
        ``scipy.sparse`` matrix for banded and block-diagonal operators, a 1-D
        weight array for diagonal ones, or a 2-D array for dense ones.
    structure : Structure
    domain, codomain : Space
    blocks : tuple of WindowedOperator, optional
        Diagonal blocks of a block-diagonal operator, used by ``solve``.
    periodic : bool
        Band wraps around the window edge (folding permutation needed).
    unitary : bool
        Tag used by the resolvent machinery.
    """

    def __init__(
        self,
        data,
        structure: Structure,
        domain: Space,
        codomain: Space,
        *,
        blocks: tuple["WindowedOperator", ...] = (),
        periodic: bool = False,
        unitary: bool = False,
        label: str = "",
    ):
        self.structure = structure
        self.domain = domain
        self.codomain = codomain
        self.blocks = tuple(blocks)
        self.periodic = periodic
        self.unitary = unitary
        self.label = label
        if structure is Structure.DIAGONAL:
            data = np.asarray(data, dtype=complex).copy()
            if domain.dim != codomain.dim or data.shape != (domain.dim,):
                raise DimensionMismatchError("diagonal weight must match a square operator")
            self._adj_data = data.conj()
        elif structure is Structure.DENSE:
            data = np.array(data, dtype=complex)
            self._adj_data = data.conj().T.copy()
        else:
            data = sp.csr_matrix(data, dtype=complex)
            data.sum_duplicates()
            data.eliminate_zeros()
            self._adj_data = data.conj().T.tocsr()
        if data.shape[:1] != (codomain.dim,) or (data.ndim == 2 and data.shape[1] != domain.dim):
            raise DimensionMismatchError(
                f"operator data shape {data.shape} does not match {codomain.dim}x{domain.dim}"
            )
        if isinstance(data, np.ndarray):
            data.setflags(write=False)
        self.data = data

    # -- constructors -----------------------------------------------------
    @classmethod
    def identity(cls, space: Space, scale: complex = 1.0) -> "WindowedOperator":
        return cls(np.full(space.dim, scale, dtype=complex), Structure.DIAGONAL, space, space,
                   unitary=abs(abs(scale) - 1.0) == 0.0, label="identity")

    @classmethod
    def diagonal(cls, weights, space: Space, label: str = "") -> "WindowedOperator":
        return cls(weights, Structure.DIAGONAL, space, space, label=label)

    @classmethod
    def dense(cls, matrix, domain: Space | None = None, codomain: Space | None = None,
              unitary: bool = False, label: str = "") -> "WindowedOperator":
        matrix = np.asarray(matrix, dtype=complex)
        domain = domain or Space("H", matrix.shape[1])
        codomain = codomain or Space(domain.tag, matrix.shape[0])
        return cls(matrix, Structure.DENSE, domain, codomain, unitary=unitary, label=label)

    @classmethod
    def block_diagonal(cls, blocks, space: Space, label: str = "") -> "WindowedOperator":
        mats = [b.sparse() for b in blocks]
        return cls(sp.block_diag(mats, format="csr"), Structure.BLOCK_DIAGONAL, space, space,
                   blocks=tuple(blocks), periodic=any(b.periodic for b in blocks),
                   unitary=all(b.unitary for b in blocks), label=label)

    # -- basic algebra ----------------------------------------------------
    @property
    def shape(self) -> tuple[int, int]:
        return (self.codomain.dim, self.domain.dim)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Apply to a flat vector or to the columns of a 2-D array."""
        if x.shape[0] != self.domain.dim:
            raise DimensionMismatchError(f"{self.label or 'operator'} expects {self.domain.dim} rows, got {x.shape[0]}")
        if self.structure is Structure.DIAGONAL:
            return self.data * x if x.ndim == 1 else self.data[:, None] * x
        return self.data @ x

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        """Apply the adjoint."""
        if x.shape[0] != self.codomain.dim:
            raise DimensionMismatchError(f"adjoint of {self.label or 'operator'} expects {self.codomain.dim} rows, got {x.shape[0]}")
        if self.structure is Structure.DIAGONAL:
            return self._adj_data * x if x.ndim == 1 else self._adj_data[:, None] * x
        return self._adj_data @ x

    def sparse(self) -> sp.csr_matrix:
        if self.structure is Structure.DIAGONAL:
            return sp.diags(self.data, format="csr")
        if self.structure is Structure.DENSE:
            return sp.csr_matrix(self.data)
        return self.data

    def adjoint_sparse(self) -> sp.csr_matrix:
        if self.structure in (Structure.BANDED, Structure.BLOCK_DIAGONAL):
            return self._adj_data
        return self.adjoint().sparse()

    def to_dense(self) -> np.ndarray:
        if self.structure is Structure.DENSE:
            return np.array(self.data)
        if self.structure is Structure.DIAGONAL:
            return np.diag(self.data)
        return self.data.toarray()

    def adjoint(self) -> "WindowedOperator":
        return WindowedOperator(
            self._adj_data, self.structure, self.codomain, self.domain,
            blocks=tuple(b.adjoint() for b in self.blocks), periodic=self.periodic,
            unitary=self.unitary, label=f"{self.label}*" if self.label else "",
        )

    @property
    def H(self) -> "WindowedOperator":
        return self.adjoint()

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=self.matvec, rmatvec=self.rmatvec, dtype=complex)

    def bandwidth(self, window: LatticeWindow) -> int:
        """Largest site distance coupled by a stored entry (cyclic distance)."""
        if self.structure is Structure.DIAGONAL:
            return 0
        coo = self.sparse().tocoo()
        if coo.nnz == 0:
            return 0
        n = window.site_count
        rs = (coo.row % window.dim) // 2
        cs = (coo.col % window.dim) // 2
        d = np.abs(rs - cs)
        if self.periodic:
            d = np.minimum(d, n - d)
        return int(d.max())

    def __repr__(self) -> str:
        return (f"WindowedOperator({self.label or '?'}, {self.structure.value}, "
                f"{self.domain.tag}->{self.codomain.tag}, shape={self.shape})")


# ---------------------------------------------------------------------------
# state-level apply / solve


def _check_space(A: WindowedOperator, v, adjoint: bool) -> Space:
    expected = A.codomain if adjoint else A.domain
    if isinstance(v, _State):
        if v.space.tag != expected.tag:
            raise SpaceMismatchError(f"operator expects a state in {expected.tag}, got {v.space.tag}")
        if v.space.dim != expected.dim:
            raise DimensionMismatchError(f"operator expects dimension {expected.dim}, got {v.space.dim}")
    elif np.asarray(v).shape[0] != expected.dim:
        raise DimensionMismatchError(f"operator expects dimension {expected.dim}, got {np.asarray(v).shape[0]}")
    return A.domain if adjoint else A.codomain


def apply(A: WindowedOperator, v, adjoint: bool = False):
    """Return ``A v`` (or ``A* v``) as a state of the target space.

    Raw arrays are accepted and returned as arrays.
    """
    target = _check_space(A, v, adjoint)
    flat = v.flat if isinstance(v, _State) else np.asarray(v, dtype=complex)
    out = A.rmatvec(flat) if adjoint else A.matvec(flat)
    if isinstance(v, _State):
        return state_from_flat(target, v.window, out)
    return out


@dataclass(frozen=True)
class SolveResult:
    x: object
    residual: float


def fold_permutation(site_count: int, internal_dim: int = 2) -> np.ndarray:
    """Ordering ``0, n-1, 1, n-2, ...`` that turns a cyclic band into a band.

    Returned as ``perm[new_position] = old_flat_index`` over flat indices.
    """
    order = np.empty(site_count, dtype=np.int64)
    order[0::2] = np.arange((site_count + 1) // 2)
    order[1::2] = site_count - 1 - np.arange(site_count // 2)
    return (internal_dim * order[:, None] + np.arange(internal_dim)[None, :]).reshape(-1)


class BandedPattern:
    """Sparsity pattern of a square matrix mapped into LAPACK band storage.

    Building the pattern once and refilling values is what makes the many
    resolvent factorizations of a quadrature sweep cheap.
    """

    def __init__(self, rows: np.ndarray, cols: np.ndarray, n: int, perm: np.ndarray | None = None):
        inv = np.arange(n) if perm is None else np.argsort(perm)
        i = inv[rows]
        j = inv[cols]
        self.n = n
        self.perm = np.arange(n) if perm is None else np.asarray(perm)
        self.kl = int(max(0, (i - j).max(initial=0)))
        self.ku = int(max(0, (j - i).max(initial=0)))
        self.ldab = 2 * self.kl + self.ku + 1
        self._pos = (self.kl + self.ku + i - j, j)

    def factor(self, values: np.ndarray, pivot_tol: float = PIVOT_TOL) -> "BandedLU":
        ab = np.zeros((self.ldab, self.n), dtype=complex, order="F")
        np.add.at(ab, self._pos, values)
        return BandedLU(self, ab, float(np.abs(values).max(initial=0.0)), pivot_tol)


class BandedLU:
    """LU factorization of a banded matrix (LAPACK ``zgbtrf``)."""

    def __init__(self, pattern: BandedPattern, ab: np.ndarray, scale: float, pivot_tol: float):
        lu, piv, info = lapack.zgbtrf(ab, pattern.kl, pattern.ku, overwrite_ab=1)
        pivots = np.abs(lu[pattern.kl + pattern.ku, :])
        pmin = float(pivots.min()) if pivots.size else 0.0
        if info < 0:
            raise SingularOperatorError(f"zgbtrf rejected argument {-info}", pmin)
        if info > 0 or pmin <= pivot_tol * scale:
            raise SingularOperatorError(
                f"banded factorization pivot {pmin:.3e} below relative threshold {pivot_tol:g}", pmin
            )
        self.pattern = pattern
        self.lu = lu
        self.piv = piv
        self.min_pivot = pmin

    def solve(self, b: np.ndarray, adjoint: bool = False) -> np.ndarray:
        p = self.pattern
        one_d = b.ndim == 1
        rhs = np.asfortranarray(b[p.perm].reshape(p.n, -1), dtype=complex)
        x, info = lapack.zgbtrs(self.lu, p.kl, p.ku, rhs, self.piv, trans=2 if adjoint else 0,
                                overwrite_b=1)
        if info != 0:
            raise SingularOperatorError(f"zgbtrs failed with info={info}", self.min_pivot)
        out = np.empty_like(x)
        out[p.perm] = x
        return out[:, 0] if one_d else out


class _DenseLU:
    def __init__(self, matrix: np.ndarray, pivot_tol: float):
        lu, piv = lu_factor(matrix, check_finite=False)
        pivots = np.abs(np.diag(lu))
        pmin = float(pivots.min()) if pivots.size else 0.0
        scale = float(np.abs(matrix).max(initial=0.0))
        if pmin <= pivot_tol * scale:
            raise SingularOperatorError(f"dense factorization pivot {pmin:.3e} below threshold", pmin)
        self.factors = (lu, piv)
        self.min_pivot = pmin

    def solve(self, b: np.ndarray, adjoint: bool = False) -> np.ndarray:
        return lu_solve(self.factors, b, trans=2 if adjoint else 0, check_finite=False)


class _DiagonalLU:
    def __init__(self, weights: np.ndarray, pivot_tol: float):
        pmin = float(np.abs(weights).min()) if weights.size else 0.0
        if pmin <= pivot_tol * float(np.abs(weights).max(initial=0.0)):
            raise SingularOperatorError(f"diagonal entry {pmin:.3e} below threshold", pmin)
        self.w = weights
        self.min_pivot = pmin

    def solve(self, b: np.ndarray, adjoint: bool = False) -> np.ndarray:
        w = self.w.conj() if adjoint else self.w
        return b / w if b.ndim == 1 else b / w[:, None]


class _BlockLU:
    def __init__(self, parts, sizes):
        self.parts = parts
        self.bounds = np.concatenate([[0], np.cumsum(sizes)])
        self.min_pivot = min(p.min_pivot for p in parts)

    def solve(self, b: np.ndarray, adjoint: bool = False) -> np.ndarray:
        out = np.empty(b.shape, dtype=complex)
        for part, lo, hi in zip(self.parts, self.bounds[:-1], self.bounds[1:]):
            out[lo:hi] = part.solve(b[lo:hi], adjoint)
        return out


def factorize(A: WindowedOperator, pivot_tol: float = PIVOT_TOL):
    """Factorize a square operator according to its structure class."""
    if A.domain != A.codomain:
        raise PreconditionError("solve requires a square operator on a single space")
    if A.structure is Structure.DIAGONAL:
        return _DiagonalLU(A.data, pivot_tol)
    if A.structure is Structure.DENSE:
        return _DenseLU(np.asarray(A.data), pivot_tol)
    if A.structure is Structure.BLOCK_DIAGONAL and A.blocks:
        return _BlockLU([factorize(b, pivot_tol) for b in A.blocks], [b.domain.dim for b in A.blocks])
    coo = A.data.tocoo()
    n = A.domain.dim
    # periodic banded operators live on a single window space: dim = 2 * sites
    perm = fold_permutation(n // 2) if A.periodic else None
    pattern = BandedPattern(coo.row, coo.col, n, perm)
    return pattern.factor(coo.data, pivot_tol)


def solve(A: WindowedOperator, b, adjoint: bool = False) -> SolveResult:
    """Solve ``A x = b`` (or ``A* x = b``) and report the relative residual."""
    target = _check_space(A, b, not adjoint)
    flat = b.flat if isinstance(b, _State) else np.asarray(b, dtype=complex)
    lu = factorize(A)
    x = lu.solve(flat, adjoint)
    back = A.rmatvec(x) if adjoint else A.matvec(x)
    bnorm = np.linalg.norm(flat)
    residual = float(np.linalg.norm(back - flat) / bnorm) if bnorm > 0 else float(np.linalg.norm(back))
    if isinstance(b, _State):
        x = state_from_flat(target, b.window, x)
    return SolveResult(x, residual)


# ---------------------------------------------------------------------------
# norms


def _seed_vector(n: int) -> np.ndarray:
    rng = np.random.default_rng(20190917)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return v / np.linalg.norm(v)


def op_norm(A, tol: float = 1e-10, max_iter: int = 20000) -> float:
    """Spectral norm by power iteration on ``A* A``.

    Parameters
    ----------
    A : WindowedOperator or scipy.sparse.linalg.LinearOperator
    tol : float
        Relative tolerance on the largest eigenvalue of ``A* A``.  The stopping
        rule uses the observed geometric convergence rate, so a slowly
        converging iteration is not mistaken for a converged one.
    max_iter : int

    Raises
    ------
    ConvergenceError
        If the tolerance is not met within ``max_iter`` iterations.
    """
    if isinstance(A, WindowedOperator):
        mv: Callable = A.matvec
        rmv: Callable = A.rmatvec
        n = A.domain.dim
    else:
        mv, rmv, n = A.matvec, A.rmatvec, A.shape[1]
    x = _seed_vector(n)
    mu_prev = None
    d_prev = None
    for it in range(max_iter):
        y = mv(x)
        mu = float(np.vdot(y, y).real)
        if mu == 0.0:
            return 0.0
        z = rmv(y)
        x = z / np.linalg.norm(z)
        if mu_prev is not None:
            d = mu - mu_prev
            if abs(d) <= tol * mu:
                rate = abs(d / d_prev) if d_prev not in (None, 0.0) else 0.0
                if rate < 1.0 and abs(d) * rate / (1.0 - rate) <= tol * mu:
                    return float(np.sqrt(mu))
            d_prev = d
        mu_prev = mu
    raise ConvergenceError(f"power iteration did not reach relative tolerance {tol:g} in {max_iter} steps")


def hs_norm(A: WindowedOperator) -> float:
    """Hilbert-Schmidt (Frobenius) norm."""
    if A.structure is Structure.DIAGONAL:
        return float(np.sqrt(np.sum(np.abs(A.data) ** 2)))
    if A.structure is Structure.DENSE:
        return float(np.sqrt(np.sum(np.abs(A.data) ** 2)))
    return float(np.sqrt(np.sum(np.abs(A.data.data) ** 2)))
