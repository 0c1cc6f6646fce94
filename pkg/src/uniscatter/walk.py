"""Anisotropic split-step walk on a periodic lattice window.

``U = S C`` with the shift
``(S psi)(x) = (psi_0(x + 1), psi_1(x - 1))``, the asymptotic walks
``U_l = S C_l`` and ``U_r = S C_r``, the free evolution ``U0 = U_l (+) U_r`` on
``H0 = H (+) H``, the identification ``J (psi_l, psi_r) = j_l psi_l + j_r psi_r``
with ``j_r = 1`` on ``x >= 0`` and ``j_l = 1 - j_r``, and the perturbation
``V = J U0 - U J``.

The window is periodic, so ``J U0 - U J`` also has entries where the shift
wraps from ``x = L`` to ``x = -L`` (the cutoffs jump there too).  Those seam
entries are a truncation artifact; :attr:`WalkModel.V` omits them and
:attr:`WalkModel.V_window` keeps them.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import schur
from scipy.sparse.linalg import aslinearoperator

from .coins import CoinField, CoinParams
from .errors import CoinConstraintError, DecayBoundError, PreconditionError, ShortRangeError
from .operators import LatticeWindow, Space, Structure, WindowedOperator, op_norm
from .spectral import FreeSpectrum, wrap_angle

logger = logging.getLogger(__name__)

MARGIN = 8


def _walk_matrix(window: LatticeWindow, coins: np.ndarray) -> sp.csr_matrix:
    """Sparse ``S C`` for per-site coins of shape ``(sites, 2, 2)`` (cyclic)."""
    n = window.site_count
    s = np.arange(n)
    rows, cols, vals = [], [], []
    for comp, step in ((0, 1), (1, -1)):
        src = (s + step) % n
        for c in (0, 1):
            rows.append(2 * s + comp)
            cols.append(2 * src + c)
            vals.append(coins[src, comp, c])
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(2 * n, 2 * n)
    )


def _walk_operator(window: LatticeWindow, coins: np.ndarray, label: str) -> WindowedOperator:
    space = Space.single(window)
    return WindowedOperator(_walk_matrix(window, coins), Structure.BANDED, space, space,
                            periodic=True, unitary=True, label=label)


@dataclass(frozen=True, eq=False)
class Factorization:
    """``V = G* G0`` with ``G0 = <Q>^{-s} (+) <Q>^{-s}`` and ``G = D* <Q>^{-s}``.

    Attributes
    ----------
    s : float
    G0 : WindowedOperator
        Diagonal weight on H0.
    G : WindowedOperator
        Map H -> H0 (the auxiliary space is H0).
    D : WindowedOperator
        ``<Q>^s V (<Q>^s (+) <Q>^s)``, a map H0 -> H.
    residual : float
        ``max |G* G0 - V|`` entrywise.
    subwindow_radii, subwindow_norms : tuple
        ``||D||`` restricted to growing sub-windows.
    growth_exponent : float
        Log-log slope of the last two sub-window norms.
    """

    s: float
    G0: WindowedOperator
    G: WindowedOperator
    D: WindowedOperator
    residual: float
    subwindow_radii: tuple[int, ...]
    subwindow_norms: tuple[float, ...]
    growth_exponent: float

    @property
    def bounded(self) -> bool:
        """Whether the sub-window norms have levelled off."""
        return self.growth_exponent < 0.05

    @property
    def aux_support(self) -> np.ndarray:
        """Indices of H0 basis vectors where ``D`` has a nonzero column."""
        coo = self.D.sparse().tocoo()
        return np.unique(coo.col)


@dataclass(frozen=True)
class WeightSum:
    """``sum_{x in Z} <x>^{-2s}`` from the window part plus a bracketed tail."""

    truncated: float
    tail_low: float
    tail_high: float

    @property
    def estimate(self) -> float:
        # midpoint rule on the tail; its error is O(L^-3), far inside the bracket
        return self.truncated + self.tail_high

    @property
    def error_bound(self) -> float:
        return self.tail_high - self.tail_low


def weight_sum(s: float, half_width: int) -> WeightSum:
    """Full-lattice sum of ``(1 + x^2)^{-s}`` with both tails bracketed.

    ``f(x) = (1 + x^2)^{-s}`` is convex and decreasing for ``x >= 1``, so
    ``int_{L+1}^inf f <= sum_{x > L} f(x) <= int_{L+1/2}^inf f``.
    """
    from scipy.integrate import quad

    x = np.arange(-half_width, half_width + 1, dtype=float)
    trunc = float(np.sum((1.0 + x * x) ** (-s)))

    def f(t):
        return (1.0 + t * t) ** (-s)

    low = 2.0 * quad(f, half_width + 1.0, np.inf, epsabs=1e-15, epsrel=1e-13)[0]
    high = 2.0 * quad(f, half_width + 0.5, np.inf, epsabs=1e-15, epsrel=1e-13)[0]
    return WeightSum(trunc, low, high)


@dataclass(frozen=True, eq=False)
class WalkModel:
    """Assembled walk with its free comparison dynamics and factorization."""

    window: LatticeWindow
    field: CoinField | None
    U: WindowedOperator
    U_left: WindowedOperator
    U_right: WindowedOperator
    U0: WindowedOperator
    J: WindowedOperator
    V: WindowedOperator
    V_window: WindowedOperator
    free: FreeSpectrum
    factorization: Factorization | None = None

    @property
    def H(self) -> Space:
        return self.U.domain

    @property
    def H0(self) -> Space:
        return self.U0.domain

    @property
    def JJ(self) -> WindowedOperator:
        """``J* J`` as a diagonal weight on H0."""
        w = np.asarray(abs(self.J.sparse()).power(2).sum(axis=0)).ravel()
        return WindowedOperator.diagonal(w, self.H0, label="J*J")

    def position_weight(self, s: float) -> np.ndarray:
        """``<Q>^{-s}`` on one copy of the window."""
        return self.window.bracket(-s)


def _check_decay(cf: CoinField, window: LatticeWindow) -> None:
    for x in window.sites:
        x = int(x)
        if x == 0:
            continue
        bound = cf.decay_left if x < 0 else cf.decay_right
        dev = cf.deviation(x)
        if dev > float(bound.envelope(x)) * (1 + 1e-12):
            raise DecayBoundError(
                f"coin deviation {dev:.3e} at site {x} exceeds the declared envelope "
                f"{float(bound.envelope(x)):.3e}", x
            )


def cutoffs(window: LatticeWindow) -> tuple[np.ndarray, np.ndarray]:
    """``(j_l, j_r)`` per flat index of one window copy."""
    jr = (window.flat_sites() >= 0).astype(float)
    return 1.0 - jr, jr


def _is_seam(window: LatticeWindow, M: sp.spmatrix) -> np.ndarray:
    coo = M.tocoo()
    n = window.dim
    rs = (coo.row % n) // 2
    cs = (coo.col % n) // 2
    return np.abs(rs - cs) > 1


def build_walk(field: CoinField, window: LatticeWindow, s: float = 1.0, n_k: int = 1024,
               exclusion: float = 0.05) -> WalkModel:
    """Assemble the walk, its free dynamics, ``J``, ``V`` and the factorization.

    Raises
    ------
    CoinConstraintError
        If an asymptotic coin has ``a = 0`` (no absolutely continuous spectrum).
    PreconditionError
        If the deviation table does not fit in the window with an 8-site margin.
    DecayBoundError
        If a coin deviation exceeds its declared envelope.
    """
    for side, p in (("left", field.left), ("right", field.right)):
        if not 0.0 < p.a <= 1.0:
            raise CoinConstraintError(f"{side} asymptote needs a in (0, 1], got a={p.a}")
    if field.table_radius + MARGIN > window.half_width:
        raise PreconditionError(
            f"deviation table radius {field.table_radius} needs half-width >= {field.table_radius + MARGIN}"
        )
    _check_decay(field, window)
    sites = window.sites
    coins = field.coins(sites)
    U = _walk_operator(window, coins, "U")
    Ul = _walk_operator(window, np.broadcast_to(field.left.matrix, coins.shape), "U_l")
    Ur = _walk_operator(window, np.broadcast_to(field.right.matrix, coins.shape), "U_r")
    H0 = Space.double(window)
    U0 = WindowedOperator.block_diagonal((Ul, Ur), H0, label="U0")
    jl, jr = cutoffs(window)
    J = WindowedOperator(sp.hstack([sp.diags(jl), sp.diags(jr)], format="csr"), Structure.BANDED,
                         H0, Space.single(window), label="J")
    free = FreeSpectrum(field.left, field.right, n_k=n_k, exclusion=exclusion)
    model = _assemble(window, field, U, Ul, Ur, U0, J, free)
    return _with_factorization(model, s)


def _assemble(window, field, U, Ul, Ur, U0, J, free) -> WalkModel:
    Vw = (J.sparse() @ U0.sparse() - U.sparse() @ J.sparse()).tocsr()
    Vw.eliminate_zeros()
    coo = Vw.tocoo()
    keep = ~_is_seam(window, coo) if J.domain.dim == 2 * J.codomain.dim else np.ones(coo.nnz, bool)
    V = sp.csr_matrix((coo.data[keep], (coo.row[keep], coo.col[keep])), shape=Vw.shape)
    V_window = WindowedOperator(Vw, Structure.BANDED, U0.domain, U.codomain, label="V_window")
    V_op = WindowedOperator(V, Structure.BANDED, U0.domain, U.codomain, label="V")
    return WalkModel(window, field, U, Ul, Ur, U0, J, V_op, V_window, free)


def _with_factorization(model: WalkModel, s: float) -> WalkModel:
    fac = factorize_perturbation(model, s)
    return WalkModel(model.window, model.field, model.U, model.U_left, model.U_right, model.U0,
                     model.J, model.V, model.V_window, model.free, fac)


def factorize_perturbation(model: WalkModel, s: float = 1.0) -> Factorization:
    """Factor ``V = G* G0`` through weights ``<x>^{-s}`` (``<x> = sqrt(1 + x^2)``).

    The boundedness of ``D`` is certified by its operator norm on the
    sub-windows ``|x| <= L/8, L/4, L/2, L``.

    Raises
    ------
    PreconditionError
        If ``s <= 1/2``.
    ShortRangeError
        If the sub-window norms grow faster than linearly in the radius.
    """
    if not s > 0.5:
        raise PreconditionError(f"factorization needs s > 1/2, got {s}")
    window = model.window
    w_plus = window.bracket(s)
    w_minus = window.bracket(-s)
    n_h = model.V.codomain.dim
    n_h0 = model.V.domain.dim
    reps = n_h0 // w_plus.size
    left_w = np.tile(w_plus, n_h // w_plus.size)
    right_w = np.tile(w_plus, reps)
    V = model.V.sparse()
    D = (sp.diags(left_w) @ V @ sp.diags(right_w)).tocsr()
    G0 = WindowedOperator.diagonal(np.tile(w_minus, reps), model.V.domain, label="G0")
    G = (D.conj().T @ sp.diags(np.tile(w_minus, n_h // w_minus.size))).tocsr()
    G_op = WindowedOperator(G, Structure.BANDED, model.V.codomain, model.V.domain, label="G")
    D_op = WindowedOperator(D, Structure.BANDED, model.V.domain, model.V.codomain, label="D")
    recon = (G.conj().T @ sp.diags(G0.data)).tocsr() - V
    residual = float(abs(recon).max()) if recon.nnz else 0.0

    L = window.half_width
    radii = tuple(r for r in (L // 8, L // 4, L // 2, L) if r >= 1)
    norms = []
    coo = D.tocoo()
    site_r = (coo.row % window.dim) // 2 - L
    site_c = (coo.col % window.dim) // 2 - L
    for r in radii:
        keep = (np.abs(site_r) <= r) & (np.abs(site_c) <= r)
        sub = sp.csr_matrix((coo.data[keep], (coo.row[keep], coo.col[keep])), shape=D.shape)
        norms.append(_sparse_norm(sub))
    growth = 0.0
    if len(norms) >= 2 and norms[-2] > 0 and norms[-1] > 0:
        growth = math.log(norms[-1] / norms[-2]) / math.log(radii[-1] / radii[-2])
    if growth > 1.0 + 1e-9:
        raise ShortRangeError(
            f"short-range violated: ||D|| grows like radius^{growth:.2f} over sub-windows {radii}", norms
        )
    return Factorization(float(s), G0, G_op, D_op, residual, radii, tuple(norms), float(growth))


def _sparse_norm(M: sp.csr_matrix) -> float:
    if M.nnz == 0:
        return 0.0
    # norm of the nonzero block only; cheap and exact
    coo = M.tocoo()
    rows = np.unique(coo.row)
    cols = np.unique(coo.col)
    block = M[rows][:, cols]
    if min(block.shape) <= 400:
        return float(np.linalg.norm(block.toarray(), 2))
    return op_norm(aslinearoperator(block))


def one_space_surrogate(model: WalkModel) -> WalkModel:
    """Surrogate with ``U := U0`` on ``H0`` and ``J := 1``, so ``V = 0``."""
    H0 = model.H0
    J = WindowedOperator(sp.identity(H0.dim, dtype=complex, format="csr"), Structure.BANDED, H0, H0,
                         label="J=1")
    zero = WindowedOperator(sp.csr_matrix((H0.dim, H0.dim), dtype=complex), Structure.BANDED, H0, H0,
                            label="V=0")
    base = WalkModel(model.window, model.field, model.U0, model.U_left, model.U_right, model.U0, J,
                     zero, zero, model.free)
    s = model.factorization.s if model.factorization else 1.0
    return _with_factorization(base, s)


@dataclass(frozen=True)
class LocalizedState:
    phase: float
    vector: np.ndarray
    participation: float
    centroid: float


@dataclass(frozen=True)
class EigenReport:
    """Dense eigen-decomposition of the truncated ``U``."""

    half_width: int
    phases: np.ndarray
    participation: np.ndarray
    centroids: np.ndarray
    localized: tuple[LocalizedState, ...]
    seam_states: tuple[LocalizedState, ...]


def _rebuild(model: WalkModel, half_width: int) -> WalkModel:
    return build_walk(model.field, LatticeWindow(half_width), model.factorization.s if model.factorization else 1.0,
                      model.free.n_k, model.free.exclusion)


def eigen_report(model: WalkModel, max_half_width: int = 512, rebuild_half_width: int = 256,
                 ratio: float = 0.2) -> EigenReport:
    """Eigenphases of the truncated ``U`` with localized-state detection.

    A state counts as localized when its participation ratio
    ``1 / sum_x p(x)^2`` is below ``ratio`` times the site count.  Localized
    states centred in the outer half of the window sit at the periodic seam
    (where the two asymptotic coins meet again) and are reported separately.
    Windows wider than ``max_half_width`` are rebuilt at ``rebuild_half_width``.
    """
    if model.window.half_width > max_half_width:
        model = _rebuild(model, rebuild_half_width)
    window = model.window
    T, Z = schur(model.U.to_dense(), output="complex")
    phases = np.mod(np.angle(np.diag(T)), 2 * np.pi)
    prob = (np.abs(Z) ** 2).reshape(window.site_count, 2, -1).sum(axis=1)
    pr = 1.0 / (prob**2).sum(axis=0)
    cent = window.sites @ prob
    loc, seam = [], []
    for i in np.nonzero(pr < ratio * window.site_count)[0]:
        st = LocalizedState(float(phases[i]), Z[:, i].copy(), float(pr[i]), float(cent[i]))
        (seam if abs(cent[i]) > window.half_width / 2 else loc).append(st)
    return EigenReport(window.half_width, phases, pr, cent, tuple(loc), tuple(seam))


def localized_eigenphases(model: WalkModel, **kwargs) -> tuple[float, ...]:
    """Eigenphases of interior localized states of the truncated ``U``."""
    return tuple(sorted(s.phase for s in eigen_report(model, **kwargs).localized))


@dataclass(frozen=True)
class ArcCheck:
    """Eigenphases of the truncated ``U`` against the inflated dispersion arcs."""

    phases: np.ndarray
    inflate: float
    outliers: tuple[float, ...]


def essential_spectrum_check(model: WalkModel, inflate: float | None = None) -> ArcCheck:
    """Eigenphases (dense) falling outside the core spectrum inflated by ``inflate``.

    The default inflation is the momentum spacing ``2 pi / (2L + 1)``.
    """
    window = model.window
    inflate = 2 * math.pi / window.site_count if inflate is None else inflate
    core = model.free.core_spectrum()
    T = schur(model.U.to_dense(), output="complex")[0]
    phases = np.sort(np.mod(np.angle(np.diag(T)), 2 * math.pi))
    out = tuple(float(p) for p in phases if not core.contains(float(p), inflate))
    return ArcCheck(phases, inflate, out)


def admissible(model: WalkModel, theta: float, margin: float, eigenphases=()) -> bool:
    """``theta`` keeps ``margin`` from thresholds and from the given eigenphases."""
    d, _ = model.free.nearest_threshold(theta)
    if d < margin:
        return False
    return all(abs(float(wrap_angle(theta - e))) >= margin for e in eigenphases)


def uniform_model(coin: CoinParams, half_width: int, **kwargs) -> WalkModel:
    return build_walk(CoinField.uniform(coin), LatticeWindow(half_width), **kwargs)
