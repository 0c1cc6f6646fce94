"""Wave operators by time iteration and by the regularized angle integral.

Strong (time) version::

    W_+(n) = U^n J U0^{-n},      W_-(n) = U^{-n} J U0^{n}

Stationary version, with ``z = (1 - eps)^{+-1} e^{i theta}`` and
``g = (1 - |z|^2) / (2 pi)``::

    w_+- psi0 = +- g  integral  R(z)* J R0(z) psi0  d theta

The periodic trapezoid rule on ``n_theta`` nodes reproduces the Abel mean
``(1 - r^2) sum_n r^{2n} W(n) psi0`` up to aliasing of order ``r^{n_theta}``.
Both routines take ``U``, ``J`` and ``U0`` explicitly, so the same code
evaluates ``w(U0, U0, J*J)``.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NoWrapError, PreconditionError
from .operators import DirectSumState, WindowedOperator, _State, state_from_flat
from .resolvent import TWO_PI, resolvent_kernel
from .walk import WalkModel

logger = logging.getLogger(__name__)

CHUNK = 64
EDGE_SITES = 8


@dataclass(frozen=True)
class WaveResult:
    """Outcome of one wave-operator evaluation.

    ``trace`` holds Cauchy deltas ``||W(n) psi - W(n - stride) psi||`` for the
    strong method, or the half-grid quadrature differences for the stationary
    one.  ``leakage`` bounds probability that reached the window edge.
    """

    sign: int
    vector: np.ndarray = field(repr=False)
    method: str
    schedule: tuple
    trace: tuple[float, ...]
    leakage: float
    converged: bool = True

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))


def _columns(psi) -> tuple[np.ndarray, bool]:
    if isinstance(psi, _State):
        return psi.flat[:, None], True
    if isinstance(psi, (list, tuple)):
        return np.stack([p.flat if isinstance(p, _State) else np.asarray(p, complex) for p in psi], axis=1), False
    arr = np.asarray(psi, dtype=complex)
    return (arr[:, None], True) if arr.ndim == 1 else (arr, False)


def _sign(sign) -> int:
    if sign in (1, "+", "plus"):
        return 1
    if sign in (-1, "-", "minus"):
        return -1
    raise PreconditionError(f"sign must be + or -, got {sign!r}")


def _edge_mass(window, flat: np.ndarray) -> float:
    """Probability within ``EDGE_SITES`` of the window boundary (any slot)."""
    sites = window.flat_sites()
    reps = flat.shape[0] // sites.size
    near = np.tile(np.abs(sites) > window.half_width - EDGE_SITES, reps)
    return float((np.abs(flat[near]) ** 2).sum())


def check_no_wrap(model: WalkModel, psi0, steps: int) -> None:
    """Raise :class:`NoWrapError` if ``steps`` free steps can reach the window edge."""
    cols, _ = _columns(psi0)
    window = model.window
    radius = 0
    for j in range(cols.shape[1]):
        st = DirectSumState.from_flat(window, cols[:, j]) if cols.shape[0] == model.H0.dim else None
        radius = max(radius, st.essential_radius() if st else window.half_width)
    need = steps * model.free.max_speed + radius
    if need >= window.half_width:
        raise NoWrapError(
            f"horizon {steps} with speed {model.free.max_speed:.3f} and essential radius {radius} "
            f"needs half-width > {need:.0f} (have {window.half_width})",
            int(math.ceil(need)) + 1,
        )


def _strong(U: WindowedOperator, J: WindowedOperator, U0: WindowedOperator, cols: np.ndarray,
            sign: int, N: int, stride: int):
    # free leg backwards (sign +) or forwards (sign -), checkpoints every `stride` steps
    free_step = U0.rmatvec if sign > 0 else U0.matvec
    full_step = U.matvec if sign > 0 else U.rmatvec
    phi = cols.copy()
    prev_j = J.matvec(phi)
    trace = []
    for n in range(1, N + 1):
        phi = free_step(phi)
        if n % stride == 0 or n == N:
            k = stride if n % stride == 0 else n % stride
            cur = J.matvec(phi)
            probe = cur
            for _ in range(k):
                probe = full_step(probe)
            # ||W(n) - W(n-k)|| = ||U^k J phi_n - J phi_{n-k}|| by unitarity
            trace.append(float(np.linalg.norm(probe - prev_j)))
            prev_j = cur
    out = J.matvec(phi)
    for _ in range(N):
        out = full_step(out)
    return out, phi, tuple(trace)


def strong_apply(U, J, U0, model: WalkModel, psi0, sign, N: int, cauchy_tol: float = 1e-3,
                 stride: int = 50) -> WaveResult:
    sign = _sign(sign)
    if N < 1:
        raise PreconditionError("horizon N must be positive")
    check_no_wrap(model, psi0, N)
    cols, single = _columns(psi0)
    out, free_end, trace = _strong(U, J, U0, cols, sign, N, stride)
    leak = _edge_mass(model.window, free_end)
    vec = out[:, 0] if single else out
    return WaveResult(sign, vec, "strong", (N,), trace, leak, bool(trace and trace[-1] <= cauchy_tol))


def strong_wave_apply(model: WalkModel, sign, psi0, N: int, cauchy_tol: float = 1e-3,
                      stride: int = 50) -> WaveResult:
    """``U^{+-N} J U0^{-+N} psi0`` with a Cauchy trace every ``stride`` steps.

    Raises
    ------
    NoWrapError
        If ``N`` times the maximal group speed plus the support radius of
        ``psi0`` reaches the window half-width.
    """
    return strong_apply(model.U, model.J, model.U0, model, psi0, sign, N, cauchy_tol, stride)


def _chunk_sum(kU, kU0, J, cols, zs, sign):
    acc = np.zeros((J.codomain.dim, cols.shape[1]), dtype=complex)
    even = np.zeros_like(acc)
    for idx, z in zs:
        r0 = kU0.factor(z).solve(cols)
        term = kU.factor(z).solve(J.matvec(r0), adjoint=True)
        acc += term
        if idx % 2 == 0:
            even += term
    return acc, even


def stationary_apply(U, J, U0, model: WalkModel, psi0, sign, eps: float, n_theta: int,
                     threads: int | None = None) -> WaveResult:
    sign = _sign(sign)
    if not 1e-5 < eps < 0.5:
        raise PreconditionError(f"eps must lie in (1e-5, 0.5), got {eps}")
    if n_theta < 512 or n_theta % 2:
        raise PreconditionError("n_theta must be even and >= 512")
    cols, single = _columns(psi0)
    r = (1.0 - eps) ** sign
    weight = (1.0 - r * r) / TWO_PI
    thetas = TWO_PI * np.arange(n_theta) / n_theta
    nodes = [(i, r * np.exp(1j * t)) for i, t in enumerate(thetas)]
    chunks = [nodes[i:i + CHUNK] for i in range(0, n_theta, CHUNK)]
    kU, kU0 = resolvent_kernel(U), resolvent_kernel(U0)
    workers = threads or min(8, os.cpu_count() or 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _chunk_sum(kU, kU0, J, cols, c, sign), chunks))
    else:
        parts = [_chunk_sum(kU, kU0, J, cols, c, sign) for c in chunks]
    total = np.zeros((J.codomain.dim, cols.shape[1]), dtype=complex)
    even = np.zeros_like(total)
    for acc, ev in parts:  # fixed order reduction
        total += acc
        even += ev
    scale = sign * weight * TWO_PI / n_theta
    out = scale * total
    half = 2.0 * scale * even
    qerr = float(np.linalg.norm(out - half))
    # the Abel weights reach the edge with mass about r^(2 n_edge)
    n_edge = model.window.half_width / max(model.free.max_speed, 1e-12)
    leak = float(min(1.0, (1.0 - eps) ** (2 * n_edge)))
    vec = out[:, 0] if single else out
    return WaveResult(sign, vec, "stationary", (eps, n_theta), (qerr,), leak)


def stationary_wave_apply(model: WalkModel, sign, psi0, eps: float, n_theta: int,
                          threads: int | None = None) -> WaveResult:
    """Regularized angle integral ``+- g integral R(z)* J R0(z) psi0``.

    ``psi0`` may be a state, a flat H0 vector, a 2-D array of columns or a
    list of states; several columns share every factorization.  The trace
    entry is the difference to the even-node (half-grid) rule.
    """
    return stationary_apply(model.U, model.J, model.U0, model, psi0, sign, eps, n_theta, threads)


def jj_wave_apply(model: WalkModel, sign, psi0, method: str = "stationary", schedule: Sequence = (2.5e-3, 2048),
                  threads: int | None = None) -> WaveResult:
    """``w(U0, U0, J*J)``: free dynamics sandwiching the cutoff projection.

    ``schedule`` is ``(eps, n_theta)`` for the stationary method and ``(N,)``
    or ``N`` for the time method.
    """
    JJ = model.JJ
    if method == "stationary":
        eps, n_theta = schedule
        return stationary_apply(model.U0, JJ, model.U0, model, psi0, sign, eps, n_theta, threads)
    if method == "strong":
        N = schedule[0] if isinstance(schedule, (tuple, list)) else int(schedule)
        return strong_apply(model.U0, JJ, model.U0, model, psi0, sign, N)
    raise PreconditionError(f"unknown method {method!r}")


@dataclass(frozen=True)
class ProductCheck:
    schedule: tuple
    lhs: tuple[complex, ...]
    rhs: tuple[complex, ...]

    @property
    def residuals(self) -> tuple[float, ...]:
        return tuple(abs(a - b) for a, b in zip(self.lhs, self.rhs))

    @property
    def residual(self) -> float:
        return self.residuals[-1]

    @property
    def decreasing(self) -> bool:
        r = self.residuals
        return all(b < a for a, b in zip(r, r[1:]))


def product_identity_check(model: WalkModel, sign, psi0, phi0, schedule: Sequence[tuple[float, int]],
                           threads: int | None = None) -> ProductCheck:
    """Compare ``<w psi0, w phi0>`` with ``<w(U0, U0, J*J) psi0, phi0>`` along a schedule."""
    cols, _ = _columns([psi0, phi0])
    lhs, rhs = [], []
    for eps, n_theta in schedule:
        w = stationary_wave_apply(model, sign, cols, eps, n_theta, threads).vector
        jj = jj_wave_apply(model, sign, cols[:, 0], "stationary", (eps, n_theta), threads).vector
        lhs.append(complex(np.vdot(w[:, 1], w[:, 0])))
        rhs.append(complex(np.vdot(cols[:, 1], jj)))
    return ProductCheck(tuple(schedule), tuple(lhs), tuple(rhs))
