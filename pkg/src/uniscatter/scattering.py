"""Scattering operator and scattering matrix of the walk.

Three independent routes to ``S(theta)``:

* ``formula_plus`` / ``formula_minus``: the representation through the
  auxiliary space ``H0``::

      S = u_+ + 2 pi (Z(G J U0) Z(G0)^* - Z(G0) B_+ Z(G0)^*)
      S = u_- - 2 pi (Z(G0) Z(G J U0)^* - Z(G0) B_-^* Z(G0)^*)

  with ``B(z) = G R(z) G*`` and ``Z(T)`` the fiber of ``F0 T*``.
* ``packet_oracle``: ``<S^(N) psi_a, psi_b>`` for channel wave packets, with
  ``S^(N) = U0^N J* U^{-2N} J U0^N``, extrapolated in ``sigma^2 -> 0``.

Matrix convention: ``S[b, a]`` is the amplitude from channel ``a`` into
channel ``b``.  With the time convention ``W_+(n) = U^n J U0^{-n}``, only the
block (incoming rows) x (outgoing columns) of ``S - u`` is populated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import sqrtm

from .errors import BoundaryLimitError, PreconditionError
from .operators import DirectSumState, _State
from .resolvent import TWO_PI, EpsSchedule, Extrapolation, RadialPoint, delta_apply, resolvent_kernel, richardson
from .spectral import Channel, Fiber, FiberVector
from .walk import WalkModel
from .waveops import WaveResult, _columns, _edge_mass, _sign, check_no_wrap, jj_wave_apply

logger = logging.getLogger(__name__)

DROP_WEIGHT = 1e-12


def _flat(v) -> np.ndarray:
    return v.flat if isinstance(v, _State) else np.asarray(v, dtype=complex)


# ---------------------------------------------------------------------------
# time domain


def scattering_apply(model: WalkModel, psi0, N: int) -> WaveResult:
    """``S^(N) psi0 = U0^N J* U^{-2N} J U0^N psi0``.

    The trace holds ``||S^(N) psi0 - S^(N/2) psi0||``.

    Raises
    ------
    NoWrapError
        If the horizon ``2N`` violates the no-wrap condition.
    """
    check_no_wrap(model, psi0, 2 * N)
    cols, single = _columns(psi0)

    def run(n):
        x = cols
        for _ in range(n):
            x = model.U0.matvec(x)
        x = model.J.matvec(x)
        for _ in range(2 * n):
            x = model.U.rmatvec(x)
        edge = _edge_mass(model.window, x)
        x = model.J.rmatvec(x)
        for _ in range(n):
            x = model.U0.matvec(x)
        return x, edge

    out, leak = run(N)
    half, _ = run(N // 2)
    vec = out[:, 0] if single else out
    return WaveResult(0, vec, "strong", (N,), (float(np.linalg.norm(out - half)),), leak)


def t_apply(model: WalkModel, z: complex, sign, psi0) -> np.ndarray:
    """``T_+(z) = U0* J* V - V* R(z) V`` or ``T_-(z) = V* J U0 - V* R(1/conj z)* V``."""
    sign = _sign(sign)
    if abs(abs(z) - 1.0) < 1e-14:
        raise PreconditionError("t_apply needs |z| != 1")
    x = _flat(psi0)
    Vx = model.V.matvec(x)
    kernel = resolvent_kernel(model.U)
    if sign > 0:
        first = model.U0.rmatvec(model.J.rmatvec(Vx))
        second = model.V.rmatvec(kernel.factor(z).solve(Vx))
    else:
        first = model.V.rmatvec(model.J.matvec(model.U0.matvec(x)))
        second = model.V.rmatvec(kernel.factor(1.0 / np.conj(z)).solve(Vx, adjoint=True))
    return first - second


# ---------------------------------------------------------------------------
# auxiliary-space pieces


@dataclass(frozen=True)
class AuxWindow:
    """Auxiliary basis vectors carrying the factorization (columns of ``G*``)."""

    indices: np.ndarray
    dropped_weight: float


def aux_window(model: WalkModel) -> AuxWindow:
    """Columns of ``G*`` with squared weight above the drop threshold."""
    Gs = model.factorization.G.adjoint_sparse().tocsc()
    weight = np.asarray(abs(Gs).power(2).sum(axis=0)).ravel()
    keep = np.nonzero(weight > DROP_WEIGHT * max(weight.max(initial=0.0), 1e-300))[0]
    dropped = float(weight.sum() - weight[keep].sum())
    return AuxWindow(keep, dropped)


def _aux_columns(model: WalkModel, aux: AuxWindow) -> np.ndarray:
    Gs = model.factorization.G.adjoint_sparse().tocsc()
    return Gs[:, aux.indices].toarray()


@dataclass(frozen=True)
class BLimit:
    theta: float
    sign: int
    value: np.ndarray = field(repr=False)
    extrapolation: Extrapolation = field(repr=False)
    aux: AuxWindow = field(repr=False)

    @property
    def residuals(self) -> tuple[float, ...]:
        return tuple(float(d) for d in self.extrapolation.differences)


def b_matrix(model: WalkModel, z: complex, aux: AuxWindow | None = None) -> np.ndarray:
    """``B(z) = G R(z) G*`` compressed to the auxiliary window."""
    aux = aux or aux_window(model)
    Y = _aux_columns(model, aux)
    if Y.shape[1] == 0:
        return np.zeros((0, 0), dtype=complex)
    if z == 0:
        return Y.conj().T @ Y
    return Y.conj().T @ resolvent_kernel(model.U).factor(z).solve(Y)


def b_limit(model: WalkModel, theta: float, sign, sched: EpsSchedule, aux: AuxWindow | None = None) -> BLimit:
    """Boundary value ``B_+-(theta)`` extrapolated along ``sched``.

    Raises
    ------
    BoundaryLimitError
        If successive differences grow along the schedule.
    """
    sign = _sign(sign)
    aux = aux or aux_window(model)
    values = [b_matrix(model, RadialPoint(e, sign, theta).z, aux) for e in sched.eps]
    ext = richardson(sched.eps, values, sched.order)
    diffs = [float(d) for d in ext.differences]
    if len(diffs) >= 2 and diffs[-1] > diffs[0] * 1.5 + 1e-12:
        raise BoundaryLimitError(f"B limit at theta={theta:.6g} not resolved: differences {diffs}", diffs)
    return BLimit(float(theta), sign, np.asarray(ext.value), ext, aux)


@dataclass(frozen=True)
class ZMatrices:
    fiber: Fiber
    aux: AuxWindow
    g0: np.ndarray = field(repr=False)
    gju: np.ndarray = field(repr=False)


def z0_matrix(model: WalkModel, theta: float, which: str, aux: AuxWindow | None = None,
              fiber: Fiber | None = None) -> np.ndarray:
    """``Z0(theta, T)``: column ``j`` is ``(F0 T* e_j)(theta)`` over the auxiliary window.

    ``which`` is ``"G0"`` (``T* = G0``, diagonal) or ``"GJU0"``
    (``T* = U0* J* G*``).
    """
    aux = aux or aux_window(model)
    fiber = fiber or model.free.fiber_at(theta)
    n = model.H0.dim
    k = aux.indices.size
    if which == "G0":
        cols = np.zeros((n, k), dtype=complex)
        cols[aux.indices, np.arange(k)] = model.factorization.G0.data[aux.indices]
    elif which == "GJU0":
        Y = _aux_columns(model, aux)
        cols = model.U0.rmatvec(model.J.rmatvec(Y))
    else:
        raise PreconditionError(f"unknown Z0 operand {which!r}")
    if k == 0:
        return np.zeros((fiber.dim, 0), dtype=complex)
    return np.asarray(model.free.f0_apply(cols, theta, fiber).coefficients).reshape(fiber.dim, k)


def z_matrices(model: WalkModel, theta: float, aux: AuxWindow | None = None) -> ZMatrices:
    aux = aux or aux_window(model)
    fiber = model.free.fiber_at(theta)
    return ZMatrices(fiber, aux, z0_matrix(model, theta, "G0", aux, fiber),
                     z0_matrix(model, theta, "GJU0", aux, fiber))


def delta0_gram(model: WalkModel, theta: float, sched: EpsSchedule, aux: AuxWindow | None = None) -> Extrapolation:
    """``lim <delta0(1 - eps, theta) G0* e_j, G0* e_i>`` on the auxiliary window."""
    aux = aux or aux_window(model)
    n = model.H0.dim
    k = aux.indices.size
    cols = np.zeros((n, k), dtype=complex)
    cols[aux.indices, np.arange(k)] = model.factorization.G0.data[aux.indices]
    vals = []
    for e in sched.eps:
        d = delta_apply(model.U0, RadialPoint(e, 1, theta), cols)
        vals.append(cols.conj().T @ d)
    return richardson(sched.eps, vals, sched.order)


# ---------------------------------------------------------------------------
# u_+- fibers and packet matrices


def default_horizon(model: WalkModel, packets: Sequence[DirectSumState], factor: int = 2) -> int:
    """Largest horizon ``N`` with ``factor * N`` steps clear of the window edge."""
    radius = max(p.essential_radius() for p in packets)
    room = model.window.half_width - radius - 1
    return max(1, int(room / (factor * model.free.max_speed)))


def channel_packets(model: WalkModel, fiber: Fiber, theta: float, sigma: float) -> list[DirectSumState]:
    return [model.free.wave_packet(model.window, ch, theta, sigma) for ch in fiber.channels]


def _packet_matrix(packets, images) -> np.ndarray:
    """``M[b, a] = <A psi_a, psi_b>`` normalized by the packet Gram matrix."""
    P = np.stack([p.flat for p in packets], axis=1)
    M = P.conj().T @ images
    gram = P.conj().T @ P
    w = np.linalg.inv(sqrtm(gram))
    return w @ M @ w


@dataclass(frozen=True)
class PacketMatrix:
    theta: float
    value: np.ndarray = field(repr=False)
    extrapolation: Extrapolation = field(repr=False)
    horizon: int
    asymmetry: float = 0.0


def u_fiber(model: WalkModel, theta: float, sign, sigmas: Sequence[float] = (0.08, 0.04),
            horizon: int | None = None) -> PacketMatrix:
    """``u_+-(theta)`` from channel packets under ``w(U0, U0, J*J)``.

    The time method is used (``J*J`` is diagonal, so each step is exact).  The
    packet matrices are extrapolated linearly in ``sigma^2`` and replaced by
    their Hermitian part; the removed anti-Hermitian norm is recorded.
    """
    sign = _sign(sign)
    fiber = model.free.fiber_at(theta)
    mats, horizons = [], []
    for sig in sigmas:
        packets = channel_packets(model, fiber, theta, sig)
        n = horizon or default_horizon(model, packets, factor=1)
        res = jj_wave_apply(model, sign, packets, "strong", (n,))
        mats.append(_packet_matrix(packets, res.vector))
        horizons.append(n)
    steps = [s * s for s in sigmas]
    ext = richardson(steps, mats, min(1, len(mats) - 1))
    val = np.asarray(ext.value)
    herm = 0.5 * (val + val.conj().T)
    return PacketMatrix(float(theta), herm, ext, min(horizons), float(np.linalg.norm(val - herm)))


@dataclass(frozen=True)
class SMatrixSample:
    """One ``S(theta)`` with its provenance and diagnostics."""

    theta: float
    matrix: np.ndarray = field(repr=False)
    source: str
    fiber: Fiber = field(repr=False)
    diagnostics: dict = field(default_factory=dict, repr=False)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(c.label for c in self.fiber.channels)

    def gauge_record(self) -> list[dict]:
        return [{"label": c.label, "k": c.k, "vector": [complex(v) for v in c.vector]}
                for c in self.fiber.channels]


def smatrix_formula(model: WalkModel, theta: float, sign, sched: EpsSchedule,
                    sigmas: Sequence[float] = (0.08, 0.04), u: PacketMatrix | None = None) -> SMatrixSample:
    """``S(theta)`` through the representation with ``B_+`` (sign +) or ``B_-`` (sign -)."""
    sign = _sign(sign)
    aux = aux_window(model)
    zm = z_matrices(model, theta, aux)
    B = b_limit(model, theta, sign, sched, aux)
    u = u or u_fiber(model, theta, sign, sigmas)
    Zg, Zj = zm.g0, zm.gju
    if sign > 0:
        S = u.value + TWO_PI * (Zj @ Zg.conj().T - Zg @ B.value @ Zg.conj().T)
    else:
        # T_-(z) = T_+(1/conj z)* brings in the adjoint of the outer boundary value
        S = u.value - TWO_PI * (Zg @ Zj.conj().T - Zg @ B.value.conj().T @ Zg.conj().T)
    diag = {
        "eps": list(sched.eps),
        "b_residuals": list(B.residuals),
        "b_error": float(B.extrapolation.error_estimate),
        "aux_size": int(aux.indices.size),
        "aux_dropped": aux.dropped_weight,
        "u_asymmetry": u.asymmetry,
        "u_horizon": u.horizon,
    }
    return SMatrixSample(float(theta), S, "formula_plus" if sign > 0 else "formula_minus", zm.fiber, diag)


def smatrix_packet(model: WalkModel, theta: float, sigmas: Sequence[float] = (0.08, 0.04),
                   N: int | None = None) -> SMatrixSample:
    """``<S^(N) psi_a, psi_b>`` over channel packets, extrapolated in ``sigma^2``."""
    fiber = model.free.fiber_at(theta)
    mats, horizons, traces = [], [], []
    for sig in sigmas:
        packets = channel_packets(model, fiber, theta, sig)
        n = N or default_horizon(model, packets, factor=2)
        res = scattering_apply(model, packets, n)
        mats.append(_packet_matrix(packets, res.vector))
        horizons.append(n)
        traces.append(res.trace[0])
    steps = [s * s for s in sigmas]
    ext = richardson(steps, mats, min(1, len(mats) - 1))
    diag = {"sigmas": list(sigmas), "horizons": horizons, "cauchy": traces,
            "sigma_error": float(ext.error_estimate)}
    return SMatrixSample(float(theta), np.asarray(ext.value), "packet_oracle", fiber, diag)


def modulus_distance(a: SMatrixSample | np.ndarray, b: SMatrixSample | np.ndarray) -> float:
    """Gauge-invariant distance ``max |(|a_ij| - |b_ij|)|``."""
    ma = a.matrix if isinstance(a, SMatrixSample) else a
    mb = b.matrix if isinstance(b, SMatrixSample) else b
    return float(np.abs(np.abs(ma) - np.abs(mb)).max())


# ---------------------------------------------------------------------------
# fiberwise identity


@dataclass(frozen=True)
class PmBisCheck:
    theta: float
    sign: int
    lhs: complex
    rhs: complex
    sequence: tuple[complex, ...]
    eps: tuple[float, ...]

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs) / max(abs(self.lhs), abs(self.rhs), 1e-300)

    @property
    def trend(self) -> tuple[float, ...]:
        """Relative distance of each finite-eps value to the formula side."""
        scale = max(abs(self.lhs), 1e-300)
        return tuple(abs(v - self.lhs) / scale for v in self.sequence)


def pm_bis_check(model: WalkModel, theta: float, psi0, phi0, sched: EpsSchedule, sign=+1,
                 sample: SMatrixSample | None = None, u: PacketMatrix | None = None,
                 sigmas: Sequence[float] = (0.08, 0.04)) -> PmBisCheck:
    """Compare ``<(S - u)(F0 psi0), F0 phi0>`` with ``+-2 pi lim <T delta0 psi0, delta0 phi0>``."""
    sign = _sign(sign)
    u = u or u_fiber(model, theta, sign, sigmas)
    sample = sample or smatrix_formula(model, theta, sign, sched, u=u)
    fiber = sample.fiber
    fp = np.asarray(model.free.f0_apply(psi0, theta, fiber).coefficients)
    ff = np.asarray(model.free.f0_apply(phi0, theta, fiber).coefficients)
    lhs = complex(np.vdot(ff, (sample.matrix - u.value) @ fp))
    vals = []
    for e in sched.eps:
        pt = RadialPoint(e, 1, theta)
        dpsi = delta_apply(model.U0, pt, _flat(psi0))
        dphi = delta_apply(model.U0, pt, _flat(phi0))
        vals.append(sign * TWO_PI * complex(np.vdot(dphi, t_apply(model, pt.z, sign, dpsi))))
    ext = richardson(sched.eps, vals, sched.order)
    return PmBisCheck(float(theta), sign, lhs, complex(ext.value), tuple(vals), tuple(sched.eps))


# ---------------------------------------------------------------------------
# physical readout


@dataclass(frozen=True)
class ChannelCoefficients:
    """Squared moduli ``|S_ba|^2`` split into transmission and reflection.

    Transmission keeps the physical direction of motion, reflection reverses
    it.  Row sums are reported for every row.
    """

    theta: float
    labels: tuple[str, ...]
    probabilities: np.ndarray = field(repr=False)
    transmission: dict
    reflection: dict
    row_sums: tuple[float, ...]

    def flux_rows(self, threshold: float = 0.5) -> tuple[float, ...]:
        """Row sums of rows that carry scattered flux."""
        return tuple(r for r in self.row_sums if r > threshold)


def coefficients(sample: SMatrixSample | np.ndarray, fiber: Fiber | None = None) -> ChannelCoefficients:
    mat = sample.matrix if isinstance(sample, SMatrixSample) else np.asarray(sample)
    fiber = fiber or sample.fiber
    theta = sample.theta if isinstance(sample, SMatrixSample) else fiber.theta
    P = np.abs(mat) ** 2
    trans, refl = {}, {}
    chans = fiber.channels
    for b, cb in enumerate(chans):
        for a, ca in enumerate(chans):
            if P[b, a] == 0.0:
                continue
            key = f"{ca.label}->{cb.label}"
            (trans if ca.direction == cb.direction else refl)[key] = float(P[b, a])
    return ChannelCoefficients(theta, tuple(c.label for c in chans), P, trans, refl,
                               tuple(float(r) for r in P.sum(axis=1)))
