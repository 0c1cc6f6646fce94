"""Spectral decomposition of the free walk ``U0 = U_left + U_right``.

Under ``psi_hat(k) = sum_x e^{-ikx} psi(x)`` a translation-invariant walk with
coin ``C`` becomes multiplication by the symbol
``U_hat(k) = diag(e^{ik}, e^{-ik}) C``.  Its eigenphases ``lambda_j(k)``
(two branches) obey ``cos(lambda - delta/2) = a cos(k + alpha - delta/2)``.

Note on directions: with this Fourier convention a branch with velocity
``v = d lambda / dk > 0`` moves towards negative ``x``.  Channels therefore
record both ``velocity`` and the physical ``direction = -sign(v)``.

Branch labels: for ``a < 1`` branch 1 is the eigenvalue with
``sin(lambda - delta/2) > 0`` and branch 2 the other one; for ``a = 1`` the
symbol is diagonal and branch 1 is the eigenvalue carried by component 0.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coins import CoinParams, build_coin_matrix
from .errors import BranchTrackingError, PacketSpreadError, PreconditionError, ThresholdProximityError
from .operators import DirectSumState, LatticeWindow, SpinorState, _State

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
SIDES = ("l", "r")
DEFAULT_EXCLUSION = 0.05


def wrap_angle(x):
    """Map angles to ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=float), TWO_PI)


def circular_distance(a, b):
    return np.abs(wrap_angle(np.asarray(a) - np.asarray(b)))


def symbol(coin: CoinParams | np.ndarray, k) -> np.ndarray:
    """Fourier symbol ``diag(e^{ik}, e^{-ik}) C`` for scalar or array ``k``."""
    C = coin.matrix if isinstance(coin, CoinParams) else np.asarray(coin, dtype=complex)
    k = np.asarray(k, dtype=float)
    e = np.exp(1j * k)[..., None]
    out = np.empty(k.shape + (2, 2), dtype=complex)
    out[..., 0, :] = e * C[0]
    out[..., 1, :] = np.conj(e) * C[1]
    return out


def _symbol_derivative(C: np.ndarray, k: np.ndarray) -> np.ndarray:
    e = np.exp(1j * k)[..., None]
    out = np.empty(k.shape + (2, 2), dtype=complex)
    out[..., 0, :] = 1j * e * C[0]
    out[..., 1, :] = -1j * np.conj(e) * C[1]
    return out


def gauge_fix(u: np.ndarray) -> np.ndarray:
    """Normalize and rotate so the largest-magnitude component is real positive.

    Ties go to the first component.  Works on ``(..., 2)`` arrays.
    """
    u = u / np.linalg.norm(u, axis=-1, keepdims=True)
    pick = np.where(np.abs(u[..., 0]) >= np.abs(u[..., 1]), 0, 1)
    ref = np.take_along_axis(u, pick[..., None], axis=-1)[..., 0]
    return u * (np.abs(ref) / ref)[..., None]


def branch_eigenpairs(coin: CoinParams, k, branch: int):
    """Eigenphase, gauge-fixed eigenvector and velocity on one branch.

    Parameters
    ----------
    coin : CoinParams
    k : float or array
    branch : {1, 2}

    Returns
    -------
    phase : ndarray
        ``lambda_j(k)`` in ``(-pi, pi]``.
    vector : ndarray, shape (..., 2)
    velocity : ndarray
        ``d lambda / dk`` from the Hellmann-Feynman formula
        ``i lambda' e^{i lambda} = <u, U_hat'(k) u>``.
    """
    C = coin.matrix
    k = np.asarray(k, dtype=float)
    M = symbol(C, k)
    tr = M[..., 0, 0] + M[..., 1, 1]
    det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    root = np.sqrt(tr * tr - 4.0 * det + 0j)
    mu_a = 0.5 * (tr + root)
    mu_b = 0.5 * (tr - root)
    # project onto the unit circle (roundoff only)
    mu_a = mu_a / np.abs(mu_a)
    mu_b = mu_b / np.abs(mu_b)

    def null_vector(mu):
        v1 = np.stack([M[..., 0, 1], mu - M[..., 0, 0]], axis=-1)
        v2 = np.stack([mu - M[..., 1, 1], M[..., 1, 0]], axis=-1)
        n1 = np.linalg.norm(v1, axis=-1)
        n2 = np.linalg.norm(v2, axis=-1)
        v = np.where((n1 >= n2)[..., None], v1, v2)
        return v, np.maximum(n1, n2)

    va, na = null_vector(mu_a)
    vb, nb = null_vector(mu_b)
    if coin.b > 0.0:
        half = np.exp(-1j * coin.delta / 2.0)
        first_is_a = np.imag(mu_a * half) > np.imag(mu_b * half)
    else:
        # diagonal symbol: the branch follows the component it lives on
        tiny = 1e-14
        va = np.where((na < tiny)[..., None], np.array([1.0, 0.0]), va)
        vb = np.where((nb < tiny)[..., None], np.array([0.0, 1.0]), vb)
        mu_a_is_first = np.abs(mu_a - M[..., 0, 0]) <= np.abs(mu_b - M[..., 0, 0])
        first_is_a = mu_a_is_first
        # at the band crossing both eigenvalues coincide: fall back to fixed vectors
        va = np.where((na < tiny)[..., None] | (nb < tiny)[..., None],
                      np.array([1.0, 0.0]), va)
        vb = np.where((na < tiny)[..., None] | (nb < tiny)[..., None],
                      np.array([0.0, 1.0]), vb)
        mu_a = np.where((na < tiny) | (nb < tiny), M[..., 0, 0] / np.abs(M[..., 0, 0]), mu_a)
        mu_b = np.where((na < tiny) | (nb < tiny), M[..., 1, 1] / np.abs(M[..., 1, 1]), mu_b)
        first_is_a = np.where((na < tiny) | (nb < tiny), True, first_is_a)
    if branch == 1:
        mu = np.where(first_is_a, mu_a, mu_b)
        vec = np.where(first_is_a[..., None], va, vb)
    elif branch == 2:
        mu = np.where(first_is_a, mu_b, mu_a)
        vec = np.where(first_is_a[..., None], vb, va)
    else:
        raise PreconditionError("branch must be 1 or 2")
    vec = gauge_fix(vec)
    dM = _symbol_derivative(C, k)
    num = np.einsum("...i,...ij,...j->...", vec.conj(), dM, vec)
    vel = np.real(num / (1j * mu))
    return np.angle(mu), vec, vel


@dataclass(frozen=True)
class BandFunction:
    """One dispersion branch sampled on a uniform momentum grid."""

    side: str
    branch: int
    k: np.ndarray = field(repr=False)
    phase: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)
    velocity: np.ndarray = field(repr=False)
    winding: int
    relation_residual: float
    velocity_residual: float


def _spectral_velocity(phase_unwrapped: np.ndarray, winding: int) -> np.ndarray:
    n = phase_unwrapped.size
    k = TWO_PI * np.arange(n) / n
    periodic = phase_unwrapped - winding * k
    freq = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        freq[n // 2] = 0.0
    return winding + np.real(np.fft.ifft(1j * freq * np.fft.fft(periodic)))


def band_functions(coin: CoinParams, n_k: int = 1024, side: str = "r") -> tuple[BandFunction, BandFunction]:
    """Sample both dispersion branches of ``coin`` on ``n_k`` momenta.

    Phases are unwrapped along the grid and velocities obtained by spectral
    differentiation of the periodic part.  Consecutive eigenvectors must stay
    close (branch tracking); on failure the grid is refined four-fold once.

    Raises
    ------
    BranchTrackingError
        If the branches cannot be followed even on the refined grid.
    """
    if n_k < 256 or n_k & (n_k - 1):
        raise PreconditionError("n_k must be a power of two >= 256")
    for attempt, n in enumerate((n_k, 4 * n_k)):
        k = TWO_PI * np.arange(n) / n
        out = []
        tracked = True
        for branch in (1, 2):
            ph, vec, vel_hf = branch_eigenpairs(coin, k, branch)
            overlap = np.abs(np.einsum("ij,ij->i", vec.conj(), np.roll(vec, -1, axis=0)))
            if overlap.min() < 0.5:
                tracked = False
                break
            unwrapped = np.unwrap(ph)
            closing = unwrapped[-1] + wrap_angle(unwrapped[0] - unwrapped[-1])
            winding = int(round((closing - unwrapped[0]) / TWO_PI))
            vel = _spectral_velocity(unwrapped, winding)
            kp = k + coin.alpha - coin.delta / 2.0
            rel = float(np.abs(np.cos(unwrapped - coin.delta / 2.0) - coin.a * np.cos(kp)).max())
            vres = float(np.abs(vel - vel_hf).max())
            if rel > 1e-10:
                logger.warning("dispersion relation residual %.3e on side %s branch %d", rel, side, branch)
            out.append(BandFunction(side, branch, k, unwrapped, vec, vel, winding, rel, vres))
        if tracked:
            return out[0], out[1]
        logger.info("branch tracking failed on %d momenta, refining", n)
    raise BranchTrackingError(f"cannot track dispersion branches of {coin} (side {side})")


def _bisect(f, lo: float, hi: float, max_iter: int = 200) -> float:
    flo = f(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class Channel:
    """Scattering channel: one solution of ``lambda_j(k) = theta`` on one side."""

    side: str
    branch: int
    k: float
    vector: np.ndarray = field(repr=False)
    velocity: float

    @property
    def direction(self) -> int:
        """Physical direction of motion: +1 towards positive x."""
        return -1 if self.velocity > 0 else 1

    @property
    def incoming(self) -> bool:
        """Travels towards the origin from its own side."""
        return (self.side == "l") == (self.direction > 0)

    @property
    def label(self) -> str:
        arrow = "R" if self.direction > 0 else "L"
        return f"{self.side}{self.branch}{arrow}"


@dataclass(frozen=True)
class Fiber:
    theta: float
    channels: tuple[Channel, ...]

    @property
    def dim(self) -> int:
        return len(self.channels)

    def index(self, side: str, direction: int) -> int:
        for i, c in enumerate(self.channels):
            if c.side == side and c.direction == direction:
                return i
        raise KeyError((side, direction))


@dataclass(frozen=True)
class FiberVector:
    fiber: Fiber
    coefficients: np.ndarray

    def inner(self, other: "FiberVector") -> complex:
        return complex(np.vdot(other.coefficients, self.coefficients))


@dataclass(frozen=True)
class CoreSpectrum:
    thresholds: tuple[float, ...]
    intervals: tuple[tuple[float, float, int], ...]

    @property
    def arcs(self) -> tuple[tuple[float, float], ...]:
        return tuple((a, b) for a, b, m in self.intervals if m > 0)

    def multiplicity(self, theta: float) -> int:
        t = float(np.mod(theta, TWO_PI))
        for a, b, m in self.intervals:
            if (a <= t < b) or (b > TWO_PI and t + TWO_PI < b):
                return m
        return self.intervals[-1][2]

    def contains(self, theta: float, inflate: float = 0.0) -> bool:
        """Whether ``theta`` lies on a spectral arc enlarged by ``inflate``."""
        t = float(np.mod(theta, TWO_PI))
        for a, b in self.arcs:
            if b - a >= TWO_PI:
                return True
            if np.mod(t - a + inflate, TWO_PI) <= (b - a) + 2 * inflate:
                return True
        return False


class FreeSpectrum:
    """Band tables, thresholds, fibers and the spectral transform of ``U0``.

    Parameters
    ----------
    left, right : CoinParams
        Asymptotic coins of the two free walks.
    n_k : int
        Momentum grid size for band tables.
    exclusion : float
        Minimum distance to thresholds for fibers.
    """

    def __init__(self, left: CoinParams, right: CoinParams, n_k: int = 1024,
                 exclusion: float = DEFAULT_EXCLUSION):
        self.coins = {"l": left, "r": right}
        self.n_k = n_k
        self.exclusion = exclusion
        self.bands = {}
        for side in SIDES:
            b1, b2 = band_functions(self.coins[side], n_k, side)
            self.bands[(side, 1)] = b1
            self.bands[(side, 2)] = b2
        self._zeros = {key: self._velocity_zeros(key) for key in self.bands}
        self.thresholds = self._thresholds()
        self.max_speed = float(max(np.abs(b.velocity).max() for b in self.bands.values()))
        self._core: CoreSpectrum | None = None

    # -- thresholds -------------------------------------------------------
    def _velocity_zeros(self, key) -> list[float]:
        side, branch = key
        band = self.bands[key]
        coin = self.coins[side]
        v = band.velocity
        n = v.size
        h = TWO_PI / n

        def vel(kk):
            return float(branch_eigenpairs(coin, kk, branch)[2])

        zeros = []
        for i in range(n):
            if v[i] * v[(i + 1) % n] > 0:
                continue
            # the grid velocity only locates the cell; signs are re-read from the
            # analytic velocity, which can disagree at roundoff level near an edge
            lo, hi = band.k[i], band.k[i] + h
            flo, fhi = vel(lo), vel(hi)
            if abs(flo) < 1e-13 or abs(fhi) < 1e-13:
                zeros.append(float(np.mod(lo if abs(flo) <= abs(fhi) else hi, TWO_PI)))
                continue
            if flo * fhi > 0:
                lo, hi = lo - h, hi + h
                if vel(lo) * vel(hi) > 0:
                    continue
            zeros.append(float(np.mod(_bisect(vel, lo, hi), TWO_PI)))
        uniq: list[float] = []
        for z in sorted(zeros):
            if all(circular_distance(z, u) > 1e-9 for u in uniq):
                uniq.append(z)
        return uniq

    def _thresholds(self) -> tuple[float, ...]:
        out: list[float] = []
        for (side, branch), zs in self._zeros.items():
            for kz in zs:
                lam = float(np.mod(branch_eigenpairs(self.coins[side], kz, branch)[0], TWO_PI))
                if all(circular_distance(lam, t) > 1e-10 for t in out):
                    out.append(lam)
        return tuple(sorted(out))

    def nearest_threshold(self, theta: float) -> tuple[float, float]:
        if not self.thresholds:
            return math.inf, math.nan
        d = circular_distance(theta, np.array(self.thresholds))
        i = int(np.argmin(d))
        return float(d[i]), self.thresholds[i]

    # -- fibers -----------------------------------------------------------
    def _segments(self, key) -> list[tuple[float, float]]:
        zs = self._zeros[key]
        if not zs:
            return [(0.0, TWO_PI)]
        return [(zs[i], zs[(i + 1) % len(zs)] + (TWO_PI if i == len(zs) - 1 else 0.0)) for i in range(len(zs))]

    def _roots(self, key, theta: float) -> list[float]:
        side, branch = key
        coin = self.coins[side]

        def h(kk):
            return float(wrap_angle(branch_eigenpairs(coin, kk, branch)[0] - theta))

        roots = []
        for lo, hi in self._segments(key):
            m = max(8, int(np.ceil((hi - lo) / TWO_PI * self.n_k)))
            grid = np.linspace(lo, hi, m + 1)
            vals = wrap_angle(branch_eigenpairs(coin, grid, branch)[0] - theta)
            for i in range(m):
                a, b = vals[i], vals[i + 1]
                if a == 0.0:
                    roots.append(float(np.mod(grid[i], TWO_PI)))
                elif a * b < 0 and abs(a) < np.pi / 2 and abs(b) < np.pi / 2:
                    roots.append(float(np.mod(_bisect(h, grid[i], grid[i + 1]), TWO_PI)))
        uniq: list[float] = []
        for r in sorted(roots):
            if all(circular_distance(r, u) > 1e-9 for u in uniq):
                uniq.append(r)
        return uniq

    def fiber_at(self, theta: float, exclusion: float | None = None) -> Fiber:
        """Channels at angle ``theta``.

        Raises
        ------
        ThresholdProximityError
            If ``theta`` lies within the exclusion radius of a threshold.
        """
        excl = self.exclusion if exclusion is None else exclusion
        dist, nearest = self.nearest_threshold(theta)
        if dist < excl:
            raise ThresholdProximityError(
                f"theta={theta:.9g} lies {dist:.3g} rad from threshold {nearest:.9g}", theta, nearest
            )
        theta = float(np.mod(theta, TWO_PI))
        channels = []
        for side in SIDES:
            for branch in (1, 2):
                for kk in self._roots((side, branch), theta):
                    _, vec, vel = branch_eigenpairs(self.coins[side], kk, branch)
                    channels.append(Channel(side, branch, kk, vec, float(vel)))
        return Fiber(theta, tuple(channels))

    def core_spectrum(self) -> CoreSpectrum:
        if self._core is None:
            self._core = self._build_core()
        return self._core

    def _build_core(self) -> CoreSpectrum:
        ts = list(self.thresholds)
        if not ts:
            m = self.fiber_at(0.1234, exclusion=0.0).dim
            return CoreSpectrum((), ((0.0, TWO_PI, m),))
        intervals = []
        for i, a in enumerate(ts):
            b = ts[(i + 1) % len(ts)] + (TWO_PI if i == len(ts) - 1 else 0.0)
            mid = 0.5 * (a + b)
            intervals.append((a, b, self.fiber_at(mid, exclusion=0.0).dim))
        return CoreSpectrum(tuple(ts), tuple(intervals))

    # -- spectral transform -------------------------------------------------
    def f0_apply(self, psi0, theta: float, fiber: Fiber | None = None) -> FiberVector:
        """Spectral transform ``(F0 psi0)(theta)``.

        Each channel ``(side, j, k)`` contributes
        ``(2 pi)^{-1/2} |v|^{-1/2} <u_j(k), psi0_hat_side(k)>`` where the hat is
        the windowed discrete-time Fourier transform.  ``psi0`` may be a
        :class:`DirectSumState`, a flat H0 vector or a 2-D array of columns.
        """
        fiber = fiber or self.fiber_at(theta)
        flat = psi0.flat if isinstance(psi0, _State) else np.asarray(psi0, dtype=complex)
        half = flat.shape[0] // 2
        sites_n = half // 2
        L = (sites_n - 1) // 2
        x = np.arange(-L, L + 1)
        cols = flat.reshape(2, sites_n, 2, -1)  # slot, site, component, column
        coeffs = np.zeros((fiber.dim, cols.shape[-1]), dtype=complex)
        for i, ch in enumerate(fiber.channels):
            slot = 0 if ch.side == "l" else 1
            phase = np.exp(-1j * ch.k * x)
            hat = np.einsum("x,xcm->cm", phase, cols[slot])
            coeffs[i] = (ch.vector.conj() @ hat) / math.sqrt(TWO_PI * abs(ch.velocity))
        if flat.ndim == 1:
            coeffs = coeffs[:, 0]
        return FiberVector(fiber, coeffs)

    # -- wave packets -------------------------------------------------------
    def _segment_containing(self, key, k: float) -> tuple[float, float]:
        for lo, hi in self._segments(key):
            kk = k if k >= lo else k + TWO_PI
            if lo <= kk <= hi:
                return lo, hi
        return self._segments(key)[0]

    def wave_packet(self, window: LatticeWindow, channel: Channel, theta: float, sigma: float,
                    x0: float = 0.0) -> DirectSumState:
        """Normalized packet whose transform is a Gaussian bump in one channel.

        The amplitude in angle is ``exp(-(lambda - theta)^2 / (2 sigma^2))``; the
        momentum-space profile carries the ``|v|^{1/2}`` Jacobian and a
        parallel-transported eigenvector, aligned with the deterministic gauge
        at the channel momentum.  ``x0`` (real) shifts the packet centre.

        Raises
        ------
        PacketSpreadError
            If the position spread exceeds a quarter of the window or the
            packet does not fit inside it.
        """
        L = window.half_width
        spread = abs(channel.velocity) / (sigma * math.sqrt(2.0))
        if spread > L / 4.0:
            raise PacketSpreadError(f"packet spread {spread:.1f} sites exceeds L/4 = {L / 4:.1f}")
        if abs(x0) + 8.0 * spread > L:
            raise PacketSpreadError(f"packet at x0={x0} with spread {spread:.1f} does not fit in L={L}")
        key = (channel.side, channel.branch)
        coin = self.coins[channel.side]
        lo, hi = self._segment_containing(key, channel.k)
        M = 1 << int(np.ceil(np.log2(max(8 * window.site_count, 8192))))
        kgrid = TWO_PI * np.arange(M) / M
        rel = np.mod(kgrid - lo, TWO_PI)
        inside = rel <= (hi - lo)
        ks = lo + rel[inside]
        order = np.argsort(ks)
        ks = ks[order]
        idx = np.nonzero(inside)[0][order]
        ph, vec, vel = branch_eigenpairs(coin, ks, channel.branch)
        # parallel transport starting from the grid point nearest to k*
        kstar = channel.k if channel.k >= lo else channel.k + TWO_PI
        m0 = int(np.argmin(np.abs(ks - kstar)))
        steps = np.einsum("ij,ij->i", vec[:-1].conj(), vec[1:])
        ang = np.concatenate([[0.0], np.cumsum(np.angle(steps))])
        vec = vec * np.exp(-1j * (ang - ang[m0]))[:, None]
        vec = vec * (np.vdot(vec[m0], channel.vector) / abs(np.vdot(vec[m0], channel.vector)))
        amp = np.exp(-0.5 * (wrap_angle(ph - theta) / sigma) ** 2) * np.sqrt(np.abs(vel))
        hat = np.zeros((M, 2), dtype=complex)
        hat[idx] = (amp * np.exp(-1j * ks * x0))[:, None] * vec
        full = np.fft.ifft(hat, axis=0)
        x = window.sites
        psi = full[np.mod(x, M)]
        psi = psi / np.linalg.norm(psi)
        zero = SpinorState.zeros(window)
        state = SpinorState(window, psi)
        return DirectSumState(state, zero) if channel.side == "l" else DirectSumState(zero, state)


def channel_for(fiber: Fiber, side: str, direction: int) -> Channel:
    """Channel on ``side`` moving in physical ``direction`` (+1 right, -1 left)."""
    return fiber.channels[fiber.index(side, direction)]


# module-level conveniences taking any object exposing ``.free`` and ``.window``

def thresholds(model) -> tuple[float, ...]:
    return model.free.thresholds


def core_spectrum(model) -> CoreSpectrum:
    return model.free.core_spectrum()


def fiber_at(model, theta: float, exclusion: float | None = None) -> Fiber:
    return model.free.fiber_at(theta, exclusion)


def f0_apply(model, psi0, theta: float, fiber: Fiber | None = None) -> FiberVector:
    return model.free.f0_apply(psi0, theta, fiber)


def wave_packet(model, channel: Channel, theta: float, sigma: float, x0: float = 0.0) -> DirectSumState:
    return model.free.wave_packet(model.window, channel, theta, sigma, x0)
