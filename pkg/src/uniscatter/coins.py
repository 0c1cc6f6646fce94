"""Coin matrices and site-dependent coin fields.

A coin is parameterized by ``(a, b, alpha, beta, delta)`` with
``a^2 + b^2 = 1``; the resulting 2x2 matrix is unitary with determinant
``e^{i delta}``.  A :class:`CoinField` assigns a coin to every site: the left
asymptote for ``x < 0``, the right asymptote for ``x >= 0``, overridden by an
explicit deviation table or by a decaying generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import CoinConstraintError, PreconditionError

_PAULI = np.array(
    [
        [[1, 0], [0, 1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)


@dataclass(frozen=True)
class CoinParams:
    """Asymptotic coin parameters.

    Parameters
    ----------
    a, b : float
        Non-negative mixing amplitudes with ``a^2 + b^2 = 1``.
    alpha, beta, delta : float
        Phases in ``(-pi, pi]``.
    """

    a: float
    b: float
    alpha: float = 0.0
    beta: float = 0.0
    delta: float = 0.0

    def __post_init__(self) -> None:
        problems = []
        for name in ("a", "b"):
            val = getattr(self, name)
            if not -1e-15 <= val <= 1.0 + 1e-15:
                problems.append(f"{name}={val} outside [0, 1]")
        if abs(self.a**2 + self.b**2 - 1.0) > 1e-12:
            problems.append(f"a^2 + b^2 = {self.a**2 + self.b**2!r} differs from 1")
        for name in ("alpha", "beta", "delta"):
            val = getattr(self, name)
            if not -math.pi < val <= math.pi + 1e-15:
                problems.append(f"{name}={val} outside (-pi, pi]")
        if problems:
            raise CoinConstraintError("; ".join(problems))

    @classmethod
    def from_a(cls, a: float, alpha: float = 0.0, beta: float = 0.0, delta: float = 0.0) -> "CoinParams":
        return cls(a, math.sqrt(max(0.0, 1.0 - a * a)), alpha, beta, delta)

    @classmethod
    def identity(cls) -> "CoinParams":
        return cls(1.0, 0.0)

    @classmethod
    def hadamard(cls) -> "CoinParams":
        s = 1.0 / math.sqrt(2.0)
        return cls(s, s, 0.0, 0.0, math.pi)

    @property
    def matrix(self) -> np.ndarray:
        return build_coin_matrix(self)


def build_coin_matrix(p: CoinParams) -> np.ndarray:
    """Unitary 2x2 coin for the given parameters."""
    if abs(p.a**2 + p.b**2 - 1.0) > 1e-12:
        raise CoinConstraintError("a^2 + b^2 must equal 1")
    h = p.delta / 2.0
    ea = np.exp(1j * (p.alpha - h))
    eb = np.exp(1j * (p.beta - h))
    return np.exp(1j * h) * np.array(
        [[p.a * ea, p.b * eb], [-p.b * np.conj(eb), p.a * np.conj(ea)]], dtype=complex
    )


def hermitian_seed(pauli: Sequence[float]) -> np.ndarray:
    """Hermitian 2x2 matrix from Pauli coefficients, scaled to spectral norm 1."""
    coeffs = np.asarray(pauli, dtype=float)
    if coeffs.shape != (4,):
        raise PreconditionError("seed needs four Pauli coefficients")
    H = np.tensordot(coeffs, _PAULI, axes=1)
    nrm = np.linalg.norm(H, 2)
    if nrm == 0.0:
        raise PreconditionError("seed matrix must be nonzero")
    return H / nrm


@dataclass(frozen=True)
class DecayBound:
    """Declared envelope ``||C(x) - C_side|| <= kappa |x|^{-1-eps}``."""

    kappa: float = 1.0
    eps: float = 1.0

    def __post_init__(self) -> None:
        if self.kappa <= 0 or self.eps <= 0:
            raise PreconditionError("decay constants must be positive")

    def envelope(self, x) -> np.ndarray:
        return self.kappa * np.abs(np.asarray(x, dtype=float)) ** (-1.0 - self.eps)


@dataclass(frozen=True)
class CoinGenerator:
    """Decaying deviation ``C(x) = C_side expm(i kappa <x>^{-1-eps} H)``."""

    seed: tuple[float, float, float, float]
    kappa_left: float
    kappa_right: float
    eps_left: float
    eps_right: float

    def coin(self, x: int, asymptote: np.ndarray) -> np.ndarray:
        kappa, eps = (self.kappa_left, self.eps_left) if x < 0 else (self.kappa_right, self.eps_right)
        amp = kappa * (1.0 + x * x) ** (-(1.0 + eps) / 2.0)
        return asymptote @ expm(1j * amp * hermitian_seed(self.seed))


def _as_coin(value) -> np.ndarray:
    if isinstance(value, CoinParams):
        return value.matrix
    mat = np.asarray(value, dtype=complex)
    if mat.shape != (2, 2):
        raise CoinConstraintError("a table coin must be a 2x2 matrix")
    if np.abs(mat.conj().T @ mat - np.eye(2)).max() > 1e-13:
        raise CoinConstraintError("table coin is not unitary within 1e-13")
    return mat


@dataclass(frozen=True, eq=False)
class CoinField:
    """Site-dependent coin with left/right asymptotes."""

    left: CoinParams
    right: CoinParams
    table: Mapping[int, np.ndarray] = field(default_factory=dict)
    generator: CoinGenerator | None = None
    decay_left: DecayBound = DecayBound()
    decay_right: DecayBound = DecayBound()

    def __post_init__(self) -> None:
        object.__setattr__(self, "table", {int(x): _as_coin(c) for x, c in dict(self.table).items()})

    @classmethod
    def uniform(cls, coin: CoinParams) -> "CoinField":
        return cls(coin, coin)

    def asymptote(self, x: int) -> np.ndarray:
        return self.left.matrix if x < 0 else self.right.matrix

    def coin_at(self, x: int) -> np.ndarray:
        if x in self.table:
            return self.table[x]
        base = self.asymptote(x)
        if self.generator is not None:
            return self.generator.coin(x, base)
        return base

    def coins(self, sites: np.ndarray) -> np.ndarray:
        return np.stack([self.coin_at(int(x)) for x in sites])

    @property
    def table_radius(self) -> int:
        return max((abs(x) for x in self.table), default=0)

    def deviation(self, x: int) -> float:
        return float(np.linalg.norm(self.coin_at(x) - self.asymptote(x), 2))


@dataclass(frozen=True)
class SideReport:
    side: str
    sites: np.ndarray
    deviations: np.ndarray
    declared: DecayBound
    passes: bool
    violations: tuple[int, ...]
    fitted_exponent: float | None
    fitted_kappa: float | None


@dataclass(frozen=True)
class ShortRangeReport:
    left: SideReport
    right: SideReport

    @property
    def passes(self) -> bool:
        return self.left.passes and self.right.passes


def check_short_range(cf: CoinField, extent: int = 512) -> ShortRangeReport:
    """Verify the declared decay envelopes site by site and fit the observed decay.

    The fit is a least-squares line of ``log ||C(x) - C_side||`` against
    ``log |x|`` over sites with nonzero deviation and ``|x| >= 4``; the slope is
    the fitted exponent (``-1 - eps``) and the fitted constant is the smallest
    ``kappa`` that covers every site for that exponent.
    """
    reports = []
    for side, sign, bound in (("left", -1, cf.decay_left), ("right", 1, cf.decay_right)):
        mags = np.arange(1, extent + 1)
        dev = np.array([cf.deviation(int(sign * m)) for m in mags])
        env = bound.envelope(mags)
        bad = tuple(int(sign * m) for m, d, e in zip(mags, dev, env) if d > e * (1 + 1e-12))
        mask = (dev > 1e-15) & (mags >= 4)
        slope = kappa = None
        if mask.sum() >= 3:
            slope, _ = np.polyfit(np.log(mags[mask]), np.log(dev[mask]), 1)
            slope = float(slope)
            kappa = float(np.max(dev[dev > 0] * mags[dev > 0] ** (-slope)))
        reports.append(SideReport(side, sign * mags, dev, bound, not bad, bad, slope, kappa))
    return ShortRangeReport(*reports)
