"""Stationary scattering of a compact coin defect by 2x2 transfer matrices.

Independent of the package's resolvent and packet machinery: it solves
``U psi = e^{i theta} psi`` site by site and reads probabilities from the
one-step probability current across a bond.
"""

import numpy as np


def transfer(coin_x, coin_next, theta):
    """Map ``psi(x) -> psi(x + 1)`` for an eigenfunction with eigenvalue ``e^{i theta}``."""
    e = np.exp(1j * theta)
    T = np.zeros((2, 2), complex)
    T[1, :] = coin_x[1, :] / e
    T[0, :] = (e * np.array([1.0, 0.0]) - coin_next[0, 1] * T[1, :]) / coin_next[0, 0]
    return T


def current(coin, w, lam):
    # rightward flux |(C psi)(x)_1|^2 minus leftward flux |(C psi)(x+1)_0|^2
    return abs((coin @ w)[1]) ** 2 - abs((coin @ (lam * w))[0]) ** 2


def transmission(bulk, table, theta, reach=4):
    """Transmission and reflection probabilities for a wave incoming from the left."""
    def coin(x):
        return table.get(x, bulk)

    M = np.eye(2, dtype=complex)
    for x in range(-reach, reach):
        M = transfer(coin(x), coin(x + 1), theta) @ M
    lam, W = np.linalg.eig(transfer(bulk, bulk, theta))
    J = [current(bulk, W[:, i], lam[i]) for i in range(2)]
    right = int(np.argmax(J))
    left = 1 - right
    A = np.column_stack([M @ W[:, left], -W[:, right]])
    r, t = np.linalg.solve(A, -M @ W[:, right])
    return abs(t) ** 2, abs(r) ** 2 * abs(J[left]) / J[right]
