import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_unitary
from uniscatter.errors import PreconditionError
from uniscatter.operators import WindowedOperator, op_norm
from uniscatter.resolvent import (
    EpsSchedule,
    RadialPoint,
    boundary_density,
    cayley,
    delta_apply,
    poisson_mass,
    resolvent_apply,
    richardson,
)
from scipy.sparse.linalg import LinearOperator

TWO_PI = 2 * math.pi


def _vec(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def test_resolvent_matches_dense_inverse(rng):
    U = random_unitary(12, 3)
    z = 0.7 * np.exp(0.4j)
    v = _vec(rng, 12)
    oracle = np.linalg.solve(np.eye(12) - z * U.to_dense().conj().T, v)
    assert np.allclose(resolvent_apply(U, z, v).x, oracle, atol=1e-13)


def test_geometric_series_inside(rng):
    U = random_unitary(8, 4)
    z = 0.3 * np.exp(1.1j)
    v = _vec(rng, 8)
    term, total = v.copy(), v.copy()
    for _ in range(60):
        term = z * U.rmatvec(term)
        total += term
    assert np.linalg.norm(resolvent_apply(U, z, v).x - total) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(1.05, 4.0), st.floats(0, TWO_PI), st.floats(0, TWO_PI))
def test_first_resolvent_equation(r1, r2, t1, t2):
    U = random_unitary(10, 5)
    v = np.arange(10) + 1j
    z1, z2 = r1 * np.exp(1j * t1), r2 * np.exp(1j * t2)
    lhs = resolvent_apply(U, z1, v).x - resolvent_apply(U, z2, v).x
    rhs = (z1 - z2) * resolvent_apply(U, z1, U.rmatvec(resolvent_apply(U, z2, v).x)).x
    assert np.linalg.norm(lhs - rhs) <= 1e-9 * max(1.0, np.linalg.norm(lhs))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0, TWO_PI))
def test_delta_symmetry_and_positivity(r, theta):
    U = random_unitary(10, 6)
    v = np.cos(np.arange(10)) + 1j * np.sin(np.arange(10) ** 2)
    inside = delta_apply(U, RadialPoint(1 - r, 1, theta), v)
    outside = delta_apply(U, RadialPoint(1 - r, -1, theta), v)
    assert np.linalg.norm(inside + outside) <= 1e-10 * max(1.0, np.linalg.norm(inside))
    assert np.vdot(v, inside).real >= -1e-12


def test_poisson_mass_scalar():
    U = WindowedOperator.dense(np.array([[np.exp(0.7j)]]), unitary=True)
    assert poisson_mass(U, 0.5, np.array([1.0 + 0j]), 1024) == pytest.approx(1.0, abs=1e-12)


def test_poisson_mass_rejects_bad_nodes():
    U = random_unitary(4, 1)
    with pytest.raises(PreconditionError):
        poisson_mass(U, 0.5, np.ones(4, complex), 1000)
    with pytest.raises(PreconditionError):
        poisson_mass(U, 1.0, np.ones(4, complex), 1024)


def test_delta_norm_at_eigenphase():
    # diagonal unitary: e^{i theta} is an eigenvalue, so the norm bound is attained
    phases = np.array([0.3, 1.9, 4.0])
    U = WindowedOperator.dense(np.diag(np.exp(1j * phases)), unitary=True)
    pt = RadialPoint(0.5, 1, 1.9)
    D = LinearOperator((3, 3), matvec=lambda x: delta_apply(U, pt, x), rmatvec=lambda x: delta_apply(U, pt, x),
                       dtype=complex)
    assert op_norm(D) == pytest.approx(3 / TWO_PI, abs=1e-10)


def test_boundary_density_of_diagonal_unitary():
    # <delta(r, theta) v, v> tends to the Poisson-smoothed spectral weight; off the spectrum it vanishes
    phases = np.array([0.3, 1.9])
    U = WindowedOperator.dense(np.diag(np.exp(1j * phases)), unitary=True)
    v = np.array([1.0, 1.0], complex)
    res = boundary_density(U, 3.0, v, v, EpsSchedule((0.04, 0.02, 0.01), 2))
    assert abs(res.value) < 1e-4


def test_richardson_removes_linear_term():
    steps = [0.04, 0.02, 0.01]
    ext = richardson(steps, [2.0 + 3 * h for h in steps], 1)
    assert ext.value == pytest.approx(2.0, abs=1e-14)
    assert len(ext.sequence) == 3


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.integers(0, 2))
def test_richardson_exact_on_polynomials(coef, order):
    steps = [0.08, 0.04, 0.02]
    vals = [sum(c * h**k for k, c in enumerate(coef[: order + 1])) for h in steps]
    assert richardson(steps, vals, order).value == pytest.approx(coef[0], abs=1e-9)


def test_cayley_relation():
    res = cayley(random_unitary(16, 11), n_test=8, seed=2)
    assert res.relation_residual <= 1e-8
    assert np.allclose(res.hamiltonian, res.hamiltonian.conj().T, atol=1e-8)
