import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uniscatter.coins import CoinField, CoinGenerator, CoinParams, DecayBound, build_coin_matrix, check_short_range
from uniscatter.errors import CoinConstraintError, DimensionMismatchError, PreconditionError
from uniscatter.operators import DirectSumState, LatticeWindow, SpinorState, WindowedOperator, hs_norm, op_norm
from uniscatter.resolvent import resolvent_apply
from uniscatter.walk import build_walk, uniform_model

phase = st.floats(-math.pi + 1e-9, math.pi)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 1), phase, phase, phase)
def test_coin_is_unitary_with_unit_determinant_phase(a, alpha, beta, delta):
    C = CoinParams.from_a(a, alpha, beta, delta).matrix
    assert np.abs(C.conj().T @ C - np.eye(2)).max() < 1e-14
    assert abs(np.linalg.det(C) - np.exp(1j * delta)) < 1e-14


def test_coin_constraint_rejects_bad_amplitudes():
    with pytest.raises(CoinConstraintError):
        CoinParams(0.8, 0.8)
    with pytest.raises(CoinConstraintError):
        CoinField(CoinParams.identity(), CoinParams.identity(), {0: 2 * np.eye(2)})


def test_hadamard_coin_entries():
    C = CoinParams.hadamard().matrix
    assert np.allclose(C, np.array([[1, 1], [1, -1]]) / math.sqrt(2), atol=1e-15)


def test_window_indexing():
    w = LatticeWindow(4)
    assert w.index(-4, 0) == 0 and w.index(4, 1) == w.dim - 1
    with pytest.raises(PreconditionError):
        w.index(5)
    with pytest.raises(PreconditionError):
        LatticeWindow(3)


def test_states_and_radii():
    w = LatticeWindow(32)
    s = SpinorState.delta(w, 5, 1)
    assert s.support_radius() == 5 and s.essential_radius() == 5
    d = DirectSumState(SpinorState.zeros(w), s)
    assert d.norm() == 1.0 and DirectSumState.from_flat(w, d.flat).essential_radius() == 5


def test_walk_operator_unitary_on_window(rng):
    model = uniform_model(CoinParams.from_a(0.6, 0.2, -0.4, 1.0), 16)
    Ud = model.U.to_dense()
    assert np.abs(Ud.conj().T @ Ud - np.eye(Ud.shape[0])).max() < 1e-14


def test_banded_resolvent_against_dense_solve(rng):
    # periodic band is folded before the LAPACK banded factorization
    model = uniform_model(CoinParams.hadamard(), 16)
    v = rng.standard_normal(model.window.dim) + 0j
    z = 0.9 * np.exp(2.1j)
    oracle = np.linalg.solve(np.eye(v.size) - z * model.U.to_dense().conj().T, v)
    assert np.allclose(resolvent_apply(model.U, z, v).x, oracle, atol=1e-12)
    z_out = 1.3 * np.exp(-0.5j)
    oracle = np.linalg.solve((np.eye(v.size) - z_out * model.U.to_dense().conj().T).conj().T, v)
    assert np.allclose(resolvent_apply(model.U, z_out, v, adjoint=True).x, oracle, atol=1e-12)


def test_norms(rng):
    M = rng.standard_normal((9, 7)) + 1j * rng.standard_normal((9, 7))
    A = WindowedOperator.dense(M)
    assert op_norm(A) == pytest.approx(np.linalg.norm(M, 2), rel=1e-9)
    assert hs_norm(A) == pytest.approx(np.linalg.norm(M), rel=1e-14)
    with pytest.raises(DimensionMismatchError):
        A.matvec(np.ones(8))


def test_generator_decays_and_short_range_check():
    gen = CoinGenerator((0.2, 1.0, -0.5, 0.3), 0.5, 0.5, 0.5, 0.5)
    cf = CoinField(CoinParams.hadamard(), CoinParams.from_a(0.8), generator=gen,
                   decay_left=DecayBound(1.0, 0.5), decay_right=DecayBound(1.0, 0.5))
    rep = check_short_range(cf, 256)
    assert rep.passes
    assert rep.right.fitted_exponent == pytest.approx(-1.5, abs=0.05)
    model = build_walk(cf, LatticeWindow(128))
    assert model.factorization.residual <= 1e-12


def test_build_coin_matrix_checks_norm():
    p = object.__new__(CoinParams)
    for name, val in dict(a=0.8, b=0.8, alpha=0.0, beta=0.0, delta=0.0).items():
        object.__setattr__(p, name, val)  # skip the constructor check
    with pytest.raises(CoinConstraintError):
        build_coin_matrix(p)
