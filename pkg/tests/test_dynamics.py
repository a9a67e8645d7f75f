import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpiston.basis import effective_hamiltonian, overlap_matrix
from qpiston.dynamics import (
    ConstantVelocity,
    Replay,
    SelfConsistent,
    amplitude_derivatives,
    choose_time_step,
    dephase,
    friction_factor,
    pressure,
    replay_interpolation_error,
    simulate,
    step,
    von_neumann_derivative,
    wall_derivatives,
)
from qpiston.errors import ConfigurationError, InstabilityError, InvalidStateError, WallCrashError
from qpiston.state import MixedState, PureState, SimParams, WallState, eigenstate, ground_state, populations

PI2 = np.pi**2


def random_state(K, seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=K) + 1j * rng.normal(size=K)
    return c / np.linalg.norm(c)


def random_density(K, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(K, K)) + 1j * rng.normal(size=(K, K))
    rho = A @ A.conj().T
    return rho / np.trace(rho)


@pytest.mark.parametrize(
    "state,L,expected",
    [(ground_state(5), 1.0, PI2), (eigenstate(2, 5), 1.0, 4 * PI2), (ground_state(5), 2.0, PI2 / 8)],
)
def test_pressure_examples(state, L, expected):
    assert pressure(state, L, SimParams()) == pytest.approx(expected, rel=1e-13)


def test_pressure_rejects_crashed_wall():
    with pytest.raises(InvalidStateError):
        pressure(ground_state(3), 0.0, SimParams(K=3))


def test_wall_balance_and_push():
    U = PI2 / 2
    assert wall_derivatives(WallState(1.0, 0.0), U, SimParams(external_pressure=PI2))[1] == pytest.approx(0.0, abs=1e-12)
    dV = wall_derivatives(WallState(1.0, 0.0), U, SimParams(external_pressure=1.1 * PI2))[1]
    assert dV == pytest.approx(-2 * PI2, rel=1e-12)


@pytest.mark.parametrize("mode,V,expected", [
    ("expansion_only", -1.0, 0.0), ("expansion_only", 1.0, 1.0), ("expansion_only", 0.0, 0.0),
    ("symmetric", -1.0, 1.0), ("none", 3.0, 0.0),
])
def test_friction_factor(mode, V, expected):
    assert friction_factor(V, mode) == expected


def test_compression_with_expansion_only_friction_is_undamped():
    p = SimParams(external_pressure=PI2, gamma=10.0)
    _, dV = wall_derivatives(WallState(1.0, -1.0), PI2 / 2, p)
    assert dV == pytest.approx(0.0, abs=1e-12)


def test_amplitude_derivative_examples():
    I = overlap_matrix(2)
    d = amplitude_derivatives(np.array([1.0, 0.0]), 1.0, 1.0, I)
    assert d[1] == pytest.approx(4 / 3)
    d0 = amplitude_derivatives(np.array([0.6, 0.8]), 1.3, 0.0, I)
    assert np.allclose(d0, -1j * np.array([1, 4]) * PI2 / (2 * 1.3**2) * np.array([0.6, 0.8]))


def test_amplitude_derivative_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        amplitude_derivatives(np.ones(3), 1.0, 0.0, overlap_matrix(4))


@settings(max_examples=40, deadline=None)
@given(K=st.integers(2, 30), seed=st.integers(0, 2**16), L=st.floats(0.1, 5), V=st.floats(-50, 50))
def test_amplitude_derivative_preserves_norm(K, seed, L, V):
    c = random_state(K, seed)
    I = overlap_matrix(K)
    d = amplitude_derivatives(c, L, V, I)
    assert abs(np.vdot(c, d).real) <= 1e-12 * max(1.0, np.abs(d).max())
    # same generator as -i H* c
    assert np.allclose(d, -1j * effective_hamiltonian(L, V, I) @ c, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(K=st.integers(2, 12), seed=st.integers(0, 2**16), V=st.floats(-10, 10))
def test_von_neumann_derivative_traceless_hermitian(K, seed, V):
    rho = random_density(K, seed)
    d = von_neumann_derivative(rho, effective_hamiltonian(1.2, V, overlap_matrix(K)))
    assert abs(np.trace(d)) < 1e-10
    assert np.allclose(d, d.conj().T, atol=1e-10)


def test_dephase_decay_factor():
    rho = np.array([[0.5, 0.3], [0.3, 0.5]], complex)
    H = effective_hamiltonian(1.0, 0.0, overlap_matrix(2))
    out = dephase(rho, H, 10.0, 0.01)
    assert abs(out[0, 1]) == pytest.approx(0.3 * np.exp(-0.05), rel=1e-12)
    assert abs(out[0, 1]) == pytest.approx(0.28537, abs=1e-5)
    assert np.allclose(np.diag(out), [0.5, 0.5])


def test_dephase_identity_cases():
    K = 4
    H = effective_hamiltonian(1.1, 0.7, overlap_matrix(K))
    rho = random_density(K, 1)
    assert np.array_equal(dephase(rho, H, 0.0, 0.1), rho)
    _, W = np.linalg.eigh(H)
    diag_in_eigenbasis = W @ np.diag([0.4, 0.3, 0.2, 0.1]) @ W.conj().T
    assert np.allclose(dephase(diag_in_eigenbasis, H, 50.0, 0.3), diag_in_eigenbasis, atol=1e-13)


def test_dephase_rejects_non_hermitian_generator():
    with pytest.raises(InvalidStateError):
        dephase(np.eye(2) / 2, np.array([[1.0, 1.0], [0.0, 2.0]]), 1.0, 0.1)


@settings(max_examples=30, deadline=None)
@given(K=st.integers(2, 10), seed=st.integers(0, 2**16), G=st.floats(0, 100), dt=st.floats(1e-5, 0.1))
def test_dephase_keeps_state_valid(K, seed, G, dt):
    H = effective_hamiltonian(0.9, 1.3, overlap_matrix(K))
    out = dephase(random_density(K, seed), H, G, dt)
    MixedState(out).validate()
    assert np.trace(out).real == pytest.approx(1.0, abs=1e-12)


def test_static_wall_keeps_populations():
    p = SimParams(K=6, T=0.05, dt=1e-4)
    tr = simulate(p, ConstantVelocity(0.0), PureState(random_state(6, 3)))
    assert np.allclose(tr.populations, tr.populations[0], atol=1e-10)
    assert np.allclose(tr.L, 1.0)


def test_single_step_returns_new_state():
    p = SimParams(K=5, dt=1e-4, external_pressure=1.1 * PI2)
    state, wall = step(ground_state(5), WallState(1.0, 0.0), p)
    assert wall.V < 0
    assert np.linalg.norm(state.c) == pytest.approx(1.0, abs=1e-12)


def _moving_wall_oracle(n, V, t, z):
    """Exact solution for a wall moving at constant V, mapped to the unit box."""
    L = 1.0 + V * t
    return np.sqrt(2.0) * np.sin(n * np.pi * z) * np.exp(1j * (V * L * z**2 / 2 - n**2 * np.pi**2 * t / (2 * L)))


def _project(f, K, order=200):
    z, w = np.polynomial.legendre.leggauss(order)
    z, w = 0.5 * (z + 1), 0.5 * w
    k = np.arange(1, K + 1)[:, None]
    return (np.sqrt(2.0) * np.sin(k * np.pi * z) * f(z)) @ w


@pytest.mark.parametrize("n,V", [(1, 1.0), (2, -0.8)])
def test_constant_velocity_matches_exact_moving_wall(n, V):
    K, T = 40, 0.5
    c0 = _project(lambda z: _moving_wall_oracle(n, V, 0.0, z), K)
    tr = simulate(SimParams(K=K, T=T, dt=5e-5), ConstantVelocity(V), PureState(c0 / np.linalg.norm(c0)),
                  state_stride=10000)
    exact = _project(lambda z: _moving_wall_oracle(n, V, T, z), K)
    assert np.max(np.abs(tr.final_state.c - exact)) < 1e-4
    # the opposite coupling sign would be far off
    wrong = simulate(SimParams(K=K, T=T, dt=5e-5), ConstantVelocity(-V), PureState(c0 / np.linalg.norm(c0)),
                     state_stride=10000)
    assert np.max(np.abs(wrong.final_state.c - exact)) > 0.1


def test_wall_crash_is_an_error():
    with pytest.raises(WallCrashError):
        simulate(SimParams(K=4, T=2.0, dt=1e-3), ConstantVelocity(-1.0))


def test_oversized_step_is_an_instability():
    with pytest.raises(InstabilityError):
        simulate(SimParams(K=20, T=1.0, dt=0.05))


def test_stride_must_divide_steps():
    with pytest.raises(ConfigurationError):
        simulate(SimParams(K=4, T=0.01, dt=1e-3), stride=3)


def test_replay_reproduces_self_consistent_run():
    p = SimParams(K=10, T=0.2, dt=1e-4, external_pressure=1.1 * PI2)
    base = simulate(p)
    again = simulate(p, Replay(base), ground_state(10))
    assert np.max(np.abs(again.final_state.c - base.final_state.c)) <= 1e-6
    assert np.allclose(again.L, base.L, atol=1e-12)
    assert replay_interpolation_error(base) < 1e-8


def test_choose_time_step_halves_until_converged():
    p = SimParams(K=20, T=0.1, dt=1e-3, external_pressure=1.1 * PI2)
    q = choose_time_step(p, SelfConsistent(), ground_state(20))
    assert q.dt <= p.dt
    assert np.log2(p.dt / q.dt) == pytest.approx(round(np.log2(p.dt / q.dt)))


@pytest.mark.parametrize("Gamma", [0.0, 5.0])
def test_mixed_run_keeps_trace_and_positivity(Gamma):
    p = SimParams(K=8, T=0.1, dt=1e-4, dephasing_rate=Gamma, external_pressure=1.1 * PI2)
    tr = simulate(p, SelfConsistent(), MixedState(random_density(8, 2)), state_stride=50)
    for j in range(len(tr.state_index)):
        tr.state_at(j).validate()
    assert np.allclose(tr.populations.sum(axis=1), 1.0, atol=1e-10)
    if Gamma == 0:
        assert np.ptp(tr.purity) < 1e-8


def test_runs_are_deterministic():
    p = SimParams(K=8, T=0.05, dt=1e-4, external_pressure=1.1 * PI2, dephasing_rate=1.0)
    a, b = simulate(p), simulate(p)
    assert np.array_equal(a.L, b.L) and np.array_equal(a.states, b.states)


@settings(max_examples=30, deadline=None)
@given(K=st.integers(2, 10), seed=st.integers(0, 2**16), G=st.floats(0, 100), dt=st.floats(1e-5, 0.1))
def test_dephase_never_raises_purity(K, seed, G, dt):
    rho = random_density(K, seed)
    out = dephase(rho, effective_hamiltonian(1.4, -2.0, overlap_matrix(K)), G, dt)
    assert np.trace(out @ out).real <= np.trace(rho @ rho).real + 1e-14
