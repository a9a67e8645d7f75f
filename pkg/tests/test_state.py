import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpiston.errors import ConfigurationError, DomainError, InvalidStateError
from qpiston.state import (
    MixedState,
    PureState,
    SimParams,
    WallState,
    eigenstate,
    format_state,
    ground_state,
    parse_state,
    partition_function,
    physical_overlap,
    populations,
    purity,
    thermal_state,
    wavefunction,
)


def test_default_params():
    p = SimParams()
    assert (p.wall_mass, p.gamma, p.K, p.dt, p.T) == (0.05, 10.0, 20, 1e-4, 2.0)
    assert p.external_pressure == pytest.approx(np.pi**2)


@pytest.mark.parametrize(
    "field,value",
    [("wall_mass", -1.0), ("particle_mass", 0.0), ("dt", 0.0), ("T", -2.0), ("gamma", -0.1),
     ("dephasing_rate", -1.0), ("external_pressure", -1.0), ("friction_mode", "sticky"), ("K", 1)],
)
def test_params_validation(field, value):
    with pytest.raises(ConfigurationError, match=field):
        SimParams(**{field: value})


def test_params_replace_validates():
    with pytest.raises(ConfigurationError):
        SimParams().replace(dt=-1.0)
    assert SimParams().replace(K=7).K == 7


def test_wall_state_rejects_crash():
    with pytest.raises(InvalidStateError):
        WallState(0.0, 1.0)


def test_pure_state_norm_check():
    with pytest.raises(InvalidStateError):
        PureState(np.array([1.0, 1.0], complex)).validate()


def test_mixed_state_checks():
    with pytest.raises(InvalidStateError):
        MixedState(np.array([[0.5, 0.1], [0.2, 0.5]], complex)).validate()
    with pytest.raises(InvalidStateError):
        MixedState(np.diag([1.2, -0.2]).astype(complex)).validate()


def test_thermal_population_ratio():
    rho, Z = thermal_state(0.1, 1.0, 20)
    p = populations(rho)
    assert p[1] / p[0] == pytest.approx(np.exp(-0.15 * np.pi**2), rel=1e-12)
    assert p[1] / p[0] == pytest.approx(0.2276, abs=1e-4)
    assert np.trace(rho.rho).real == pytest.approx(1.0, abs=1e-14)
    assert np.all(np.diff(p) < 0)


def test_thermal_zero_temperature_limit():
    p = populations(thermal_state(1e4, 1.0, 10)[0])
    assert p[0] == pytest.approx(1.0)
    assert np.all(p[1:] < 1e-300)


@settings(max_examples=30, deadline=None)
@given(beta=st.floats(0.01, 5), L=st.floats(0.2, 5))
def test_partition_function_scaling(beta, L):
    # E_n(2L) = E_n(L)/4, so Z(2L, beta) = Z(L, beta/4) for the same truncation
    assert partition_function(beta, 2 * L, 30) == pytest.approx(partition_function(beta / 4, L, 30), rel=1e-12)


def test_wavefunction_examples():
    g = ground_state(4)
    assert wavefunction(g, 0.5) == pytest.approx(np.sqrt(2))
    assert wavefunction(g, 2.0, L=4.0, frame="physical") == pytest.approx(np.sqrt(2) / 2)
    rng = np.random.default_rng(0)
    c = rng.normal(size=6) + 1j * rng.normal(size=6)
    psi = wavefunction(PureState(c / np.linalg.norm(c)), np.array([0.0, 1.0]))
    assert np.allclose(psi, 0.0, atol=1e-14)


def test_wavefunction_domain():
    with pytest.raises(DomainError):
        wavefunction(ground_state(3), np.array([1.5]))
    with pytest.raises(DomainError):
        wavefunction(ground_state(3), np.array([-0.1]), L=2.0, frame="physical")


def test_purity_values():
    assert purity(ground_state(5)) == pytest.approx(1.0)
    assert purity(MixedState(np.eye(5, dtype=complex) / 5)) == pytest.approx(0.2)


@pytest.mark.parametrize("state", [eigenstate(3, 5), thermal_state(0.1, 1.3, 6)[0]])
def test_state_text_round_trip(state):
    back = parse_state(format_state(state))
    a = state.c if isinstance(state, PureState) else state.rho
    b = back.c if isinstance(back, PureState) else back.rho
    assert type(back) is type(state)
    assert np.array_equal(a, b)


def test_physical_overlap_dilation():
    g = ground_state(6)
    assert abs(physical_overlap(g, 1.0, g, 1.0)) == pytest.approx(1.0, abs=1e-12)
    # <g(L=1)|g(L=2)> over [0,1]: closed form 8*sqrt(2)/(3*pi) * 1/sqrt(2)
    exact = 2 / np.sqrt(2) * quad_phys()
    assert abs(physical_overlap(g, 1.0, g, 2.0)) == pytest.approx(exact, rel=1e-10)


def quad_phys():
    from scipy.integrate import quad

    val, _ = quad(lambda x: np.sin(np.pi * x) * np.sin(np.pi * x / 2), 0, 1, epsabs=1e-14)
    return val
