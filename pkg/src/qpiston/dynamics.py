"""Coupled wall / particle equations of motion and their integration.

The particle lives in the fixed unit domain obtained by dilating the moving
box; its state is either an amplitude vector ``c`` or a density matrix
``rho`` over the ``K`` lowest box eigenstates. The wall is a classical
point (L, V) pushed by the particle's pressure ``2U / (L * section)``, the
external pressure, and (optionally) viscous friction.

Three driving modes are supported:

* ``SelfConsistent()`` - wall and particle integrated together.
* ``ConstantVelocity(V)`` - ``L(t) = L0 + V t``, particle only.
* ``Replay(trajectory)`` - (L, V) read back from a recorded run.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .basis import HBAR, coupling_matrix, effective_hamiltonian, energy_levels, overlap_matrix, quantum_numbers
from .errors import (
    ConfigurationError,
    InstabilityError,
    InvalidStateError,
    PositivityError,
    ReplayResolutionError,
    WallCrashError,
)
from .state import (
    INITIAL_LENGTH,
    POSITIVITY_TOL,
    MixedState,
    PureState,
    SimParams,
    WallState,
    partition_tail_fraction,
)

log = logging.getLogger(__name__)

DRIFT_TOL = 1e-6
DEGENERACY_GAP = 1e-10
RICHARDSON_TOL = 1e-8
REPLAY_TOL = 1e-8


# --------------------------------------------------------------------------
# forces and generators
# --------------------------------------------------------------------------

def friction_factor(V: float, mode: str) -> float:
    """Weight multiplying ``-gamma V``; the Heaviside step uses ``h(0) = 0``."""
    if mode == "symmetric":
        return 1.0
    if mode == "expansion_only":
        return 1.0 if V > 0 else 0.0
    if mode == "none":
        return 0.0
    raise ConfigurationError(f"friction_mode: unknown value {mode!r}")


def _level_scale(K: int, mass: float) -> np.ndarray:
    # E_n(L) = scale_n / L^2
    return quantum_numbers(K) ** 2 * np.pi**2 * HBAR**2 / (2.0 * mass)


def pressure(state, L: float, params: SimParams) -> float:
    """Quantum pressure ``<p^2>_phys / (m L section)`` on the moving wall.

    ``p^2`` is diagonal in the box basis, so only populations enter:
    ``<p^2>_phys = sum_n pop_n (n pi hbar / L)^2``.
    """
    if not L > 0:
        raise InvalidStateError(f"box length must be positive, got L={L!r}")
    pops = _populations(state)
    p2 = np.sum(pops * (quantum_numbers(pops.shape[0]) * np.pi * HBAR / L) ** 2)
    return float(p2 / (params.particle_mass * L * params.section))


def wall_derivatives(wall: WallState, U: float, params: SimParams) -> tuple[float, float]:
    """``(dL/dt, dV/dt)`` for internal energy ``U``."""
    L, V = wall.L, wall.V
    if not L > 0:
        raise InvalidStateError(f"box length must be positive, got L={L!r}")
    force = 2.0 * U / L - params.section * params.external_pressure
    force -= params.gamma * friction_factor(V, params.friction_mode) * V
    return V, force / params.wall_mass


def amplitude_derivatives(c, L: float, V: float, I: np.ndarray, mass: float = 1.0) -> np.ndarray:
    """Right-hand side of the amplitude equations.

    ``dc_n/dt = -i E_n(L) c_n / hbar + (V / 2L) (c_n + 2 sum_k I[n, k] c_k)``.
    ``c`` may also be a (K, M) array of M independent amplitude columns.
    """
    c = np.asarray(c, dtype=complex)
    K = I.shape[0]
    if c.shape[0] != K:
        raise ConfigurationError(f"state has {c.shape[0]} levels but the basis has {K}")
    E = energy_levels(K, L, mass)
    if c.ndim == 2:
        E = E[:, None]
    return -1j * E * c / HBAR + (V / (2.0 * L)) * (c + 2.0 * (I @ c))


def von_neumann_derivative(rho: np.ndarray, H: np.ndarray) -> np.ndarray:
    return -1j / HBAR * (H @ rho - rho @ H)


def dephase(rho, H_star: np.ndarray, Gamma: float, dt: float) -> np.ndarray:
    """Exact pure-dephasing update over ``dt`` in the eigenbasis of ``H_star``.

    Off-diagonal elements (between eigenvectors of distinct eigenvalues) are
    multiplied by ``exp(-Gamma dt / 2)``. Eigenvalues closer than
    ``DEGENERACY_GAP`` form a block that is left undamped.
    """
    rho = rho.rho if isinstance(rho, MixedState) else np.asarray(rho, dtype=complex)
    if Gamma < 0:
        raise ConfigurationError(f"dephasing_rate: must be >= 0, got {Gamma!r}")
    if np.max(np.abs(H_star - H_star.conj().T)) > 1e-10 * max(1.0, np.max(np.abs(H_star))):
        raise InvalidStateError("dephasing generator is not Hermitian")
    if Gamma == 0:
        return rho.copy()
    evals, W = np.linalg.eigh(H_star)
    block = np.concatenate([[0], np.cumsum(np.diff(evals) >= DEGENERACY_GAP)])
    damp = np.where(block[:, None] == block[None, :], 1.0, np.exp(-0.5 * Gamma * dt))
    r = W.conj().T @ rho @ W
    out = W @ (damp * r) @ W.conj().T
    return 0.5 * (out + out.conj().T)


def _populations(state) -> np.ndarray:
    if isinstance(state, (PureState, MixedState)):
        return state.populations()
    arr = np.asarray(state)
    return np.abs(arr) ** 2 if arr.ndim == 1 else np.real(np.diag(arr))


# --------------------------------------------------------------------------
# one step
# --------------------------------------------------------------------------

class _System:
    """Pre-computed pieces of the right-hand side for one parameter set."""

    def __init__(self, params: SimParams):
        self.params = params
        self.K = params.K
        self.I = overlap_matrix(params.K)
        self.Ioff = coupling_matrix(params.K)
        self.scale = _level_scale(params.K, params.particle_mass)
        self.P0_force = params.section * params.external_pressure

    def hamiltonian(self, L: float, V: float) -> np.ndarray:
        H = 1j * HBAR * (V / L) * self.Ioff
        H[np.diag_indices(self.K)] = self.scale / L**2
        return H

    def energy(self, pops: np.ndarray, L: float) -> float:
        return float(np.dot(pops, self.scale)) / L**2

    def accel(self, U: float, L: float, V: float) -> float:
        p = self.params
        f = 2.0 * U / L - self.P0_force - p.gamma * friction_factor(V, p.friction_mode) * V
        return f / p.wall_mass

    # quantum right-hand sides, mixed or pure (vector or column block)
    def dq(self, q: np.ndarray, L: float, V: float) -> np.ndarray:
        E = self.scale / L**2
        g = V / L
        if q.ndim == 2 and self.mixed:
            A = self.Ioff @ q
            # [Ioff, rho] = A + A^dagger since Ioff is real antisymmetric
            return -1j / HBAR * (E[:, None] * q - q * E[None, :]) + g * (A + A.conj().T)
        if q.ndim == 2:
            E = E[:, None]
        return -1j / HBAR * E * q + g * (self.Ioff @ q)

    def pops(self, q: np.ndarray) -> np.ndarray:
        if self.mixed:
            return np.real(np.diag(q))
        p = np.abs(q) ** 2
        # a block of independent columns is recorded as their equal mixture
        return p.mean(axis=1) if p.ndim == 2 else p

    mixed = False


def _rk4_joint(sys: _System, q, L, V, dt):
    def f(q, L, V):
        U = sys.energy(sys.pops(q), L)
        return sys.dq(q, L, V), V, sys.accel(U, L, V)

    k1q, k1L, k1V = f(q, L, V)
    k2q, k2L, k2V = f(q + 0.5 * dt * k1q, L + 0.5 * dt * k1L, V + 0.5 * dt * k1V)
    k3q, k3L, k3V = f(q + 0.5 * dt * k2q, L + 0.5 * dt * k2L, V + 0.5 * dt * k2V)
    k4q, k4L, k4V = f(q + dt * k3q, L + dt * k3L, V + dt * k3V)
    q = q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    L = L + dt / 6.0 * (k1L + 2.0 * k2L + 2.0 * k3L + k4L)
    V = V + dt / 6.0 * (k1V + 2.0 * k2V + 2.0 * k3V + k4V)
    return q, L, V


def _rk4_driven(sys: _System, q, Ls, Vs, dt):
    """RK4 step with prescribed (L, V) at t, t + dt/2, t + dt."""
    k1 = sys.dq(q, Ls[0], Vs[0])
    k2 = sys.dq(q + 0.5 * dt * k1, Ls[1], Vs[1])
    k3 = sys.dq(q + 0.5 * dt * k2, Ls[1], Vs[1])
    k4 = sys.dq(q + dt * k3, Ls[2], Vs[2])
    return q + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(state, wall: WallState, params: SimParams, I: Optional[np.ndarray] = None):
    """Advance the coupled system by one ``params.dt``.

    A fourth-order Runge-Kutta step on (state, L, V) followed, for mixed
    states with a nonzero dephasing rate, by :func:`dephase` evaluated with
    the effective Hamiltonian at the end of the step.
    """
    if I is not None and I.shape[0] != params.K:
        raise ConfigurationError("overlap matrix does not match params.K")
    sys = _System(params)
    mixed = isinstance(state, MixedState)
    sys.mixed = mixed
    q = state.rho if mixed else state.c
    if q.shape[0] != params.K:
        raise ConfigurationError(f"state has {q.shape[0]} levels but params.K = {params.K}")
    q1, L1, V1 = _rk4_joint(sys, q, wall.L, wall.V, params.dt)
    if not L1 > 0:
        raise WallCrashError(f"wall crashed: L = {L1:.6g}")
    if mixed and params.dephasing_rate > 0:
        q1 = dephase(q1, sys.hamiltonian(L1, V1), params.dephasing_rate, params.dt)
    _check_drift(q, q1, mixed)
    new = MixedState(q1) if mixed else PureState(q1)
    return new, WallState(L1, V1)


def _norm(q, mixed):
    if mixed:
        return np.real(np.trace(q))
    if q.ndim == 2:
        return np.sum(np.abs(q) ** 2, axis=0)
    return np.real(np.vdot(q, q))


def _check_drift(q0, q1, mixed):
    drift = np.max(np.abs(_norm(q1, mixed) - _norm(q0, mixed)))
    if not np.isfinite(drift) or drift > DRIFT_TOL:
        raise InstabilityError(f"norm/trace drift {drift:.3e} in a single step; reduce dt")


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SelfConsistent:
    name = "self_consistent"


@dataclass(frozen=True)
class ConstantVelocity:
    V: float
    name = "constant_velocity"


@dataclass(frozen=True)
class Replay:
    trajectory: "Trajectory"
    interpolation: str = "hermite"
    tolerance: float = REPLAY_TOL
    name = "replay"


Mode = Union[SelfConsistent, ConstantVelocity, Replay]


@dataclass
class Trajectory:
    """Time series of a run.

    Scalar observables and populations are stored at every ``stride``-th
    integration step; full quantum states at every ``state_stride``-th
    sample (``state_index`` maps them back to sample rows). ``A`` is the
    wall acceleration, kept so that replays can interpolate V to fourth order.
    """

    params: SimParams
    mode: str
    t: np.ndarray
    L: np.ndarray
    V: np.ndarray
    A: np.ndarray
    U: np.ndarray
    P: np.ndarray
    W_fric: np.ndarray
    purity: np.ndarray
    populations: np.ndarray
    energy_residual: np.ndarray
    states: np.ndarray
    state_index: np.ndarray
    stride: int = 1
    state_stride: int = 1
    mixed: bool = False
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return self.t.shape[0]

    @property
    def dt(self) -> float:
        return self.params.dt

    @property
    def state_times(self) -> np.ndarray:
        return self.t[self.state_index]

    def state_at(self, j: int):
        """Quantum state at stored-state slot ``j``."""
        s = self.states[j]
        return MixedState(s) if self.mixed else PureState(s)

    @property
    def final_state(self):
        return self.state_at(len(self.state_index) - 1)


class _Recorder:
    def __init__(self, n_steps, stride, state_stride, K, mixed, columns=None):
        self.stride, self.state_stride = stride, state_stride
        n_samples = n_steps // stride + 1
        n_states = (n_samples - 1) // state_stride + 1
        self.cols = {k: np.empty(n_samples) for k in ("t", "L", "V", "A", "U", "P", "W_fric", "purity", "E_res")}
        self.pops = np.empty((n_samples, K))
        shape = (n_states, K) if columns is None else (n_states, K, columns)
        if mixed:
            shape = (n_states, K, K)
        self.states = np.empty(shape, dtype=complex)
        self.state_index = np.arange(n_states) * state_stride
        self.i = 0

    def want(self, step_no):
        return step_no % self.stride == 0

    def record(self, q, pops, purity, **scalars):
        i = self.i
        for k, v in scalars.items():
            self.cols[k][i] = v
        self.pops[i] = pops
        self.cols["purity"][i] = purity
        if i % self.state_stride == 0:
            self.states[i // self.state_stride] = q
        self.i += 1


def _purity_of(q, mixed):
    if mixed:
        return float(np.sum(np.abs(q) ** 2))
    if q.ndim == 2:
        return 1.0
    return float(np.vdot(q, q).real ** 2)


def _coerce_initial(initial, params: SimParams):
    if isinstance(initial, MixedState):
        q, mixed = initial.rho.astype(complex).copy(), True
    elif isinstance(initial, PureState):
        q, mixed = initial.c.astype(complex).copy(), False
    else:
        # raw arrays are amplitude vectors or blocks of amplitude columns
        q, mixed = np.asarray(initial, dtype=complex).copy(), False
    if q.shape[0] != params.K:
        raise ConfigurationError(f"initial state has {q.shape[0]} levels but K = {params.K}")
    if params.dephasing_rate > 0 and not mixed:
        if q.ndim != 1:
            raise ConfigurationError("dephasing requires a single state, not a column block")
        q, mixed = np.outer(q, q.conj()), True
    return q, mixed


def simulate(
    params: SimParams,
    mode: Mode = SelfConsistent(),
    initial=None,
    *,
    stride: int = 1,
    state_stride: Optional[int] = None,
    auto_dt: bool = False,
    initial_wall: Optional[WallState] = None,
    metadata: Optional[dict] = None,
) -> Trajectory:
    """Integrate from t = 0 to ``params.T`` and return the recorded trajectory.

    ``initial`` defaults to the ground state. It may also be a raw ``(K, M)``
    complex array of amplitude columns, which are propagated independently
    (used for the per-eigenstate replays of the work statistics).

    With ``auto_dt`` the step is halved until a Richardson estimate over the
    first 100 steps drops below ``RICHARDSON_TOL``.
    """
    if initial is None:
        c = np.zeros(params.K, dtype=complex)
        c[0] = 1.0
        initial = PureState(c)
    if auto_dt and not isinstance(mode, Replay):
        params = choose_time_step(params, mode, initial)
    q, mixed = _coerce_initial(initial, params)
    sys = _System(params)
    sys.mixed = mixed
    columns = q.shape[1] if (q.ndim == 2 and not mixed) else None
    n_steps = int(round(params.T / params.dt))
    if n_steps < 1 or abs(n_steps * params.dt - params.T) > 1e-9 * params.T:
        raise ConfigurationError(f"T = {params.T} is not a whole number of steps dt = {params.dt}")
    if stride < 1 or n_steps % stride:
        raise ConfigurationError(f"stride {stride} must divide the {n_steps} integration steps")
    if state_stride is None:
        state_stride = 1 if (not mixed and columns is None) else 10
    rec = _Recorder(n_steps, stride, state_stride, params.K, mixed, columns)

    p = params
    wall = initial_wall or WallState(INITIAL_LENGTH, 0.0)
    L, V = wall.L, wall.V
    if isinstance(mode, ConstantVelocity):
        V = float(mode.V)
    driven = None
    if isinstance(mode, Replay):
        driven = _replay_schedule(mode, params, n_steps)
        L, V = driven[0][0], driven[1][0]
    elif isinstance(mode, ConstantVelocity):
        ts = np.arange(2 * n_steps + 1) * (0.5 * params.dt)
        Ls = INITIAL_LENGTH + V * ts
        driven = (Ls, np.full_like(Ls, V))
        if Ls[-1] <= 0:
            raise WallCrashError(f"constant velocity V={V} closes the box before T={params.T}")
    elif not isinstance(mode, SelfConsistent):
        raise ConfigurationError(f"unknown mode {mode!r}")
    if driven is not None:
        # prescribed wall; acceleration follows from the schedule
        Ls_all, Vs_all = driven[0], driven[1]
    tail = partition_tail_fraction(params.beta, min(L, INITIAL_LENGTH), params.K, params.particle_mass)
    if tail > 1e-12:
        log.warning("K=%d drops %.2e of the partition function at beta=%g", params.K, tail, params.beta)

    def accel_of(U, L, V, k):
        if driven is None:
            return sys.accel(U, L, V)
        if isinstance(mode, ConstantVelocity):
            return 0.0
        return float(driven[2][k])

    Wf = 0.0
    friction_power = lambda V: p.gamma * friction_factor(V, p.friction_mode) * V * V
    pops = sys.pops(q)
    U = sys.energy(pops, L)
    E0_total = U + 0.5 * p.wall_mass * V * V
    L0 = L

    def residual(U, L, V, Wf):
        return U + 0.5 * p.wall_mass * V * V + sys.P0_force * (L - L0) + Wf - E0_total

    rec.record(q, pops, _purity_of(q, mixed), t=0.0, L=L, V=V, A=accel_of(U, L, V, 0), U=U,
               P=2.0 * U / (L * p.section), W_fric=0.0, E_res=0.0)
    dt = params.dt
    for k in range(1, n_steps + 1):
        q_prev, V_prev = q, V
        if driven is None:
            q, L, V = _rk4_joint(sys, q, L, V, dt)
            if not L > 0:
                raise WallCrashError(f"wall crashed at t = {k * dt:.6g} (L = {L:.3g})")
        else:
            j = 2 * (k - 1)
            q = _rk4_driven(sys, q, Ls_all[j:j + 3], Vs_all[j:j + 3], dt)
            L, V = Ls_all[j + 2], Vs_all[j + 2]
        if mixed and p.dephasing_rate > 0:
            q = dephase(q, sys.hamiltonian(L, V), p.dephasing_rate, dt)
        _check_drift(q_prev, q, mixed)
        Wf += 0.5 * dt * (friction_power(V_prev) + friction_power(V))
        if rec.want(k):
            pops = sys.pops(q)
            U = sys.energy(pops, L)
            if mixed and (rec.i % state_stride == 0):
                lowest = np.linalg.eigvalsh(q)[0]
                if lowest < -POSITIVITY_TOL:
                    raise PositivityError(f"density matrix eigenvalue {lowest:.3e} at t = {k * dt:.6g}")
            rec.record(q, pops, _purity_of(q, mixed), t=k * dt, L=L, V=V, A=accel_of(U, L, V, 2 * k),
                       U=U, P=2.0 * U / (L * p.section), W_fric=Wf, E_res=residual(U, L, V, Wf))

    c = rec.cols
    meta = {"mode": mode.name, "auto_dt": auto_dt}
    if isinstance(mode, ConstantVelocity):
        meta["velocity"] = float(mode.V)
    meta.update(metadata or {})
    return Trajectory(
        params=params, mode=mode.name, t=c["t"], L=c["L"], V=c["V"], A=c["A"], U=c["U"], P=c["P"],
        W_fric=c["W_fric"], purity=c["purity"], populations=rec.pops, energy_residual=c["E_res"],
        states=rec.states, state_index=rec.state_index, stride=stride, state_stride=state_stride,
        mixed=mixed, metadata=meta,
    )


def _hermite(t, y, dy):
    return CubicHermiteSpline(t, y, dy)


def _replay_schedule(mode: Replay, params: SimParams, n_steps: int):
    """(L, V, A) at every half step of the replay grid."""
    tr = mode.trajectory
    t = tr.t
    T_needed = n_steps * params.dt
    if t[0] > 1e-12 or t[-1] < T_needed - 1e-9 * max(1.0, T_needed):
        raise ReplayResolutionError(f"record covers [{t[0]}, {t[-1]}], replay needs [0, {T_needed}]")
    ts = np.minimum(np.arange(2 * n_steps + 1) * (0.5 * params.dt), t[-1])
    if mode.interpolation == "linear":
        Ls, Vs, As = np.interp(ts, t, tr.L), np.interp(ts, t, tr.V), np.interp(ts, t, tr.A)
    elif mode.interpolation == "hermite":
        Ls = _hermite(t, tr.L, tr.V)(ts)
        Vs = _hermite(t, tr.V, tr.A)(ts)
        As = np.interp(ts, t, tr.A)
    else:
        raise ConfigurationError(f"unknown interpolation {mode.interpolation!r}")
    err = replay_interpolation_error(tr, mode.interpolation)
    if err > mode.tolerance:
        raise ReplayResolutionError(
            f"record too coarse for replay: interpolation error ~{err:.2e} > {mode.tolerance:.1e}"
        )
    if np.any(Ls <= 0):
        raise WallCrashError("replayed wall length is not positive")
    return Ls, Vs, As


def replay_interpolation_error(tr: Trajectory, interpolation: str = "hermite") -> float:
    """Estimated max error of interpolating (L, V) between the record's samples.

    The record is thinned to every other sample, the odd samples are
    predicted from it, and the discrepancy is scaled down by the method's
    order (16 for cubic Hermite, 4 for linear).
    """
    t = tr.t
    if len(t) < 5:
        return 0.0 if len(t) >= 2 and np.allclose(np.diff(tr.V), 0) else np.inf
    even = slice(0, None, 2)
    odd = slice(1, None, 2)
    if interpolation == "hermite":
        pred_L = _hermite(t[even], tr.L[even], tr.V[even])(t[odd])
        pred_V = _hermite(t[even], tr.V[even], tr.A[even])(t[odd])
        order = 16.0
    else:
        pred_L = np.interp(t[odd], t[even], tr.L[even])
        pred_V = np.interp(t[odd], t[even], tr.V[even])
        order = 4.0
    # the Heaviside friction makes A jump when V changes sign; ignore
    # intervals that straddle such a kink, where the estimate is meaningless
    ok = np.ones(len(t[odd]), dtype=bool)
    if tr.params.friction_mode == "expansion_only" and tr.params.gamma > 0:
        sgn = np.sign(tr.V)
        flips = np.nonzero(sgn[:-1] != sgn[1:])[0]
        odd_idx = np.arange(1, len(t), 2)
        for f in flips:
            ok &= np.abs(odd_idx - f) > 2
    err_L = np.abs(pred_L - tr.L[odd])[ok]
    err_V = np.abs(pred_V - tr.V[odd])[ok]
    if err_L.size == 0:
        return 0.0
    return float(max(err_L.max(), err_V.max()) / order)


def choose_time_step(params: SimParams, mode: Mode, initial, steps: int = 100,
                     tol: float = RICHARDSON_TOL, max_halvings: int = 12) -> SimParams:
    """Halve ``params.dt`` until the Richardson error over ``steps`` steps is below ``tol``."""
    for _ in range(max_halvings):
        probe = params.replace(T=steps * params.dt)
        coarse = simulate(probe, mode, initial, stride=steps, auto_dt=False)
        fine = simulate(probe.replace(dt=params.dt / 2), mode, initial, stride=2 * steps, auto_dt=False)
        diff = max(
            np.max(np.abs(coarse.states[-1] - fine.states[-1])),
            abs(coarse.L[-1] - fine.L[-1]),
            abs(coarse.V[-1] - fine.V[-1]),
        )
        if diff / 15.0 < tol:
            break
        log.info("Richardson estimate %.2e at dt=%g; halving", diff / 15.0, params.dt)
        params = params.replace(dt=params.dt / 2)
    return params
