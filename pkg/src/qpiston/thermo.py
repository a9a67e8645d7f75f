"""Thermodynamic observables of recorded runs.

Energies, equilibrium states and work outcomes refer to the physical box
Hamiltonian at the current length, which is diagonal in the fixed basis.
The effective (velocity-dependent) generator only enters through
:func:`hstar_basis_observables` and the optional ``effective`` fidelity.

Work sign convention: ``w = E_m(t) - E_n(0)``, i.e. work done *on* the
particle; a negative mean work is energy extracted.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .basis import energy_levels
from .dynamics import Replay, Trajectory, friction_factor, simulate
from .errors import ConfigurationError, InvalidStateError, PositivityError
from .state import (
    POSITIVITY_TOL,
    MixedState,
    PureState,
    SimParams,
    boltzmann_weights,
    log_partition_function,
    populations,
    purity,
)

EIGEN_FLOOR = 1e-14


def internal_energy(state, L: float, mass: float = 1.0) -> float:
    """``U = sum_n pop_n E_n(L)``."""
    pops = populations(state)
    return float(np.dot(pops, energy_levels(pops.shape[0], L, mass)))


def _as_matrix(state) -> np.ndarray:
    if isinstance(state, PureState):
        return state.density_matrix()
    if isinstance(state, MixedState):
        return state.rho
    arr = np.asarray(state, dtype=complex)
    return np.outer(arr, arr.conj()) if arr.ndim == 1 else arr


def von_neumann_entropy(rho) -> float:
    lam = np.linalg.eigvalsh(_as_matrix(rho))
    if lam[0] < -POSITIVITY_TOL:
        raise PositivityError(f"density matrix eigenvalue {lam[0]:.3e} below zero")
    lam = lam[lam > EIGEN_FLOOR]
    return float(-np.sum(lam * np.log(lam)))


def entropy_production(rho, beta: float, L: float, mass: float = 1.0) -> float:
    """Relative entropy of ``rho`` with respect to the Gibbs state at length ``L``.

    ``log rho_eq`` is diagonal, ``-beta E_n - ln Z``, so
    ``S(rho || rho_eq) = -S(rho) + beta U + ln Z``.
    """
    if not beta > 0:
        raise ConfigurationError(f"beta: must be > 0, got {beta!r}")
    if not L > 0:
        raise InvalidStateError(f"box length must be positive, got L={L!r}")
    m = _as_matrix(rho)
    K = m.shape[0]
    S = von_neumann_entropy(m)
    U = internal_energy(m, L, mass)
    return -S + beta * U + log_partition_function(beta, L, K, mass)


def free_energy_difference(beta: float, L_t: float, L_0: float, K: int, mass: float = 1.0) -> float:
    """``-(1/beta) ln(Z(L_t) / Z(L_0))`` with K-level partition functions."""
    if not beta > 0:
        raise ConfigurationError(f"beta: must be > 0, got {beta!r}")
    return -(log_partition_function(beta, L_t, K, mass) - log_partition_function(beta, L_0, K, mass)) / beta


def friction_work(trajectory: Trajectory, params: Optional[SimParams] = None) -> np.ndarray:
    """Accumulated friction loss ``int gamma f(V) V^2 dt`` on the recorded samples (trapezoid)."""
    p = params or trajectory.params
    f = np.array([friction_factor(v, p.friction_mode) for v in trajectory.V])
    power = p.gamma * f * trajectory.V**2
    out = np.zeros_like(power)
    out[1:] = np.cumsum(0.5 * np.diff(trajectory.t) * (power[1:] + power[:-1]))
    return out


def ground_state_fidelity(state, L: float = 1.0, *, hamiltonian: str = "physical",
                          V: float = 0.0, I: Optional[np.ndarray] = None) -> float:
    """Overlap ``sqrt(<g|rho|g>)`` with the instantaneous ground state.

    For a pure state and the physical Hamiltonian this is ``|c_1|``. With
    ``hamiltonian="effective"`` the target is the lowest eigenvector of the
    effective generator at (L, V), which needs the overlap matrix ``I``.
    """
    m = _as_matrix(state)
    if hamiltonian == "physical":
        g = np.zeros(m.shape[0], dtype=complex)
        g[0] = 1.0
    elif hamiltonian == "effective":
        from .basis import effective_hamiltonian, overlap_matrix

        H = effective_hamiltonian(L, V, overlap_matrix(m.shape[0]) if I is None else I)
        g = np.linalg.eigh(H)[1][:, 0]
    else:
        raise ConfigurationError(f"unknown hamiltonian {hamiltonian!r}")
    return float(np.sqrt(max(np.real(np.vdot(g, m @ g)), 0.0)))


def hstar_basis_observables(rho, H_star: np.ndarray):
    """Populations and ground/first-excited coherence of ``rho`` in the eigenbasis of ``H_star``.

    Returns ``(populations, |rho_01|, purity)`` with eigenvalues sorted ascending.
    """
    if np.max(np.abs(H_star - H_star.conj().T)) > 1e-10 * max(1.0, np.max(np.abs(H_star))):
        raise InvalidStateError("H_star is not Hermitian")
    m = _as_matrix(rho)
    _, W = np.linalg.eigh(H_star)
    r = W.conj().T @ m @ W
    return np.real(np.diag(r)).copy(), float(abs(r[0, 1])), purity(m)


# --------------------------------------------------------------------------
# two-point-measurement work statistics
# --------------------------------------------------------------------------

@dataclass
class WorkDistribution:
    """Discrete work outcomes ``w = E_m(t) - E_n(0)`` with probabilities ``p(m,t|n) p_n``."""

    t: float
    w: np.ndarray
    prob: np.ndarray
    conditional: np.ndarray = field(repr=False)  # [n, m] = p(m, t | n)
    initial_weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        if np.any(self.prob < -1e-12):
            raise InvalidStateError("negative work probability")
        if abs(self.prob.sum() - 1.0) > 1e-8:
            raise InvalidStateError(f"work probabilities sum to {self.prob.sum()!r}")

    def marginal_errors(self) -> np.ndarray:
        return np.abs(self.conditional.sum(axis=1) - 1.0)

    def to_csv(self, metadata: Optional[dict] = None) -> str:
        """``(w, prob)`` rows sorted by ``w``, after ``# key: value`` header lines."""
        buf = io.StringIO()
        for k, v in (metadata or {}).items():
            buf.write(f"# {k}: {v if isinstance(v, str) else json.dumps(v, sort_keys=True)}\n")
        buf.write(f"# work distribution at t={self.t!r}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["w", "prob"])
        order = np.argsort(self.w, kind="stable")
        for i in order:
            writer.writerow([f"{self.w[i]:.12g}", f"{self.prob[i]:.12g}"])
        return buf.getvalue()


def _build_distribution(t, cond, E0, Et, p0, prob_floor=0.0) -> WorkDistribution:
    w = Et[None, :] - E0[:, None]
    prob = cond * p0[:, None]
    keep = prob.ravel() > prob_floor if prob_floor > 0 else slice(None)
    return WorkDistribution(
        t=float(t), w=w.ravel()[keep], prob=prob.ravel()[keep], conditional=cond, initial_weights=p0
    )


@dataclass
class WorkStatistics:
    """Per-eigenstate replays of a recorded run, evaluated at the stored sample times.

    ``conditional[j, n, m]`` is ``p(m, t_j | n)`` (0-based indices).
    """

    times: np.ndarray
    lengths: np.ndarray
    conditional: np.ndarray
    beta: float
    params: SimParams
    initial_weights: np.ndarray

    def distribution(self, j: int) -> WorkDistribution:
        K = self.params.K
        m = self.params.particle_mass
        E0 = energy_levels(K, self.lengths[0], m)
        Et = energy_levels(K, self.lengths[j], m)
        return _build_distribution(self.times[j], self.conditional[j], E0, Et, self.initial_weights)

    def __len__(self):
        return self.times.shape[0]


def work_statistics(base: Trajectory, beta: float, params: Optional[SimParams] = None,
                    state_stride: int = 10, interpolation: str = "hermite",
                    initial_weights: Optional[np.ndarray] = None) -> WorkStatistics:
    """Replay ``base``'s wall motion for every initial eigenstate at once.

    The K eigenstates are propagated as the columns of one amplitude block,
    so a single pass yields every conditional probability ``p(m, t | n)``.
    Samples land on the base record's times (``stride`` of the base record,
    thinned by ``state_stride``).
    """
    p = (params or base.params).replace(dephasing_rate=0.0)
    K = p.K
    L0 = float(base.L[0])
    if initial_weights is None:
        initial_weights, _ = boltzmann_weights(beta, L0, K, p.particle_mass)
    sub = replay_substeps(p, float(base.L.min()))
    run = simulate(
        p.replace(T=float(base.t[-1]), dt=p.dt / sub),
        Replay(base, interpolation=interpolation),
        np.eye(K, dtype=complex),
        stride=base.stride * sub,
        state_stride=state_stride,
    )
    cond = np.abs(run.states) ** 2          # [j, m, n]
    cond = np.transpose(cond, (0, 2, 1))    # [j, n, m]
    idx = run.state_index
    return WorkStatistics(
        times=run.t[idx], lengths=base.L[idx], conditional=cond, beta=beta, params=p,
        initial_weights=np.asarray(initial_weights, dtype=float),
    )


def replay_substeps(params: SimParams, L_min: float, max_phase: float = 0.15) -> int:
    """Power-of-two refinement keeping ``E_K(L_min) dt`` below ``max_phase``.

    Every eigenstate up to ``K`` is replayed, including ones the base run
    never populated, so the top level sets the RK4 step limit.
    """
    E_top = energy_levels(params.K, L_min, params.particle_mass)[-1]
    sub = 1
    while E_top * params.dt / sub > max_phase:
        sub *= 2
    return sub


def work_distribution(base: Trajectory, beta: float, params: Optional[SimParams] = None,
                      t: float = 0.0, tol: float = 1e-9) -> WorkDistribution:
    """Two-point-measurement work distribution at the recorded sample time ``t``."""
    j = int(np.argmin(np.abs(base.t - t)))
    if abs(base.t[j] - t) > tol:
        raise ConfigurationError(f"t={t} is not a recorded sample time")
    if j == 0:
        K = (params or base.params).K
        p0, _ = boltzmann_weights(beta, base.L[0], K, (params or base.params).particle_mass)
        E0 = energy_levels(K, base.L[0], (params or base.params).particle_mass)
        return _build_distribution(0.0, np.eye(K), E0, E0, p0)
    # replay only as far as needed and keep the last slot
    cut = base_slice(base, j)
    stats = work_statistics(cut, beta, params, state_stride=len(cut) - 1)
    return stats.distribution(len(stats) - 1)


def base_slice(tr: Trajectory, j: int) -> Trajectory:
    """Prefix of a trajectory up to and including sample ``j`` (scalar columns only)."""
    sl = slice(0, j + 1)
    return Trajectory(
        params=tr.params.replace(T=float(tr.t[j])), mode=tr.mode, t=tr.t[sl], L=tr.L[sl], V=tr.V[sl],
        A=tr.A[sl], U=tr.U[sl], P=tr.P[sl], W_fric=tr.W_fric[sl], purity=tr.purity[sl],
        populations=tr.populations[sl], energy_residual=tr.energy_residual[sl],
        states=tr.states[:0], state_index=tr.state_index[:0], stride=tr.stride,
        state_stride=tr.state_stride, mixed=tr.mixed, metadata=dict(tr.metadata),
    )


def jarzynski_check(dist: WorkDistribution, beta: float, delta_F: float) -> tuple[float, float, float]:
    """``(<exp(-beta w)>, exp(-beta dF), difference)``."""
    lhs = float(np.sum(dist.prob * np.exp(-beta * dist.w)))
    rhs = float(np.exp(-beta * delta_F))
    return lhs, rhs, lhs - rhs


def mean_work_and_irreversible(dist: WorkDistribution, delta_F: float) -> tuple[float, float]:
    W = float(np.sum(dist.prob * dist.w))
    return W, W - delta_F


# --------------------------------------------------------------------------
# per-sample record
# --------------------------------------------------------------------------

@dataclass
class ThermoRecord:
    t: np.ndarray
    entropy_production: np.ndarray
    W_fric: np.ndarray
    delta_F: np.ndarray
    delta_U: np.ndarray
    W_mean: np.ndarray
    W_irr: np.ndarray
    jarzynski_lhs: np.ndarray
    jarzynski_rhs: np.ndarray
    fidelity_ground: np.ndarray
    purity: np.ndarray

    @property
    def jarzynski_difference(self) -> np.ndarray:
        return self.jarzynski_lhs - self.jarzynski_rhs

    def columns(self) -> dict:
        return {
            "Sigma_ep": self.entropy_production,
            "W_fric_abs": self.W_fric,
            "Delta_F": self.delta_F,
            "Delta_U": self.delta_U,
            "W_mean": self.W_mean,
            "W_irr": self.W_irr,
            "jarzynski_lhs": self.jarzynski_lhs,
            "jarzynski_rhs": self.jarzynski_rhs,
            "fidelity_ground": self.fidelity_ground,
            "purity": self.purity,
        }


def thermo_record(trajectory: Trajectory, beta: Optional[float] = None, *,
                  with_work: bool = True, fidelity: str = "physical") -> ThermoRecord:
    """Thermodynamic observables at every stored-state sample of ``trajectory``.

    ``with_work`` runs the per-eigenstate replays needed for the mean work,
    the irreversible work and both sides of the Jarzynski equality; without
    it those columns are NaN.
    """
    p = trajectory.params
    beta = p.beta if beta is None else beta
    K, m = p.K, p.particle_mass
    idx = trajectory.state_index
    t = trajectory.t[idx]
    Ls = trajectory.L[idx]
    L0 = float(trajectory.L[0])
    n = len(idx)
    sigma = np.empty(n)
    fid = np.empty(n)
    pur = np.empty(n)
    dF = np.array([free_energy_difference(beta, L, L0, K, m) for L in Ls])
    I = None
    if fidelity == "effective":
        from .basis import overlap_matrix

        I = overlap_matrix(K)
    for j in range(n):
        s = trajectory.state_at(j)
        sigma[j] = entropy_production(s, beta, Ls[j], m)
        fid[j] = ground_state_fidelity(s, Ls[j], hamiltonian=fidelity, V=trajectory.V[idx[j]], I=I)
        pur[j] = purity(s)
    wf = friction_work(trajectory)[idx]
    dU = trajectory.U[idx] - trajectory.U[0]
    W = np.full(n, np.nan)
    lhs = np.full(n, np.nan)
    if with_work:
        stats = work_statistics(trajectory, beta, state_stride=trajectory.state_stride)
        for j in range(n):
            dist = stats.distribution(j)
            W[j] = mean_work_and_irreversible(dist, dF[j])[0]
            lhs[j] = jarzynski_check(dist, beta, dF[j])[0]
    return ThermoRecord(
        t=t, entropy_production=sigma, W_fric=wf, delta_F=dF, delta_U=dU, W_mean=W, W_irr=W - dF,
        jarzynski_lhs=lhs, jarzynski_rhs=np.exp(-beta * dF), fidelity_ground=fid, purity=pur,
    )
