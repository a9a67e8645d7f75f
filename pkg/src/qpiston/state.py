"""Parameters, wall state, quantum states and thermal states."""
from __future__ import annotations

import dataclasses
import io
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .basis import energy_levels, quantum_numbers
from .errors import ConfigurationError, DomainError, InvalidStateError, PositivityError

INITIAL_LENGTH = 1.0
FRICTION_MODES = ("none", "symmetric", "expansion_only")

NORM_TOL = 1e-8
HERMITIAN_TOL = 1e-10
POSITIVITY_TOL = 1e-8


@dataclass(frozen=True)
class SimParams:
    """Physical and numerical parameters of one run.

    ``section`` is the wall cross-section (force = section * pressure). The
    default ``external_pressure`` balances a ground-state particle at L = 1.
    """

    particle_mass: float = 1.0
    wall_mass: float = 0.05
    section: float = 1.0
    gamma: float = 10.0
    external_pressure: float = float(np.pi**2)
    dephasing_rate: float = 0.0
    beta: float = 0.1
    K: int = 20
    dt: float = 1e-4
    T: float = 2.0
    friction_mode: str = "expansion_only"

    def __post_init__(self):
        for key in ("particle_mass", "wall_mass", "section", "dt", "T", "beta"):
            value = getattr(self, key)
            if not np.isfinite(value) or value <= 0:
                raise ConfigurationError(f"{key}: must be > 0, got {value!r}")
        for key in ("gamma", "external_pressure", "dephasing_rate"):
            value = getattr(self, key)
            if not np.isfinite(value) or value < 0:
                raise ConfigurationError(f"{key}: must be >= 0, got {value!r}")
        if isinstance(self.K, bool) or int(self.K) != self.K or self.K < 2:
            raise ConfigurationError(f"K: must be an integer >= 2, got {self.K!r}")
        object.__setattr__(self, "K", int(self.K))
        if self.friction_mode not in FRICTION_MODES:
            raise ConfigurationError(
                f"friction_mode: must be one of {FRICTION_MODES}, got {self.friction_mode!r}"
            )

    def replace(self, **changes) -> "SimParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class WallState:
    L: float
    V: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.L) or self.L <= 0:
            raise InvalidStateError(f"wall length must be positive, got L={self.L!r}")


@dataclass
class PureState:
    """Amplitudes ``c[n-1]`` over the eigenstates of the initial box."""

    c: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=complex)
        if self.c.ndim != 1:
            raise ConfigurationError("amplitude vector must be one-dimensional")

    @property
    def K(self) -> int:
        return self.c.shape[0]

    def populations(self) -> np.ndarray:
        return np.abs(self.c) ** 2

    def density_matrix(self) -> np.ndarray:
        return np.outer(self.c, self.c.conj())

    def norm_error(self) -> float:
        return abs(float(np.vdot(self.c, self.c).real) - 1.0)

    def validate(self) -> "PureState":
        if self.norm_error() > NORM_TOL:
            raise InvalidStateError(f"state norm off by {self.norm_error():.3e}")
        return self


@dataclass
class MixedState:
    rho: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=complex)
        if self.rho.ndim != 2 or self.rho.shape[0] != self.rho.shape[1]:
            raise ConfigurationError("density matrix must be square")

    @property
    def K(self) -> int:
        return self.rho.shape[0]

    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.rho)).copy()

    def density_matrix(self) -> np.ndarray:
        return self.rho

    def validate(self) -> "MixedState":
        herm = np.max(np.abs(self.rho - self.rho.conj().T))
        if herm > HERMITIAN_TOL:
            raise InvalidStateError(f"density matrix not Hermitian (residual {herm:.3e})")
        tr = np.trace(self.rho).real
        if abs(tr - 1.0) > NORM_TOL:
            raise InvalidStateError(f"density matrix trace is {tr!r}")
        lowest = np.linalg.eigvalsh(self.rho)[0]
        if lowest < -POSITIVITY_TOL:
            raise PositivityError(f"density matrix eigenvalue {lowest:.3e} below zero")
        return self


QuantumState = Union[PureState, MixedState]


def populations(state) -> np.ndarray:
    """Level populations of a state object or raw vector / matrix."""
    if isinstance(state, (PureState, MixedState)):
        return state.populations()
    arr = np.asarray(state)
    if arr.ndim == 1:
        return np.abs(arr) ** 2
    return np.real(np.diag(arr)).copy()


def purity(state) -> float:
    if isinstance(state, PureState):
        return float(np.vdot(state.c, state.c).real ** 2)
    rho = state.rho if isinstance(state, MixedState) else np.asarray(state)
    if rho.ndim == 1:
        return float(np.vdot(rho, rho).real ** 2)
    # tr(rho^2) = sum |rho_ij|^2 for Hermitian rho
    return float(np.sum(np.abs(rho) ** 2))


def eigenstate(n: int, K: int) -> PureState:
    if not 1 <= n <= K:
        raise ConfigurationError(f"eigenstate index n={n} outside 1..{K}")
    c = np.zeros(K, dtype=complex)
    c[n - 1] = 1.0
    return PureState(c)


def ground_state(K: int) -> PureState:
    return eigenstate(1, K)


def boltzmann_weights(beta: float, L: float, K: int, mass: float = 1.0) -> tuple[np.ndarray, float]:
    """Normalised Boltzmann populations and truncated partition function.

    Weights are computed relative to the ground level, so large ``beta``
    underflows gracefully to the ground state rather than to 0/0.
    """
    if not beta > 0:
        raise ConfigurationError(f"beta: must be > 0, got {beta!r}")
    E = energy_levels(K, L, mass)
    w = np.exp(-beta * (E - E[0]))
    s = w.sum()
    Z = float(np.exp(-beta * E[0]) * s)
    return w / s, Z


def partition_function(beta: float, L: float, K: int, mass: float = 1.0) -> float:
    return boltzmann_weights(beta, L, K, mass)[1]


def log_partition_function(beta: float, L: float, K: int, mass: float = 1.0) -> float:
    E = energy_levels(K, L, mass)
    return float(-beta * E[0] + np.log(np.sum(np.exp(-beta * (E - E[0])))))


def thermal_state(beta: float, L: float, K: int, mass: float = 1.0) -> tuple[MixedState, float]:
    """Diagonal Gibbs state of the box at length ``L`` and its partition function."""
    p, Z = boltzmann_weights(beta, L, K, mass)
    return MixedState(np.diag(p).astype(complex)), Z


def partition_tail_fraction(beta: float, L: float, K: int, mass: float = 1.0, extra: int = 2000) -> float:
    """Fraction of the (untruncated) partition function dropped by keeping K levels."""
    full = energy_levels(K + extra, L, mass)
    w = np.exp(-beta * (full - full[0]))
    return float(w[K:].sum() / w.sum())


def wavefunction(state, x, L: float = 1.0, frame: str = "transformed") -> np.ndarray:
    """Evaluate a pure state on a grid.

    ``frame="transformed"`` evaluates ``phi(z) = sum_n c_n sqrt(2) sin(n pi z)``
    on ``z`` in [0, 1]. ``frame="physical"`` undoes the dilation,
    ``psi(x) = phi(x / L) / sqrt(L)``, with ``x`` in [0, L].
    """
    c = state.c if isinstance(state, PureState) else np.asarray(state, dtype=complex)
    x = np.asarray(x, dtype=float)
    if frame == "transformed":
        z, scale = x, 1.0
        upper = 1.0
    elif frame == "physical":
        if not L > 0:
            raise InvalidStateError(f"box length must be positive, got L={L!r}")
        z, scale = x / L, 1.0 / np.sqrt(L)
        upper = L
    else:
        raise ConfigurationError(f"unknown frame {frame!r}")
    tol = 1e-12 * max(1.0, upper)
    if np.any(x < -tol) or np.any(x > upper + tol):
        raise DomainError(f"grid points must lie in [0, {upper}]")
    n = quantum_numbers(c.shape[0])
    modes = np.sqrt(2.0) * np.sin(np.pi * np.multiply.outer(z, n))
    return scale * (modes @ c)


def format_state(state) -> str:
    """Plain-text record: one line per matrix element / amplitude.

    Pure states write ``n re im``; mixed states write ``n k re im``.
    Indices are 1-based.
    """
    out = io.StringIO()
    if isinstance(state, PureState):
        out.write("# pure K=%d\n" % state.K)
        for n, a in enumerate(state.c, start=1):
            out.write(f"{n} {a.real:.17g} {a.imag:.17g}\n")
    else:
        rho = state.rho
        out.write("# mixed K=%d\n" % rho.shape[0])
        for (i, j), a in np.ndenumerate(rho):
            out.write(f"{i + 1} {j + 1} {a.real:.17g} {a.imag:.17g}\n")
    return out.getvalue()


def parse_state(text: str):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise ConfigurationError("state record is missing its header line")
    kind, kspec = lines[0][1:].split()
    K = int(kspec.split("=")[1])
    rows = [ln.split() for ln in lines[1:]]
    if kind == "pure":
        c = np.zeros(K, dtype=complex)
        for n, re, im in rows:
            c[int(n) - 1] = complex(float(re), float(im))
        return PureState(c)
    if kind == "mixed":
        rho = np.zeros((K, K), dtype=complex)
        for n, k, re, im in rows:
            rho[int(n) - 1, int(k) - 1] = complex(float(re), float(im))
        return MixedState(rho)
    raise ConfigurationError(f"unknown state kind {kind!r}")


def physical_overlap(state_a, L_a: float, state_b, L_b: float, order: int = 400) -> complex:
    """``<psi_a | psi_b>`` of two pure states living in boxes of lengths ``L_a`` and ``L_b``.

    Both wavefunctions vanish beyond their own wall, so the integral runs
    over the shorter box (Gauss-Legendre).
    """
    upper = min(L_a, L_b)
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * upper * (x + 1.0)
    w = 0.5 * upper * w
    a = wavefunction(state_a, x, L_a, frame="physical")
    b = wavefunction(state_b, x, L_b, frame="physical")
    return complex(np.sum(w * np.conj(a) * b))
