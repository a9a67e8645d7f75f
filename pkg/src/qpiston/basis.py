"""Truncated sine basis of the unit box and the operators built on it.

Units throughout: hbar = 1, particle mass m = 1, initial length L0 = 1.
Quantum numbers are 1-based (``n = 1`` is the ground state); arrays are
0-based, so level ``n`` lives at index ``n - 1``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, InvalidStateError

HBAR = 1.0


def quantum_numbers(K: int) -> np.ndarray:
    return np.arange(1, K + 1, dtype=float)


@lru_cache(maxsize=32)
def _overlap_matrix(K: int) -> np.ndarray:
    n = quantum_numbers(K)[:, None]
    k = quantum_numbers(K)[None, :]
    sign = np.where((n + k) % 2 == 0, 1.0, -1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        I = sign * 2.0 * n * k / (k**2 - n**2)
    np.fill_diagonal(I, -0.5)
    I.setflags(write=False)
    return I


def overlap_matrix(K: int) -> np.ndarray:
    """Matrix of ``I[n, k] = int_0^1 x phi_n(x) d/dx phi_k(x) dx``.

    With ``phi_k(x) = sqrt(2) sin(k pi x)`` the integrals are elementary:
    ``-1/2`` on the diagonal and ``(-1)**(n+k) 2nk / (k**2 - n**2)`` off it.
    The result is cached and read-only.
    """
    if int(K) != K or K < 2:
        raise ConfigurationError(f"K: truncation order must be an integer >= 2, got {K!r}")
    return _overlap_matrix(int(K))


def coupling_matrix(K: int) -> np.ndarray:
    """Off-diagonal part of :func:`overlap_matrix` (real antisymmetric)."""
    I = np.array(overlap_matrix(K))
    np.fill_diagonal(I, 0.0)
    I.setflags(write=False)
    return I


def _check_length(L: float) -> None:
    if not np.isfinite(L) or L <= 0:
        raise InvalidStateError(f"box length must be positive, got L={L!r}")


def energy_levels(K: int, L: float, mass: float = 1.0) -> np.ndarray:
    """Box spectrum ``E_n = n^2 pi^2 hbar^2 / (2 m L^2)`` for ``n = 1..K``."""
    _check_length(L)
    n = quantum_numbers(K)
    return n**2 * np.pi**2 * HBAR**2 / (2.0 * mass * L**2)


def effective_hamiltonian(L: float, V: float, I: np.ndarray, mass: float = 1.0) -> np.ndarray:
    """Generator of the fixed-domain dynamics at wall length ``L`` and speed ``V``.

    Diagonal: the box energies at ``L``. Off-diagonal: ``i hbar (V/L) I[n, k]``.
    The diagonal of ``I`` cancels against the identity part of the dilation
    generator, so no velocity-dependent diagonal term survives. Since the
    off-diagonal of ``I`` is real antisymmetric the result is exactly Hermitian.
    """
    _check_length(L)
    K = I.shape[0]
    off = np.array(I, dtype=float)
    np.fill_diagonal(off, 0.0)
    H = 1j * HBAR * (V / L) * off
    H[np.diag_indices(K)] = energy_levels(K, L, mass)
    return H
