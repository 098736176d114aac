"""Exact two-qubit linear algebra: gates, statevector evolution, measurement,
density matrices, and Kraus noise channels.

Conventions
-----------
Basis states are ordered ``|00>, |01>, |10>, |11>`` with qubit 0 as the most
significant bit of the basis index. Pure states are complex arrays of shape
``(4,)``; density matrices are ``(4, 4)``. All operations are pure functions
on value types and thread-safe.
"""

from __future__ import annotations

import numpy as np

ATOL_UNITARY = 1e-12
ATOL_CHANNEL = 1e-10

ZERO_STATE = np.array([1, 0, 0, 0], dtype=complex)

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)

# Basis-index permutations for CNOT with (control, target) on qubits (0, 1):
# flipping the target amplitude pairing whenever the control bit is 1.
_CNOT_PERM = {
    (0, 1): np.array([0, 1, 3, 2]),
    (1, 0): np.array([0, 3, 2, 1]),
}


def _check_angle(theta: float) -> float:
    theta = float(theta)
    if not np.isfinite(theta):
        raise ValueError(f"rotation angle must be finite, got {theta!r}")
    return theta


def ry(theta: float) -> np.ndarray:
    """Single-qubit Y rotation ``[[cos(t/2), -sin(t/2)], [sin(t/2), cos(t/2)]]``.

    Real-valued convention, so RY(a) @ RY(b) == RY(a + b) exactly.
    """
    theta = _check_angle(theta)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rx(theta: float) -> np.ndarray:
    """Single-qubit X rotation ``[[cos(t/2), -i sin(t/2)], [-i sin(t/2), cos(t/2)]]``."""
    theta = _check_angle(theta)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def _check_qubit(qubit: int) -> int:
    if qubit not in (0, 1):
        raise ValueError(f"qubit index must be 0 or 1, got {qubit!r}")
    return qubit


def apply_single(state: np.ndarray, gate: np.ndarray, qubit: int) -> np.ndarray:
    """Apply a 2x2 gate to one qubit of a two-qubit state.

    Equivalent to ``(gate (x) I) @ state`` for qubit 0 and ``(I (x) gate) @ state``
    for qubit 1.
    """
    _check_qubit(qubit)
    m = np.asarray(state, dtype=complex).reshape(2, 2)
    if qubit == 0:
        m = gate @ m
    else:
        m = m @ gate.T
    return m.reshape(4)


def apply_cnot(state: np.ndarray, control: int, target: int) -> np.ndarray:
    """Apply CNOT with the given control/target qubits (a basis permutation)."""
    _check_qubit(control)
    _check_qubit(target)
    if control == target:
        raise ValueError("CNOT control and target must differ")
    state = np.asarray(state, dtype=complex)
    return state[_CNOT_PERM[(control, target)]]


def measure_probs(state: np.ndarray) -> np.ndarray:
    """Computational-basis probabilities ``|amplitude_i|^2`` for the four outcomes."""
    state = np.asarray(state, dtype=complex)
    return np.abs(state) ** 2


def state_to_density(state: np.ndarray) -> np.ndarray:
    """Pure-state density matrix ``|psi><psi|``."""
    state = np.asarray(state, dtype=complex)
    return np.outer(state, state.conj())


def is_unitary(gate: np.ndarray, atol: float = ATOL_UNITARY) -> bool:
    gate = np.asarray(gate, dtype=complex)
    return bool(np.allclose(gate.conj().T @ gate, np.eye(gate.shape[0]), atol=atol))


def apply_channel(rho: np.ndarray, kraus: list[np.ndarray], qubit: int) -> np.ndarray:
    """Apply a single-qubit Kraus channel to one qubit of a two-qubit density matrix.

    ``rho' = sum_i (K_i (x) I) rho (K_i (x) I)^dagger`` (qubit 0), analogously for
    qubit 1. The Kraus set must satisfy ``sum_i K_i^dagger K_i = I`` within 1e-10.
    """
    _check_qubit(qubit)
    rho = np.asarray(rho, dtype=complex)
    completeness = sum(K.conj().T @ K for K in kraus)
    if not np.allclose(completeness, _I2, atol=ATOL_CHANNEL):
        raise ValueError("Kraus operators do not satisfy the trace-preservation condition")
    out = np.zeros_like(rho)
    for K in kraus:
        full = np.kron(K, _I2) if qubit == 0 else np.kron(_I2, K)
        out += full @ rho @ full.conj().T
    return out


def _check_strength(gamma: float) -> float:
    gamma = float(gamma)
    if not (0.0 <= gamma <= 1.0):
        raise ValueError(f"channel strength must lie in [0, 1], got {gamma!r}")
    return gamma


def amplitude_damping(gamma: float) -> list[np.ndarray]:
    """Kraus operators for amplitude damping: |1> decays to |0> with probability gamma."""
    gamma = _check_strength(gamma)
    k0 = np.array([[1, 0], [0, np.sqrt(1 - gamma)]], dtype=complex)
    k1 = np.array([[0, np.sqrt(gamma)], [0, 0]], dtype=complex)
    return [k0, k1]


def depolarizing(gamma: float) -> list[np.ndarray]:
    """Kraus operators for the depolarizing channel ``rho -> (1-gamma) rho + gamma I/2``.

    Pauli weights sqrt(1 - 3g/4), sqrt(g/4) each, so gamma = 1 fully depolarizes
    (both-qubit application sends any state to I/4).
    """
    gamma = _check_strength(gamma)
    return [
        np.sqrt(1 - 3 * gamma / 4) * _I2,
        np.sqrt(gamma / 4) * _X,
        np.sqrt(gamma / 4) * _Y,
        np.sqrt(gamma / 4) * _Z,
    ]


def bit_flip(gamma: float) -> list[np.ndarray]:
    """Kraus operators for the bit-flip channel: X applied with probability gamma."""
    gamma = _check_strength(gamma)
    return [np.sqrt(1 - gamma) * _I2, np.sqrt(gamma) * _X]


def phase_flip(gamma: float) -> list[np.ndarray]:
    """Kraus operators for the phase-flip channel: Z applied with probability gamma.

    Z is diagonal in the computational basis, so this channel never changes
    measurement probabilities.
    """
    gamma = _check_strength(gamma)
    return [np.sqrt(1 - gamma) * _I2, np.sqrt(gamma) * _Z]


CHANNELS = {
    "AD": amplitude_damping,
    "DP": depolarizing,
    "BF": bit_flip,
    "PF": phase_flip,
}
