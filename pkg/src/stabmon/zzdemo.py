"""Two system qubits and one monitor: indirect readout of ``Z1 Z2``.

The monitor rotates about ``X`` only when the system sits in the ``-1``
eigenspace of ``Z1 Z2``, so a continuous ``Z_m`` measurement stays static
at ``+1`` in the ``+1`` sector and decays towards ``0`` otherwise.
"""

from __future__ import annotations

import numpy as np

from .core import QubitRegister, pauli_op

LABELS = ("1", "2", "m")


def zz_register() -> QubitRegister:
    return QubitRegister(list(LABELS))


def zz_operator(register: QubitRegister | None = None) -> np.ndarray:
    reg = register or zz_register()
    return pauli_op(reg, {"1": "Z", "2": "Z"})


def zz_hamiltonian(k: float = 1.0, register: QubitRegister | None = None) -> np.ndarray:
    """``H = k Pi_- (x) X_m`` with ``Pi_- = (I - Z1 Z2) / 2``."""
    reg = register or zz_register()
    pi_minus = (np.eye(reg.dim) - zz_operator(reg)) / 2
    return k * pi_minus @ pauli_op(reg, {"m": "X"})


def zz_initial_ket(amplitudes) -> np.ndarray:
    """System amplitudes over ``|00>, |01>, |10>, |11>`` (normalised here), monitor in ``|0>``."""
    a = np.asarray(amplitudes, dtype=complex)
    if a.shape != (4,) or not np.any(a):
        raise ValueError("need four non-zero-norm system amplitudes")
    return np.kron(a / np.linalg.norm(a), [1.0, 0.0])


def plus_probability(amplitudes) -> float:
    """Born weight ``Tr[Pi_+ rho(0)]`` of the ``Z1 Z2 = +1`` sector."""
    a = np.abs(np.asarray(amplitudes, dtype=complex)) ** 2
    return float((a[0] + a[3]) / a.sum())
