"""Four-qubit Bacon-Shor code: operators, encoded basis and detection Hamiltonians.

System qubits are labelled ``1..4`` and the two monitors ``m_z`` (for S_z)
and ``m_x`` (for S_x). Encoded basis labels follow the order
``(Z_L, Z_G, S_x, S_z)`` with bit 0 meaning eigenvalue +1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PauliString, QubitRegister, basis_ket, build_pauli, ket_to_dm, pauli_op

SYSTEM = ("1", "2", "3", "4")
MONITORS = ("m_z", "m_x")

# (Z_L, Z_G, S_x, S_z) -> [(sign, physical bit string)], each normalised by 1/sqrt(2)
ENCODED_TABLE: dict[tuple[int, int, int, int], list[tuple[int, str]]] = {
    (0, 0, 0, 0): [(1, "0000"), (1, "1111")],
    (0, 1, 0, 0): [(1, "0101"), (1, "1010")],
    (0, 0, 1, 0): [(1, "0000"), (-1, "1111")],
    (0, 1, 1, 0): [(1, "1010"), (-1, "0101")],
    (1, 0, 0, 0): [(1, "0011"), (1, "1100")],
    (1, 1, 0, 0): [(1, "1001"), (1, "0110")],
    (1, 0, 1, 0): [(1, "1100"), (-1, "0011")],
    (1, 1, 1, 0): [(1, "0110"), (-1, "1001")],
    (0, 0, 0, 1): [(1, "0001"), (1, "1110")],
    (0, 1, 0, 1): [(1, "0100"), (1, "1011")],
    (0, 0, 1, 1): [(1, "1110"), (-1, "0001")],
    (0, 1, 1, 1): [(1, "0100"), (-1, "1011")],
    (1, 0, 0, 1): [(1, "1101"), (1, "0010")],
    (1, 1, 0, 1): [(1, "1000"), (1, "0111")],
    (1, 0, 1, 1): [(1, "0010"), (-1, "1101")],
    (1, 1, 1, 1): [(1, "1000"), (-1, "0111")],
}


def default_register() -> QubitRegister:
    return QubitRegister(SYSTEM + MONITORS)


@dataclass(frozen=True)
class CodeDefinition:
    """Stabilizers, gauge and logical operators embedded in a register."""

    S_z: np.ndarray
    S_x: np.ndarray
    Z_G: np.ndarray
    X_G: np.ndarray
    Z_L: np.ndarray
    X_L: np.ndarray
    Sx_bar: np.ndarray
    Sz_bar: np.ndarray

    @classmethod
    def on(cls, register: QubitRegister | None = None) -> CodeDefinition:
        register = register or QubitRegister(SYSTEM)
        p = lambda ops: pauli_op(register, ops)  # noqa: E731
        return cls(
            S_z=p({1: "Z", 2: "Z", 3: "Z", 4: "Z"}),
            S_x=p({1: "X", 2: "X", 3: "X", 4: "X"}),
            Z_G=p({1: "Z", 2: "Z"}),
            X_G=p({1: "X", 3: "X"}),
            Z_L=p({1: "Z", 3: "Z"}),
            X_L=p({1: "X", 2: "X"}),
            Sx_bar=p({4: "Z"}),
            Sz_bar=p({1: "X", 2: "X", 3: "X"}),
        )

    def stabilizers(self) -> list[np.ndarray]:
        """``[S_x, S_z]``, the order used for block weights ``p_{alpha beta}``."""
        return [self.S_x, self.S_z]


def _bit(value) -> int:
    if value in (0, 1):
        return int(value)
    raise ValueError(f"encoded basis bits must be 0 or 1, got {value!r}")


def encoded_state(zL, zG, sx, sz) -> np.ndarray:
    """Physical 16-dimensional ket of ``|zL zG sx sz>`` in the encoded basis."""
    key = (_bit(zL), _bit(zG), _bit(sx), _bit(sz))
    reg = QubitRegister(SYSTEM)
    psi = sum(sign * basis_ket(reg, bits) for sign, bits in ENCODED_TABLE[key])
    return psi / np.sqrt(2)


def _sign_bit(sign) -> int:
    if sign in ("+", +1, 1):
        return 0
    if sign in ("-", -1):
        return 1
    raise ValueError(f"sector sign must be '+' or '-', got {sign!r}")


def ideal_hamiltonian(k: float, register: QubitRegister | None = None) -> np.ndarray:
    """Weight-five detection Hamiltonian (k/2)(I - S_z) X_mz + (k/2)(I - S_x) X_mx."""
    register = register or default_register()
    return build_pauli(
        [
            PauliString({"m_z": "X"}, k / 2),
            PauliString({1: "Z", 2: "Z", 3: "Z", 4: "Z", "m_z": "X"}, -k / 2),
            PauliString({"m_x": "X"}, k / 2),
            PauliString({1: "X", 2: "X", 3: "X", 4: "X", "m_x": "X"}, -k / 2),
        ],
        register,
    )


def threelocal_hamiltonian(k: float, register: QubitRegister | None = None) -> np.ndarray:
    """(k/2)(Z1Z2 - Z3Z4) X_mz + (k/2)(X1X3 - X2X4) X_mx."""
    register = register or default_register()
    return build_pauli(
        [
            PauliString({1: "Z", 2: "Z", "m_z": "X"}, k / 2),
            PauliString({3: "Z", 4: "Z", "m_z": "X"}, -k / 2),
            PauliString({1: "X", 3: "X", "m_x": "X"}, k / 2),
            PauliString({2: "X", 4: "X", "m_x": "X"}, -k / 2),
        ],
        register,
    )


def encoded_threelocal_hamiltonian(k: float, register: QubitRegister | None = None) -> np.ndarray:
    """Projector form k Pi^{S_z}_- Z_G X_mz + k Pi^{S_x}_- X_G X_mx."""
    register = register or default_register()
    code = CodeDefinition.on(register)
    eye = np.eye(register.dim)
    xmz = pauli_op(register, {"m_z": "X"})
    xmx = pauli_op(register, {"m_x": "X"})
    return k * (eye - code.S_z) / 2 @ code.Z_G @ xmz + k * (eye - code.S_x) / 2 @ code.X_G @ xmx


def sector_initial_ket(sx, sz, monitors: str = "00") -> np.ndarray:
    """Ket of sigma_{sx sz}: logical |+>, gauge |0>, monitors in ``monitors``."""
    bx, bz = _sign_bit(sx), _sign_bit(sz)
    system = (encoded_state(0, 0, bx, bz) + encoded_state(1, 0, bx, bz)) / np.sqrt(2)
    mon = basis_ket(QubitRegister(range(len(monitors))), monitors)
    return np.kron(system, mon)


def sector_initial_state(sx, sz, monitors: str = "00") -> np.ndarray:
    """Density matrix sigma_{sx sz} (x) |monitors><monitors| on (1,2,3,4,m_z,m_x)."""
    return ket_to_dm(sector_initial_ket(sx, sz, monitors))
