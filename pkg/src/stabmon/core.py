"""Dense linear algebra and Pauli-string utilities for small qubit registers.

Operators and states are plain complex ``numpy`` arrays. A :class:`QubitRegister`
fixes the tensor-product order: the first label is the leftmost Kronecker
factor (most significant bit of the basis index).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg

__all__ = [
    "PAULI",
    "QubitRegister",
    "PauliString",
    "InvalidStateError",
    "StateDiagnostics",
    "build_pauli",
    "pauli_op",
    "eigenspace_projectors",
    "expectation",
    "matrix_exp",
    "trace_distance",
    "validate_state",
    "ket_to_dm",
    "basis_ket",
    "partial_trace",
    "is_hermitian",
    "hermitize",
    "commutator",
    "apply_local",
    "apply_local_dm",
]

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

DEFAULT_MAX_QUBITS = 10


class InvalidStateError(ValueError):
    """Raised when a matrix fails the density-matrix invariants."""


@dataclass(frozen=True)
class QubitRegister:
    """Ordered, uniquely labelled set of qubits."""

    labels: tuple[str, ...]

    def __init__(self, labels: Iterable[object]):
        labels = tuple(str(label) for label in labels)
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate qubit labels in {labels}")
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return 2**self.n

    def index(self, label: object) -> int:
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise KeyError(f"unknown qubit label {label!r}; register has {self.labels}") from None

    def __contains__(self, label: object) -> bool:
        return str(label) in self.labels

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class PauliString:
    """A real-weighted tensor product of single-qubit Paulis, e.g. ``0.5 * Z1 Z2``.

    Qubits absent from ``ops`` carry the identity.
    """

    ops: Mapping[str, str] = field(default_factory=dict)
    coeff: float = 1.0

    def __init__(self, ops: Mapping[object, str] | None = None, coeff: float = 1.0):
        ops = {str(k): str(v).upper() for k, v in (ops or {}).items()}
        for label, p in ops.items():
            if p not in PAULI:
                raise ValueError(f"unknown Pauli {p!r} on qubit {label!r}")
        if not np.isfinite(coeff):
            raise ValueError("Pauli coefficient must be finite")
        object.__setattr__(self, "ops", ops)
        object.__setattr__(self, "coeff", coeff)

    def __mul__(self, scalar: float) -> PauliString:
        return PauliString(self.ops, self.coeff * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> PauliString:
        return self * -1.0


def _check_register_size(register: QubitRegister, max_qubits: int) -> None:
    if register.n > max_qubits:
        raise ValueError(f"register of {register.n} qubits exceeds the configured maximum {max_qubits}")


def build_pauli(
    strings: Iterable[PauliString] | PauliString,
    register: QubitRegister,
    max_qubits: int = DEFAULT_MAX_QUBITS,
) -> np.ndarray:
    """Dense matrix of ``sum(coeff * tensor product)`` in register order."""
    _check_register_size(register, max_qubits)
    if isinstance(strings, PauliString):
        strings = [strings]
    total = np.zeros((register.dim, register.dim), dtype=complex)
    for s in strings:
        for label in s.ops:
            register.index(label)
        factors = [PAULI[s.ops.get(label, "I")] for label in register.labels]
        total += s.coeff * reduce(np.kron, factors, np.eye(1, dtype=complex))
    return total


def pauli_op(register: QubitRegister, ops: Mapping[object, str], coeff: float = 1.0) -> np.ndarray:
    """Shorthand for a single Pauli string, ``pauli_op(reg, {1: "Z", 2: "Z"})``."""
    return build_pauli([PauliString(ops, coeff)], register)


def is_hermitian(op: np.ndarray, atol: float = 1e-12) -> bool:
    op = np.asarray(op)
    scale = max(1.0, float(np.max(np.abs(op)))) if op.size else 1.0
    return bool(np.max(np.abs(op - op.conj().T), initial=0.0) <= atol * scale)


def hermitize(m: np.ndarray) -> np.ndarray:
    """``(m + m^dagger) / 2`` over the last two axes."""
    return 0.5 * (m + np.swapaxes(m, -1, -2).conj())


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def eigenspace_projectors(op: np.ndarray, tol: float | None = None) -> list[tuple[float, np.ndarray]]:
    """Spectral projectors of a Hermitian operator, eigenvalues ascending.

    Eigenvalues closer than ``tol`` (default ``1e-8 * ||op||``) are merged
    into one eigenspace.
    """
    op = np.asarray(op, dtype=complex)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise ValueError("operator must be square")
    if not is_hermitian(op, atol=1e-10):
        raise ValueError("eigenspace_projectors requires a Hermitian operator")
    vals, vecs = np.linalg.eigh(hermitize(op))
    if tol is None:
        tol = 1e-8 * max(float(np.max(np.abs(vals), initial=0.0)), 1.0)
    groups: list[list[int]] = []
    for i, v in enumerate(vals):
        if groups and v - vals[groups[-1][0]] <= tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    out = []
    for g in groups:
        block = vecs[:, g]
        out.append((float(np.mean(vals[g])), block @ block.conj().T))
    return out


def expectation(state: np.ndarray, op: np.ndarray) -> float:
    """``Tr[op rho]`` for a density matrix, or ``<psi|op|psi>`` for a ket."""
    state = np.asarray(state)
    op = np.asarray(op)
    if op.shape[-1] != state.shape[0] or op.shape[0] != op.shape[-1]:
        raise ValueError(f"register mismatch: operator {op.shape} vs state {state.shape}")
    if state.ndim == 1:
        value = np.vdot(state, op @ state)
    else:
        value = np.einsum("ij,ji->", op, state)
    scale = max(1.0, float(np.max(np.abs(op), initial=0.0)))
    if abs(value.imag) > 1e-10 * scale:
        raise ValueError(f"expectation has imaginary part {value.imag:.3e}; operator not Hermitian?")
    return float(value.real)


def matrix_exp(op: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Matrix exponential (Pade scaling and squaring)."""
    op = np.asarray(op, dtype=complex)
    if not np.all(np.isfinite(op)):
        raise ValueError("matrix_exp: non-finite entries")
    if not np.any(op):
        return np.eye(op.shape[0], dtype=complex)
    return scipy.linalg.expm(op)


def trace_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray | float:
    """Half the trace norm of ``a - b``; broadcasts over leading axes."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[-2:] != b.shape[-2:]:
        raise ValueError(f"register mismatch: {a.shape} vs {b.shape}")
    evals = np.linalg.eigvalsh(hermitize(a - b))
    d = 0.5 * np.sum(np.abs(evals), axis=-1)
    return float(d) if np.ndim(d) == 0 else d


@dataclass(frozen=True)
class StateDiagnostics:
    trace_deviation: float
    hermiticity_deviation: float
    min_eigenvalue: float


def validate_state(
    state: np.ndarray,
    trace_tol: float = 1e-10,
    hermitian_tol: float = 1e-12,
    eig_tol: float = 1e-8,
) -> StateDiagnostics:
    """Check the density-matrix invariants and raise :class:`InvalidStateError` on failure."""
    rho = np.asarray(state, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise InvalidStateError(f"density matrix must be square, got shape {rho.shape}")
    diag = StateDiagnostics(
        trace_deviation=float(abs(np.trace(rho) - 1.0)),
        hermiticity_deviation=float(np.max(np.abs(rho - rho.conj().T), initial=0.0)),
        min_eigenvalue=float(np.linalg.eigvalsh(hermitize(rho))[0]),
    )
    if diag.trace_deviation > trace_tol:
        raise InvalidStateError(f"trace deviates from 1 by {diag.trace_deviation:.3e}")
    if diag.hermiticity_deviation > hermitian_tol:
        raise InvalidStateError(f"not Hermitian (max deviation {diag.hermiticity_deviation:.3e})")
    if diag.min_eigenvalue < -eig_tol:
        raise InvalidStateError(f"negative eigenvalue {diag.min_eigenvalue:.3e}")
    return diag


def ket_to_dm(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.multiply.outer(psi, psi.conj()) if psi.ndim == 1 else psi[..., :, None] * psi[..., None, :].conj()


def basis_ket(register: QubitRegister, bits: Mapping[object, int] | Sequence[int] | str) -> np.ndarray:
    """Computational basis ket; ``bits`` maps labels to 0/1 (absent labels are 0)."""
    if isinstance(bits, str):
        bits = [int(b) for b in bits]
    if isinstance(bits, Mapping):
        values = [0] * register.n
        for label, b in bits.items():
            values[register.index(label)] = int(b)
    else:
        values = list(bits)
        if len(values) != register.n:
            raise ValueError("bit string length does not match register")
    index = int("".join(str(b) for b in values), 2) if values else 0
    psi = np.zeros(register.dim, dtype=complex)
    psi[index] = 1.0
    return psi


def partial_trace(rho: np.ndarray, register: QubitRegister, keep: Sequence[object]) -> np.ndarray:
    """Reduced density matrix on ``keep`` (kept in register order).

    Accepts a batch of density matrices ``(..., d, d)``.
    """
    rho = np.asarray(rho)
    keep_idx = sorted(register.index(k) for k in keep)
    drop_idx = [i for i in range(register.n) if i not in keep_idx]
    n = register.n
    lead = rho.shape[:-2]
    t = rho.reshape(lead + (2,) * (2 * n))
    nl = len(lead)
    # contract bra/ket axes of dropped qubits pairwise
    for offset, q in enumerate(sorted(drop_idx, reverse=True)):
        nq = n - offset
        t = np.trace(t, axis1=nl + q, axis2=nl + nq + q)
    dk = 2 ** len(keep_idx)
    return t.reshape(lead + (dk, dk))


def apply_local(psi: np.ndarray, n_qubits: int, qubit: int, u: np.ndarray) -> np.ndarray:
    """Apply a single-qubit matrix to the last (ket) axis of ``psi``.

    ``psi`` has shape ``(N, ..., d)`` and ``u`` is either ``(2, 2)`` or a
    per-row batch ``(N, 2, 2)``.
    """
    shape = psi.shape
    left = 2**qubit
    right = 2 ** (n_qubits - qubit - 1)
    v = psi.reshape(shape[0], -1, left, 2, right)
    if u.ndim == 2:
        out = np.einsum("ab,nrlbj->nrlaj", u, v)
    else:
        out = np.einsum("nab,nrlbj->nrlaj", u, v)
    return out.reshape(shape)


def apply_local_dm(rho: np.ndarray, n_qubits: int, qubit: int, u: np.ndarray) -> np.ndarray:
    """``u rho u^dagger`` on one qubit for a batch of density matrices ``(N, d, d)``."""
    # acting on the last axis of rho^T gives (u rho)^T
    urho = np.swapaxes(apply_local(np.swapaxes(rho, -1, -2), n_qubits, qubit, u), -1, -2)
    # m u^dagger == conj(u acting on the last axis of conj(m))
    return apply_local(urho.conj(), n_qubits, qubit, u).conj()


def batched_kron(mats: Sequence[np.ndarray]) -> np.ndarray:
    """Row-wise Kronecker product of per-row matrices ``(N, a, a), (N, b, b), ...``."""
    out = mats[0]
    for m in mats[1:]:
        n, a, _ = out.shape
        b = m.shape[1]
        out = (out[:, :, None, :, None] * m[:, None, :, None, :]).reshape(n, a * b, a * b)
    return out


def apply_block(psi: np.ndarray, n_qubits: int, first: int, u: np.ndarray) -> np.ndarray:
    """Apply per-row matrices ``u (N, 2^k, 2^k)`` to ``k`` consecutive qubits from ``first``."""
    shape = psi.shape
    dk = u.shape[-1]
    k = dk.bit_length() - 1
    left = 2**first
    right = 2 ** (n_qubits - first - k)
    v = psi.reshape(shape[0], -1, left, dk, right)
    # (N, dk, dk) @ (N, dk, r*left*right)
    m = np.moveaxis(v, 3, 1).reshape(shape[0], dk, -1)
    out = np.matmul(u, m).reshape(shape[0], dk, *v.shape[1:3], right)
    return np.moveaxis(out, 1, 3).reshape(shape)
