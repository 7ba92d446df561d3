"""Perturbative gadgets: 2-local base plus weak perturbation.

The low-energy Hamiltonian of ``H0 + eps V`` on the ground space ``P0`` of
``H0`` is expanded as

    H_eff = sum_m eps^m sum_{(l)} P0 V S^{l_1} V ... S^{l_{m-1}} V P0,

with ``S^l = sum_{i>0} P_i / (-E_i)^l`` and ``S^0 = -P0``. The wave-operator
factors are truncated to ``P0``, so terms are evaluated exactly as written.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .core import QubitRegister, hermitize, pauli_op

ZZ_LABELS = ("1", "2", "m1", "m2")
BS_LABELS = ("1", "2", "3", "4", "a", "b", "c", "d")


class ConvergenceError(ValueError):
    """``||eps V|| >= gap / 4`` and no override was given."""


def enumerate_index_sets(m: int) -> list[tuple[int, ...]]:
    """All ``(l_1, ..., l_{m-1})`` with ``sum = m-1`` and ``l_1 + ... + l_x >= x``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    n = m - 1
    out: list[tuple[int, ...]] = []

    def extend(prefix: tuple[int, ...], total: int):
        x = len(prefix)
        if x == n:
            if total == n:
                out.append(prefix)
            return
        for l in range(n - total + 1):
            if total + l >= x + 1:
                extend(prefix + (l,), total + l)

    extend((), 0)
    return out


@dataclass
class GadgetSpec:
    """Base ``H0`` (ground energy 0), perturbation ``V`` and strength ``eps``.

    ``scale`` is the energy unit ``K`` used to normalise residuals;
    ``rebuild`` maps a new ``eps`` to a fresh spec of the same family.
    """

    register: QubitRegister
    H0: np.ndarray
    V: np.ndarray
    eps: float
    scale: float = 1.0
    rebuild: Callable[[float], "GadgetSpec"] | None = None
    levels: np.ndarray = field(init=False)
    projectors: list[np.ndarray] = field(init=False)

    def __post_init__(self):
        self.H0 = np.asarray(self.H0, dtype=complex)
        self.V = np.asarray(self.V, dtype=complex)
        vals, vecs = np.linalg.eigh(hermitize(self.H0))
        if abs(vals[0]) > 1e-10:
            raise ValueError(f"base Hamiltonian ground energy is {vals[0]:.3e}, expected 0")
        # group degenerate levels
        groups: list[list[int]] = []
        for i, v in enumerate(vals):
            if groups and abs(v - vals[groups[-1][0]]) < 1e-9 * max(1.0, abs(v)):
                groups[-1].append(i)
            else:
                groups.append([i])
        if len(groups) < 2:
            raise ValueError("base Hamiltonian has no excited level")
        self.levels = np.array([vals[g].mean() for g in groups])
        self.levels[0] = 0.0
        self.projectors = [vecs[:, g] @ vecs[:, g].conj().T for g in groups]

    @property
    def P0(self) -> np.ndarray:
        return self.projectors[0]

    @property
    def gap(self) -> float:
        return float(self.levels[1])

    @property
    def ground_dim(self) -> int:
        return int(round(np.trace(self.P0).real))

    @property
    def hamiltonian(self) -> np.ndarray:
        return self.H0 + self.eps * self.V

    def S(self, l: int) -> np.ndarray:
        """``S^l``; ``S^0 = -P0``."""
        if l == 0:
            return -self.P0
        return sum(p / (-e) ** l for e, p in zip(self.levels[1:], self.projectors[1:]))

    def with_eps(self, eps: float) -> GadgetSpec:
        if self.rebuild is None:
            return GadgetSpec(self.register, self.H0, self.V, eps, self.scale)
        return self.rebuild(eps)


@dataclass(frozen=True)
class Convergence:
    ok: bool
    ratio: float


def convergence_check(spec: GadgetSpec) -> Convergence:
    """``ratio = 4 ||eps V||_2 / gap``; the series converges for ``ratio < 1``."""
    ratio = 4.0 * abs(spec.eps) * np.linalg.norm(spec.V, 2) / spec.gap
    return Convergence(bool(ratio < 1.0), float(ratio))


def effective_hamiltonian(spec: GadgetSpec, order: int, override: bool = False) -> np.ndarray:
    """Series ``H_eff`` through ``order`` (1, 2 or 3), supported on ``P0``.

    The third-order Bloch term ``P0 V S^2 V S^0 V P0`` is not Hermitian on
    its own; the Hermitian part is returned, which is the standard
    Hermitian effective Hamiltonian to that order.
    """
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    conv = convergence_check(spec)
    if not (conv.ok or override):
        raise ConvergenceError(f"4 ||eps V|| / gap = {conv.ratio:.3f} >= 1; pass override=True to expand anyway")
    p0, v = spec.P0, spec.V
    s_cache: dict[int, np.ndarray] = {}
    total = np.zeros_like(v)
    for m in range(1, order + 1):
        for ls in enumerate_index_sets(m):
            term = p0 @ v
            for l in ls:
                if l not in s_cache:
                    s_cache[l] = spec.S(l)
                term = term @ s_cache[l] @ v
            total += spec.eps**m * (term @ p0)
    return hermitize(total)


def low_energy_hamiltonian(spec: GadgetSpec) -> np.ndarray:
    """Exact ``sum_i E_i |e_i><e_i|`` over the ``dim P0`` lowest states of ``H0 + eps V``."""
    vals, vecs = np.linalg.eigh(hermitize(spec.hamiltonian))
    d = spec.ground_dim
    return (vecs[:, :d] * vals[:d]) @ vecs[:, :d].conj().T


def gauged_residual(h: np.ndarray, target: np.ndarray, p0: np.ndarray, scale: float) -> float:
    """``min_c ||h - target - c P0||_2 / scale``."""
    diff = h - target
    norm = lambda c: np.linalg.norm(diff - c * p0, 2)
    # the Frobenius-optimal shift is exact for a pure shift and brackets the rest
    c0 = float(np.trace(p0 @ diff).real / np.trace(p0).real)
    r = norm(c0)
    if r == 0.0:
        return 0.0
    res = minimize_scalar(norm, bounds=(c0 - r, c0 + r), method="bounded", options={"xatol": 1e-12 * r})
    return float(min(res.fun, r)) / scale


@dataclass(frozen=True)
class GadgetReport:
    eps: float
    order: int
    method: str
    residual: float
    residual_half: float
    converge_ratio: float

    @property
    def halving_ratio(self) -> float:
        return self.residual_half / self.residual if self.residual > 0 else float("nan")


def verify_gadget(
    spec: GadgetSpec,
    target: np.ndarray | Callable[[float], np.ndarray],
    order: int = 2,
    method: str = "series",
    override: bool = False,
) -> GadgetReport:
    """Residual ``min_c ||H - target - c P0||_2 / (K eps^2)`` at ``eps`` and ``eps / 2``.

    ``method='series'`` takes ``H`` from :func:`effective_hamiltonian`;
    ``method='exact'`` takes it from the exact low-energy eigenstates.
    ``target`` may depend on ``eps`` through a callable.
    """
    if method not in ("series", "exact"):
        raise ValueError(f"unknown method {method!r}")

    def residual(s: GadgetSpec) -> float:
        h = effective_hamiltonian(s, order, override) if method == "series" else low_energy_hamiltonian(s)
        t = target(s.eps) if callable(target) else np.asarray(target)
        return gauged_residual(h, t, s.P0, s.scale * s.eps**2)

    half = spec.with_eps(spec.eps / 2)
    return GadgetReport(
        eps=spec.eps,
        order=order,
        method=method,
        residual=residual(spec),
        residual_half=residual(half),
        converge_ratio=convergence_check(spec).ratio,
    )


def residual_slope(spec: GadgetSpec, eps_values, order: int = 2, override: bool = True) -> float:
    """Log-log slope of the unnormalised exact-vs-series residual over ``eps_values``."""
    res = []
    for e in eps_values:
        s = spec.with_eps(e)
        h = effective_hamiltonian(s, order, override)
        res.append(gauged_residual(low_energy_hamiltonian(s), h, s.P0, 1.0))
    return float(np.polyfit(np.log(eps_values), np.log(res), 1)[0])


# ---------------------------------------------------------------------------
# the two gadgets


def zz_register() -> QubitRegister:
    return QubitRegister(list(ZZ_LABELS))


def bs_register() -> QubitRegister:
    return QubitRegister(list(BS_LABELS))


def build_zz_gadget(K: float = 1.0, eps: float = 0.1) -> GadgetSpec:
    """``H0 = (K/2)(I - Z_m1 Z_m2)``, ``V = K(Z1 X_m1 + Z2 X_m2 + 2 eps X_m1 X_m2)``."""
    reg = zz_register()
    op = lambda d: pauli_op(reg, d)
    h0 = K / 2 * (np.eye(reg.dim) - op({"m1": "Z", "m2": "Z"}))
    v = K * (op({"1": "Z", "m1": "X"}) + op({"2": "Z", "m2": "X"}) + 2 * eps * op({"m1": "X", "m2": "X"}))
    return GadgetSpec(reg, h0, v, eps, scale=K, rebuild=lambda e: build_zz_gadget(K, e))


def zz_gadget_target(K: float, eps: float) -> np.ndarray:
    """Order-2 closed form ``K eps^2 P0 [2 (I - Z1 Z2) X_m1 X_m2 - 2] P0``."""
    reg = zz_register()
    op = lambda d: pauli_op(reg, d)
    eye = np.eye(reg.dim)
    p0 = (eye + op({"m1": "Z", "m2": "Z"})) / 2
    inner = 2 * (eye - op({"1": "Z", "2": "Z"})) @ op({"m1": "X", "m2": "X"}) - 2 * eye
    return K * eps**2 * p0 @ inner @ p0


def bs_base_hamiltonian(K: float, register: QubitRegister | None = None) -> np.ndarray:
    """``(K/2)(I - Z_a Z_b) + (K/2)(I - Z_c Z_d)``."""
    reg = register or bs_register()
    eye = np.eye(reg.dim)
    return K / 2 * (eye - pauli_op(reg, {"a": "Z", "b": "Z"})) + K / 2 * (eye - pauli_op(reg, {"c": "Z", "d": "Z"}))


def bs_perturbation(K: float, eps: float, register: QubitRegister | None = None) -> np.ndarray:
    """The 2-local perturbation ``V`` coupling system qubits 1-4 to monitors a-d."""
    reg = register or bs_register()
    c = K / (2 * np.sqrt(2))

    def field(pauli: str, signs: dict[str, int], monitor: str) -> np.ndarray:
        return sum(s * pauli_op(reg, {q: pauli, monitor: "X"}) for q, s in signs.items())

    v = c * field("Z", {"3": 1, "4": 1, "1": -1, "2": -1}, "a")
    v += c * field("Z", {"3": 1, "4": 1, "1": 1, "2": 1}, "b")
    v += c * field("X", {"2": 1, "4": 1, "1": -1, "3": -1}, "c")
    v += c * field("X", {"2": 1, "4": 1, "1": 1, "3": 1}, "d")
    gauge = (
        pauli_op(reg, {"1": "Z", "2": "Z"})
        + pauli_op(reg, {"3": "Z", "4": "Z"})
        + pauli_op(reg, {"1": "X", "3": "X"})
        + pauli_op(reg, {"2": "X", "4": "X"})
    )
    return v + K * eps / 2 * gauge


def build_bs_gadget(K: float = 1.0, eps: float = 0.1) -> GadgetSpec:
    """Eight-qubit Bacon-Shor gadget on ``(1, 2, 3, 4, a, b, c, d)``."""
    if not (K > 0 and eps > 0):
        raise ValueError("K and eps must be positive")
    reg = bs_register()
    return GadgetSpec(
        reg, bs_base_hamiltonian(K, reg), bs_perturbation(K, eps, reg), eps, scale=K,
        rebuild=lambda e: build_bs_gadget(K, e),
    )


def bs_gadget_target(K: float, eps: float) -> np.ndarray:
    """Order-2 closed form
    ``(K eps^2 / 2)[(Z1Z2 - Z3Z4) Xa Xb + (X1X3 - X2X4) Xc Xd] P0 - 2 K eps^2 P0``."""
    reg = bs_register()
    op = lambda d: pauli_op(reg, d)
    eye = np.eye(reg.dim)
    p0 = (eye + op({"a": "Z", "b": "Z"})) @ (eye + op({"c": "Z", "d": "Z"})) / 4
    zpart = (op({"1": "Z", "2": "Z"}) - op({"3": "Z", "4": "Z"})) @ op({"a": "X", "b": "X"})
    xpart = (op({"1": "X", "3": "X"}) - op({"2": "X", "4": "X"})) @ op({"c": "X", "d": "X"})
    return K * eps**2 / 2 * (zpart + xpart) @ p0 - 2 * K * eps**2 * p0


def residual_table(
    spec: GadgetSpec, eps_values=(0.2, 0.1, 0.05), orders=(1, 2, 3)
) -> list[tuple[float, int, float, float]]:
    """Rows ``(eps, order, residual, converge_ratio)``: series ``H_eff`` against the
    exact low-energy Hamiltonian, normalised by ``K eps^2``."""
    rows = []
    for e in eps_values:
        s = spec.with_eps(e)
        exact = low_energy_hamiltonian(s)
        ratio = convergence_check(s).ratio
        for m in orders:
            h = effective_hamiltonian(s, m, override=True)
            rows.append((float(e), int(m), gauged_residual(exact, h, s.P0, s.scale * e**2), ratio))
    return rows


def ground_space_ket(register: QubitRegister, system_ket: np.ndarray, monitor_bits: str) -> np.ndarray:
    """``system (x) |bits>`` for monitors that are the trailing qubits of ``register``."""
    mon = np.zeros(2 ** len(monitor_bits))
    mon[int(monitor_bits, 2)] = 1.0
    out = np.kron(np.asarray(system_ket, dtype=complex), mon)
    if out.size != register.dim:
        raise ValueError("system ket and monitor bits do not fill the register")
    return out
