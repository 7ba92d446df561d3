"""Monitored quantum trajectories: measurement records, Kraus and Ito updates.

A monitored observable is a single-qubit ``Z`` on a named monitor qubit, so
it is diagonal in the computational basis. The measurement record is

    dI = <Z_m> dt + dW / (2 sqrt(lambda))

and the Kraus update is ``rho -> A rho A^dagger / Tr`` with
``A = exp(-i H dt - sum_j lambda_j (dI_j/dt - Z_j)^2 dt)``. Dropping the
state-independent constants, the measurement part of ``A`` is the diagonal
``exp(sum_j 2 lambda_j z_j dI_j)``; it is combined with the unitary part as
a symmetric split ``U_half D U_half``.

The batched engine (:func:`propagate`) advances many trajectories at once.
Pure states are stored as kets ``(N, r, d)``, mixed states as density
matrices ``(N, d, d)``. For the Kraus scheme the stored state is kept in the
frame ``phi = U_half^dagger psi`` so that each step costs a single product
with the full-step unitary.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import (
    PAULI,
    QubitRegister,
    apply_block,
    apply_local,
    apply_local_dm,
    batched_kron,
    hermitize,
    is_hermitian,
    matrix_exp,
    pauli_op,
)
from .noise import (
    HAMILTONIAN_MODELS,
    ConstantHamiltonian,
    InstantPauli,
    WhiteNoise,
    make_driver,
    noise_hamiltonian,
    pauli_channel_probability,
    pauli_field_matrix,
    pauli_field_unitary,
    sample_pulse_times,
)

STABILITY_GUARD = 0.05
NORM_FLOOR = 1e-30


class NumericalAbort(RuntimeError):
    """A trajectory left the space of valid states; ``step`` is the failing step."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


# ---------------------------------------------------------------------------
# channels and noise sources


@dataclass(frozen=True)
class MeasurementChannel:
    """Continuous measurement of ``Z`` on one monitor qubit at rate ``rate``."""

    register: QubitRegister
    label: str
    rate: float

    def __post_init__(self):
        object.__setattr__(self, "label", str(self.label))
        self.register.index(self.label)
        if not self.rate > 0:
            raise ValueError("measurement rate must be positive")

    @property
    def qubit(self) -> int:
        return self.register.index(self.label)

    @property
    def z(self) -> np.ndarray:
        """Diagonal of the observable, entries +-1."""
        n, q = self.register.n, self.qubit
        idx = np.arange(self.register.dim)
        return 1.0 - 2.0 * ((idx >> (n - 1 - q)) & 1)

    @property
    def observable(self) -> np.ndarray:
        return pauli_op(self.register, {self.label: "Z"})


def _channel_arrays(channels: Sequence[MeasurementChannel]) -> tuple[np.ndarray, np.ndarray]:
    if not channels:
        return np.zeros((0, 1)), np.zeros(0)
    return np.array([c.z for c in channels]), np.array([c.rate for c in channels], dtype=float)


def trajectory_seed(master_seed: int, index: int, stream: int) -> np.random.SeedSequence:
    """Counter-based seed for ``(trajectory index, stream)``; stream 0 is Wiener noise."""
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index), int(stream)))


def wiener_increment(rng: np.random.Generator, dt: float, size=None):
    """Gaussian increment with mean 0 and variance ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return rng.normal(0.0, np.sqrt(dt), size=size)


class WienerSource:
    """Per-channel Wiener streams drawn in chunks from one seed.

    The ``i``-th call to :meth:`increments` returns the same numbers for the
    same seed, independently of ``chunk``.
    """

    def __init__(self, seed, n_channels: int = 1, chunk: int = 1024):
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self.n_channels = n_channels
        self._rngs = [np.random.default_rng(s) for s in ss.spawn(n_channels)]
        self._chunk = chunk
        self._buf = np.empty((0, n_channels))
        self._pos = 0

    def block(self, k: int) -> np.ndarray:
        """Next ``k`` standard-normal draws per channel, shape ``(k, n_channels)``."""
        return np.stack([rng.standard_normal(k) for rng in self._rngs], axis=1)

    def standard(self) -> np.ndarray:
        if self._pos >= self._buf.shape[0]:
            self._buf = self.block(self._chunk)
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out

    def increments(self, dt: float) -> np.ndarray:
        if not dt > 0:
            raise ValueError("dt must be positive")
        return np.sqrt(dt) * self.standard()


class _BatchWiener:
    def __init__(self, sources: Sequence[WienerSource], chunk: int):
        self.sources = sources
        self.chunk = chunk
        self._buf = None
        self._pos = chunk

    def standard(self) -> np.ndarray:
        if self._pos >= self.chunk:
            self._buf = np.stack([s.block(self.chunk) for s in self.sources], axis=1)  # (chunk, N, n_ch)
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out


# ---------------------------------------------------------------------------
# single-state updates


def emit_record_step(state: np.ndarray, channel: MeasurementChannel, dW: float, dt: float) -> float:
    """``dI = <Z_m> dt + dW / (2 sqrt(lambda))`` for a ket or density matrix."""
    state = np.asarray(state)
    z = channel.z
    p = np.abs(state) ** 2 if state.ndim == 1 else np.real(np.diagonal(state))
    mean = float(p @ z / np.sum(p))
    return mean * dt + dW / (2.0 * np.sqrt(channel.rate))


def measurement_diagonal(zs: np.ndarray, rates: np.ndarray, dIs: np.ndarray) -> np.ndarray:
    """Diagonal of ``exp(sum_j 2 lambda_j Z_j dI_j)``, scaled so its maximum is 1.

    ``dIs`` may carry leading batch axes; the result has shape ``(..., d)``.
    """
    dIs = np.asarray(dIs, dtype=float)
    if zs.shape[0] == 0:
        return np.ones(dIs.shape[:-1] + (zs.shape[1],))
    expo = (2.0 * rates * dIs) @ zs
    expo -= expo.max(axis=-1, keepdims=True)
    return np.exp(expo)


def unitary_half(hamiltonian: np.ndarray, dt: float) -> np.ndarray:
    return matrix_exp(-0.5j * dt * np.asarray(hamiltonian, dtype=complex))


def kraus_step(
    rho: np.ndarray,
    hamiltonian: np.ndarray,
    channels: Sequence[MeasurementChannel],
    dIs: Sequence[float],
    dt: float,
    u_half: np.ndarray | None = None,
) -> np.ndarray:
    """One Kraus update ``A rho A^dagger / Tr`` with ``A = U_half D U_half``."""
    if len(dIs) != len(channels):
        raise ValueError("need one record increment per channel")
    rho = np.asarray(rho, dtype=complex)
    if u_half is None:
        u_half = unitary_half(hamiltonian, dt)
    zs, rates = _channel_arrays(channels)
    if len(channels):
        diag = measurement_diagonal(zs, rates, np.asarray(dIs, dtype=float))
        a = (u_half * diag) @ u_half
    else:
        a = u_half @ u_half
    out = a @ rho @ a.conj().T
    tr = np.trace(out).real
    if not tr > NORM_FLOOR:
        raise NumericalAbort(f"vanishing normalisation {tr:.3e}; record inconsistent with state")
    return hermitize(out / tr)


def ito_increment(
    rho: np.ndarray,
    hamiltonian: np.ndarray,
    zs: np.ndarray,
    rates: np.ndarray,
    dWs: np.ndarray,
    dt: float,
) -> np.ndarray:
    """Right side of the Ito equation for a batch ``(..., d, d)``, summed over channels."""
    h_rho = np.matmul(hamiltonian, rho)
    drho = -1j * (h_rho - np.swapaxes(h_rho, -1, -2).conj()) * dt
    pops = np.real(np.diagonal(rho, axis1=-2, axis2=-1))
    for j in range(zs.shape[0]):
        z = zs[j]
        lam = rates[j]
        mean = pops @ z
        drho += lam * dt * (np.multiply.outer(z, z) - 1.0) * rho
        weight = z[:, None] + z[None, :] - 2.0 * mean[..., None, None]
        drho += np.sqrt(lam) * np.asarray(dWs)[..., j, None, None] * weight * rho
    return drho


def ito_step(
    rho: np.ndarray,
    hamiltonian: np.ndarray,
    channels: Sequence[MeasurementChannel],
    dWs: Sequence[float],
    dt: float,
    dissipators: Sequence[tuple[float, np.ndarray]] = (),
    eig_tol: float | None = None,
) -> np.ndarray:
    """Euler-Maruyama step of
    ``d rho = -i[H, rho] dt + sum_j lambda (Z rho Z - rho) dt + sqrt(lambda)(Z rho + rho Z - 2<Z> rho) dW``.

    ``dissipators`` adds ``gamma (L rho L^dagger - rho) dt`` for unitary ``L``.
    ``eig_tol`` bounds the tolerated negative eigenvalue; by default it is
    ``max(1e-8, 50 lambda_max dt)``, the scale of the Euler-Maruyama
    positivity error on pure states.
    """
    if len(dWs) != len(channels):
        raise ValueError("need one Wiener increment per channel")
    rho = np.asarray(rho, dtype=complex)
    zs, rates = _channel_arrays(channels)
    out = rho + ito_increment(rho, np.asarray(hamiltonian, dtype=complex), zs, rates, np.asarray(dWs, float), dt)
    for gamma, op in dissipators:
        out += gamma * dt * (op @ rho @ op.conj().T - rho)
    tr = np.trace(out).real
    if abs(tr - 1.0) > 1e-8:
        raise NumericalAbort(f"trace drifted by {abs(tr - 1.0):.3e} in one step")
    out = hermitize(out / tr)
    if eig_tol is None:
        eig_tol = default_ito_eig_tol(rates, dt)
    lo = np.linalg.eigvalsh(out)[0]
    if lo < -eig_tol:
        raise NumericalAbort(f"negative eigenvalue {lo:.3e}; dt too large")
    return out


def default_ito_eig_tol(rates: np.ndarray, dt: float) -> float:
    lam = float(np.max(rates)) if len(rates) else 0.0
    return max(1e-8, 50.0 * lam * dt)


# ---------------------------------------------------------------------------
# batched states


class KetBatch:
    """Unnormalised pure-state ensemble, ``psi`` of shape ``(N, r, d)``.

    With ``r > 1`` each row represents ``sum_j |psi_j><psi_j| / sum_j ||psi_j||^2``.
    """

    def __init__(self, psi: np.ndarray):
        self.psi = np.ascontiguousarray(psi, dtype=complex)

    @property
    def batch(self) -> int:
        return self.psi.shape[0]

    def copy(self) -> KetBatch:
        return KetBatch(self.psi.copy())

    def matmul(self, m: np.ndarray) -> None:
        n, r, d = self.psi.shape
        self.psi = (self.psi.reshape(n * r, d) @ m.T).reshape(n, r, d)

    def rows_matmul(self, rows: np.ndarray, m: np.ndarray) -> None:
        self.psi[rows] = self.psi[rows] @ m.T

    def local(self, n_qubits: int, qubit: int, u: np.ndarray, rows=None) -> None:
        if rows is None:
            self.psi = apply_local(self.psi, n_qubits, qubit, u)
        else:
            self.psi[rows] = apply_local(self.psi[rows], n_qubits, qubit, u)

    def scale_diag(self, diag: np.ndarray) -> None:
        self.psi *= diag[:, None, :]

    def populations(self) -> np.ndarray:
        return np.sum(self.psi.real**2 + self.psi.imag**2, axis=1)

    def normalize(self) -> np.ndarray:
        n = self.psi.shape[0]
        v = np.ascontiguousarray(self.psi).reshape(n, -1).view(np.float64)
        norm = np.einsum("ni,ni->n", v, v)
        ok = np.isfinite(norm) & (norm > NORM_FLOOR)
        self.psi /= np.sqrt(np.where(ok, norm, 1.0))[:, None, None]
        return ok

    def expect(self, op: np.ndarray) -> np.ndarray:
        n, r, d = self.psi.shape
        o_psi = (self.psi.reshape(n * r, d) @ op.T).reshape(n, r, d)
        num = np.einsum("nrd,nrd->n", self.psi.conj(), o_psi).real
        return num / np.sum(self.populations(), axis=1)

    def density(self) -> np.ndarray:
        rho = np.einsum("nri,nrj->nij", self.psi, self.psi.conj())
        return rho / np.trace(rho, axis1=1, axis2=2).real[:, None, None]

    def reset_rows(self, rows, template: KetBatch) -> None:
        self.psi[rows] = template.psi[rows]


class DensityBatch:
    """Density-matrix ensemble ``rho`` of shape ``(N, d, d)``."""

    def __init__(self, rho: np.ndarray):
        self.rho = np.ascontiguousarray(rho, dtype=complex)

    @property
    def batch(self) -> int:
        return self.rho.shape[0]

    def copy(self) -> DensityBatch:
        return DensityBatch(self.rho.copy())

    def matmul(self, m: np.ndarray) -> None:
        n, d, _ = self.rho.shape
        left = (m @ self.rho.transpose(1, 0, 2).reshape(d, n * d)).reshape(d, n, d).transpose(1, 0, 2)
        self.rho = (left.reshape(n * d, d) @ m.conj().T).reshape(n, d, d)

    def rows_matmul(self, rows: np.ndarray, m: np.ndarray) -> None:
        self.rho[rows] = m @ self.rho[rows] @ m.conj().T

    def local(self, n_qubits: int, qubit: int, u: np.ndarray, rows=None) -> None:
        if rows is None:
            self.rho = apply_local_dm(self.rho, n_qubits, qubit, u)
        else:
            self.rho[rows] = apply_local_dm(self.rho[rows], n_qubits, qubit, u)

    def scale_diag(self, diag: np.ndarray) -> None:
        self.rho *= diag[:, :, None] * diag[:, None, :]

    def populations(self) -> np.ndarray:
        return np.real(np.diagonal(self.rho, axis1=1, axis2=2))

    def normalize(self) -> np.ndarray:
        tr = np.sum(self.populations(), axis=1)
        ok = np.isfinite(tr) & (tr > NORM_FLOOR)
        self.rho /= np.where(ok, tr, 1.0)[:, None, None]
        self.rho = hermitize(self.rho)
        return ok

    def expect(self, op: np.ndarray) -> np.ndarray:
        num = np.einsum("ij,nji->n", op, self.rho).real
        return num / np.sum(self.populations(), axis=1)

    def density(self) -> np.ndarray:
        return self.rho / np.trace(self.rho, axis1=1, axis2=2).real[:, None, None]

    def min_eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(hermitize(self.rho))[:, 0]

    def reset_rows(self, rows, template: DensityBatch) -> None:
        self.rho[rows] = template.rho[rows]


# ---------------------------------------------------------------------------
# configuration


Observable = np.ndarray | Callable[[KetBatch | DensityBatch], np.ndarray]


@dataclass
class TrajectoryConfig:
    """Everything needed to simulate one monitored system.

    ``hamiltonian`` is the static part; time dependence enters through
    ``noise``. ``observables`` maps names to Hermitian operators or to
    callables on a state batch returning one value per trajectory.
    """

    register: QubitRegister
    hamiltonian: np.ndarray
    channels: tuple[MeasurementChannel, ...]
    initial_state: np.ndarray
    dt: float
    t_final: float
    scheme: str = "kraus"
    noise: tuple = ()
    observables: Mapping[str, Observable] = field(default_factory=dict)
    log_stride: int = 10
    state_mode: str = "auto"
    keep_records: bool = True
    stability_guard: float = STABILITY_GUARD
    eig_tol: float | None = None

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def spectral_scale(self) -> float:
        vals = np.linalg.eigvalsh(hermitize(np.asarray(self.hamiltonian, dtype=complex)))
        return 0.5 * float(vals[-1] - vals[0])

    def validate(self) -> None:
        d = self.register.dim
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_final < self.dt:
            raise ValueError("t_final must be at least dt")
        if self.scheme not in ("kraus", "ito"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.state_mode not in ("auto", "ket", "dm"):
            raise ValueError(f"unknown state mode {self.state_mode!r}")
        if self.hamiltonian.shape != (d, d) or not is_hermitian(self.hamiltonian, atol=1e-10):
            raise ValueError("hamiltonian must be a Hermitian operator on the register")
        for c in self.channels:
            if c.register != self.register:
                raise ValueError(f"channel {c.label} is defined on a different register")
        s = np.asarray(self.initial_state)
        if s.shape not in ((d,), (d, d)):
            raise ValueError(f"initial state shape {s.shape} does not match register dim {d}")
        rate = max((c.rate for c in self.channels), default=0.0)
        scale = self.dt * max(rate, self.spectral_scale())
        if scale > self.stability_guard:
            raise ValueError(f"dt * max(lambda, |H|) = {scale:.3g} exceeds the stability guard {self.stability_guard}")
        if self.log_stride < 1:
            raise ValueError("log_stride must be >= 1")
        for m in self.noise:
            if isinstance(m, InstantPauli | WhiteNoise | ConstantHamiltonian) or isinstance(m, HAMILTONIAN_MODELS):
                continue
            raise TypeError(f"unsupported noise model {m!r}")

    def resolved_mode(self) -> str:
        if self.scheme == "ito":
            return "dm"
        if self.state_mode != "auto":
            return self.state_mode
        s = np.asarray(self.initial_state)
        if s.ndim == 1:
            return "ket"
        return "ket" if _is_pure(s) else "dm"


def _is_pure(rho: np.ndarray, tol: float = 1e-10) -> bool:
    return abs(np.trace(rho @ rho).real - 1.0) < tol


def _pure_ket(state: np.ndarray) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    if state.ndim == 1:
        return state / np.linalg.norm(state)
    vals, vecs = np.linalg.eigh(hermitize(state))
    return vecs[:, -1]


# ---------------------------------------------------------------------------
# consumers


class Consumer:
    """Record-driven side computation (estimator, window average, decisions).

    ``start`` is called once per batch, ``update`` after every step with the
    record increments ``(N, n_channels)``, ``log`` at every logged time and
    ``finish`` at the end; the latter two return ``{name: (N,) array}``.
    """

    def start(self, batch: int, n_steps: int, dt: float, stride: int) -> None:
        pass

    def update(self, step: int, dI: np.ndarray) -> None:
        pass

    def log(self) -> dict[str, np.ndarray]:
        return {}

    def finish(self) -> dict[str, np.ndarray]:
        return {}

    def mark_failed(self, rows: np.ndarray) -> None:
        pass


# ---------------------------------------------------------------------------
# batched propagation


@dataclass
class BatchResult:
    indices: np.ndarray
    times: np.ndarray
    observables: dict[str, np.ndarray]
    readouts: dict[str, np.ndarray]
    summaries: dict[str, np.ndarray]
    records: np.ndarray | None
    final: KetBatch | DensityBatch
    failures: list[tuple[int, int, str]]


class _Propagator:
    def __init__(self, config: TrajectoryConfig, master_seed: int, indices: Sequence[int]):
        config.validate()
        self.cfg = config
        self.reg = config.register
        self.n = self.reg.n
        self.indices = np.asarray(indices, dtype=int)
        self.batch = len(self.indices)
        self.dt = config.dt
        self.n_steps = config.n_steps
        self.mode = config.resolved_mode()
        self.zs, self.rates = _channel_arrays(config.channels)
        self.n_ch = len(config.channels)

        static = [m for m in config.noise if isinstance(m, ConstantHamiltonian)]
        h = np.asarray(config.hamiltonian, dtype=complex).copy()
        for m in static:
            h += noise_hamiltonian(m, 0.0, self.reg)
        self.h = h
        self.h_is_zero = not np.any(h)
        self.u_half = unitary_half(h, self.dt)
        self.u_full = self.u_half @ self.u_half

        self.wiener = _BatchWiener(
            [WienerSource(trajectory_seed(master_seed, i, 0), max(self.n_ch, 1)) for i in self.indices], chunk=256
        )
        noise_rngs = [np.random.default_rng(trajectory_seed(master_seed, i, 1)) for i in self.indices]
        jump_rngs = [np.random.default_rng(trajectory_seed(master_seed, i, 2)) for i in self.indices]

        dyn = [m for m in config.noise if isinstance(m, HAMILTONIAN_MODELS) and not isinstance(m, ConstantHamiltonian)]
        self.drivers = [make_driver(m, noise_rngs, self.dt, self.n_steps) for m in dyn]
        self.field_qubits = sorted({self.reg.index(q) for d in self.drivers for q in d.qubits})
        channel_qubits = {c.qubit for c in config.channels}
        self.noise_commutes_with_record = not (set(self.field_qubits) & channel_qubits)

        self.events: dict[int, list[tuple[int, np.ndarray]]] = {}
        for m in config.noise:
            if isinstance(m, InstantPauli):
                step = int(np.ceil(m.time / self.dt - 1e-9))
                if step < self.n_steps:
                    self.events.setdefault(step, []).append((self.reg.index(m.qubit), PAULI[m.pauli]))

        self.white = [m for m in config.noise if isinstance(m, WhiteNoise)]
        self.jump_ops = [(self.reg.index(q), PAULI[a], m.gamma) for m in self.white for q, a in m.jumps()]
        self.jump_schedule: dict[int, list[tuple[int, int]]] = {}
        if self.mode == "ket" and self.jump_ops:
            for b, rng in enumerate(jump_rngs):
                for j, (_, _, gamma) in enumerate(self.jump_ops):
                    for t in sample_pulse_times(rng, gamma, self.n_steps * self.dt):
                        step = min(int(t // self.dt), self.n_steps - 1)
                        self.jump_schedule.setdefault(step, []).append((b, j))

        init = np.asarray(config.initial_state, dtype=complex)
        if self.mode == "ket":
            psi = _pure_ket(init)
            state = KetBatch(np.broadcast_to(psi, (self.batch, 1, psi.size)).copy())
        else:
            rho = init if init.ndim == 2 else np.outer(init, init.conj())
            state = DensityBatch(np.broadcast_to(rho, (self.batch,) + rho.shape).copy())
        self.initial = state.copy()
        self.kraus = config.scheme == "kraus"
        if self.kraus and not self.h_is_zero:
            # stored frame: phi = U_half^dagger psi
            state.matmul(self.u_half.conj().T)
            self.initial_frame = state.copy()
        else:
            self.initial_frame = state.copy()
        self.state = state

        self.eig_tol = config.eig_tol
        if self.eig_tol is None:
            self.eig_tol = default_ito_eig_tol(self.rates, self.dt) if config.scheme == "ito" else 1e-8
        self.failed = np.zeros(self.batch, dtype=bool)
        self.failures: list[tuple[int, int, str]] = []

        self.commuting = {}
        for name, obs in config.observables.items():
            if callable(obs):
                self.commuting[name] = False
            else:
                obs = np.asarray(obs, dtype=complex)
                self.commuting[name] = bool(np.max(np.abs(obs @ self.h - self.h @ obs), initial=0.0) < 1e-12)

    # -- helpers --------------------------------------------------------

    def physical(self) -> KetBatch | DensityBatch:
        if self.kraus and not self.h_is_zero:
            s = self.state.copy()
            s.matmul(self.u_half)
            return s
        return self.state

    def _fail(self, rows: np.ndarray, step: int, message: str) -> None:
        new = rows & ~self.failed
        for b in np.flatnonzero(new):
            self.failures.append((int(self.indices[b]), step, message))
        self.failed |= new
        if np.any(new):
            self.state.reset_rows(new, self.initial_frame)

    def _fields(self, n: int) -> dict[int, np.ndarray]:
        total: dict[int, np.ndarray] = {}
        for d in self.drivers:
            h = d.field(n)
            for k, q in enumerate(d.qubits):
                qi = self.reg.index(q)
                total[qi] = total.get(qi, 0.0) + h[:, k, :]
        return total

    def _apply_fields(self, fields: dict[int, np.ndarray], tau: float) -> None:
        us = {qi: pauli_field_unitary(h, tau) for qi, h in fields.items() if np.any(h)}
        if self.mode != "ket":
            for qi, u in us.items():
                self.state.local(self.n, qi, u)
            return
        # neighbouring qubits are fused into 4x4 blocks, which halves the passes over psi
        order = sorted(us)
        i = 0
        while i < len(order):
            qi = order[i]
            if i + 1 < len(order) and order[i + 1] == qi + 1:
                u = batched_kron([us[qi], us[qi + 1]])
                self.state.psi = apply_block(self.state.psi, self.n, qi, u)
                i += 2
            else:
                self.state.local(self.n, qi, us[qi])
                i += 1

    def _apply_noise_mid(self, n: int) -> None:
        for qi, sigma in self.events.get(n, ()):
            self.state.local(self.n, qi, sigma)
        if self.mode == "ket":
            for b, j in self.jump_schedule.get(n, ()):
                qi, sigma, _ = self.jump_ops[j]
                rows = np.zeros(self.batch, dtype=bool)
                rows[b] = True
                self.state.local(self.n, qi, sigma, rows=rows)
        elif self.kraus:
            for qi, sigma, gamma in self.jump_ops:
                p = pauli_channel_probability(gamma, self.dt)
                flipped = apply_local_dm(self.state.rho, self.n, qi, sigma)
                self.state.rho = (1 - p) * self.state.rho + p * flipped

    def _observe(self) -> dict[str, np.ndarray]:
        out = {}
        phys = None
        for name, obs in self.cfg.observables.items():
            if self.commuting[name]:
                vals = self.state.expect(np.asarray(obs, dtype=complex))
            else:
                if phys is None:
                    phys = self.physical()
                vals = obs(phys) if callable(obs) else phys.expect(np.asarray(obs, dtype=complex))
            vals = np.array(vals, dtype=float)
            vals[self.failed] = np.nan
            out[name] = vals
        return out

    # -- steps ----------------------------------------------------------

    def _kraus_step(self, n: int, dW: np.ndarray) -> np.ndarray:
        s = self.state
        if not self.h_is_zero:
            s.matmul(self.u_full)
        self._apply_noise_mid(n)
        fields = self._fields(n) if self.drivers else {}
        split = not self.noise_commutes_with_record
        if fields and split:
            self._apply_fields(fields, 0.5 * self.dt)
        if self.n_ch:
            pops = s.populations()
            mean = (pops @ self.zs.T) / np.sum(pops, axis=1, keepdims=True)
            dI = mean * self.dt + dW / (2.0 * np.sqrt(self.rates))
            s.scale_diag(measurement_diagonal(self.zs, self.rates, dI))
        else:
            dI = np.zeros((self.batch, 0))
        if fields:
            self._apply_fields(fields, 0.5 * self.dt if split else self.dt)
        return dI

    def _ito_step(self, n: int, dW: np.ndarray) -> np.ndarray:
        s = self.state
        rho = s.rho
        pops = np.real(np.diagonal(rho, axis1=1, axis2=2))
        if self.n_ch:
            mean = (pops @ self.zs.T) / np.sum(pops, axis=1, keepdims=True)
            dI = mean * self.dt + dW / (2.0 * np.sqrt(self.rates))
        else:
            dI = np.zeros((self.batch, 0))
        drho = ito_increment(rho, self.h, self.zs, self.rates, dW, self.dt)
        if self.drivers:
            for qi, h in self._fields(n).items():
                m = pauli_field_matrix(h)
                mr = np.swapaxes(apply_local(np.swapaxes(rho, -1, -2), self.n, qi, m), -1, -2)
                drho += -1j * (mr - np.swapaxes(mr, -1, -2).conj()) * self.dt
        for qi, sigma, gamma in self.jump_ops:
            drho += gamma * self.dt * (apply_local_dm(rho, self.n, qi, sigma) - rho)
        new = rho + drho
        tr = np.real(np.trace(new, axis1=1, axis2=2))
        drift = np.abs(tr - 1.0) > 1e-8
        s.rho = new
        for qi, sigma in self.events.get(n, ()):
            s.local(self.n, qi, sigma)
        if np.any(drift & ~self.failed):
            self._fail(drift, n, "trace drift above 1e-8 in one step")
        return dI

    def run(self, consumers: Sequence[Consumer] = ()) -> BatchResult:
        stride = self.cfg.log_stride
        log_steps = [k for k in range(0, self.n_steps + 1) if k % stride == 0 or k == self.n_steps]
        for c in consumers:
            c.start(self.batch, self.n_steps, self.dt, stride)
        obs_log = {name: [] for name in self.cfg.observables}
        read_log: dict[str, list] = {}

        def record(step: int):
            for name, vals in self._observe().items():
                obs_log[name].append(vals)
            for c in consumers:
                for name, vals in c.log().items():
                    read_log.setdefault(name, []).append(np.asarray(vals, dtype=float))

        records = np.empty((self.batch, self.n_steps, self.n_ch)) if self.cfg.keep_records else None
        record(0)
        check_dm = self.mode == "dm"
        for n in range(self.n_steps):
            dW = np.sqrt(self.dt) * self.wiener.standard()[:, : self.n_ch]
            dI = self._kraus_step(n, dW) if self.kraus else self._ito_step(n, dW)
            ok = self.state.normalize()
            if not np.all(ok | self.failed):
                self._fail(~ok, n, "vanishing normalisation")
            if records is not None:
                records[:, n] = dI
            for c in consumers:
                c.update(n, dI)
            if (n + 1) in log_steps or (n + 1) == self.n_steps:
                if check_dm:
                    lo = self.state.min_eigenvalues()
                    bad = lo < -self.eig_tol
                    if np.any(bad & ~self.failed):
                        self._fail(bad, n, f"negative eigenvalue below -{self.eig_tol:.1e}")
                if np.any(self.failed):
                    for c in consumers:
                        c.mark_failed(self.failed)
                record(n + 1)
        summaries: dict[str, np.ndarray] = {}
        for c in consumers:
            summaries.update(c.finish())
        return BatchResult(
            indices=self.indices,
            times=np.array(log_steps) * self.dt,
            observables={k: np.stack(v, axis=1) for k, v in obs_log.items()},
            readouts={k: np.stack(v, axis=1) for k, v in read_log.items()},
            summaries=summaries,
            records=records,
            final=self.physical(),
            failures=self.failures,
        )


def propagate(
    config: TrajectoryConfig,
    master_seed: int,
    indices: Sequence[int],
    consumers: Sequence[Consumer] = (),
) -> BatchResult:
    """Advance the trajectories ``indices`` (seeded by ``master_seed``) together."""
    return _Propagator(config, master_seed, indices).run(consumers)


@dataclass
class Trajectory:
    times: np.ndarray
    observables: dict[str, np.ndarray]
    readouts: dict[str, np.ndarray]
    summaries: dict[str, float]
    records: np.ndarray | None
    final_state: np.ndarray


def run_trajectory(
    config: TrajectoryConfig,
    seed: int = 0,
    consumers: Sequence[Consumer] = (),
    index: int = 0,
) -> Trajectory:
    """Single trajectory ``index`` of the ensemble seeded by ``seed``.

    Raises :class:`NumericalAbort` (annotated with the step) if the state
    becomes invalid.
    """
    res = propagate(config, seed, [index], consumers)
    if res.failures:
        _, step, msg = res.failures[0]
        raise NumericalAbort(msg, step)
    if isinstance(res.final, KetBatch):
        psi = res.final.psi[0, 0]
        final = psi / np.linalg.norm(psi)
    else:
        final = res.final.density()[0]
    return Trajectory(
        times=res.times,
        observables={k: v[0] for k, v in res.observables.items()},
        readouts={k: v[0] for k, v in res.readouts.items()},
        summaries={k: float(v[0]) for k, v in res.summaries.items()},
        records=None if res.records is None else res.records[0],
        final_state=final,
    )


def with_overrides(config: TrajectoryConfig, **kw) -> TrajectoryConfig:
    return replace(config, **kw)
