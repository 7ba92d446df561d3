"""Error processes: instantaneous Paulis, 1/f pulse trains, constant and
on-resonance Hamiltonian errors, and Markovian Pauli white noise.

Hamiltonian-type models are sums of single-qubit terms ``h_q(t) . sigma_q``.
Inside the trajectory engine they are represented by *field drivers* that
return the per-trajectory local field vectors ``(h_x, h_y, h_z)`` at the
midpoint of every step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import PAULI, QubitRegister, apply_local_dm, eigenspace_projectors, pauli_op

AXES = ("X", "Y", "Z")
DEFAULT_TRUNCATION = 20.0


# ---------------------------------------------------------------------------
# pulse trains


@dataclass(frozen=True)
class PulseTrain:
    """Arrival times of exponentially decaying pulses of height ``epsilon``."""

    times: np.ndarray
    epsilon: float
    tau: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or np.any(np.diff(times) < 0):
            raise ValueError("pulse times must be a sorted 1-d array")
        if self.epsilon < 0 or self.tau <= 0:
            raise ValueError("epsilon must be >= 0 and tau > 0")
        object.__setattr__(self, "times", times)


def sample_pulse_times(rng: np.random.Generator, rate: float, t_final: float) -> np.ndarray:
    """Homogeneous Poisson arrivals on ``[0, t_final)`` by exponential gaps."""
    if rate < 0:
        raise ValueError("pulse rate must be non-negative")
    if rate == 0 or t_final <= 0:
        return np.empty(0)
    times = []
    t = rng.exponential(1.0 / rate)
    while t < t_final:
        times.append(t)
        t += rng.exponential(1.0 / rate)
    return np.asarray(times)


def coefficient_1f(train: PulseTrain, t, truncation: float = DEFAULT_TRUNCATION):
    """``epsilon * sum_alpha theta(t - t_alpha) exp(-(t - t_alpha)/tau)``.

    Pulses older than ``truncation * tau`` are dropped. ``t`` may be an array.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    if train.times.size == 0:
        return np.zeros_like(t) if t.ndim else 0.0
    age = t[..., None] - train.times
    live = (age >= 0) & (age <= truncation * train.tau)
    value = train.epsilon * np.sum(np.where(live, np.exp(-np.where(live, age, 0.0) / train.tau), 0.0), axis=-1)
    return float(value) if value.ndim == 0 else value


# ---------------------------------------------------------------------------
# model variants


def _labels(qubits) -> tuple[str, ...]:
    return tuple(str(q) for q in qubits)


@dataclass(frozen=True)
class InstantPauli:
    """Apply ``pauli`` on ``qubit`` once, at the first step with ``t >= time``."""

    pauli: str
    qubit: object
    time: float

    def __post_init__(self):
        if self.pauli not in AXES:
            raise ValueError(f"unknown Pauli {self.pauli!r}")
        object.__setattr__(self, "qubit", str(self.qubit))
        if self.time < 0:
            raise ValueError("event time must be non-negative")


@dataclass(frozen=True)
class OneOverF:
    """Independent shot-noise pulse trains on every ``(qubit, axis)`` pair."""

    epsilon: float
    rate: float
    tau: float
    qubits: tuple
    axes: tuple = AXES

    def __post_init__(self):
        if self.epsilon < 0 or self.rate < 0 or self.tau <= 0:
            raise ValueError("epsilon, rate must be >= 0 and tau > 0")
        object.__setattr__(self, "qubits", _labels(self.qubits))
        object.__setattr__(self, "axes", tuple(self.axes))

    def channels(self) -> list[tuple[str, str]]:
        return [(q, a) for q in self.qubits for a in self.axes]

    def realize(self, rng: np.random.Generator, t_final: float) -> dict[tuple[str, str], PulseTrain]:
        """Sample one train per channel, in ``channels()`` order."""
        return {
            ch: PulseTrain(sample_pulse_times(rng, self.rate, t_final), self.epsilon, self.tau)
            for ch in self.channels()
        }


@dataclass(frozen=True)
class ConstantHamiltonian:
    """``epsilon * sum`` of the selected single-qubit Paulis."""

    epsilon: float
    qubits: tuple
    axes: tuple = AXES

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        object.__setattr__(self, "qubits", _labels(self.qubits))
        object.__setattr__(self, "axes", tuple(self.axes))


@dataclass(frozen=True)
class OnResonance:
    """``epsilon * cos(omega t)`` times one Pauli on one qubit."""

    epsilon: float
    omega: float
    qubit: object = "1"
    axis: str = "X"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        object.__setattr__(self, "qubit", str(self.qubit))


@dataclass(frozen=True)
class WhiteNoise:
    """Markovian Pauli noise: dissipator ``gamma * sum_j (L_j rho L_j - rho)``."""

    gamma: float
    qubits: tuple
    axes: tuple = AXES

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        object.__setattr__(self, "qubits", _labels(self.qubits))
        object.__setattr__(self, "axes", tuple(self.axes))

    def jumps(self) -> list[tuple[str, str]]:
        return [(q, a) for q in self.qubits for a in self.axes]


HAMILTONIAN_MODELS = (OneOverF, ConstantHamiltonian, OnResonance)


def per_qubit(model_cls, qubits, cycle: str = "XYZ", **params) -> tuple:
    """One model per qubit with a single Pauli axis each, taken cyclically
    from ``cycle`` (qubit ``i`` gets ``cycle[i % len(cycle)]``)."""
    if not cycle or any(a not in AXES for a in cycle):
        raise ValueError(f"axis cycle must be made of X, Y, Z, got {cycle!r}")
    return tuple(
        model_cls(qubits=(q,), axes=(cycle[i % len(cycle)],), **params) for i, q in enumerate(_labels(qubits))
    )


def smallest_bohr_frequency(hamiltonian: np.ndarray, tol: float = 1e-8) -> float:
    """Smallest nonzero difference between distinct eigenvalues."""
    levels = np.array([v for v, _ in eigenspace_projectors(hamiltonian)])
    gaps = np.abs(levels[:, None] - levels[None, :])
    gaps = gaps[gaps > tol]
    if gaps.size == 0:
        raise ValueError("Hamiltonian has a single level")
    return float(gaps.min())


# ---------------------------------------------------------------------------
# operator-level evaluation


def noise_hamiltonian(
    model,
    t: float,
    register: QubitRegister,
    trains: dict[tuple[str, str], PulseTrain] | None = None,
) -> np.ndarray:
    """Hermitian error Hamiltonian of a Hamiltonian-type model at time ``t``.

    ``OneOverF`` needs the realised ``trains`` from :meth:`OneOverF.realize`.
    """
    out = np.zeros((register.dim, register.dim), dtype=complex)
    if isinstance(model, ConstantHamiltonian):
        for q in model.qubits:
            for a in model.axes:
                out += pauli_op(register, {q: a}, model.epsilon)
    elif isinstance(model, OnResonance):
        out += pauli_op(register, {model.qubit: model.axis}, model.epsilon * np.cos(model.omega * t))
    elif isinstance(model, OneOverF):
        if trains is None:
            raise ValueError("OneOverF needs realised pulse trains")
        for (q, a), train in trains.items():
            c = coefficient_1f(train, t)
            if c:
                out += pauli_op(register, {q: a}, c)
    else:
        raise TypeError(f"{type(model).__name__} is not a Hamiltonian-type noise model")
    return out


def apply_instant_pauli(rho: np.ndarray, model: InstantPauli, register: QubitRegister) -> np.ndarray:
    """``sigma rho sigma`` for the event's Pauli; accepts a ket or a density matrix."""
    if not isinstance(model, InstantPauli):
        raise TypeError("apply_instant_pauli needs an InstantPauli model")
    rho = np.asarray(rho, dtype=complex)
    sigma = PAULI[model.pauli]
    q = register.index(model.qubit)
    if rho.ndim == 1:
        from .core import apply_local

        return apply_local(rho[None, None], register.n, q, sigma)[0, 0]
    return apply_local_dm(rho[None], register.n, q, sigma)[0]


def pauli_channel_probability(gamma: float, dt: float) -> float:
    """Flip probability solving ``gamma (L rho L - rho)`` exactly over ``dt``."""
    return 0.5 * (1.0 - np.exp(-2.0 * gamma * dt))


def white_noise_step(
    rho: np.ndarray,
    gamma: float,
    jumps: Sequence[tuple[object, str]],
    register: QubitRegister,
    dt: float,
) -> np.ndarray:
    """Euler increment ``rho + gamma sum_j (L_j rho L_j - rho) dt``."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    rho = np.asarray(rho, dtype=complex)
    if gamma == 0 or not jumps:
        return rho.copy()
    acc = np.zeros_like(rho)
    for q, a in jumps:
        acc += apply_local_dm(rho[None], register.n, register.index(q), PAULI[a])[0] - rho
    return rho + gamma * dt * acc


def export_pulse_trains(path, trains: dict[tuple[str, str], PulseTrain]) -> None:
    """Audit CSV ``qubit,axis,t_pulse``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["qubit", "axis", "t_pulse"])
        for (q, a), train in trains.items():
            for t in train.times:
                writer.writerow([q, a, f"{t:.17g}"])


# ---------------------------------------------------------------------------
# batched field drivers used by the trajectory engine


def pauli_field_unitary(h: np.ndarray, dt: float) -> np.ndarray:
    """``exp(-i dt h . sigma)`` for a batch of field vectors ``h`` of shape ``(..., 3)``."""
    h = np.asarray(h, dtype=float)
    norm = np.linalg.norm(h, axis=-1)
    theta = norm * dt
    safe = np.where(norm > 0, norm, 1.0)
    n = h / safe[..., None]
    s = np.sin(theta)
    c = np.cos(theta)
    u = np.empty(h.shape[:-1] + (2, 2), dtype=complex)
    u[..., 0, 0] = c - 1j * s * n[..., 2]
    u[..., 1, 1] = c + 1j * s * n[..., 2]
    u[..., 0, 1] = -1j * s * (n[..., 0] - 1j * n[..., 1])
    u[..., 1, 0] = -1j * s * (n[..., 0] + 1j * n[..., 1])
    return u


def pauli_field_matrix(h: np.ndarray) -> np.ndarray:
    """``h . sigma`` for a batch of field vectors."""
    h = np.asarray(h, dtype=float)
    m = np.empty(h.shape[:-1] + (2, 2), dtype=complex)
    m[..., 0, 0] = h[..., 2]
    m[..., 1, 1] = -h[..., 2]
    m[..., 0, 1] = h[..., 0] - 1j * h[..., 1]
    m[..., 1, 0] = h[..., 0] + 1j * h[..., 1]
    return m


@dataclass
class FieldDriver:
    """Per-step local fields for a batch of trajectories.

    ``field(n)`` returns an array ``(batch, len(qubits), 3)`` evaluated at the
    step midpoint ``(n + 1/2) dt``.
    """

    qubits: tuple[str, ...]
    batch: int
    dt: float

    def field(self, n: int) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError


@dataclass
class ConstantDriver(FieldDriver):
    value: np.ndarray = field(default=None)

    def field(self, n: int) -> np.ndarray:
        return self.value


@dataclass
class OnResonanceDriver(FieldDriver):
    epsilon: float = 0.0
    omega: float = 0.0
    axis: int = 0

    def field(self, n: int) -> np.ndarray:
        h = np.zeros((self.batch, 1, 3))
        h[:, 0, self.axis] = self.epsilon * np.cos(self.omega * (n + 0.5) * self.dt)
        return h


class OneOverFDriver(FieldDriver):
    """Shot-noise fields evaluated by the exact recursion
    ``c_n = c_{n-1} exp(-dt/tau) + new pulses``."""

    def __init__(self, model: OneOverF, rngs: Sequence[np.random.Generator], dt: float, n_steps: int):
        super().__init__(model.qubits, len(rngs), dt)
        self.model = model
        self.decay = np.exp(-dt / model.tau)
        self.trains = [model.realize(rng, n_steps * dt) for rng in rngs]
        n_axes = 3
        kicks = []
        for b, trains in enumerate(self.trains):
            for (q, a), train in trains.items():
                qi = self.qubits.index(q)
                ai = AXES.index(a)
                steps = np.ceil(train.times / dt - 0.5).astype(int)
                steps = np.maximum(steps, 0)
                amp = model.epsilon * np.exp(-((steps + 0.5) * dt - train.times) / model.tau)
                for s, v in zip(steps, amp):
                    kicks.append((s, b, qi, ai, v))
        kicks.sort(key=lambda k: k[0])
        self._kick_step = np.array([k[0] for k in kicks], dtype=int)
        self._kick_idx = np.array([k[1:4] for k in kicks], dtype=int).reshape(-1, 3)
        self._kick_amp = np.array([k[4] for k in kicks], dtype=float)
        self._ptr = 0
        self._last = -1
        self.value = np.zeros((self.batch, len(self.qubits), n_axes))

    def field(self, n: int) -> np.ndarray:
        if n != self._last + 1:
            raise ValueError("OneOverFDriver must be stepped sequentially")
        self._last = n
        self.value *= self.decay
        lo = self._ptr
        hi = np.searchsorted(self._kick_step, n, side="right")
        if hi > lo:
            idx = self._kick_idx[lo:hi]
            np.add.at(self.value, (idx[:, 0], idx[:, 1], idx[:, 2]), self._kick_amp[lo:hi])
            self._ptr = hi
        return self.value


def make_driver(model, rngs: Sequence[np.random.Generator], dt: float, n_steps: int) -> FieldDriver:
    """Field driver for a Hamiltonian-type model over a batch of trajectories."""
    batch = len(rngs)
    if isinstance(model, ConstantHamiltonian):
        h = np.zeros((batch, len(model.qubits), 3))
        for a in model.axes:
            h[:, :, AXES.index(a)] = model.epsilon
        return ConstantDriver(model.qubits, batch, dt, value=h)
    if isinstance(model, OnResonance):
        return OnResonanceDriver((model.qubit,), batch, dt, model.epsilon, model.omega, AXES.index(model.axis))
    if isinstance(model, OneOverF):
        return OneOverFDriver(model, rngs, dt, n_steps)
    raise TypeError(f"{type(model).__name__} has no field driver")
