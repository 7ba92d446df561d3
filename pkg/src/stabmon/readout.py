"""Turning measurement records into stabilizer decisions.

Two readouts are provided: a Bayesian estimator state driven by the
records of the real system, and the windowed record average ``Ibar(t)``.
Both exist as single-trajectory objects and as batched consumers for the
trajectory engine.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import QubitRegister, commutator, eigenspace_projectors, hermitize
from .sde import Consumer, MeasurementChannel, measurement_diagonal, unitary_half

SIGN_LABEL = {1: "p", -1: "m"}


def sector_names(n_stabilizers: int) -> list[str]:
    """``['pp', 'pm', 'mp', 'mm']`` style labels, first stabilizer first."""
    return ["".join(SIGN_LABEL[s] for s in signs) for signs in itertools.product((1, -1), repeat=n_stabilizers)]


def _check_commuting(ops: Sequence[np.ndarray], hamiltonian: np.ndarray | None = None, atol: float = 1e-10):
    for a, b in itertools.combinations(ops, 2):
        if np.max(np.abs(commutator(a, b))) > atol:
            raise ValueError("stabilizers do not commute pairwise")
    if hamiltonian is not None:
        for a in ops:
            if np.max(np.abs(commutator(a, hamiltonian))) > atol:
                raise ValueError("stabilizer does not commute with the Hamiltonian")


def _sign_projector(op: np.ndarray, sign: int) -> np.ndarray:
    eye = np.eye(op.shape[0])
    return (eye + sign * op) / 2


def sector_projectors(stabilizers: Sequence[np.ndarray]) -> dict[str, np.ndarray]:
    """Joint projectors ``Pi_alpha Pi_beta ...`` keyed by sector label."""
    out = {}
    for signs, name in zip(itertools.product((1, -1), repeat=len(stabilizers)), sector_names(len(stabilizers))):
        p = np.eye(stabilizers[0].shape[0], dtype=complex)
        for op, s in zip(stabilizers, signs):
            p = p @ _sign_projector(op, s)
        out[name] = p
    return out


# ---------------------------------------------------------------------------
# block weights and the scalar Bayes oracle


@dataclass(frozen=True)
class BlockWeights:
    """Probabilities of the joint stabilizer sectors; keys like ``'pm'``."""

    values: dict[str, float]

    def __post_init__(self):
        total = sum(self.values.values())
        if abs(total - 1.0) > 1e-8:
            raise ValueError(f"block weights sum to {total}")

    def __getitem__(self, key: str) -> float:
        return self.values[key]

    def marginal(self, position: int, sign: int) -> float:
        """Probability that stabilizer ``position`` has value ``sign``."""
        ch = SIGN_LABEL[sign]
        return sum(v for k, v in self.values.items() if k[position] == ch)


def block_weights(state: np.ndarray, stabilizers: Sequence[np.ndarray], hamiltonian: np.ndarray | None = None):
    """``p_{alpha beta} = Tr[Pi_alpha Pi_beta rho]`` for a density matrix or an estimator."""
    if isinstance(state, Estimator):
        hamiltonian = state.hamiltonian if hamiltonian is None else hamiltonian
        state = state.state
    ops = [np.asarray(s, dtype=complex) for s in stabilizers]
    _check_commuting(ops, hamiltonian)
    rho = np.asarray(state, dtype=complex)
    vals = {}
    for name, proj in sector_projectors(ops).items():
        vals[name] = float(np.clip(np.einsum("ij,ji->", proj, rho).real, 0.0, 1.0))
    total = sum(vals.values())
    return BlockWeights({k: v / total for k, v in vals.items()})


def bayes_ratio_check(p_before, dI: float, z_plus: float, z_minus: float, lam: float, dt: float) -> np.ndarray:
    """Scalar Bayes update ``p_pm' ~ p_pm exp(-2 lambda (dI/dt - <Z_m>_pm)^2 dt)``."""
    p = np.asarray(p_before, dtype=float)
    if abs(p.sum() - 1.0) > 1e-10:
        raise ValueError("p_before must be normalised")
    r = dI / dt
    logw = -2.0 * lam * (np.array([r - z_plus, r - z_minus]) ** 2) * dt
    w = p * np.exp(logw - logw.max())
    return w / w.sum()


# ---------------------------------------------------------------------------
# estimator


def _split_register(register: QubitRegister, monitor_labels: Sequence[str]) -> tuple[int, int]:
    mons = [str(m) for m in monitor_labels]
    n_mon = len(mons)
    if n_mon and tuple(register.labels[-n_mon:]) != tuple(mons):
        raise ValueError("monitor qubits must be the trailing qubits of the register, in order")
    return 2 ** (register.n - n_mon), 2**n_mon


def _system_part(op: np.ndarray, d_sys: int, d_mon: int) -> np.ndarray:
    sys = op.reshape(d_sys, d_mon, d_sys, d_mon)[:, 0, :, 0]
    if np.max(np.abs(np.kron(sys, np.eye(d_mon)) - op)) > 1e-12:
        raise ValueError("stabilizer acts on monitor qubits")
    return sys


def _sq_norm(x: np.ndarray) -> np.ndarray:
    """Squared 2-norm over the last axis of a complex array."""
    v = np.ascontiguousarray(x).view(np.float64)
    return np.einsum("...i,...i->...", v, v)


class BatchEstimator:
    """Estimator states for a batch of trajectories, as unnormalised kets.

    ``mode='sector'`` exploits that the estimator stays block diagonal over
    the joint stabilizer sectors (stabilizers commute with ``H`` and act only
    on system qubits, the channels act only on monitors). ``mode='dense'``
    keeps one block spanning the whole register.
    """

    def __init__(
        self,
        register: QubitRegister,
        hamiltonian: np.ndarray,
        channels: Sequence[MeasurementChannel],
        stabilizers: Sequence[np.ndarray] = (),
        dt: float = 1e-3,
        mode: str = "sector",
        monitor_labels: Sequence[str] | None = None,
    ):
        if mode not in ("sector", "dense"):
            raise ValueError(f"unknown estimator mode {mode!r}")
        self.register = register
        self.hamiltonian = np.asarray(hamiltonian, dtype=complex)
        self.channels = tuple(channels)
        self.dt = dt
        self.stabilizers = [np.asarray(s, dtype=complex) for s in stabilizers]
        if self.stabilizers:
            _check_commuting(self.stabilizers, self.hamiltonian)
        monitors = [c.label for c in self.channels] if monitor_labels is None else [str(m) for m in monitor_labels]
        self.d_sys, self.d_mon = _split_register(register, monitors)
        self.rates = np.array([c.rate for c in self.channels], dtype=float)
        self.z_mon = np.array([c.z[: self.d_mon] for c in self.channels]).reshape(len(self.channels), self.d_mon)
        self.u_half = unitary_half(self.hamiltonian, dt)
        u_full = self.u_half @ self.u_half
        self.mode = mode if self.stabilizers else "dense"
        self.sector_labels = sector_names(len(self.stabilizers)) if self.stabilizers else []

        d = register.dim
        if self.mode == "dense":
            self.bases = [np.eye(d, dtype=complex)]
            self.block_dims = [self.d_sys]
        else:
            sys_ops = [_system_part(s, self.d_sys, self.d_mon) for s in self.stabilizers]
            self.bases, self.block_dims = [], []
            for proj in sector_projectors(sys_ops).values():
                vals, vecs = np.linalg.eigh(hermitize(proj))
                q = vecs[:, vals > 0.5]
                self.bases.append(np.kron(q, np.eye(self.d_mon)))
                self.block_dims.append(q.shape[1])
            rebuilt = sum(v @ (v.conj().T @ self.hamiltonian @ v) @ v.conj().T for v in self.bases)
            if np.max(np.abs(rebuilt - self.hamiltonian)) > 1e-10:
                raise ValueError("Hamiltonian couples stabilizer sectors")
        self.unitaries = [v.conj().T @ u_full @ v for v in self.bases]
        self.projectors = sector_projectors(self.stabilizers) if self.stabilizers else {}
        self._stacked, self._list = False, []

    def reset(self, batch: int) -> None:
        """Initialise every row to ``I_sys/d_sys (x) |0><0|_monitors``."""
        blocks = []
        for v, dq in zip(self.bases, self.block_dims):
            db = v.shape[1]
            phi = np.zeros((batch, dq, db), dtype=complex)
            phi[:, np.arange(dq), np.arange(dq) * self.d_mon] = 1.0 / np.sqrt(self.d_sys)
            # stored frame phi = U_half^dagger psi
            u_b = v.conj().T @ self.u_half.conj().T @ v
            blocks.append(phi @ u_b.T)
        # equal blocks are stacked so one batched matmul updates all sectors
        self._stacked = len({b.shape for b in blocks}) == 1
        if self._stacked:
            self._stack = np.stack(blocks)
            self._u_stack_t = np.stack([u.T for u in self.unitaries])
        else:
            self._list = blocks
        self.batch = batch

    @property
    def blocks(self) -> list[np.ndarray]:
        return list(self._stack) if self._stacked else self._list

    def step(self, dI: np.ndarray) -> None:
        """Kraus update of every row with externally supplied records ``(N, n_ch)``."""
        diag = measurement_diagonal(self.z_mon, self.rates, dI) if len(self.channels) else None
        if self._stacked:
            s = self._stack
            n_b, n, r, db = s.shape
            s = np.matmul(s.reshape(n_b, n * r, db), self._u_stack_t)
            s = s.reshape(n_b, n, r, db // self.d_mon, self.d_mon)
            if diag is not None:
                s *= diag[None, :, None, None, :]
            s = s.reshape(n_b, n, r, db)
            total = _sq_norm(s.reshape(n_b, n, r * db)).sum(axis=0)
            s *= (1.0 / np.sqrt(np.where(total > 0, total, 1.0)))[None, :, None, None]
            self._stack = s
            return
        total = np.zeros(self.batch)
        for b, (phi, u) in enumerate(zip(self._list, self.unitaries)):
            n, r, db = phi.shape
            phi = (phi.reshape(n * r, db) @ u.T).reshape(n, r, db // self.d_mon, self.d_mon)
            if diag is not None:
                phi = phi * diag[:, None, None, :]
            phi = phi.reshape(n, r, db)
            self._list[b] = phi
            total += _sq_norm(phi.reshape(n, r * db))
        scale = 1.0 / np.sqrt(np.where(total > 0, total, 1.0))
        for b in range(len(self._list)):
            self._list[b] *= scale[:, None, None]

    def weights(self) -> np.ndarray:
        """Sector weights ``(N, n_sectors)``; uses that projectors commute with ``U_half``."""
        if self.mode == "sector":
            if self._stacked:
                n_b, n = self._stack.shape[:2]
                w = _sq_norm(self._stack.reshape(n_b, n, -1)).T
            else:
                w = np.stack([_sq_norm(p.reshape(p.shape[0], -1)) for p in self._list], axis=1)
        else:
            phi = self.blocks[0]
            n, r, d = phi.shape
            flat = phi.reshape(n * r, d)
            w = np.stack(
                [np.sum(np.abs(flat @ p.T) ** 2, axis=1).reshape(n, r).sum(axis=1) for p in self.projectors.values()],
                axis=1,
            )
        return w / np.sum(w, axis=1, keepdims=True)

    def density(self) -> np.ndarray:
        """Full estimator density matrices ``(N, d, d)``."""
        d = self.register.dim
        rho = np.zeros((self.batch, d, d), dtype=complex)
        for v, phi in zip(self.bases, self.blocks):
            psi = phi @ v.T @ self.u_half.T
            rho += np.einsum("nri,nrj->nij", psi, psi.conj())
        return rho / np.trace(rho, axis1=1, axis2=2).real[:, None, None]


class Estimator:
    """Single-trajectory estimator ``rho_hat`` with ``rho_hat(0) = I/d (x) |0><0|_m``."""

    def __init__(
        self,
        register: QubitRegister,
        hamiltonian: np.ndarray,
        channels: Sequence[MeasurementChannel],
        dt: float,
        stabilizers: Sequence[np.ndarray] = (),
        mode: str = "dense",
        monitor_labels: Sequence[str] | None = None,
    ):
        self._batch = BatchEstimator(register, hamiltonian, channels, stabilizers, dt, mode, monitor_labels)
        self._batch.reset(1)
        self.hamiltonian = self._batch.hamiltonian
        self.channels = self._batch.channels
        self.dt = dt

    @property
    def state(self) -> np.ndarray:
        return self._batch.density()[0]

    def weights(self) -> BlockWeights:
        w = self._batch.weights()[0]
        return BlockWeights(dict(zip(self._batch.sector_labels, map(float, w))))


def estimator_step(est: Estimator, dIs: Sequence[float], dt: float) -> Estimator:
    """Advance ``est`` by one Kraus step driven by the real system's records."""
    if abs(dt - est.dt) > 1e-15 * max(1.0, dt):
        raise ValueError("estimator runs at the generator's dt")
    dIs = np.asarray(dIs, dtype=float)
    if dIs.shape != (len(est.channels),):
        raise ValueError("need one record increment per channel")
    est._batch.step(dIs[None, :])
    return est


# ---------------------------------------------------------------------------
# windowed average


class WindowAverage:
    """Exact windowed mean ``(1/t) int_0^t dI`` for ``t <= w`` and
    ``(1/w) int_{t-w}^t dI`` afterwards, kept as a ring of per-step increments."""

    def __init__(self, w: float, dt: float):
        if not (w > 0 and dt > 0):
            raise ValueError("w and dt must be positive")
        self.w = w
        self.dt = dt
        self.size = max(1, int(round(w / dt)))
        self._ring: deque[float] = deque()
        self._sum = 0.0
        self._t = 0.0
        self.value = float("nan")

    def update(self, dI: float, t: float) -> float:
        if t < self._t - 1e-12:
            raise ValueError(f"time went backwards: {t} < {self._t}")
        self._t = t
        self._ring.append(float(dI))
        self._sum += dI
        if len(self._ring) > self.size:
            self._sum -= self._ring.popleft()
        self.value = self._sum / (len(self._ring) * self.dt)
        return self.value


def window_update(acc: WindowAverage, dI: float, dt: float, t: float) -> float:
    """Push one increment (ending at time ``t``) and return ``Ibar(t)``."""
    if abs(dt - acc.dt) > 1e-15 * max(1.0, dt):
        raise ValueError("window accumulator was built for a different dt")
    return acc.update(dI, t)


# ---------------------------------------------------------------------------
# decisions

UNDECIDED, NO_ERROR, ERROR = 0, 1, -1


@dataclass(frozen=True)
class IbarPolicy:
    """Decide 'no error' when ``|Ibar| > threshold`` holds for ``hold`` time
    units, 'error' when ``|Ibar| < threshold`` holds as long.

    The absolute value makes a flipped but static monitor (``Ibar -> -1``)
    read as 'no error'.
    """

    threshold: float = 0.5
    hold: float = 20.0


@dataclass(frozen=True)
class EstimatorPolicy:
    """Decide a sector when its weight exceeds ``threshold``."""

    threshold: float = 0.95


def decide(times: np.ndarray, values: np.ndarray, policy) -> np.ndarray:
    """Decision trace for one trajectory.

    With :class:`IbarPolicy`, ``values`` is the ``Ibar`` trace and the result
    holds ``+1`` (no error), ``-1`` (error) or ``0`` (undecided). With
    :class:`EstimatorPolicy`, ``values`` is ``(n_times, n_sectors)`` and the
    result is the decided sector index or ``-1``.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if isinstance(policy, EstimatorPolicy):
        best = np.argmax(values, axis=1)
        return np.where(values[np.arange(len(best)), best] > policy.threshold, best, -1)
    if not isinstance(policy, IbarPolicy):
        raise TypeError("unknown policy")
    tracker = _HoldTracker(1, policy)
    out = np.empty(len(times), dtype=int)
    for i, (t, v) in enumerate(zip(times, values)):
        out[i] = tracker.push(t, np.array([v]))[0]
    return out


class _HoldTracker:
    def __init__(self, batch: int, policy: IbarPolicy):
        self.policy = policy
        self.state = np.zeros(batch, dtype=int)
        self.run_sign = np.zeros(batch, dtype=int)
        self.run_start = np.full(batch, np.nan)

    def push(self, t: float, ibar: np.ndarray) -> np.ndarray:
        a = np.abs(ibar)
        cond = np.where(np.isfinite(a), np.where(a > self.policy.threshold, NO_ERROR, ERROR), UNDECIDED)
        restart = cond != self.run_sign
        self.run_sign = cond
        self.run_start = np.where(restart, t, self.run_start)
        held = (cond != UNDECIDED) & (t - self.run_start >= self.policy.hold - 1e-9)
        self.state = np.where(held, cond, self.state)
        return self.state.copy()


# ---------------------------------------------------------------------------
# batched consumers


class WindowConsumer(Consumer):
    """Windowed averages ``Ibar`` of every channel, exact at logged times.

    Increments are summed into blocks of one logging stride; the window
    holds ``w / (stride dt)`` blocks, which must be an integer.
    """

    def __init__(self, names: Sequence[str], w: float):
        self.names = list(names)
        self.w = w

    def start(self, batch, n_steps, dt, stride):
        blocks = self.w / (stride * dt)
        if abs(blocks - round(blocks)) > 1e-6:
            raise ValueError("window width must be a whole number of logging strides")
        self.n_blocks = int(round(blocks))
        self.stride = stride
        self.dt = dt
        self.ring = np.zeros((self.n_blocks, batch, len(self.names)))
        self.partial = np.zeros((batch, len(self.names)))
        self.total = np.zeros((batch, len(self.names)))
        self.filled = 0
        self.steps = 0
        self.head = 0
        self.current = np.full((batch, len(self.names)), np.nan)
        self.failed = np.zeros(batch, dtype=bool)
        # an unaligned final log needs the first few steps of the oldest block
        # removed; those steps are known in advance
        window = self.n_blocks * stride
        extra = n_steps % stride
        self.trim_range = (max(1, n_steps - extra - window + 1), n_steps - window)
        self.trim = np.zeros((batch, len(self.names)))

    def update(self, step, dI):
        self.partial += dI
        self.steps += 1
        lo, hi = self.trim_range
        if lo <= self.steps <= hi:
            self.trim += dI
        if self.steps % self.stride == 0:
            self._push()

    def _push(self):
        if self.filled == self.n_blocks:
            self.total -= self.ring[self.head]
        else:
            self.filled += 1
        self.ring[self.head] = self.partial
        self.total += self.partial
        self.head = (self.head + 1) % self.n_blocks
        self.partial = np.zeros_like(self.partial)

    def mark_failed(self, rows):
        self.failed |= rows

    def log(self):
        window = self.n_blocks * self.stride
        if self.steps == 0:
            self.current[:] = np.nan
        elif self.steps % self.stride == 0:
            self.current = self.total / (min(self.steps, window) * self.dt)
        else:
            total = self.total + self.partial
            if self.steps > window:
                total = total - self.trim
            self.current = total / (min(self.steps, window) * self.dt)
        self.current[self.failed] = np.nan
        return {f"Ibar_{n}": self.current[:, i].copy() for i, n in enumerate(self.names)}


class DecisionConsumer(Consumer):
    """Hold-time decisions on the ``Ibar`` of a :class:`WindowConsumer`."""

    def __init__(self, window: WindowConsumer, policy: IbarPolicy):
        self.window = window
        self.policy = policy

    def start(self, batch, n_steps, dt, stride):
        self.dt = dt
        self.trackers = [_HoldTracker(batch, self.policy) for _ in self.window.names]
        self.first_error = np.full((batch, len(self.window.names)), np.nan)
        self.first_ok = np.full((batch, len(self.window.names)), np.nan)
        self.steps_seen = 0
        self.t = 0.0

    def update(self, step, dI):
        self.t = (step + 1) * self.dt

    def log(self):
        out = {}
        for i, (name, tr) in enumerate(zip(self.window.names, self.trackers)):
            state = tr.push(self.t, self.window.current[:, i])
            fe = self.first_error[:, i]
            fo = self.first_ok[:, i]
            self.first_error[:, i] = np.where(np.isnan(fe) & (state == ERROR), self.t, fe)
            self.first_ok[:, i] = np.where(np.isnan(fo) & (state == NO_ERROR), self.t, fo)
            out[f"decision_{name}"] = state.astype(float)
        return out

    def finish(self):
        out = {}
        for i, name in enumerate(self.window.names):
            out[f"first_error_{name}"] = self.first_error[:, i].copy()
            out[f"first_ok_{name}"] = self.first_ok[:, i].copy()
        return out


class EstimatorConsumer(Consumer):
    """Batched estimator driven by the real records; logs sector weights and
    stabilizer expectations ``<S>_rho_hat``."""

    def __init__(
        self,
        register: QubitRegister,
        hamiltonian: np.ndarray,
        channels: Sequence[MeasurementChannel],
        stabilizers: Mapping[str, np.ndarray],
        mode: str = "sector",
        policy: EstimatorPolicy = EstimatorPolicy(),
    ):
        self.names = list(stabilizers)
        self.args = (register, hamiltonian, channels, list(stabilizers.values()))
        self.mode = mode
        self.policy = policy

    def start(self, batch, n_steps, dt, stride):
        register, hamiltonian, channels, stabs = self.args
        self.est = BatchEstimator(register, hamiltonian, channels, stabs, dt, self.mode)
        self.est.reset(batch)
        self.dt = dt
        self.t = 0.0
        self.labels = self.est.sector_labels
        self.first_flag = np.full((batch, len(self.names)), np.nan)
        self.failed = np.zeros(batch, dtype=bool)

    def update(self, step, dI):
        self.est.step(dI)
        self.t = (step + 1) * self.dt

    def mark_failed(self, rows):
        self.failed |= rows

    def log(self):
        w = self.est.weights()
        w[self.failed] = np.nan
        out = {f"p_{lab}": w[:, j].copy() for j, lab in enumerate(self.labels)}
        for i, name in enumerate(self.names):
            sign = np.array([1.0 if lab[i] == "p" else -1.0 for lab in self.labels])
            out[f"{name}_est"] = w @ sign
            minus = w[:, sign < 0].sum(axis=1)
            ff = self.first_flag[:, i]
            self.first_flag[:, i] = np.where(np.isnan(ff) & (minus > self.policy.threshold), self.t, ff)
        best = np.argmax(np.nan_to_num(w, nan=-1.0), axis=1)
        top = np.take_along_axis(np.nan_to_num(w), best[:, None], axis=1)[:, 0]
        out["est_sector"] = np.where(top > self.policy.threshold, best, -1).astype(float)
        return out

    def finish(self):
        return {f"est_flag_{name}": self.first_flag[:, i].copy() for i, name in enumerate(self.names)}
