"""Named simulation scenarios.

A :class:`Scenario` is a flat, picklable description (parameters only). It
builds the :class:`~stabmon.sde.TrajectoryConfig` and fresh record
consumers on demand, so it can be shipped to worker processes and
overridden from the command line or a config file.

Time is measured in units of ``1/k``. Three families exist:

``zz``
    two system qubits and one monitor reading ``Z1 Z2``;
``bacon_shor``
    the four-qubit code with monitors ``m_z`` and ``m_x`` driven by the
    ideal or three-local detection Hamiltonian;
``gadget``
    the eight-qubit two-local construction with monitors ``a`` and ``c``
    measured, ``K = k / eps**2``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Callable

import numpy as np

from . import bacon_shor as bsc
from .core import QubitRegister, ket_to_dm, partial_trace, pauli_op
from .gadgets import build_bs_gadget, ground_space_ket
from .noise import ConstantHamiltonian, InstantPauli, OneOverF, OnResonance, WhiteNoise, per_qubit
from .readout import DecisionConsumer, EstimatorConsumer, IbarPolicy, WindowConsumer
from .sde import Consumer, DensityBatch, KetBatch, MeasurementChannel, TrajectoryConfig
from .zzdemo import zz_hamiltonian, zz_initial_ket, zz_operator, zz_register

FAMILIES = ("zz", "bacon_shor", "gadget")
# allowed Hamiltonian sources per family, default first
FAMILY_HAMILTONIANS = {
    "zz": ("zz", "none"),
    "bacon_shor": ("threelocal", "ideal", "none"),
    "gadget": ("gadget-full", "none"),
}
SYSTEM = bsc.SYSTEM
GADGET_QUBITS = ("1", "2", "3", "4", "a", "b", "c", "d")


class ReducedTraceDistance:
    """Per-trajectory ``D = 1/2 ||rho_sys(t) - rho_sys(0)||_1`` on ``keep``.

    Picklable callable observable for :class:`TrajectoryConfig`.
    """

    def __init__(self, register: QubitRegister, keep, initial_state: np.ndarray):
        self.register = register
        self.keep = sorted(register.index(q) for q in keep)
        s = np.asarray(initial_state, dtype=complex)
        rho = ket_to_dm(s) if s.ndim == 1 else s
        self.reference = partial_trace(rho, register, [register.labels[i] for i in self.keep])

    def reduced(self, batch: KetBatch | DensityBatch) -> np.ndarray:
        reg = self.register
        if isinstance(batch, DensityBatch):
            return partial_trace(batch.rho, reg, [reg.labels[i] for i in self.keep])
        psi = batch.psi
        n, r = psi.shape[:2]
        t = psi.reshape((n, r) + (2,) * reg.n)
        t = np.moveaxis(t, [2 + q for q in self.keep], range(2, 2 + len(self.keep)))
        dk = 2 ** len(self.keep)
        t = t.reshape(n, r, dk, -1)
        rho = np.einsum("nrai,nrbi->nab", t, t.conj())
        return rho / np.trace(rho, axis1=1, axis2=2).real[:, None, None]

    def __call__(self, batch: KetBatch | DensityBatch) -> np.ndarray:
        diff = self.reduced(batch) - self.reference
        vals = np.linalg.eigvalsh(0.5 * (diff + np.conj(np.swapaxes(diff, -1, -2))))
        return 0.5 * np.abs(vals).sum(axis=-1)


@dataclass(frozen=True)
class Built:
    """A scenario instantiated for one run."""

    config: TrajectoryConfig
    make_consumers: Callable[[], list[Consumer]]


@dataclass(frozen=True)
class Scenario:
    """Parameters of one named experiment.

    ``sector`` is ``"+"``/``"-"`` for the ``zz`` family (or use
    ``amplitudes`` for a general system state) and ``"++"``, ``"+-"``,
    ``"-+"``, ``"--"`` (signs of ``S_x``, ``S_z``) for the code families.
    ``measured=False`` drops the channels but keeps the Hamiltonian.
    """

    name: str
    family: str
    description: str = ""
    hamiltonian: str = ""
    k: float = 1.0
    lam: float = 0.6
    dt: float = 1e-3
    t_final: float = 40.0
    n: int = 500
    scheme: str = "kraus"
    measured: bool = True
    sector: str = "++"
    amplitudes: tuple | None = None
    noise: tuple = ()
    window: float | None = 40.0
    threshold: float = 0.5
    hold: float = 20.0
    estimator: bool = False
    trace_distance: bool = False
    log_stride: int = 100
    gadget_eps: float = 0.1
    smoke_n: int = 8
    smoke_t: float = 10.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown scenario family {self.family!r}")
        if not self.hamiltonian:
            object.__setattr__(self, "hamiltonian", FAMILY_HAMILTONIANS[self.family][0])
        if self.hamiltonian not in FAMILY_HAMILTONIANS[self.family]:
            raise ValueError(f"Hamiltonian source {self.hamiltonian!r} does not fit the {self.family} family")
        if self.n < 1:
            raise ValueError("N must be >= 1")
        if self.k <= 0 or self.lam < 0:
            raise ValueError("k must be positive and lambda non-negative")

    # -- variants --------------------------------------------------------

    def override(self, **kw) -> Scenario:
        """Copy with fields replaced; ``None`` values are ignored."""
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def smoke(self) -> Scenario:
        """Short, small variant used for quick checks."""
        return replace(self, n=self.smoke_n, t_final=self.smoke_t)

    def as_dict(self) -> dict[str, object]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    # -- construction ----------------------------------------------------

    @property
    def gadget_K(self) -> float:
        return self.k / self.gadget_eps**2

    def register(self) -> QubitRegister:
        if self.family == "zz":
            return zz_register()
        if self.family == "gadget":
            return QubitRegister(list(GADGET_QUBITS))
        return bsc.default_register()

    def monitor_labels(self) -> tuple[str, ...]:
        return {"zz": ("m",), "bacon_shor": bsc.MONITORS, "gadget": ("a", "c")}[self.family]

    def system_labels(self) -> tuple[str, ...]:
        return ("1", "2") if self.family == "zz" else SYSTEM

    def build_hamiltonian(self, register: QubitRegister) -> np.ndarray:
        h = self.hamiltonian
        if h == "none":
            return np.zeros((register.dim, register.dim), dtype=complex)
        if h == "zz":
            return zz_hamiltonian(self.k, register)
        if h == "ideal":
            return bsc.ideal_hamiltonian(self.k, register)
        if h == "threelocal":
            return bsc.threelocal_hamiltonian(self.k, register)
        return build_bs_gadget(self.gadget_K, self.gadget_eps).hamiltonian

    def initial_state(self) -> np.ndarray:
        if self.family == "zz":
            if self.amplitudes is not None:
                return zz_initial_ket(self.amplitudes)
            amps = {"+": [1, 0, 0, 1], "-": [0, 1, 1, 0]}.get(self.sector)
            if amps is None:
                raise ValueError(f"zz sector must be '+' or '-', got {self.sector!r}")
            return zz_initial_ket(amps)
        sx, sz = _split_sector(self.sector)
        if self.family == "bacon_shor":
            return bsc.sector_initial_ket(sx, sz)
        bx, bz = int(sx == "-"), int(sz == "-")
        system = (bsc.encoded_state(0, 0, bx, bz) + bsc.encoded_state(1, 0, bx, bz)) / np.sqrt(2)
        return ground_space_ket(self.register(), system, "0000")

    def observables(self, register: QubitRegister, initial: np.ndarray) -> dict:
        if self.family == "zz":
            obs: dict = {"ZZ": zz_operator(register)}
        else:
            z = {q: "Z" for q in SYSTEM}
            x = {q: "X" for q in SYSTEM}
            obs = {"S_z": pauli_op(register, z), "S_x": pauli_op(register, x)}
        if self.trace_distance:
            obs["D"] = ReducedTraceDistance(register, self.system_labels(), initial)
        return obs

    def channels(self, register: QubitRegister) -> tuple[MeasurementChannel, ...]:
        if not self.measured:
            return ()
        return tuple(MeasurementChannel(register, m, self.lam) for m in self.monitor_labels())

    def build(self, keep_records: bool = False) -> Built:
        reg = self.register()
        h = self.build_hamiltonian(reg)
        chans = self.channels(reg)
        psi0 = self.initial_state()
        cfg = TrajectoryConfig(
            register=reg,
            hamiltonian=h,
            channels=chans,
            initial_state=psi0,
            dt=self.dt,
            t_final=self.t_final,
            scheme=self.scheme,
            noise=tuple(self.noise),
            observables=self.observables(reg, psi0),
            log_stride=self.log_stride,
            keep_records=keep_records,
        )
        return Built(cfg, _ConsumerFactory(self, reg, h, chans))


class _ConsumerFactory:
    """Fresh consumers for every batch (they carry per-batch state)."""

    def __init__(self, scenario: Scenario, register, hamiltonian, channels):
        self.s = scenario
        self.args = (register, hamiltonian, channels)

    def __call__(self) -> list[Consumer]:
        s = self.s
        register, hamiltonian, channels = self.args
        if not channels:
            return []
        out: list[Consumer] = []
        if s.window is not None:
            win = WindowConsumer([c.label for c in channels], s.window)
            out += [win, DecisionConsumer(win, IbarPolicy(s.threshold, s.hold))]
        if s.estimator:
            if s.family == "zz":
                stabs = {"ZZ": zz_operator(register)}
            else:
                code = bsc.CodeDefinition.on(register)
                stabs = {"S_x": code.S_x, "S_z": code.S_z}
            out.append(EstimatorConsumer(register, hamiltonian, channels, stabs))
        return out


def _split_sector(sector: str) -> tuple[str, str]:
    if len(sector) != 2 or any(c not in "+-" for c in sector):
        raise ValueError(f"code sector must be two signs like '+-', got {sector!r}")
    return sector[0], sector[1]


# ---------------------------------------------------------------------------
# registry

ONE_OVER_F = dict(epsilon=0.1, rate=0.1, tau=1.0)
CONSTANT_EPS = 0.01
WHITE_GAMMA = 0.001
RESONANT_EPS = 0.05


def _noise_pair(stem: str, noise: tuple, description: str, **kw) -> list[Scenario]:
    common = dict(family="bacon_shor", noise=noise, t_final=50.0, n=1000, window=None, **kw)
    return [
        Scenario(f"{stem}_on", description=description + ", with detection", **common),
        Scenario(f"{stem}_off", description=description + ", no detection", hamiltonian="none", measured=False, **common),
    ]


def _build_registry() -> dict[str, Scenario]:
    one_f = per_qubit(OneOverF, SYSTEM, **ONE_OVER_F)
    const = per_qubit(ConstantHamiltonian, SYSTEM, epsilon=CONSTANT_EPS)
    white = per_qubit(WhiteNoise, SYSTEM, gamma=WHITE_GAMMA)
    out: list[Scenario] = [
        Scenario("zz_demo_plus", "zz", "Z1Z2 readout, system in the +1 sector", sector="+", estimator=True),
        Scenario("zz_demo_minus", "zz", "Z1Z2 readout, system in the -1 sector", sector="-", estimator=True),
    ]
    for sec in ("++", "+-", "-+", "--"):
        tag = sec.replace("+", "p").replace("-", "m")
        out.append(
            Scenario(
                f"bs_sectors_{tag}", "bacon_shor", f"sector readout, (S_x, S_z) = ({sec[0]}1, {sec[1]}1)",
                sector=sec, estimator=True,
            )
        )
    out += [
        Scenario(
            "x1_at_t20", "bacon_shor", "X1 error at t=20 in the ++ sector",
            noise=(InstantPauli("X", "1", 20.0),), t_final=100.0, n=200, estimator=True,
        ),
        Scenario(
            "monitor_error_chain", "bacon_shor", "X on m_z at t=20, X1 at t=100",
            noise=(InstantPauli("X", "m_z", 20.0), InstantPauli("X", "1", 100.0)), t_final=200.0, n=50,
        ),
    ]
    out += _noise_pair("oneoverf", one_f, "1/f noise on the system qubits")
    out += _noise_pair("constant", const, "constant Pauli fields on the system qubits")
    out += _noise_pair("whitenoise", white, "white Pauli noise on the system qubits")
    for stem, noise, label in (("tracedist_1f", one_f, "1/f"), ("tracedist_const", const, "constant")):
        base = dict(family="bacon_shor", noise=noise, t_final=50.0, n=1000, window=None, trace_distance=True)
        out += [
            Scenario(stem, description=f"system trace distance under {label} noise, with detection", **base),
            Scenario(
                f"{stem}_off", description=f"system trace distance under {label} noise, no detection",
                hamiltonian="none", measured=False, **base,
            ),
        ]
    resonant = (OnResonance(RESONANT_EPS, omega=1.0, qubit="1", axis="X"),)
    out += [
        Scenario("onresonance_meas", "bacon_shor", "resonant X1 drive, Hamiltonian and measurement",
                 noise=resonant, t_final=50.0, n=1000, window=None),
        Scenario("onresonance_no_meas", "bacon_shor", "resonant X1 drive, Hamiltonian only",
                 noise=resonant, t_final=50.0, n=1000, window=None, measured=False),
    ]
    gadget = dict(family="gadget", dt=4e-4, t_final=20.0, n=100, smoke_n=4, smoke_t=5.0)
    out += [
        Scenario("gadget_full_nonoise", description="two-local construction, no noise", **gadget),
        Scenario(
            "gadget_full_1f", description="two-local construction, 1/f noise on all qubits",
            noise=per_qubit(OneOverF, GADGET_QUBITS, **ONE_OVER_F), window=None, **gadget,
        ),
        Scenario(
            "gadget_full_1f_off", description="1/f noise on all qubits, no detection",
            noise=per_qubit(OneOverF, GADGET_QUBITS, **ONE_OVER_F), window=None, measured=False,
            **{**gadget, "hamiltonian": "none"},
        ),
        # eps^2 = 0.001 needs K = 1000 and dt = 4e-5: a long opt-in job
        Scenario(
            "gadget_full_small_eps", description="two-local construction at eps^2 = 0.001, no noise",
            **{**gadget, "gadget_eps": float(np.sqrt(1e-3)), "dt": 4e-5, "log_stride": 1000,
               "smoke_n": 2, "smoke_t": 0.5},
        ),
    ]
    return {s.name: s for s in out}


REGISTRY: dict[str, Scenario] = _build_registry()


def get_scenario(name: str) -> Scenario:
    try:
        return REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; see list_scenarios()") from None


def list_scenarios() -> list[str]:
    return list(REGISTRY)
