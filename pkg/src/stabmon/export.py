"""Plain-text persistence of ensemble results and scenario configuration.

Layout of an export directory::

    config.ini            scenario, run and noise settings (loadable)
    <quantity>.csv        t,mean,stderr,n   one file per logged quantity
    decisions.csv         index,<summary columns>
    records_<i>.csv       t,dI_<channel>... for trajectories kept with records

Floats are written with ``repr`` so that parsing recovers every bit.

Config schema (INI, one section per module; every key optional except
``scenario.name``)::

    [scenario]     name, family, description, hamiltonian, sector, amplitudes,
                   n, seed, workers, smoke_n, smoke_t
    [sde]          dt, t_final, scheme, log_stride
    [measurement]  k, lambda, measured, gadget_eps
    [readout]      window, threshold, hold, estimator, trace_distance
    [noise.<j>]    model = OneOverF | ConstantHamiltonian | OnResonance |
                   WhiteNoise | InstantPauli, plus that model's fields;
                   qubits are space separated, axes a string such as XY
    [run]          written on export only: metadata and excluded trajectories

If any ``[noise.<j>]`` section is present it replaces the scenario's noise.
"""

from __future__ import annotations

import configparser
import csv
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import noise as nz
from .scenarios import Scenario, get_scenario

NOISE_MODELS = {
    "OneOverF": nz.OneOverF,
    "ConstantHamiltonian": nz.ConstantHamiltonian,
    "OnResonance": nz.OnResonance,
    "WhiteNoise": nz.WhiteNoise,
    "InstantPauli": nz.InstantPauli,
}

# config key -> (section, scenario field)
CONFIG_KEYS = {
    "name": ("scenario", "name"),
    "family": ("scenario", "family"),
    "description": ("scenario", "description"),
    "hamiltonian": ("scenario", "hamiltonian"),
    "sector": ("scenario", "sector"),
    "amplitudes": ("scenario", "amplitudes"),
    "n": ("scenario", "n"),
    "smoke_n": ("scenario", "smoke_n"),
    "smoke_t": ("scenario", "smoke_t"),
    "dt": ("sde", "dt"),
    "t_final": ("sde", "t_final"),
    "scheme": ("sde", "scheme"),
    "log_stride": ("sde", "log_stride"),
    "k": ("measurement", "k"),
    "lambda": ("measurement", "lam"),
    "measured": ("measurement", "measured"),
    "gadget_eps": ("measurement", "gadget_eps"),
    "window": ("readout", "window"),
    "threshold": ("readout", "threshold"),
    "hold": ("readout", "hold"),
    "estimator": ("readout", "estimator"),
    "trace_distance": ("readout", "trace_distance"),
}
RUN_KEYS = ("seed", "workers")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


# ---------------------------------------------------------------------------
# CSV


def write_series(path, times, mean, stderr, count) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t", "mean", "stderr", "n"])
        for row in zip(times, mean, stderr, count):
            w.writerow([fmt(float(row[0])), fmt(float(row[1])), fmt(float(row[2])), int(row[3])])


def read_series(path) -> dict[str, np.ndarray]:
    """Columns of a ``t,mean,stderr,n`` file."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if rows[0] != ["t", "mean", "stderr", "n"]:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    body = rows[1:]
    cols = {k: np.array([float(r[i]) for r in body]) for i, k in enumerate(("t", "mean", "stderr"))}
    cols["n"] = np.array([int(r[3]) for r in body], dtype=int)
    return cols


def write_table(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_table(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]
    return header, np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))


# ---------------------------------------------------------------------------
# config


def _noise_section(model) -> dict[str, str]:
    out = {"model": type(model).__name__}
    for f in fields(model):
        v = getattr(model, f.name)
        if f.name == "qubits":
            out[f.name] = " ".join(v)
        elif f.name == "axes":
            out[f.name] = "".join(v)
        else:
            out[f.name] = fmt(v)
    return out


def _parse_noise(section) -> object:
    name = section.get("model")
    if name not in NOISE_MODELS:
        raise ValueError(f"unknown noise model {name!r}")
    cls = NOISE_MODELS[name]
    kw = {}
    for f in fields(cls):
        if f.name not in section:
            continue
        raw = section[f.name]
        if f.name == "qubits":
            kw[f.name] = tuple(raw.split())
        elif f.name == "axes":
            kw[f.name] = tuple(raw)
        elif f.name in ("qubit", "pauli", "axis"):
            kw[f.name] = raw
        else:
            kw[f.name] = float(raw)
    return cls(**kw)


def config_parser(scenario: Scenario, seed: int | None = None, workers: int | None = None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    for sec in ("scenario", "sde", "measurement", "readout"):
        cp.add_section(sec)
    for key, (sec, attr) in CONFIG_KEYS.items():
        v = getattr(scenario, attr)
        if v is None:
            if attr == "window":
                cp[sec][key] = "none"
            continue
        if attr == "amplitudes":
            v = " ".join(fmt(complex(a)) for a in v)
        cp[sec][key] = fmt(v)
    if seed is not None:
        cp["scenario"]["seed"] = fmt(seed)
    if workers is not None:
        cp["scenario"]["workers"] = fmt(workers)
    for j, model in enumerate(scenario.noise):
        cp[f"noise.{j}"] = _noise_section(model)
    return cp


def _coerce(attr: str, raw: str, like):
    if attr == "window" and raw.strip().lower() in ("none", ""):
        return None
    if attr == "amplitudes":
        return tuple(complex(a) for a in raw.split())
    if isinstance(like, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float) or attr in ("window",):
        return float(raw)
    return raw


def load_config(path) -> tuple[Scenario, dict[str, int]]:
    """Scenario and run options (``seed``, ``workers``) from an INI file.

    The file starts from the registered scenario named in ``[scenario]``
    (if registered) and overrides the keys it sets.
    """
    cp = configparser.ConfigParser(interpolation=None)
    if not cp.read(path):
        raise FileNotFoundError(path)
    if not cp.has_option("scenario", "name"):
        raise ValueError("config needs [scenario] name")
    name = cp["scenario"]["name"]
    try:
        base = get_scenario(name)
    except KeyError:
        family = cp.get("scenario", "family", fallback=None)
        if family is None:
            raise ValueError(f"{name!r} is not registered; [scenario] family is required") from None
        base = Scenario(name, family)
    kw = {}
    for key, (sec, attr) in CONFIG_KEYS.items():
        if cp.has_option(sec, key) and key != "name":
            kw[attr] = _coerce(attr, cp[sec][key], getattr(base, attr))
    noise_secs = sorted((s for s in cp.sections() if s.startswith("noise.")), key=lambda s: int(s.split(".")[1]))
    if noise_secs:
        kw["noise"] = tuple(_parse_noise(cp[s]) for s in noise_secs)
    window_none = cp.has_option("readout", "window") and kw.get("window") is None
    scenario = base.override(**kw)
    if window_none:
        scenario = Scenario(**{**scenario.as_dict(), "window": None})
    run = {k: int(cp["scenario"][k]) for k in RUN_KEYS if cp.has_option("scenario", k)}
    return scenario, run


# ---------------------------------------------------------------------------
# results


def export(result, path, format: str = "csv") -> list[Path]:
    """Write ``result`` (an :class:`~stabmon.ensemble.EnsembleResult`) to directory ``path``."""
    if format != "csv":
        raise ValueError(f"unsupported export format {format!r}")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in result.mean:
        p = out / f"{name}.csv"
        write_series(p, result.times, result.mean[name], result.stderr[name], result.count[name])
        written.append(p)

    keys = sorted(result.decisions)
    p = out / "decisions.csv"
    rows = [[int(i)] + [float(result.decisions[k][r]) for k in keys] for r, i in enumerate(result.indices)]
    write_table(p, ["index"] + keys, rows)
    written.append(p)

    for i, rec in sorted(result.records.items()):
        p = out / f"records_{i}.csv"
        labels = [c for c in result.scenario.monitor_labels()] if result.scenario.measured else []
        t = (np.arange(rec.shape[0]) + 1) * result.scenario.dt
        write_table(p, ["t"] + [f"dI_{c}" for c in labels], [[t[r]] + list(rec[r]) for r in range(rec.shape[0])])
        written.append(p)

    cp = config_parser(result.scenario, result.master_seed, result.metadata.get("workers"))
    cp["run"] = {k: fmt(v) for k, v in result.metadata.items() if k not in ("master_seed", "workers", "runtime_s")}
    cp["run"]["excluded"] = " ".join(f"{i}:{s}" for i, s, _ in result.excluded)
    p = out / "config.ini"
    with open(p, "w") as f:
        cp.write(f)
    written.append(p)
    return written
