"""Scenario files: TOML with ``[model]``, ``[simulation]`` and ``[outputs]``.

Matrices are written as row-major lists of ``[re, im]`` pairs, either flat
(``dim*dim`` pairs) or nested by row.  Example::

    [model]
    dim = 2
    H = [[0, 0], [0, 0], [0, 0], [0, 0]]
    L = [[0, 0], [0, 0], [1, 0], [0, 0]]
    rho0 = [[1, 0], [0, 0], [0, 0], [0, 0]]

    [model.observables]
    excited = [[1, 0], [0, 0], [0, 0], [0, 0]]

    [simulation]
    scheme = "homodyne"
    dt = 0.001
    t_max = 2.0
    n_traj = 1
    master_seed = 0
    tracked = ["sigma_z", "excited"]

    [outputs]
    write = ["records", "states", "moments", "innovations", "reports"]
"""

from dataclasses import dataclass, field, replace
import hashlib
import re
import sys

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import hilbert as hb
from .dynamics import Scheme, SimConfig
from .errors import ConfigError, QSFilterError

OUTPUT_KINDS = ("records", "states", "moments", "innovations", "reports")
BUILTIN_OBSERVABLES = {
    "sigma_x": hb.SIGMA_X,
    "sigma_y": hb.SIGMA_Y,
    "sigma_z": hb.SIGMA_Z,
}


def _line_of(text, section, key):
    """1-based line of ``key = ...`` inside ``[section]``, if it can be found."""
    current = ""
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        head = re.match(r"^\[\s*([^\]]+?)\s*\]", line)
        if head:
            current = head.group(1)
            continue
        if current == section and re.match(rf"^{re.escape(key)}\s*=", line):
            return no
    return None


def matrix_from_pairs(value, dim, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 3:
        arr = arr.reshape(-1, 2)
    if arr.ndim != 2 or arr.shape != (dim * dim, 2):
        raise ValueError(f"expected {dim * dim} [re, im] pairs (row-major), got shape {np.shape(value)}")
    return (arr[:, 0] + 1j * arr[:, 1]).reshape(dim, dim)


def matrix_to_pairs(M):
    M = np.asarray(M, dtype=complex).reshape(-1)
    return [[float(z.real), float(z.imag)] for z in M]


@dataclass(frozen=True)
class ScenarioConfig:
    model: hb.SystemModel
    scheme: Scheme = Scheme.HOMODYNE
    dt: float = 1e-3
    t_max: float = 2.0
    n_traj: int = 1
    master_seed: int = 0
    tracked: tuple = ("sigma_z",)
    observables: dict = field(default_factory=dict)
    outputs: tuple = OUTPUT_KINDS

    @property
    def sim(self):
        return SimConfig(self.dt, self.t_max, self.master_seed, self.scheme)

    def tracked_operators(self):
        """Tracked observables by name, in file column order."""
        d = self.model.dim
        out = {}
        for name in self.tracked:
            if name in self.observables:
                out[name] = self.observables[name]
            elif name == "identity":
                out[name] = np.eye(d, dtype=complex)
            else:
                out[name] = BUILTIN_OBSERVABLES[name]
        return out

    def with_overrides(self, seed=None, dt=None, t_max=None, n_traj=None):
        new = replace(
            self,
            master_seed=self.master_seed if seed is None else int(seed),
            dt=self.dt if dt is None else float(dt),
            t_max=self.t_max if t_max is None else float(t_max),
            n_traj=self.n_traj if n_traj is None else int(n_traj),
        )
        return loads(dumps(new))

    def to_dict(self):
        return {
            "model": {
                "dim": self.model.dim,
                "H": matrix_to_pairs(self.model.H),
                "L": matrix_to_pairs(self.model.L),
                "rho0": matrix_to_pairs(self.model.rho0),
                "observables": {k: matrix_to_pairs(v) for k, v in self.observables.items()},
            },
            "simulation": {
                "scheme": self.scheme.value,
                "dt": self.dt,
                "t_max": self.t_max,
                "n_traj": self.n_traj,
                "master_seed": self.master_seed,
                "tracked": list(self.tracked),
            },
            "outputs": {"write": list(self.outputs)},
        }

    def config_hash(self):
        return hashlib.sha256(dumps(self).encode("utf-8")).hexdigest()


def dumps(cfg):
    return tomli_w.dumps(cfg.to_dict())


def _require(table, key, where, text):
    if key not in table:
        raise ConfigError(f"{where}.{key}", "missing required field", _line_of(text, where, key))
    return table[key]


def _field(where, key, text, fn):
    try:
        return fn()
    except ConfigError:
        raise
    except (QSFilterError, ValueError, TypeError) as exc:
        raise ConfigError(f"{where}.{key}", str(exc), _line_of(text, where, key)) from None


def _uint64(value):
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value < 2**64:
        raise ValueError(f"must be an unsigned 64-bit integer, got {value!r}")
    return value


def loads(text):
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError("<file>", f"parse error: {exc}", int(m.group(1)) if m else None) from None

    for section in ("model", "simulation"):
        if not isinstance(doc.get(section), dict):
            raise ConfigError(section, "missing section")
    model, sim = doc["model"], doc["simulation"]
    outputs = doc.get("outputs", {})

    dim = _require(model, "dim", "model", text)
    if isinstance(dim, bool) or not isinstance(dim, int) or dim < 1:
        raise ConfigError("model.dim", f"must be a positive integer, got {dim!r}", _line_of(text, "model", "dim"))
    mats = {}
    for key in ("H", "L", "rho0"):
        raw = _require(model, key, "model", text)
        mats[key] = _field("model", key, text, lambda raw=raw, key=key: matrix_from_pairs(raw, dim, key))
    line = {k: _line_of(text, "model", k) for k in mats}
    try:
        hb.check_hermitian(mats["H"], "H")
    except QSFilterError as exc:
        raise ConfigError("model.H", str(exc), line["H"]) from None
    try:
        hb.check_density(mats["rho0"], "rho0")
    except QSFilterError as exc:
        raise ConfigError("model.rho0", str(exc), line["rho0"]) from None
    m = hb.SystemModel(mats["H"], mats["L"], mats["rho0"])

    observables = {}
    for name, raw in model.get("observables", {}).items():
        X = _field("model.observables", name, text, lambda raw=raw, name=name: matrix_from_pairs(raw, dim, name))
        _field("model.observables", name, text, lambda X=X, name=name: hb.check_hermitian(X, name))
        observables[name] = X

    scheme = _field("simulation", "scheme", text, lambda: Scheme(_require(sim, "scheme", "simulation", text)))
    dt = _field("simulation", "dt", text, lambda: float(_require(sim, "dt", "simulation", text)))
    t_max = _field("simulation", "t_max", text, lambda: float(_require(sim, "t_max", "simulation", text)))
    n_traj = sim.get("n_traj", 1)
    if isinstance(n_traj, bool) or not isinstance(n_traj, int) or n_traj < 1:
        raise ConfigError("simulation.n_traj", f"must be a positive integer, got {n_traj!r}", _line_of(text, "simulation", "n_traj"))
    seed = _field("simulation", "master_seed", text, lambda: _uint64(sim.get("master_seed", 0)))
    _field("simulation", "dt", text, lambda: SimConfig(dt, t_max, seed, scheme))

    tracked = tuple(sim.get("tracked", ["sigma_z"]))
    for name in tracked:
        known = name in observables or name in BUILTIN_OBSERVABLES or name == "identity"
        if not known:
            raise ConfigError("simulation.tracked", f"unknown observable {name!r}", _line_of(text, "simulation", "tracked"))
        if name in BUILTIN_OBSERVABLES and name not in observables and dim != 2:
            raise ConfigError("simulation.tracked", f"{name} needs dim = 2", _line_of(text, "simulation", "tracked"))

    write = tuple(outputs.get("write", OUTPUT_KINDS))
    for kind in write:
        if kind not in OUTPUT_KINDS:
            raise ConfigError("outputs.write", f"unknown output {kind!r}; choose from {', '.join(OUTPUT_KINDS)}", _line_of(text, "outputs", "write"))

    return ScenarioConfig(m, scheme, dt, t_max, n_traj, seed, tracked, observables, write)


def load_scenario(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise ConfigError("<file>", f"{path} is not valid UTF-8") from None
    return loads(text)
