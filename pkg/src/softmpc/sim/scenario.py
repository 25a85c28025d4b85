"""Scenario files: TOML parsing, schema validation and object construction.

Errors are reported as :class:`~softmpc.exceptions.ScenarioError` whose
``where`` names the offending entry as a dotted key path plus, when it can
be found in the source text, its ``line:column``.
"""
import copy
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from ..constraint_finder import ConstraintBox, FinderConfig
from ..dynamics import DynamicsParams
from ..exceptions import ScenarioError
from ..kinematics import ArmGeometry
from ..mpc import MpcConfig
from .plant import PlantOptions
from .trajectories import TrajectoryRef, make_circle, make_fixed, make_square

CONTROLLERS = ("robust_mpc", "penalized_mpc", "soft_mpc", "quasi_static")


def load_schema():
    text = resources.files("softmpc.sim").joinpath("scenario_schema.json").read_text()
    return json.loads(text)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Fully constructed experiment description."""

    name: str
    seed: int
    duration: float
    rate: float
    controller: str
    geometry: ArmGeometry
    params: DynamicsParams
    mpc: MpcConfig
    trajectory: TrajectoryRef
    plant: PlantOptions = PlantOptions()
    perturbation: float = 0.0
    obstacle_centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    obstacle_radii: np.ndarray = field(default_factory=lambda: np.zeros(0))
    quasi_gain: float = 0.5
    quasi_damping: float = 0.05
    quasi_exact_chord: bool = False
    finder: Optional[FinderConfig] = None
    box: Optional[ConstraintBox] = None
    soft_E: object = 1.0e3
    transient: float = 1.0
    clearance_margin: float = 0.01
    raw: dict = field(default_factory=dict)

    @property
    def Ts(self):
        return 1.0 / self.rate

    @property
    def n_steps(self):
        return int(round(self.duration * self.rate))


def _locate(text, path):
    """Best-effort ``line:col`` of a dotted key path inside TOML source."""
    if not text or not path:
        return None
    keys = [p for p in path if isinstance(p, str)]
    index = next((p for p in path if isinstance(p, int)), None)
    header_re = re.compile(r"^\s*\[\[?\s*([A-Za-z0-9_.\-]+)\s*\]\]?")
    table, seen = "", {}
    key_re = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*=")
    for lineno, line in enumerate(text.splitlines(), 1):
        head = header_re.match(line)
        if head:
            table = head.group(1)
            seen[table] = seen.get(table, -1) + 1
            if ".".join(keys) == table and (index is None or seen[table] == index):
                return f"{lineno}:{line.index(table) + 1}"
            continue
        key = key_re.match(line)
        if not key:
            continue
        full = (table + "." if table else "") + key.group(1)
        if full == ".".join(keys) and (index is None or seen.get(table, 0) == index):
            return f"{lineno}:{line.index(key.group(1)) + 1}"
    if len(keys) > 1:
        return _locate(text, path[:-1])
    return None


def _where(path, text):
    dotted = ".".join(str(p) for p in path) or "<root>"
    pos = _locate(text, list(path))
    return f"{dotted} (line {pos})" if pos else dotted


def validate_dict(data, text=None):
    """Schema-check ``data``; raise the first (deepest-path) error."""
    validator = jsonschema.Draft202012Validator(load_schema())
    err = jsonschema.exceptions.best_match(validator.iter_errors(data))
    if err is not None:
        raise ScenarioError(err.message, where=_where(list(err.absolute_path), text))


def parse_toml(text):
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line, col = getattr(exc, "lineno", None), getattr(exc, "colno", None)
        if line is None:
            match = re.search(r"line (\d+), column (\d+)", str(exc))
            line, col = (match.group(1), match.group(2)) if match else (None, None)
        where = f"line {line}:{col}" if line is not None else None
        raise ScenarioError(f"TOML syntax error: {exc}", where=where) from exc


def _section(data, name):
    return dict(data.get(name, {}))


def _build(kind, section, text, fn):
    try:
        return fn()
    except (ValueError, TypeError) as exc:
        raise ScenarioError(str(exc), where=_where([kind], text)) from exc


def _trajectory(spec, duration):
    kind = spec["kind"]
    if kind == "circle":
        center = list(spec.get("center", [0.0, 0.0, -0.26]))
        if len(center) != 3:
            raise ValueError("circle center needs 3 coordinates")
        period = spec.get("period", 12.5)
        return make_circle(spec.get("radius", 0.1), center, period,
                           spec.get("turns", max(duration / period, 1e-9)))
    if kind == "square":
        period = spec.get("period", 12.5)
        return make_square(spec.get("side", 0.16), spec.get("center", [0.0, 0.0])[:2],
                           spec.get("height", -0.3), period, spec.get("turns", max(duration / period, 1e-9)))
    if "point" not in spec:
        raise ValueError("fixed trajectory needs 'point'")
    return make_fixed(spec["point"], duration)


def scenario_from_dict(data, text=None):
    """Validate and construct a :class:`Scenario` from parsed TOML data."""
    validate_dict(data, text)
    data = copy.deepcopy(data)
    duration, rate = float(data["duration"]), float(data["rate"])
    geom = _build("geometry", data, text, lambda: ArmGeometry(**{
        k: (np.asarray(v, float) if isinstance(v, list) else v) for k, v in _section(data, "geometry").items()}))
    params = _build("dynamics", data, text, lambda: DynamicsParams(**_section(data, "dynamics")))
    obstacles = data.get("obstacles", [])
    centers = np.array([o["center"] for o in obstacles], float).reshape(-1, 3)
    radii = np.array([o["radius"] for o in obstacles], float)
    controller = data["controller"]

    mpc_raw = _section(data, "mpc")
    horizon_time = mpc_raw.pop("horizon_time", None)
    if horizon_time is not None:
        mpc_raw["N"] = max(2, int(round(horizon_time * rate)))
    if controller == "penalized_mpc":
        if not len(centers):
            raise ScenarioError("penalized_mpc needs at least one obstacle", where=_where(["obstacles"], text))
        mpc_raw.setdefault("L", 1.0)
        mpc_raw.setdefault("l", 500.0)
        mpc_raw["obstacles"] = centers
    else:
        mpc_raw.pop("L", None)
        mpc_raw.pop("l", None)
    soft_E = mpc_raw.pop("soft_E", 1.0e3)

    box = None
    if "box" in data:
        box = _build("box", data, text, lambda: ConstraintBox(data["box"]["q_l"], data["box"]["q_u"]))
        if box.q_l.size != geom.q_size:
            raise ScenarioError(f"box needs {geom.q_size} entries", where=_where(["box"], text))
    traj = _build("trajectory", data, text, lambda: _trajectory(data["trajectory"], duration))

    finder = None
    if "finder" in data:
        f = _section(data, "finder")
        targets = f.pop("targets", None)
        count = f.pop("target_count", 24)
        if targets is None:
            period = getattr(traj, "period", max(duration, 1.0))
            targets = traj.sample(np.linspace(0.0, period, count, endpoint=False))
        finder = _build("finder", data, text, lambda: FinderConfig(
            targets=targets, obstacle_centers=centers, obstacle_radii=radii,
            **{"seed": data.get("seed", 0), **f}))
    if controller == "soft_mpc" and box is None and finder is None:
        raise ScenarioError("soft_mpc needs a [box] or a [finder] table", where=_where(["controller"], text))

    def make_mpc():
        return MpcConfig(n_q=geom.q_size, n_u=geom.n_inputs, Ts=1.0 / rate,
                         **{k: (np.asarray(v, float) if isinstance(v, list) else v) for k, v in mpc_raw.items()})

    mpc = _build("mpc", data, text, make_mpc)
    plant_raw = _section(data, "plant")
    perturbation = float(plant_raw.pop("perturbation", 0.0))
    plant = _build("plant", data, text, lambda: PlantOptions(**plant_raw))
    qs = _section(data, "quasi_static")
    return Scenario(
        name=data.get("name", "scenario"), seed=int(data.get("seed", 0)), duration=duration, rate=rate,
        controller=controller, geometry=geom, params=params, mpc=mpc, trajectory=traj, plant=plant,
        perturbation=perturbation, obstacle_centers=centers, obstacle_radii=radii,
        quasi_gain=float(qs.get("gain", 0.5)), quasi_damping=float(qs.get("damping", 0.05)),
        quasi_exact_chord=bool(qs.get("exact_chord", False)),
        finder=finder, box=box, soft_E=soft_E, transient=float(data.get("transient", 1.0)),
        clearance_margin=float(data.get("clearance_margin", 0.01)), raw=data,
    )


def load_scenario(path):
    """Read, validate and construct the scenario stored at ``path``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file: {exc}", where=str(path)) from exc
    return scenario_from_dict(parse_toml(text), text)


def finder_from_dict(data, text=None):
    """Finder files hold an optional [geometry], [[obstacles]] and a [finder] table."""
    if "finder" not in data:
        raise ScenarioError("missing [finder] table", where="finder")
    wrapper = {"duration": 0.0, "rate": 1.0, "controller": "robust_mpc",
               "trajectory": {"kind": "fixed", "point": [0.0, 0.0, 0.0]},
               **{k: v for k, v in data.items() if k in ("geometry", "obstacles", "seed")}}
    sc = scenario_from_dict(wrapper, text)
    f = dict(data["finder"])
    unknown = set(f) - {"n_trials", "n_samples", "targets", "neighborhood", "threshold", "seed"}
    if unknown:
        raise ScenarioError(f"unknown finder keys {sorted(unknown)}", where="finder")
    try:
        cfg = FinderConfig(obstacle_centers=sc.obstacle_centers, obstacle_radii=sc.obstacle_radii,
                           **{"seed": sc.seed, **f})
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc), where="finder") from exc
    return cfg, sc.geometry


def load_finder(path):
    """Read a box-search file and return ``(FinderConfig, ArmGeometry)``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read finder file: {exc}", where=str(path)) from exc
    return finder_from_dict(parse_toml(text), text)


def set_path(data, dotted, value):
    """Return a copy of ``data`` with the entry at ``dotted`` replaced."""
    out = copy.deepcopy(data)
    node = out
    parts = dotted.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ScenarioError(f"'{part}' is not a table", where=dotted)
    node[parts[-1]] = value
    return out
