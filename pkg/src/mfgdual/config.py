"""Run configuration: a versioned JSON document and its translation into model objects.

Every preset is a small dict with a ``kind`` key. Arbitrary sampled fields
enter through the ``file`` preset, which must carry the sha256 of the file.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from .fieldio import file_sha256, read_field, read_field_csv
from .grid import SpaceTimeGrid
from .model import CouplingSpec, DiffusionSpec, HamiltonianSpec, HypothesisError, ModelSpec
from .solver import SolverConfig

SCHEMA_VERSION = 1

EXPERIMENTS = ("single", "viscosity-sweep", "refinement")

_MODEL_DEFAULTS = {"r": 2.0, "cH": 1.0, "q": 2.0, "cf": 1.0, "T": 1.0, "diffusion": {"kind": "zero"}}
_EXPERIMENT_DEFAULTS = {
    "kind": "single",
    "epsilons": [0.4, 0.2, 0.1, 0.05, 0.025],
    "sweep_tolerance": 0.05,
    "levels": 3,
    "max_cells": 2_000_000,
}


class ConfigError(ValueError):
    """Malformed configuration (not a hypothesis violation)."""


@dataclass
class RunConfig:
    model: Dict[str, Any] = field(default_factory=lambda: copy.deepcopy(_MODEL_DEFAULTS))
    grid: Dict[str, Any] = field(default_factory=lambda: {"d": 1, "n": 64, "nt": 64})
    initial: Dict[str, Any] = field(default_factory=lambda: {"kind": "uniform"})
    terminal: Dict[str, Any] = field(default_factory=lambda: {"kind": "zero"})
    solver: Dict[str, Any] = field(default_factory=dict)
    experiment: Dict[str, Any] = field(default_factory=lambda: dict(_EXPERIMENT_DEFAULTS))
    output: Optional[str] = None
    seed: int = 0
    schema_version: int = SCHEMA_VERSION
    base_dir: Optional[str] = field(default=None, compare=False, repr=False)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        data = copy.deepcopy(data)
        version = data.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        known = {f.name for f in dataclasses.fields(cls)} - {"base_dir", "schema_version"}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        model = dict(copy.deepcopy(_MODEL_DEFAULTS), **data.pop("model", {}))
        experiment = dict(_EXPERIMENT_DEFAULTS, **data.pop("experiment", {}))
        cfg = cls(model=model, experiment=experiment, base_dir=None if base_dir is None else str(base_dir), **data)
        cfg.check_structure()
        return cfg

    @classmethod
    def from_json(cls, text: str, base_dir=None) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data, base_dir)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.from_json(path.read_text(), base_dir=path.parent)

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form (output directory excluded)."""
        d = self.to_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        d = self.to_dict()
        for key, val in changes.items():
            if isinstance(val, dict) and isinstance(d.get(key), dict):
                d[key] = dict(d[key], **val)
            else:
                d[key] = val
        return RunConfig.from_dict(d, self.base_dir)

    # -- validation ---------------------------------------------------------

    def check_structure(self) -> None:
        g = self.grid
        for key in ("d", "n", "nt"):
            if not isinstance(g.get(key), int) or isinstance(g.get(key), bool):
                raise ConfigError(f"grid.{key} must be an integer")
        if self.experiment["kind"] not in EXPERIMENTS:
            raise ConfigError(f"experiment.kind must be one of {EXPERIMENTS}")
        if self.initial.get("kind") not in ("uniform", "periodic-bump", "two-bumps", "file"):
            raise ConfigError(f"unknown initial density preset {self.initial.get('kind')!r}")
        if self.terminal.get("kind") not in ("zero", "cosine", "file"):
            raise ConfigError(f"unknown terminal cost preset {self.terminal.get('kind')!r}")
        fields = {f.name for f in dataclasses.fields(SolverConfig)}
        bad = set(self.solver) - fields
        if bad:
            raise ConfigError(f"unknown solver keys: {sorted(bad)}")

    def validate(self):
        """Build everything once; raises HypothesisError naming (H1)-(H4) on a violation."""
        grid = self.build_grid()
        model = self.build_model(grid)
        self.build_solver_config()
        if self.experiment["kind"] == "viscosity-sweep":
            eps = self.experiment["epsilons"]
            if not eps or any(e <= 0 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
                raise ConfigError("experiment.epsilons must be positive and strictly descending")
            if not model.diffusion.is_zero:
                raise ConfigError("viscosity sweep needs a zero base diffusion")
        if self.experiment["kind"] == "refinement" and int(self.experiment["levels"]) < 2:
            raise ConfigError("refinement study needs levels >= 2")
        return model, grid

    # -- builders -----------------------------------------------------------

    def build_grid(self) -> SpaceTimeGrid:
        g = self.grid
        try:
            return SpaceTimeGrid(g["d"], g["n"], g["nt"], float(self.model["T"]))
        except ValueError as exc:
            if "horizon" in str(exc):
                raise HypothesisError("(H4)", str(exc)) from exc
            raise ConfigError(str(exc)) from exc

    def build_model(self, grid: Optional[SpaceTimeGrid] = None) -> ModelSpec:
        grid = grid or self.build_grid()
        mp = self.model
        ham = HamiltonianSpec(float(mp["r"]), float(mp["cH"]))
        coup = CouplingSpec(float(mp["q"]), float(mp["cf"]))
        diff = build_diffusion(mp["diffusion"], grid)
        m0 = build_initial(self.initial, grid, self.base_dir)
        phiT = build_terminal(self.terminal, grid, self.base_dir)
        return ModelSpec(ham, coup, diff, float(mp["T"]), m0, phiT)

    def build_solver_config(self, **overrides) -> SolverConfig:
        params = dict(self.solver)
        params.setdefault("seed", self.seed)
        params.update(overrides)
        try:
            return SolverConfig(**params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"solver: {exc}") from exc


# -- presets ----------------------------------------------------------------

def build_diffusion(spec: dict, grid: SpaceTimeGrid) -> DiffusionSpec:
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return DiffusionSpec.zero()
    if kind == "isotropic":
        return DiffusionSpec.isotropic(float(spec["eps"]))
    if kind == "factored":
        if spec.get("preset", "anisotropic") != "anisotropic":
            raise ConfigError(f"unknown Sigma preset {spec.get('preset')!r}")
        return DiffusionSpec.factored(anisotropic_sigma(grid, float(spec.get("amplitude", 0.1))), grid.h)
    raise HypothesisError("(H3)", f"unknown diffusion kind {kind!r}")


def anisotropic_sigma(grid: SpaceTimeGrid, amplitude: float) -> np.ndarray:
    """Degenerate rank-one Sigma with shape ``(d, d, *space)``.

    The first column is ``amplitude * (sin 2 pi x_1, 0.5 cos 2 pi x_2, ...)``,
    the others vanish, so A is only positive semidefinite and vanishes where
    the column does.
    """
    d = grid.d
    x = grid.coords()
    sigma = np.zeros((d, d) + grid.space_shape)
    sigma[0, 0] = amplitude * np.broadcast_to(np.sin(2 * np.pi * x[0]), grid.space_shape)
    for i in range(1, d):
        sigma[i, 0] = 0.5 * amplitude * np.broadcast_to(np.cos(2 * np.pi * x[i]), grid.space_shape)
    return sigma


def _periodic_bump(grid: SpaceTimeGrid, center, concentration: float) -> np.ndarray:
    x = grid.coords()
    center = np.broadcast_to(np.asarray(center, dtype=float), (grid.d,))
    expo = sum(np.cos(2 * np.pi * (xi - c)) for xi, c in zip(x, center))
    return np.broadcast_to(np.exp(concentration * expo), grid.space_shape)


def _normalize(m: np.ndarray) -> np.ndarray:
    return m / m.mean()


def _load_sampled(spec: dict, grid: SpaceTimeGrid, base_dir) -> np.ndarray:
    path = Path(spec["path"])
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    if not path.exists():
        raise ConfigError(f"sampled field file {path} not found")
    digest = spec.get("sha256")
    if digest is None or file_sha256(path) != digest:
        raise ConfigError(f"sha256 mismatch (or missing) for {path}")
    arr = read_field_csv(path) if path.suffix == ".csv" else read_field(path)[0]
    if arr.shape != grid.space_shape:
        raise ConfigError(f"{path}: shape {arr.shape} does not match grid {grid.space_shape}")
    return arr


def build_initial(spec: dict, grid: SpaceTimeGrid, base_dir=None) -> np.ndarray:
    kind = spec["kind"]
    if kind == "uniform":
        return np.ones(grid.space_shape)
    if kind == "periodic-bump":
        return _normalize(_periodic_bump(grid, spec.get("center", 0.5), float(spec.get("concentration", 2.0))))
    if kind == "two-bumps":
        centers = spec.get("centers", [0.25, 0.75])
        kappa = float(spec.get("concentration", 4.0))
        return _normalize(sum(_periodic_bump(grid, c, kappa) for c in centers))
    m0 = _load_sampled(spec, grid, base_dir)
    if np.any(m0 <= 0):
        raise HypothesisError("(H4)", "sampled m0 must be strictly positive")
    return _normalize(m0) if spec.get("normalize", True) else m0


def build_terminal(spec: dict, grid: SpaceTimeGrid, base_dir=None) -> np.ndarray:
    kind = spec["kind"]
    if kind == "zero":
        return np.zeros(grid.space_shape)
    if kind == "cosine":
        amp = float(spec.get("amplitude", 0.1))
        freq = int(spec.get("frequency", 1))
        x = grid.coords()
        return np.broadcast_to(amp * sum(np.cos(2 * np.pi * freq * xi) for xi in x), grid.space_shape).copy()
    return _load_sampled(spec, grid, base_dir)


# -- named instances ----------------------------------------------------------

def uniform_1d(n: int = 64, nt: int = 64) -> RunConfig:
    return RunConfig(grid={"d": 1, "n": n, "nt": nt})


def gaussbump_1d(n: int = 64, nt: int = 64) -> RunConfig:
    return RunConfig(
        grid={"d": 1, "n": n, "nt": nt},
        initial={"kind": "periodic-bump", "center": 0.5, "concentration": 2.0},
        terminal={"kind": "cosine", "amplitude": 0.1, "frequency": 1},
    )


PRESETS = {"uniform-1d": uniform_1d, "gaussbump-1d": gaussbump_1d}
