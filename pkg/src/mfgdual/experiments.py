"""Experiment drivers: single solve, viscosity sweep, refinement study.

Each driver writes its artifacts into a directory: fields (binary + CSV),
reports (JSON + CSV), convergence history and a plot script. CSV artifacts
carry no timings, so repeated runs are byte-identical.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from . import diagnostics as dg
from .config import ConfigError, RunConfig
from .fieldio import write_field, write_field_csv
from .grid import SpaceTimeGrid, norms
from .model import DiffusionSpec, ModelSpec
from .plotting import write_plot_script, render_run
from .solver import SolverState, solve

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    config: RunConfig
    model: ModelSpec
    grid: SpaceTimeGrid
    state: SolverState
    report: dg.DiagnosticsReport
    certificate: dict
    out_dir: Optional[Path] = None

    @property
    def passed(self) -> bool:
        return self.state.converged and dg.certificate_passed(self.certificate)


@dataclass
class SweepRow:
    parameter: float
    report: dg.DiagnosticsReport
    distances: Dict[str, float]
    converged: bool
    flags: List[str] = field(default_factory=list)


@dataclass
class SweepResult:
    kind: str
    config_hash: str
    rows: List[SweepRow]
    checks: Dict[str, bool] = field(default_factory=dict)
    reference: Optional[RunResult] = None

    @property
    def passed(self) -> bool:
        return all(self.checks.values()) and all(r.converged for r in self.rows)

    def csv_rows(self) -> List[dict]:
        out = []
        for row in self.rows:
            extra = {"parameter": row.parameter, "config_hash": self.config_hash, "code_version": __version__,
                     "flags": ";".join(row.flags)}
            extra.update({f"dist[{k}]": v for k, v in row.distances.items()})
            out.append(row.report.csv_row(**extra))
        return out

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{self.kind}.csv").write_text(dg.rows_to_csv(self.csv_rows()))
        summary = {
            "kind": self.kind,
            "config_hash": self.config_hash,
            "code_version": __version__,
            "checks": self.checks,
            "passed": self.passed,
            "rows": [{"parameter": r.parameter, "distances": r.distances, "converged": r.converged,
                      "flags": r.flags, "report": r.report.to_dict()} for r in self.rows],
        }
        (out / f"{self.kind}.json").write_text(json.dumps(dg._jsonable(summary), indent=2, sort_keys=True))
        return out


# -- single run ----------------------------------------------------------------

def execute(config: RunConfig, model: Optional[ModelSpec] = None, grid: Optional[SpaceTimeGrid] = None,
            **solver_overrides) -> RunResult:
    """Solve one instance in memory (no artifacts)."""
    if model is None or grid is None:
        model, grid = config.validate()
    sconf = config.build_solver_config(**solver_overrides)
    state, report = solve(model, grid, sconf)
    cert = dg.weak_solution_certificate(state, model, grid, seed=config.seed)
    return RunResult(config, model, grid, state, report, cert)


def write_run(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    (out / "fields").mkdir(parents=True, exist_ok=True)
    st = result.state
    for name, arr, placement in (("phi", st.phi, "node"), ("m", st.m, "interval"), ("w", st.w, "interval-vector")):
        write_field(out / "fields" / f"{name}.bin", arr, placement)
        write_field_csv(out / "fields" / f"{name}.csv", arr)
    # 1 where m vanishes: phi on those cells is reported but scheme-dependent
    write_field_csv(out / "fields" / "phi_scheme_dependent.csv", dg.vacuum_mask(st.m).astype(float))
    meta = {"config_hash": result.config.config_hash(), "code_version": __version__}
    cert = {k: {"value": v[0], "passed": v[1]} for k, v in result.certificate.items()}
    (out / "config.json").write_text(result.config.to_json())
    (out / "report.json").write_text(result.report.to_json(certificate=dg._jsonable(cert),
                                                           certificate_passed=dg.certificate_passed(result.certificate),
                                                           passed=result.passed, **meta))
    (out / "report.csv").write_text(dg.rows_to_csv([result.report.csv_row(
        certificate_passed=dg.certificate_passed(result.certificate), **meta)]))
    hist = [dict(h, **meta) for h in st.history]
    (out / "history.csv").write_text(dg.rows_to_csv(hist))
    g = result.grid
    (out / "grid.json").write_text(json.dumps({"d": g.d, "n": g.n, "nt": g.nt, "T": g.T}, sort_keys=True))
    write_plot_script(out)
    result.out_dir = out
    return out


def run_single(config: RunConfig, out_dir=None, render: bool = True) -> RunResult:
    """Solve, certify and (if ``out_dir``) write all artifacts of one run."""
    t0 = time.perf_counter()
    result = execute(config)
    if out_dir is not None:
        write_run(result, out_dir)
        (Path(out_dir) / "timing.json").write_text(json.dumps({"seconds": time.perf_counter() - t0}))
        if render:
            render_run(out_dir)
    return result


# -- viscosity sweep -------------------------------------------------------------

def _check_decreasing(values: List[float], floor: float = 0.0) -> bool:
    """Final three values strictly decreasing, or all of them already below ``floor``."""
    tail = values[-3:]
    return all(a > b for a, b in zip(tail, tail[1:])) or max(tail) <= floor


def viscosity_sweep(base: RunConfig, epsilons=None, out_dir=None, render: bool = False) -> SweepResult:
    """Solve with ``A = eps I`` for each eps and with ``A = 0``; compare densities in L^q."""
    epsilons = list(base.experiment["epsilons"] if epsilons is None else epsilons)
    if not epsilons or any(e <= 0 for e in epsilons) or any(a <= b for a, b in zip(epsilons, epsilons[1:])):
        raise ConfigError("epsilons must be positive and strictly descending")
    model, grid = base.validate()
    if not model.diffusion.is_zero:
        raise ConfigError("viscosity sweep needs a zero base diffusion")
    q = model.coupling.q
    ref = execute(base, model, grid)
    ref_norm = norms(ref.state.m, grid, q)
    if out_dir is not None:
        write_run(ref, Path(out_dir) / "eps=0")
    rows = []
    for eps in epsilons:
        m_eps = model.with_diffusion(DiffusionSpec.isotropic(eps))
        res = execute(base, m_eps, grid)
        dist = norms(res.state.m - ref.state.m, grid, q)
        flags = []
        if not res.state.converged:
            flags.append("not-converged")
        if res.report.phi_lower_bound_violation > 0:
            flags.append("phi-lower-bound")
        rows.append(SweepRow(eps, res.report, {"m_Lq": dist, "m_Lq_relative": dist / ref_norm}, res.state.converged,
                             flags))
        log.info("eps=%g  |m_eps - m_0|_q=%.4e  iters=%d", eps, dist, res.state.iter)
        if out_dir is not None:
            write_run(res, Path(out_dir) / f"eps={eps!r}")
    dists = [r.distances["m_Lq"] for r in rows]
    tol = float(base.experiment["sweep_tolerance"])
    checks = {
        "reference_converged": ref.state.converged,
        "final_three_decreasing": _check_decreasing(dists, 1e-6 * ref_norm),
        "smallest_below_tolerance": dists[-1] <= tol * ref_norm,
    }
    result = SweepResult("viscosity-sweep", base.config_hash(), rows, checks, ref)
    if out_dir is not None:
        result.write(out_dir)
        if render:
            render_run(Path(out_dir) / "eps=0")
    return result


# -- refinement study ------------------------------------------------------------

def prolong(field: np.ndarray, time_axis: int = 0) -> np.ndarray:
    """Injection onto the grid with n and nt doubled (each cell value repeated)."""
    out = field
    for ax in range(time_axis, field.ndim):
        out = np.repeat(out, 2, axis=ax)
    return out


def refinement_study(base: RunConfig, levels: Optional[int] = None, out_dir=None) -> SweepResult:
    """Double n and nt per level; the iteration budget grows by 4 per level."""
    levels = int(base.experiment["levels"] if levels is None else levels)
    if levels < 2:
        raise ConfigError("refinement study needs levels >= 2")
    base.validate()
    g0 = base.grid
    budget_cells = int(base.experiment["max_cells"])
    finest = (g0["nt"] * 2 ** (levels - 1) + 1) * (g0["n"] * 2 ** (levels - 1)) ** g0["d"]
    if finest > budget_cells:
        raise ConfigError(f"finest level has {finest} space-time nodes, above max_cells={budget_cells}")
    iters0 = base.build_solver_config().max_iters
    rows, prev, prev_table = [], None, None
    for k in range(levels):
        cfg = base.replace(grid={"n": g0["n"] * 2**k, "nt": g0["nt"] * 2**k})
        res = execute(cfg, max_iters=iters0 * 4**k)
        q = res.model.coupling.q
        dist = {}
        if prev is not None:
            dist["m_Lq_interlevel"] = norms(res.state.m - prolong(prev.state.m), res.grid, q)
            for key, val in res.report.norm_table.items():
                old = prev_table[key]
                if math.isfinite(val) and math.isfinite(old) and key not in ("eta", "gamma", "s_w"):
                    dist[f"norm_change[{key}]"] = abs(val - old) / max(abs(old), 1e-300)
        flags = [] if res.state.converged else ["not-converged"]
        rows.append(SweepRow(float(cfg.grid["n"]), res.report, dist, res.state.converged, flags))
        if out_dir is not None:
            write_run(res, Path(out_dir) / f"n={cfg.grid['n']}")
        prev, prev_table = res, res.report.norm_table
    inter = [r.distances["m_Lq_interlevel"] for r in rows[1:]]
    changes = [v for r in rows[1:] for key, v in r.distances.items() if key.startswith("norm_change")]
    checks = {
        "interlevel_decreasing": _check_decreasing(inter, 1e-6),
        "norm_table_stable": all(c < 0.05 for c in changes),
    }
    result = SweepResult("refinement", base.config_hash(), rows, checks)
    if out_dir is not None:
        result.write(out_dir)
    return result
