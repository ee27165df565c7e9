"""Primal-dual hybrid gradient solver for the pair of dual MFG problems.

Sign dictionary: the primal problem is ``min_phi F(phi) + G(Lambda phi)``.
The loop is written for ``K = -Lambda`` so that the dual iterate is the
density/flux pair ``(m, w)`` itself (``m >= 0``) rather than its negative:

    (m, w)  <- prox_{sigma G~*}((m, w) - sigma Lambda phi_bar)
    phi     <- prox_{tau F}(phi + tau Lambda^T (m, w))
    phi_bar <- phi + theta (phi - phi_prev)

with ``G~*(m, w) = sum F(m) + m H*(-w/m)``.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import diagnostics as dg
from .fieldio import read_field, write_field
from .grid import LambdaOperator, NormalSolver, SpaceTimeGrid, norms, opnorm_Lambda
from .model import ModelSpec, conjugate_exponents
from .prox import ProxParams, prox_Gstar, prox_primal

log = logging.getLogger(__name__)


class SolverDivergence(FloatingPointError):
    """Raised when an iterate becomes non-finite; carries the state for inspection."""

    def __init__(self, message, state):
        self.state = state
        super().__init__(message)


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 20000
    gap_tol: float = 1e-8
    feas_tol: Optional[float] = None
    step_ratio: float = 1.0
    overrelax: float = 1.0
    check_every: int = 50
    seed: int = 0
    margin: float = 0.05
    newton_tol: float = 1e-13
    random_init: bool = False
    checkpoint_dir: Optional[str] = None
    metric: str = "auto"

    def __post_init__(self):
        if self.metric not in ("auto", "euclidean", "space-time"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.max_iters < 0 or self.check_every < 1:
            raise ValueError("max_iters must be >= 0 and check_every >= 1")
        if not (1.0 <= self.overrelax < 2.0):
            raise ValueError("overrelax must lie in [1, 2)")
        if not self.step_ratio > 0 or not self.gap_tol > 0:
            raise ValueError("step_ratio and gap_tol must be positive")

    @property
    def feasibility_tol(self) -> float:
        return self.gap_tol if self.feas_tol is None else self.feas_tol


@dataclass
class SolverState:
    phi: np.ndarray
    phi_bar: np.ndarray
    m: np.ndarray
    w: np.ndarray
    tau: float
    sigma: float
    iter: int = 0
    converged: bool = False
    history: List[dict] = field(default_factory=list)

    def copy(self) -> "SolverState":
        return SolverState(
            self.phi.copy(), self.phi_bar.copy(), self.m.copy(), self.w.copy(),
            self.tau, self.sigma, self.iter, self.converged, [dict(h) for h in self.history],
        )


def resolve_metric(model: ModelSpec, config: SolverConfig) -> str:
    """``"space-time"`` preconditions the primal step with ``Lambda^T Lambda``.

    It needs a translation invariant diffusion; "auto" picks it whenever
    available and falls back to the plain Euclidean step otherwise.
    """
    supported = model.diffusion.is_zero or model.diffusion.kind == "isotropic"
    if config.metric == "space-time" and not supported:
        raise ValueError("space-time metric needs zero or constant isotropic diffusion")
    if config.metric == "auto":
        return "space-time" if supported else "euclidean"
    return config.metric


def step_sizes(grid: SpaceTimeGrid, model: ModelSpec, config: SolverConfig):
    """Return ``(sigma, tau, L)`` with ``sigma * tau * L^2 < 1``.

    In the space-time metric the operator has unit norm, so ``L = 1``.
    """
    if resolve_metric(model, config) == "space-time":
        L = 1.0 + config.margin
        return config.step_ratio / L, 1.0 / (config.step_ratio * L), L
    L, _ = opnorm_Lambda(grid, model.diffusion, iters=2000, tol=1e-8, seed=config.seed)
    L *= 1.0 + config.margin
    return config.step_ratio / L, 1.0 / (config.step_ratio * L), L


def initial_state(model: ModelSpec, grid: SpaceTimeGrid, config: SolverConfig) -> SolverState:
    """``phi = phiT`` and ``m = m0`` replicated in time, ``w = 0``; random if requested."""
    sigma, tau, _ = step_sizes(grid, model, config)
    if config.random_init:
        rng = np.random.default_rng(config.seed)
        phi = model.phiT + rng.normal(scale=1.0, size=grid.node_shape)
        phi[-1] = model.phiT
        m = rng.uniform(0.0, 2.0, size=grid.interval_shape)
        w = rng.normal(scale=0.5, size=grid.vector_shape)
    else:
        phi = np.broadcast_to(model.phiT, grid.node_shape).copy()
        m = np.broadcast_to(model.m0, grid.interval_shape).copy()
        w = np.zeros(grid.vector_shape)
    return SolverState(phi, phi.copy(), m, w, tau, sigma)


def pdhg_step(state: SolverState, model: ModelSpec, grid: SpaceTimeGrid, params: Optional[SolverConfig] = None,
              op: Optional[LambdaOperator] = None, prox_params: Optional[ProxParams] = None,
              normal: Optional[NormalSolver] = None) -> SolverState:
    """One overrelaxed primal-dual iteration, in place; returns ``state``.

    With ``normal`` given, the primal step is taken in the metric
    ``|Lambda x|^2``: the free slices move by ``tau (Lambda^T Lambda)^-1 s``.
    """
    params = params or SolverConfig()
    op = op or LambdaOperator(grid, model.diffusion)
    prox_params = prox_params or ProxParams(newton_tol=params.newton_tol)
    sigma, tau = state.sigma, state.tau
    a, b = op(state.phi_bar)
    m, w = prox_Gstar(state.m - sigma * a, state.w - sigma * b, sigma, model.hamiltonian, model.coupling,
                      prox_params, m_guess=state.m)
    phi_prev = state.phi
    if normal is None:
        phi = prox_primal(phi_prev + tau * op.adjoint(m, w), tau, model.m0, model.phiT, grid.dt)
    else:
        s = op.adjoint(m, w)[:-1]
        s[0] += model.m0 / grid.dt
        phi = np.empty_like(phi_prev)
        phi[:-1] = phi_prev[:-1] + tau * normal.solve(s)
        phi[-1] = model.phiT
    theta = params.overrelax
    state.phi_bar = phi + theta * (phi - phi_prev)
    state.phi, state.m, state.w = phi, m, w
    state.iter += 1
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(m)) and np.all(np.isfinite(w))):
        raise SolverDivergence(f"non-finite iterate at iteration {state.iter}", state)
    return state


def feasible_alpha(state: SolverState, model: ModelSpec, grid: SpaceTimeGrid, op=None) -> np.ndarray:
    """``alpha = (-a + H(b))_+``: the smallest nonnegative right side making phi a subsolution."""
    c, _ = dg.hj_quantity(state.phi, model, grid, op)
    return np.maximum(c, 0.0)


def reconstruct_alpha(state: SolverState, model: ModelSpec, grid: SpaceTimeGrid, op=None):
    """Return ``(alpha, hj_residual)`` with ``alpha = f(m)``.

    ``hj_residual`` is the L^p norm of ``(c - alpha)_+`` where ``c`` is the
    discrete HJ operator applied to phi.
    """
    alpha = model.coupling.f(state.m)
    c, _ = dg.hj_quantity(state.phi, model, grid, op)
    resid = norms(np.maximum(c - alpha, 0.0), grid, model.coupling.p)
    return alpha, resid


def snapshot(state: SolverState, model: ModelSpec, grid: SpaceTimeGrid, op=None) -> dict:
    op = op or LambdaOperator(grid, model.diffusion)
    alpha = feasible_alpha(state, model, grid, op)
    gap, rel = dg.duality_gap(state.phi, alpha, state.m, state.w, model, grid, op)
    cont = dg.continuity_residual(state.m, state.w, model, grid, op)
    pairing = dg.constraint_pairing(state.phi, state.m, state.w, model, grid, op)
    masses = grid.cell * state.m.reshape(grid.nt, -1).sum(axis=1)
    return {
        "iter": state.iter,
        "gap": gap,
        "gap_relative": rel,
        "continuity_residual": cont,
        "pairing": pairing,
        "mass_drift": float(np.max(np.abs(masses - 1.0))),
    }


def _is_converged(snap: dict, config: SolverConfig) -> bool:
    return abs(snap["gap_relative"]) <= config.gap_tol and snap["continuity_residual"] <= config.feasibility_tol


def solve(model: ModelSpec, grid: SpaceTimeGrid, config: Optional[SolverConfig] = None,
          state: Optional[SolverState] = None, callback=None):
    """Iterate until the relative gap and the continuity defect meet their tolerances.

    Non-convergence is not an error: the returned state has ``converged=False``.
    Returns ``(state, report)``.
    """
    config = config or SolverConfig()
    if model.m0.shape != grid.space_shape:
        raise ValueError("model and grid disagree on the spatial nodes")
    op = LambdaOperator(grid, model.diffusion)
    prox_params = ProxParams(newton_tol=config.newton_tol)
    normal = NormalSolver(grid, model.diffusion) if resolve_metric(model, config) == "space-time" else None
    if state is None:
        state = initial_state(model, grid, config)
    t0 = time.perf_counter()
    snap = snapshot(state, model, grid, op)
    state.history.append(snap)
    while state.iter < config.max_iters and not _is_converged(snap, config):
        pdhg_step(state, model, grid, config, op, prox_params, normal)
        if state.iter % config.check_every == 0 or state.iter == config.max_iters:
            snap = snapshot(state, model, grid, op)
            state.history.append(snap)
            if callback is not None:
                callback(state, snap)
            if config.checkpoint_dir:
                save_checkpoint(state, config.checkpoint_dir)
    state.converged = _is_converged(snap, config)
    elapsed = time.perf_counter() - t0
    log.info("solve finished: iter=%d converged=%s gap=%.3e cont=%.3e (%.1fs)", state.iter, state.converged,
             snap["gap_relative"], snap["continuity_residual"], elapsed)
    report = build_report(state, model, grid, op)
    return state, report


def build_report(state: SolverState, model: ModelSpec, grid: SpaceTimeGrid, op=None) -> dg.DiagnosticsReport:
    op = op or LambdaOperator(grid, model.diffusion)
    h = model.hamiltonian
    alpha_feas = feasible_alpha(state, model, grid, op)
    gap, rel = dg.duality_gap(state.phi, alpha_feas, state.m, state.w, model, grid, op)
    alpha, hj_res = reconstruct_alpha(state, model, grid, op)
    _, b = op(state.phi)
    wres = state.w + state.m * h.DpH(b)
    pos = state.m > 0
    w_res = grid.weight * float(np.sum(np.sqrt(np.sum(wres * wres, axis=0)) * pos))
    energy, scale = dg.energy_identity(state.phi, state.m, model, grid, op, w=state.w)
    masses = grid.cell * state.m.reshape(grid.nt, -1).sum(axis=1)
    table = dg.norm_report(state.phi, state.m, state.w, model, grid)
    rc = h.r_conj
    q = model.coupling.q
    holder = math.nan
    if grid.d == 1 and grid.nt >= 8:
        holder = dg.holder_regression(state.m, grid, h.r)["fit_exponent"]
    return dg.DiagnosticsReport(
        gap=gap,
        gap_relative=rel,
        hj_residual_Lp=hj_res,
        optimality_w_residual_L1=w_res,
        alpha_match=norms(alpha - model.coupling.f(state.m), grid, model.coupling.p),
        energy_identity_residual=abs(energy) / scale,
        mass_drift=float(np.max(np.abs(masses - 1.0))),
        continuity_residual=dg.continuity_residual(state.m, state.w, model, grid, op),
        phi_lower_bound_violation=dg.lower_bound_violation(state.phi, model, grid),
        norm_table=table,
        holder_exponent_fit=holder,
        w_integrability_norm=norms(state.w, grid, rc * q / (rc + q - 1.0)),
        iteration=state.iter,
        converged=state.converged,
        within_hypotheses=not conjugate_exponents(model)[2],
        phi_scheme_dependent_fraction=float(np.mean(dg.vacuum_mask(state.m))),
    )


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(state: SolverState, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_field(d / "phi.bin", state.phi, "node")
    write_field(d / "phi_bar.bin", state.phi_bar, "node")
    write_field(d / "m.bin", state.m, "interval")
    write_field(d / "w.bin", state.w, "interval-vector")
    meta = {"iter": state.iter, "tau": state.tau, "sigma": state.sigma, "converged": state.converged,
            "history": dg._jsonable(state.history)}
    (d / "state.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return d


def load_checkpoint(directory) -> SolverState:
    d = Path(directory)
    meta = json.loads((d / "state.json").read_text())
    history = [{k: (float(v) if isinstance(v, str) else v) for k, v in h.items()} for h in meta["history"]]
    return SolverState(
        read_field(d / "phi.bin")[0],
        read_field(d / "phi_bar.bin")[0],
        read_field(d / "m.bin")[0],
        read_field(d / "w.bin")[0],
        meta["tau"],
        meta["sigma"],
        meta["iter"],
        meta["converged"],
        history,
    )
