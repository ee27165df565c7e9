"""Certification of computed solutions.

All functionals are the discrete, cell-weighted versions of

    A(phi, alpha) = sum F*(alpha) - <m0, phi(0)>
    B(m, w)       = sum [F(m) + m H*(-w/m)] + <phiT, m(T)>

where ``m(T)`` is produced by the discrete continuity equation from the last
interval. Their sum is the duality gap.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional

import numpy as np

from .grid import LambdaOperator, SpaceTimeGrid, norms
from .model import ModelSpec, estimate_exponents


@dataclass
class DiagnosticsReport:
    gap: float = math.nan
    gap_relative: float = math.nan
    hj_residual_Lp: float = math.nan
    optimality_w_residual_L1: float = math.nan
    alpha_match: float = math.nan
    energy_identity_residual: float = math.nan
    mass_drift: float = math.nan
    continuity_residual: float = math.nan
    phi_lower_bound_violation: float = math.nan
    norm_table: Dict[str, float] = field(default_factory=dict)
    holder_exponent_fit: float = math.nan
    w_integrability_norm: float = math.nan
    iteration: int = 0
    converged: bool = False
    within_hypotheses: bool = True
    # share of cells with m below the vacuum threshold; phi there is scheme-dependent
    phi_scheme_dependent_fraction: float = math.nan

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **extra) -> str:
        data = self.to_dict()
        data.update(extra)
        return json.dumps(_jsonable(data), indent=2, sort_keys=True)

    def csv_row(self, **extra) -> dict:
        row = {k: v for k, v in self.to_dict().items() if k != "norm_table"}
        for key, val in sorted(self.norm_table.items()):
            row[f"norm[{key}]"] = val
        row.update(extra)
        return row


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def rows_to_csv(rows) -> str:
    """Serialize report rows with a fixed, sorted column order and repr-exact floats."""
    keys = sorted({k for row in rows for k in row})
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(keys)
    for row in rows:
        writer.writerow([_fmt(row.get(k, "")) for k in keys])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# -- functionals ------------------------------------------------------------

def dual_penalty(m: np.ndarray, w: np.ndarray, model: ModelSpec) -> np.ndarray:
    """Pointwise ``m H*(-w/m)`` with the conventions at ``m = 0``."""
    h = model.hamiltonian
    rc = h.r_conj
    k = h.coefficient()
    wn = np.sqrt(np.sum(w * w, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        val = k ** (-1.0 / (h.r - 1.0)) * wn**rc / (rc * m ** (rc - 1.0))
    val = np.where(m > 0, val, np.where(wn > 0, np.inf, 0.0))
    return np.where(m < 0, np.inf, val)


def hj_quantity(phi, model: ModelSpec, grid: SpaceTimeGrid, op: Optional[LambdaOperator] = None):
    """``(c, b)`` with ``c = -d_t phi - A_ij d_ij phi + H(D phi)`` on every interval."""
    op = op or LambdaOperator(grid, model.diffusion)
    a, b = op(phi)
    return -a + model.hamiltonian.H(b), b


def primal_value(phi, alpha, model: ModelSpec, grid: SpaceTimeGrid) -> float:
    return grid.weight * float(np.sum(model.coupling.Fstar(alpha))) - grid.cell * float(np.sum(model.m0 * phi[0]))


def dual_value(m, w, model: ModelSpec, grid: SpaceTimeGrid, op: Optional[LambdaOperator] = None) -> float:
    op = op or LambdaOperator(grid, model.diffusion)
    running = float(np.sum(model.coupling.F(m) + dual_penalty(m, w, model)))
    if math.isinf(running):
        return math.inf
    mT = op.terminal_density(m, w)
    return grid.weight * running + grid.cell * float(np.sum(model.phiT * mT))


def duality_gap(phi, alpha, m, w, model: ModelSpec, grid: SpaceTimeGrid, op=None):
    """Return ``(A(phi, alpha) + B(m, w), relative gap)``.

    The relative gap divides by ``|A| + |B| + 1``. ``B`` is ``+inf`` when
    ``w != 0`` somewhere on ``{m = 0}``.
    """
    A = primal_value(phi, alpha, model, grid)
    B = dual_value(m, w, model, grid, op)
    if math.isinf(B):
        return math.inf, math.inf
    gap = A + B
    return gap, gap / (abs(A) + abs(B) + 1.0)


def continuity_residual(m, w, model: ModelSpec, grid: SpaceTimeGrid, op=None) -> float:
    """L1 size of the discrete continuity-equation defect, initial condition included."""
    op = op or LambdaOperator(grid, model.diffusion)
    psi = op.adjoint(m, w)
    interior = grid.weight * float(np.sum(np.abs(psi[1:-1])))
    initial = grid.cell * float(np.sum(np.abs(m[0] - model.m0)))
    return interior + initial


def constraint_pairing(phi, m, w, model: ModelSpec, grid: SpaceTimeGrid, op=None) -> float:
    """``<phi, Lambda^T(m, w) - source>`` on the slices where the constraint must vanish.

    The source is ``-m0 / dt`` on slice 0. Weak duality reads
    ``gap >= -pairing``, with equality when every Fenchel inequality is tight.
    """
    op = op or LambdaOperator(grid, model.diffusion)
    psi = op.adjoint(m, w)
    interior = grid.weight * float(np.sum(phi[1:-1] * psi[1:-1]))
    initial = grid.cell * float(np.sum(phi[0] * (model.m0 - m[0])))
    return interior + initial


def energy_identity(phi, m, model: ModelSpec, grid: SpaceTimeGrid, op=None, w=None):
    """Left side of the weak-solution energy equality and its scale.

    ``sum m (f(m) + H*(DpH(D phi))) + <m(T), phiT> - <m0, phi(0)>``; ``m(T)``
    needs the flux, so ``w`` defaults to ``-m DpH(D phi)``.
    """
    op = op or LambdaOperator(grid, model.diffusion)
    h = model.hamiltonian
    _, b = op(phi)
    v = h.DpH(b)
    if w is None:
        w = -m * v
    run = m * model.coupling.f(m)
    kin = m * h.Hstar(v)
    mT = op.terminal_density(m, w)
    terms = (
        grid.weight * float(np.sum(run)),
        grid.weight * float(np.sum(kin)),
        grid.cell * float(np.sum(mT * model.phiT)),
        -grid.cell * float(np.sum(model.m0 * phi[0])),
    )
    return sum(terms), 1.0 + sum(abs(t) for t in terms)


VACUUM_THRESHOLD = 1e-8


def vacuum_mask(m) -> np.ndarray:
    """Cells where the density is numerically zero; phi is not determined there."""
    return m <= VACUUM_THRESHOLD * max(float(np.max(m)), 1.0)


def lower_bound_constant(model: ModelSpec, grid: SpaceTimeGrid) -> float:
    """``max_x H(x, D phiT) + A_ij d_ij phiT`` on the grid."""
    from .grid import gradient, second_order

    pT = model.phiT[None]
    A = model.diffusion.matrix(grid.d, grid.n)
    val = model.hamiltonian.H(gradient(pT, grid.d, grid.h)) + second_order(pT, A, grid.d, grid.h)
    return float(np.max(val))


def lower_bound_violation(phi, model: ModelSpec, grid: SpaceTimeGrid) -> float:
    C = lower_bound_constant(model, grid)
    t = grid.times().reshape((-1,) + (1,) * grid.d)
    bound = float(np.min(model.phiT)) - C * (grid.T - t)
    return float(np.max(np.maximum(bound - phi, 0.0)))


# -- distributional HJ check ------------------------------------------------

def random_test_functions(grid: SpaceTimeGrid, count: int = 100, seed: int = 0, modes: int = 3):
    """Smooth nonnegative test functions on the interval grid, unit integral each."""
    rng = np.random.default_rng(seed)
    t = (np.arange(grid.nt) + 1.0) * grid.dt / grid.T
    xs = grid.coords()
    out = np.empty((count,) + grid.interval_shape)
    for j in range(count):
        val = np.zeros(grid.interval_shape)
        val += rng.normal()
        for _ in range(modes):
            kt = rng.integers(0, 3)
            amp = rng.normal()
            phase = rng.uniform(0, 2 * np.pi)
            term = np.cos(np.pi * kt * t + phase).reshape((-1,) + (1,) * grid.d)
            for x in xs:
                kx = rng.integers(0, 3)
                term = term * np.cos(2 * np.pi * kx * x + rng.uniform(0, 2 * np.pi))
            val += amp * term
        zeta = val**2
        out[j] = zeta / (grid.weight * np.sum(zeta))
    return out


def hj_distributional_residual(phi, m, model: ModelSpec, grid: SpaceTimeGrid, count=100, seed=0, op=None):
    """Largest positive pairing of ``c - f(m)`` against normalized test functions."""
    c, _ = hj_quantity(phi, model, grid, op)
    defect = c - model.coupling.f(m)
    zetas = random_test_functions(grid, count, seed)
    pairings = grid.weight * np.tensordot(zetas, defect, axes=defect.ndim)
    return max(0.0, float(np.max(pairings)))


# -- certificate ------------------------------------------------------------

DEFAULT_TOLERANCES = {
    "integrability": math.inf,
    "hj": 1e-5,
    "continuity": 1e-6,
    "energy": 1e-6,
}


def weak_solution_certificate(state, model: ModelSpec, grid: SpaceTimeGrid, tolerances=None, seed=0):
    """Check the four items of the weak-solution definition on a solver state.

    Returns ``{item: (value, passed)}`` for items ``"i"`` .. ``"iv"``.
    """
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(tolerances or {})
    op = LambdaOperator(grid, model.diffusion)
    phi, m, w = state.phi, state.m, state.w
    h = model.hamiltonian
    rc = h.r_conj
    q = model.coupling.q
    _, b = op(phi)
    v = h.DpH(b)
    integr = {
        "Dphi_Lr": norms(b, grid, h.r),
        "m_Lq": norms(m, grid, q),
        "w_L": norms(w, grid, rc * q / (rc + q - 1.0)),
        "mHstar_L1": grid.weight * float(np.sum(m * h.Hstar(v))),
        "mDpH_L1": norms(m * v, grid, 1.0),
    }
    item_i = max(integr.values())
    hj = hj_distributional_residual(phi, m, model, grid, seed=seed, op=op)
    cont = continuity_residual(m, w, model, grid, op)
    energy, scale = energy_identity(phi, m, model, grid, op, w=w)
    return {
        "i": (item_i, bool(np.isfinite(item_i) and item_i <= tol["integrability"])),
        "ii": (hj, hj <= tol["hj"]),
        "iii": (cont, cont <= tol["continuity"]),
        "iv": (abs(energy), abs(energy) <= tol["energy"] * scale),
        "energy_scale": (scale, True),
        "integrability": (integr, True),
    }


def certificate_passed(cert) -> bool:
    return all(cert[k][1] for k in ("i", "ii", "iii", "iv"))


# -- W1 and Hoelder ---------------------------------------------------------

def w1_distance_1d(mu: np.ndarray, nu: np.ndarray, h: Optional[float] = None) -> float:
    """Circle W1 between two nonnegative density slices of equal mass.

    The cumulative difference G is shifted by its median, which is the optimal
    constant for ``sum h |G - s|``.
    """
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if mu.ndim != 1 or mu.shape != nu.shape:
        raise ValueError("w1_distance_1d needs two 1-d slices of the same length")
    if np.any(mu < 0) or np.any(nu < 0):
        raise ValueError("densities must be nonnegative")
    h = 1.0 / mu.size if h is None else h
    diff = h * (mu - nu)
    mass = h * max(float(np.sum(mu)), float(np.sum(nu)), 1e-300)
    if abs(float(np.sum(diff))) > 1e-10 * max(mass, 1.0):
        raise ValueError(f"mass mismatch {float(np.sum(diff))!r}")
    G = np.cumsum(diff)
    s = np.median(G)
    return h * float(np.sum(np.abs(G - s)))


def holder_regression(m: np.ndarray, grid: SpaceTimeGrid, r: float, slack: float = 0.2):
    """Fit the time regularity of ``t -> m(t)`` in W1 over dyadic gaps.

    For each gap ``g = dt 2^j`` the largest distance ``D(g)`` over all slice
    pairs is measured. ``fit_exponent`` is the log-log slope of ``D`` versus
    ``g``. The constant ``C`` is fitted on the coarse half of the gaps as
    ``max D(g) / g^theta`` with ``theta = min(1/r, 1/2)``; ``bound_ok`` holds
    when every gap satisfies ``D(g) <= (1 + slack) C g^theta``.

    Slices are renormalized to unit mass; mass drift is reported elsewhere.
    """
    if grid.d != 1:
        raise ValueError("holder_regression is only exact in d = 1")
    slices = np.maximum(np.asarray(m, dtype=float), 0.0)
    masses = grid.h * slices.sum(axis=1, keepdims=True)
    slices = slices / masses
    nslices = slices.shape[0]
    gaps = []
    j = 1
    while j < nslices:
        gaps.append(j)
        j *= 2
    if len(gaps) < 4:
        raise ValueError("need at least 4 dyadic gaps for the Hoelder fit")
    G = np.cumsum(grid.h * slices, axis=1)
    dist = []
    for g in gaps:
        diff = G[g:] - G[:-g]
        med = np.median(diff, axis=1, keepdims=True)
        dist.append(float(np.max(grid.h * np.sum(np.abs(diff - med), axis=1))))
    dist = np.array(dist)
    tg = np.array(gaps) * grid.dt
    theta = min(1.0 / r, 0.5)
    if np.all(dist <= 1e-14):
        return {"fit_exponent": math.nan, "bound_ok": True, "constant": 0.0, "gaps": tg, "distances": dist}
    usable = dist > 1e-14
    if usable.sum() >= 2:
        slope = float(np.polyfit(np.log(tg[usable]), np.log(dist[usable]), 1)[0])
    else:
        slope = math.nan
    coarse = slice(len(gaps) // 2, None)
    C = float(np.max(dist[coarse] / tg[coarse] ** theta))
    bound_ok = bool(np.all(dist <= (1.0 + slack) * C * tg**theta + 1e-14))
    return {"fit_exponent": slope, "bound_ok": bound_ok, "constant": C, "gaps": tg, "distances": dist}


# -- norm table -------------------------------------------------------------

def norm_report(phi, m, w, model: ModelSpec, grid: SpaceTimeGrid) -> Dict[str, float]:
    """Norms controlled by the a priori estimates.

    With ``(eta, gamma)`` from ``estimate_exponents`` the table holds
    ``phi+`` in ``L^inf(L^eta)`` and ``L^gamma``, ``m`` in ``L^q`` and ``w`` in
    ``L^{r'q/(r'+q-1)}``. Infinite exponents give sup norms.
    """
    h = model.hamiltonian
    q = model.coupling.q
    p = model.coupling.p
    eta, gamma = estimate_exponents(grid.d, h.r, p)
    rc = h.r_conj
    s_w = rc * q / (rc + q - 1.0)
    phip = np.maximum(phi, 0.0)
    return {
        "phi+_LinfLeta": norms(phip, grid, eta, mode="sup-in-time"),
        "phi+_Lgamma": norms(phip, grid, gamma),
        "m_Lq": norms(m, grid, q),
        "w_Ls": norms(w, grid, s_w),
        "eta": eta,
        "gamma": gamma,
        "s_w": s_w,
    }
