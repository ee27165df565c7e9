"""Uniform periodic space-time grid on [0, T] x T^d and the operator Lambda.

Layout
------
* node fields (phi, alpha-on-nodes): shape ``(nt + 1, n, ..., n)``
* interval fields (a, m): shape ``(nt, n, ..., n)``
* interval vector fields (b, w): shape ``(d, nt, n, ..., n)``

``Lambda(phi) = (a, b)`` with, on interval k,

    a_k = (phi^{k+1} - phi^k) / dt + A_ij d_ij phi^{k+1}
    b_k = D+ phi^{k+1}

where ``D+`` is the periodic forward difference and ``d_ij`` are centered
second differences. ``apply_Lambda_adjoint`` is its exact transpose for the
inner product ``dt * h^d * sum(u * v)`` used on both spaces.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .model import DiffusionSpec


@dataclass(frozen=True)
class SpaceTimeGrid:
    d: int
    n: int
    nt: int
    T: float = 1.0

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension d={self.d} not supported")
        if self.n < 4:
            raise ValueError("need at least 4 nodes per axis")
        if self.nt < 1:
            raise ValueError("need at least one time interval")
        if not self.T > 0:
            raise ValueError("horizon T must be positive")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def cell(self) -> float:
        return self.h**self.d

    @property
    def space_shape(self) -> Tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def node_shape(self) -> Tuple[int, ...]:
        return (self.nt + 1,) + self.space_shape

    @property
    def interval_shape(self) -> Tuple[int, ...]:
        return (self.nt,) + self.space_shape

    @property
    def vector_shape(self) -> Tuple[int, ...]:
        return (self.d, self.nt) + self.space_shape

    @property
    def weight(self) -> float:
        """Space-time cell volume ``dt * h^d``."""
        return self.dt * self.cell

    def coords(self) -> Tuple[np.ndarray, ...]:
        """Node coordinates ``x_i = i h`` as an open mesh over the torus."""
        x = np.arange(self.n) * self.h
        return tuple(np.meshgrid(*([x] * self.d), indexing="ij", sparse=True))

    def times(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt

    def refined(self) -> "SpaceTimeGrid":
        return SpaceTimeGrid(self.d, 2 * self.n, 2 * self.nt, self.T)

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return self.weight * float(np.sum(u * v))


# -- spatial stencils -------------------------------------------------------
# Arrays carry time on axis 0 and space on axes 1..d.

def forward_diff(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(u, -1, axis=axis) - u) / h


def forward_diff_T(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Transpose of ``forward_diff`` (a negative backward divergence)."""
    return (np.roll(u, 1, axis=axis) - u) / h


def gradient(u: np.ndarray, d: int, h: float) -> np.ndarray:
    return np.stack([forward_diff(u, 1 + i, h) for i in range(d)])


def gradient_T(w: np.ndarray, d: int, h: float) -> np.ndarray:
    out = forward_diff_T(w[0], 1, h)
    for i in range(1, d):
        out = out + forward_diff_T(w[i], 1 + i, h)
    return out


def _second_diff(u: np.ndarray, i: int, j: int, h: float) -> np.ndarray:
    ai, aj = 1 + i, 1 + j
    if i == j:
        return (np.roll(u, -1, axis=ai) - 2.0 * u + np.roll(u, 1, axis=ai)) / (h * h)
    up = np.roll(u, -1, axis=ai)
    dn = np.roll(u, 1, axis=ai)
    return (
        np.roll(up, -1, axis=aj) - np.roll(up, 1, axis=aj) - np.roll(dn, -1, axis=aj) + np.roll(dn, 1, axis=aj)
    ) / (4.0 * h * h)


def second_order(u: np.ndarray, A: Optional[np.ndarray], d: int, h: float) -> np.ndarray:
    """``A_ij d_ij u`` (non-divergence form, centered)."""
    out = np.zeros_like(u)
    if A is None:
        return out
    for i in range(d):
        for j in range(d):
            if i != j and not np.any(A[i, j]):
                continue
            out += A[i, j] * _second_diff(u, i, j, h)
    return out


def second_order_T(m: np.ndarray, A: Optional[np.ndarray], d: int, h: float) -> np.ndarray:
    """Transpose of ``second_order``: ``d_ij (A_ij m)``; every stencil is symmetric."""
    out = np.zeros_like(m)
    if A is None:
        return out
    for i in range(d):
        for j in range(d):
            if i != j and not np.any(A[i, j]):
                continue
            out += _second_diff(A[i, j] * m, i, j, h)
    return out


class LambdaOperator:
    """Matrix-free ``Lambda`` on a grid with the diffusion matrix cached."""

    def __init__(self, grid: SpaceTimeGrid, diffusion: Optional[DiffusionSpec] = None):
        self.grid = grid
        self.diffusion = diffusion if diffusion is not None else DiffusionSpec.zero()
        self.A = self.diffusion.matrix(grid.d, grid.n)

    def __call__(self, phi: np.ndarray):
        g = self.grid
        if phi.shape != g.node_shape:
            raise ValueError(f"phi has shape {phi.shape}, expected {g.node_shape}")
        upper = phi[1:]
        a = (upper - phi[:-1]) / g.dt
        if self.A is not None:
            a = a + second_order(upper, self.A, g.d, g.h)
        b = gradient(upper, g.d, g.h)
        return a, b

    def adjoint(self, m: np.ndarray, w: np.ndarray) -> np.ndarray:
        g = self.grid
        dt = g.dt
        out = np.empty(g.node_shape)
        out[0] = -m[0] / dt
        out[1:] = m / dt
        out[1:-1] -= m[1:] / dt
        if self.A is not None:
            out[1:] += second_order_T(m, self.A, g.d, g.h)
        out[1:] += gradient_T(w, g.d, g.h)
        return out

    def terminal_density(self, m: np.ndarray, w: np.ndarray) -> np.ndarray:
        """m(T) produced by one more step of the discrete continuity equation."""
        g = self.grid
        last = m[-1:]
        out = last + g.dt * gradient_T(w[:, -1:], g.d, g.h)
        if self.A is not None:
            out = out + g.dt * second_order_T(last, self.A, g.d, g.h)
        return out[0]


def apply_Lambda(grid: SpaceTimeGrid, diffusion: Optional[DiffusionSpec], phi: np.ndarray):
    return LambdaOperator(grid, diffusion)(phi)


def apply_Lambda_adjoint(grid: SpaceTimeGrid, diffusion: Optional[DiffusionSpec], m, w) -> np.ndarray:
    return LambdaOperator(grid, diffusion).adjoint(m, w)


def opnorm_Lambda(
    grid: SpaceTimeGrid,
    diffusion: Optional[DiffusionSpec] = None,
    iters: int = 500,
    tol: float = 1e-6,
    seed: int = 0,
):
    """Power iteration on ``Lambda^T Lambda``.

    Returns ``(L, converged)``; on non-convergence L is the last estimate.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    op = LambdaOperator(grid, diffusion)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(grid.node_shape)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iters):
        a, b = op(x)
        y = op.adjoint(a, b)
        nrm = np.linalg.norm(y)
        if nrm == 0:
            return 0.0, True
        new = np.sqrt(nrm)
        x = y / nrm
        if est > 0 and abs(new - est) <= tol * new:
            return new, True
        est = new
    return est, False


def norms(field: np.ndarray, grid: SpaceTimeGrid, s: float, mode: str = "space-time") -> float:
    """Discrete L^s norm with cell-volume weights.

    Node fields use trapezoidal weights in time so that constants have the
    exact norm ``T^(1/s)``. Vector fields (leading axis d) are reduced by
    the pointwise Euclidean norm first. ``mode="sup-in-time"`` returns the
    largest spatial L^s norm over time slices.
    """
    u = np.asarray(field, dtype=float)
    if u.ndim == grid.d + 2:
        u = np.sqrt(np.sum(u * u, axis=0))
    u = np.abs(u)
    nslices = u.shape[0]
    if nslices == grid.nt + 1:
        tw = np.full(nslices, grid.dt)
        tw[0] = tw[-1] = 0.5 * grid.dt
    elif nslices == grid.nt:
        tw = np.full(nslices, grid.dt)
    else:
        tw = None
    space_axes = tuple(range(1, u.ndim))
    if mode == "sup-in-time":
        if s == np.inf:
            return float(u.max())
        return float(np.max((grid.cell * np.sum(u**s, axis=space_axes)) ** (1.0 / s)))
    if mode != "space-time":
        raise ValueError(f"unknown norm mode {mode!r}")
    if tw is None:
        raise ValueError("space-time norms need a node or interval placed field")
    if s == np.inf:
        return float(u.max())
    per_slice = grid.cell * np.sum(u**s, axis=space_axes)
    return float(np.sum(tw * per_slice) ** (1.0 / s))


def integrate_density(m: np.ndarray, k: Optional[int], grid: SpaceTimeGrid) -> float:
    """``h^d`` times the node sum of slice k (or of ``m`` itself if k is None)."""
    slice_ = m if k is None else m[k]
    return grid.cell * float(np.sum(slice_))


class NormalSolver:
    """Solve ``(Lambda^T Lambda) x = s`` on the free slices ``0 .. nt-1``.

    The terminal slice is pinned (zero increment), which makes the system
    positive definite. Only zero or constant isotropic diffusion is supported:
    then the operator is diagonalized by the spatial DFT and, for every mode,
    is a symmetric tridiagonal matrix in time, eliminated once up front.
    """

    def __init__(self, grid: SpaceTimeGrid, diffusion: Optional[DiffusionSpec] = None):
        diffusion = diffusion if diffusion is not None else DiffusionSpec.zero()
        if not (diffusion.is_zero or diffusion.kind == "isotropic"):
            raise ValueError("NormalSolver needs zero or constant isotropic diffusion")
        self.grid = grid
        eps = 0.0 if diffusion.is_zero else diffusion.eps
        d, n, nt, h, dt = grid.d, grid.n, grid.nt, grid.h, grid.dt
        freqs = [2 * np.pi * np.fft.fftfreq(n)] * (d - 1) + [2 * np.pi * np.fft.rfftfreq(n)]
        thetas = np.meshgrid(*freqs, indexing="ij", sparse=True)
        g2 = sum((2.0 - 2.0 * np.cos(t)) / (h * h) for t in thetas)
        g2 = np.broadcast_to(g2, tuple(len(f) for f in freqs))
        c0 = 1.0 / dt
        c1 = c0 - eps * g2
        self.off = -c0 * c1
        diag = np.empty((nt,) + g2.shape)
        diag[0] = c0 * c0
        diag[1:] = c0 * c0 + c1 * c1 + g2
        denom = np.empty_like(diag)
        denom[0] = diag[0]
        for j in range(1, nt):
            denom[j] = diag[j] - self.off * self.off / denom[j - 1]
        self.denom = denom
        self._axes = tuple(range(1, d + 1))

    def solve(self, s: np.ndarray) -> np.ndarray:
        g = self.grid
        S = np.fft.rfftn(s, axes=self._axes)
        off, denom = self.off, self.denom
        y = np.empty_like(S)
        y[0] = S[0] / denom[0]
        for j in range(1, g.nt):
            y[j] = (S[j] - off * y[j - 1]) / denom[j]
        for j in range(g.nt - 2, -1, -1):
            y[j] -= off / denom[j] * y[j + 1]
        return np.fft.irfftn(y, s=g.space_shape, axes=self._axes)
