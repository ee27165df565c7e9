"""Proximal maps for the primal-dual splitting.

The composite term is ``G(a, b) = sum F*(x, -a + H(x, b))`` (cell-weighted).
Its pointwise prox

    argmin_{a, b}  F*(-a + H(b)) + |a - at|^2 / (2 s_a) + |b - bt|^2 / (2 s_b)

reduces, for the radial power Hamiltonian, to a scalar monotone equation.
Writing ``mu = (F*)'(-a + H(b)) >= 0`` the optimality system reads

    a = at + s_a mu
    b = beta bt / |bt|,   beta + s_b mu k beta^(r-1) = |bt|
    mu = (F*)'(-at - s_a mu + k beta(mu)^r / r)

with ``k = w(x) cH``. The last equation is increasing in ``mu`` and is
bracketed by ``[0, (F*)'(-at + H(bt))]``; it is solved by Newton's method
safeguarded by bisection. ``mu`` is exactly the density returned by the
conjugate prox (Moreau), which keeps ``m >= 0`` and ``w = 0`` on ``{m = 0}``
exact rather than approximate.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import CouplingSpec, HamiltonianSpec


@dataclass(frozen=True)
class ProxParams:
    step: float = 1.0
    newton_tol: float = 1e-13
    newton_max: int = 60
    bisection_fallback: bool = True

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("prox step must be positive")
        if not (0 < self.newton_tol <= 1e-6):
            raise ValueError("newton_tol must lie in (0, 1e-6]")


@dataclass(frozen=True)
class PointwiseProblem:
    """One grid point of the composite prox; kept for error reports and the oracle corpus."""

    a_tilde: float
    b_tilde: tuple
    sigma: float
    r: float
    q: float
    k: float = 1.0
    cf: float = 1.0

    def solve(self, params: Optional[ProxParams] = None):
        h = HamiltonianSpec(self.r, self.k)
        c = CouplingSpec(self.q, self.cf)
        a, b = prox_G_pointwise(
            np.array([self.a_tilde]), np.array(self.b_tilde, dtype=float).reshape(-1, 1), self.sigma, h, c, params
        )
        return float(a[0]), b[:, 0]


class ProxError(RuntimeError):
    def __init__(self, message: str, problems: Sequence[PointwiseProblem]):
        self.problems = list(problems)
        super().__init__(f"{message}; {len(self.problems)} failing point(s), first: {self.problems[:1]}")


_ULP4 = 4.0 * np.finfo(float).eps


def _safeguarded_newton(fun, lo, hi, x0, tol, maxiter, bisect=True):
    """Vectorized root finder for increasing ``fun`` with ``fun(lo) <= 0 <= fun(hi)``.

    ``fun(x, idx)`` returns ``(value, derivative)`` for the entries ``idx``.
    Returns ``(x, failed_mask)``.
    """
    lo = lo.copy()
    hi = hi.copy()
    x = np.clip(x0, lo, hi)
    active = np.arange(x.size)
    failed = np.zeros(x.size, dtype=bool)
    dx_old = hi - lo
    for _ in range(maxiter):
        if active.size == 0:
            break
        xa = x[active]
        f, df = fun(xa, active)
        scale = np.maximum(1.0, np.abs(xa))
        done = np.abs(f) <= tol * scale
        lo_a, hi_a = lo[active], hi[active]
        lo_a = np.where(f < 0, xa, lo_a)
        hi_a = np.where(f > 0, xa, hi_a)
        lo[active], hi[active] = lo_a, hi_a
        done |= (hi_a - lo_a) <= _ULP4 * np.abs(xa) + 1e-300
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = xa - f / df
        bad = ~np.isfinite(xn) | (xn <= lo_a) | (xn >= hi_a)
        # progress check: the Newton step must at least halve the previous one
        slow = np.abs(xn - xa) > 0.5 * dx_old[active]
        if bisect:
            bad |= slow
        if np.any(bad & ~done):
            if not bisect:
                failed[active[bad & ~done]] = True
                done |= bad
            else:
                xn = np.where(bad, 0.5 * (lo_a + hi_a), xn)
        x[active] = np.where(done, xa, xn)
        dx_old[active] = np.abs(xn - xa)
        active = active[~done]
    if active.size:
        if bisect:
            # plain bisection on whatever is left
            for _ in range(200):
                xa = 0.5 * (lo[active] + hi[active])
                f, _ = fun(xa, active)
                lo[active] = np.where(f < 0, xa, lo[active])
                hi[active] = np.where(f > 0, xa, hi[active])
                x[active] = xa
                scale = np.maximum(1.0, np.abs(xa))
                keep = (np.abs(f) > tol * scale) & (hi[active] - lo[active] > _ULP4 * np.abs(xa) + 1e-300)
                active = active[keep]
                if active.size == 0:
                    break
        failed[active] = True
    return x, failed


def _flat(value, size):
    return np.broadcast_to(np.asarray(value, dtype=float), size).ravel().copy()


def _beta_of_mu(mu, bt, k, s_b, r, idx=None):
    """Solve ``beta + s_b mu k beta^(r-1) = bt`` for ``beta in [0, bt]``."""
    c = s_b * mu * k
    if r == 2.0:
        return bt / (1.0 + c)
    beta = np.zeros_like(bt)
    pos = (bt > 0) & (c > 0)
    beta = np.where(c > 0, beta, bt)
    if not np.any(pos):
        return beta
    btp, cp = bt[pos], c[pos]

    def psi(x, j):
        xr = x ** (r - 2.0)
        return x + cp[j] * xr * x - btp[j], 1.0 + (r - 1.0) * cp[j] * xr

    lo = np.zeros_like(btp)
    hi = btp.copy()
    # for r < 2 psi is concave: start right and Newton stays in the bracket from above
    x0 = btp / (1.0 + cp * btp ** (r - 2.0)) if r > 2 else btp.copy()
    root, failed = _safeguarded_newton(psi, lo, hi, x0, 1e-15, 200)
    beta[pos] = root
    return beta


def _solve_mu(at, btn, k, cf, s_a, s_b, r, q, mu0, params: ProxParams):
    p = q / (q - 1.0)
    e = p - 1.0  # (F*)'(c) = (c / cf)^e
    c0 = -at + k * btn**r / r
    mu_max = (np.maximum(c0, 0.0) / cf) ** e
    active = np.nonzero(c0 > 0)[0]
    mu = np.zeros_like(at)
    beta = btn.copy()
    if active.size == 0:
        return mu, beta, c0
    A_ = at[active]
    B_ = btn[active]
    K_ = k[active]
    CF = cf[active]
    SA = s_a[active]
    SB = s_b[active]

    def phi(x, j):
        bet = _beta_of_mu(x, B_[j], K_[j], SB[j], r)
        c = -A_[j] - SA[j] * x + K_[j] * bet**r / r
        cpos = np.maximum(c, 0.0)
        g = (cpos / CF[j]) ** e
        kb = K_[j] * bet ** (r - 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            denom = 1.0 + SB[j] * x * K_[j] * (r - 1.0) * np.where(bet > 0, bet ** (r - 2.0), 0.0)
            dbeta = np.where(bet > 0, -SB[j] * kb / denom, 0.0)
            dc = -SA[j] + kb * dbeta
            dg = np.where(c > 0, e / CF[j] * (cpos / CF[j]) ** (e - 1.0), 0.0)
        return x - g, 1.0 - dg * dc

    lo = np.zeros(active.size)
    hi = mu_max[active]
    x0 = np.clip(mu0[active], 0.0, hi) if mu0 is not None else 0.5 * hi
    root, failed = _safeguarded_newton(
        phi, lo, hi, x0, params.newton_tol, params.newton_max, bisect=params.bisection_fallback
    )
    if np.any(failed) or not np.all(np.isfinite(root)):
        bad = active[failed | ~np.isfinite(root)]
        probs = [
            PointwiseProblem(float(at[i]), (float(btn[i]),), float(s_a[i]), r, q, float(k[i]), float(cf[i]))
            for i in bad[:10]
        ]
        raise ProxError("pointwise prox did not converge", probs)
    mu[active] = root
    beta[active] = _beta_of_mu(root, B_, K_, SB, r)
    return mu, beta, c0


def _split_sigma(sigma):
    if np.ndim(sigma) == 0:
        return sigma, sigma
    s_a, s_b = sigma
    return s_a, s_b


def prox_G_pointwise(
    a_tilde,
    b_tilde,
    sigma,
    hamiltonian: HamiltonianSpec,
    coupling: CouplingSpec,
    params: Optional[ProxParams] = None,
    k=None,
):
    """Prox of ``F*(-a + H(b))`` with weight ``sigma`` (scalar, or ``(sigma_a, sigma_b)``).

    ``a_tilde`` has shape ``S`` and ``b_tilde`` shape ``(d, *S)``; coefficient
    arrays of the specs broadcast against ``S``. Points in the zero set
    ``-a_tilde + H(b_tilde) <= 0`` are returned unchanged.
    """
    params = params or ProxParams()
    at = np.asarray(a_tilde, dtype=float)
    bt = np.asarray(b_tilde, dtype=float)
    shape = at.shape
    s_a, s_b = _split_sigma(sigma)
    if k is None:
        k = hamiltonian.coefficient()
    btn = np.sqrt(np.sum(bt * bt, axis=0))
    mu, beta, c0 = _solve_mu(
        at.ravel().copy(),
        btn.ravel().copy(),
        _flat(k, shape),
        _flat(coupling.cf, shape),
        _flat(s_a, shape),
        _flat(s_b, shape),
        hamiltonian.r,
        coupling.q,
        None,
        params,
    )
    mu = mu.reshape(shape)
    beta = beta.reshape(shape)
    a = np.where(c0.reshape(shape) > 0, at + np.broadcast_to(s_a, shape) * mu, at)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(btn > 0, beta / btn, 0.0)
    b = np.where(c0.reshape(shape) > 0, ratio * bt, bt)
    return a, b


def prox_Gstar(
    m_tilde,
    w_tilde,
    sigma,
    hamiltonian: HamiltonianSpec,
    coupling: CouplingSpec,
    params: Optional[ProxParams] = None,
    m_guess=None,
    k=None,
):
    """Prox of ``sigma * sum [F(m) + m H*(-w/m)]`` at ``(m_tilde, w_tilde)``.

    Computed through the Moreau decomposition with the pointwise solve above:
    the dual point ``y`` is mapped to ``(at, bt) = -y / sigma`` and the
    resulting density is ``mu``; ``w = mu k beta^(r-1) w_tilde / |w_tilde|``.
    ``sigma`` may be a scalar or a pair ``(sigma_m, sigma_w)``.
    """
    params = params or ProxParams()
    mt = np.asarray(m_tilde, dtype=float)
    wt = np.asarray(w_tilde, dtype=float)
    shape = mt.shape
    sig_m, sig_w = _split_sigma(sigma)
    if k is None:
        k = hamiltonian.coefficient()
    wtn = np.sqrt(np.sum(wt * wt, axis=0))
    r = hamiltonian.r
    kf = _flat(k, shape)
    sa = 1.0 / _flat(sig_m, shape)
    sb = 1.0 / _flat(sig_w, shape)
    guess = None if m_guess is None else np.asarray(m_guess, dtype=float).ravel()
    mu, beta, _ = _solve_mu(
        -mt.ravel() * sa,
        wtn.ravel() * sb,
        kf,
        _flat(coupling.cf, shape),
        sa,
        sb,
        r,
        coupling.q,
        guess,
        params,
    )
    m = mu.reshape(shape)
    mag = (mu * kf * beta ** (r - 1.0)).reshape(shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = np.where(wtn > 0, wt / wtn, 0.0)
    w = mag * unit
    return m, w


def prox_primal(phi_tilde, tau, m0, phiT, dt):
    """Prox of ``-<m0, phi(0)> + indicator{phi(T) = phiT}`` in the ``dt h^d`` metric."""
    phi = np.array(phi_tilde, dtype=float, copy=True)
    phi[0] += tau * np.asarray(m0) / dt
    phi[-1] = phiT
    return phi
