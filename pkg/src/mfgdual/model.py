"""Hamiltonian, coupling and diffusion families for the MFG system.

The built-in families are power laws::

    H(x, p)  = w(x) cH |p|^r / r
    f(x, m)  = cf(x) m^(q-1)
    A(x)     = Sigma(x) Sigma(x)^T

which admit closed-form conjugates. Vector arguments carry their component
axis first, i.e. ``p.shape == (d, *S)``; spatial coefficient arrays broadcast
against the trailing shape ``S``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

ArrayLike = Union[float, np.ndarray]


class HypothesisError(ValueError):
    """A model or configuration violates one of the standing hypotheses (H1)-(H4)."""

    def __init__(self, hypothesis: str, message: str):
        self.hypothesis = hypothesis
        super().__init__(f"{hypothesis}: {message}")


def _as_coefficient(value: ArrayLike, name: str, hypothesis: str):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise HypothesisError(hypothesis, f"{name} must be finite and strictly positive")
    if arr.ndim == 0:
        return float(arr)
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


def _pick(coef: ArrayLike, x) -> ArrayLike:
    if x is None or np.ndim(coef) == 0:
        return coef
    return np.asarray(coef)[x]


def _vnorm(p: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.square(p), axis=0))


@dataclass(frozen=True)
class HamiltonianSpec:
    r: float
    cH: float = 1.0
    weight: ArrayLike = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.r) and self.r > 1):
            raise HypothesisError("(H2)", f"Hamiltonian exponent r={self.r} must exceed 1")
        object.__setattr__(self, "cH", _as_coefficient(self.cH, "cH", "(H2)"))
        object.__setattr__(self, "weight", _as_coefficient(self.weight, "weight", "(H2)"))

    @property
    def r_conj(self) -> float:
        return self.r / (self.r - 1.0)

    def coefficient(self, x=None) -> ArrayLike:
        """Pointwise factor ``w(x) * cH``."""
        return _pick(self.weight, x) * self.cH

    @property
    def growth_constant(self) -> float:
        """Constant C2 of the two-sided growth bounds for H and H*."""
        w = np.asarray(self.weight)
        ks = (float(w.min()) * self.cH, float(w.max()) * self.cH)
        e = self.r_conj - 1.0
        return max(max(k, 1.0 / k, k**e, k**-e) for k in ks)

    def H(self, p: np.ndarray, x=None) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return self.coefficient(x) * _vnorm(p) ** self.r / self.r

    def Hstar(self, v: np.ndarray, x=None) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        rc = self.r_conj
        return self.coefficient(x) ** (-1.0 / (self.r - 1.0)) * _vnorm(v) ** rc / rc

    def DpH(self, p: np.ndarray, x=None) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        nrm = _vnorm(p)
        # |p|^(r-2) p -> 0 at the origin for every r > 1
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(nrm > 0, nrm ** (self.r - 2.0), 0.0)
        return self.coefficient(x) * scale * p


@dataclass(frozen=True)
class CouplingSpec:
    q: float
    cf: ArrayLike = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.q) and self.q > 1):
            raise HypothesisError(
                "(H1)", f"coupling exponent q={self.q} must exceed 1 for f to be increasing with q-1 growth"
            )
        object.__setattr__(self, "cf", _as_coefficient(self.cf, "cf", "(H1)"))

    @property
    def p(self) -> float:
        return self.q / (self.q - 1.0)

    @property
    def growth_constant(self) -> float:
        c = np.asarray(self.cf)
        e = self.p - 1.0
        return max(max(k, 1.0 / k, k**e, k**-e) for k in (float(c.min()), float(c.max())))

    def f(self, m: ArrayLike, x=None) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        if np.any(m < 0):
            raise ValueError("coupling f is only defined for m >= 0")
        return _pick(self.cf, x) * m ** (self.q - 1.0)

    def F(self, m: ArrayLike, x=None) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        with np.errstate(invalid="ignore"):
            val = _pick(self.cf, x) * np.abs(m) ** self.q / self.q
        return np.where(m < 0, np.inf, val)

    def Fstar(self, a: ArrayLike, x=None) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        p = self.p
        return _pick(self.cf, x) ** (1.0 - p) * np.maximum(a, 0.0) ** p / p

    def f_inverse(self, a: ArrayLike, x=None) -> np.ndarray:
        """Derivative of F*, i.e. the density m >= 0 with f(m) = a_+."""
        a = np.asarray(a, dtype=float)
        return (np.maximum(a, 0.0) / _pick(self.cf, x)) ** (self.p - 1.0)


@dataclass(frozen=True)
class DiffusionSpec:
    """Diffusion ``A = Sigma Sigma^T`` sampled on the spatial nodes.

    ``kind`` is one of ``"zero"``, ``"isotropic"`` (A = eps I) or ``"factored"``
    (``sigma`` has shape ``(d, D, n, ..., n)``).
    """

    kind: str = "zero"
    eps: float = 0.0
    sigma: Optional[np.ndarray] = None
    lipschitz: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "isotropic", "factored"):
            raise HypothesisError("(H3)", f"unknown diffusion kind {self.kind!r}")
        if self.kind == "isotropic" and not (np.isfinite(self.eps) and self.eps >= 0):
            raise HypothesisError("(H3)", f"viscosity eps={self.eps} must be >= 0")
        if self.kind == "factored":
            if self.sigma is None or np.ndim(self.sigma) < 3:
                raise HypothesisError("(H3)", "factored diffusion needs sigma of shape (d, D, *grid)")
            if not np.all(np.isfinite(self.sigma)):
                raise HypothesisError("(H3)", "sigma must be finite")
            s = np.array(self.sigma, dtype=float)
            s.setflags(write=False)
            object.__setattr__(self, "sigma", s)

    @classmethod
    def zero(cls) -> "DiffusionSpec":
        return cls("zero")

    @classmethod
    def isotropic(cls, eps: float) -> "DiffusionSpec":
        return cls("isotropic", eps=float(eps))

    @classmethod
    def factored(cls, sigma: np.ndarray, h: float) -> "DiffusionSpec":
        sigma = np.asarray(sigma, dtype=float)
        d = sigma.shape[0]
        lip = 0.0
        for i in range(d):
            diff = np.roll(sigma, -1, axis=2 + i) - sigma
            lip = max(lip, float(np.max(np.sqrt(np.sum(diff**2, axis=(0, 1))))) / h)
        return cls("factored", sigma=sigma, lipschitz=lip)

    @property
    def is_zero(self) -> bool:
        if self.kind == "zero":
            return True
        if self.kind == "isotropic":
            return self.eps == 0.0
        return not np.any(self.sigma)

    def matrix(self, d: int, n: int) -> Optional[np.ndarray]:
        """A(x) as an array of shape ``(d, d, n, ..., n)``, or None when A == 0."""
        if self.is_zero:
            return None
        if self.kind == "isotropic":
            eye = np.eye(d).reshape((d, d) + (1,) * d)
            return np.broadcast_to(self.eps * eye, (d, d) + (n,) * d).copy()
        if self.sigma.shape[0] != d or self.sigma.shape[2:] != (n,) * d:
            raise ValueError(f"sigma shape {self.sigma.shape} does not match d={d}, n={n}")
        return np.einsum("iaX,jaX->ijX", self.sigma.reshape(d, self.sigma.shape[1], -1),
                         self.sigma.reshape(d, self.sigma.shape[1], -1)).reshape((d, d) + (n,) * d)

    def sup_norm(self, d: int, n: int) -> float:
        A = self.matrix(d, n)
        if A is None:
            return 0.0
        return float(np.max(np.abs(A)))


@dataclass(frozen=True)
class ModelSpec:
    hamiltonian: HamiltonianSpec
    coupling: CouplingSpec
    diffusion: DiffusionSpec = field(default_factory=DiffusionSpec.zero)
    T: float = 1.0
    m0: Optional[np.ndarray] = None
    phiT: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise HypothesisError("(H4)", f"horizon T={self.T} must be positive")
        if self.m0 is None or self.phiT is None:
            raise HypothesisError("(H4)", "m0 and phiT must be provided")
        m0 = np.array(self.m0, dtype=float)
        phiT = np.array(self.phiT, dtype=float)
        if m0.shape != phiT.shape:
            raise HypothesisError("(H4)", "m0 and phiT must be sampled on the same nodes")
        if not np.all(np.isfinite(m0)) or np.any(m0 <= 0):
            raise HypothesisError("(H4)", "m0 must be a strictly positive density")
        mass = float(np.sum(m0)) / m0.size
        if abs(mass - 1.0) > 1e-10:
            raise HypothesisError("(H4)", f"m0 must have unit mass, got {mass!r}")
        if not np.all(np.isfinite(phiT)):
            raise HypothesisError("(H4)", "phiT must be finite")
        m0.setflags(write=False)
        phiT.setflags(write=False)
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "phiT", phiT)

    @property
    def d(self) -> int:
        return self.m0.ndim

    @property
    def n(self) -> int:
        return self.m0.shape[0]

    @property
    def within_hypotheses(self) -> bool:
        return not conjugate_exponents(self)[2]

    def with_diffusion(self, diffusion: DiffusionSpec) -> "ModelSpec":
        return ModelSpec(self.hamiltonian, self.coupling, diffusion, self.T, self.m0, self.phiT)


def eval_H(spec: HamiltonianSpec, p, x=None):
    return spec.H(p, x)


def eval_Hstar(spec: HamiltonianSpec, v, x=None):
    return spec.Hstar(v, x)


def eval_DpH(spec: HamiltonianSpec, p, x=None):
    return spec.DpH(p, x)


def eval_f(spec: CouplingSpec, m, x=None):
    return spec.f(m, x)


def eval_F(spec: CouplingSpec, m, x=None):
    return spec.F(m, x)


def eval_Fstar(spec: CouplingSpec, a, x=None):
    return spec.Fstar(a, x)


def conjugate_exponents(spec: ModelSpec):
    """Return ``(r', p, violated)`` where ``violated`` flags r < p with A != 0."""
    r = spec.hamiltonian.r
    p = spec.coupling.p
    violated = r < p and not spec.diffusion.is_zero
    return spec.hamiltonian.r_conj, p, violated


def estimate_exponents(d: int, r: float, p: float):
    """Integrability exponents (eta, gamma) for subsolutions of the HJ inequality.

    Both are infinite when p > 1 + d/r. At the excluded borderline p == 1 + d/r
    the exponents are reported as infinite and a warning is emitted.
    """
    if d < 1 or r <= 1 or p <= 1:
        raise ValueError("need d >= 1, r > 1, p > 1")
    threshold = 1.0 + d / r
    if math.isclose(p, threshold, rel_tol=1e-12, abs_tol=0.0):
        warnings.warn(
            f"p={p} sits on the borderline 1 + d/r; exponents reported as infinite without a bound",
            RuntimeWarning,
            stacklevel=2,
        )
        return math.inf, math.inf
    if p > threshold:
        return math.inf, math.inf
    denom = d - r * (p - 1.0)
    eta = d * (r * (p - 1.0) + 1.0) / denom
    gamma = r * p * (1.0 + d) / denom
    return eta, gamma
