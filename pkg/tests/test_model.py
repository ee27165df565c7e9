import math
import warnings

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from mfgdual.model import (
    CouplingSpec,
    DiffusionSpec,
    HamiltonianSpec,
    HypothesisError,
    ModelSpec,
    conjugate_exponents,
    estimate_exponents,
    eval_DpH,
    eval_F,
    eval_f,
    eval_Fstar,
    eval_H,
    eval_Hstar,
)


def legendre_1d(fun, slope, lo, hi):
    """sup_x (slope x - fun(x)) by bounded scalar search (oracle)."""
    res = minimize_scalar(lambda x: fun(x) - slope * x, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-13, "maxiter": 2000})
    return -res.fun


def test_eval_H_examples():
    assert eval_H(HamiltonianSpec(2.0), np.array([3.0, 4.0])) == pytest.approx(12.5, abs=1e-14)
    assert eval_H(HamiltonianSpec(3.0, 2.0), np.array([1.0, 0.0])) == pytest.approx(2.0 / 3.0, abs=1e-15)
    for r in (1.2, 2.0, 3.5):
        assert eval_H(HamiltonianSpec(r), np.zeros(2)) == 0.0


def test_eval_Hstar_examples():
    assert eval_Hstar(HamiltonianSpec(2.0), np.array([3.0, 4.0])) == pytest.approx(12.5, abs=1e-14)
    assert eval_Hstar(HamiltonianSpec(1.7, 3.0), np.zeros(2)) == 0.0
    spec = HamiltonianSpec(3.0)
    oracle = legendre_1d(lambda p: float(eval_H(spec, np.array([p]))), 1.0, -10, 10)
    assert float(eval_Hstar(spec, np.array([1.0, 0.0]))) == pytest.approx(oracle, abs=1e-8)


@pytest.mark.parametrize("r,cH,v", [(1.5, 1.0, 0.7), (2.5, 0.5, -2.0), (4.0, 3.0, 1.3)])
def test_Hstar_matches_numeric_legendre(r, cH, v):
    spec = HamiltonianSpec(r, cH)
    oracle = legendre_1d(lambda p: float(eval_H(spec, np.array([p]))), v, -50, 50)
    assert float(eval_Hstar(spec, np.array([v]))) == pytest.approx(oracle, rel=1e-8, abs=1e-10)


def test_DpH_examples_and_finite_differences():
    np.testing.assert_allclose(eval_DpH(HamiltonianSpec(2.0), np.array([3.0, 4.0])), [3.0, 4.0], atol=1e-15)
    for r in (1.3, 2.0, 3.0):
        assert np.all(eval_DpH(HamiltonianSpec(r), np.zeros(2)) == 0.0)
    rng = np.random.default_rng(1)
    for r in (1.5, 2.0, 3.0):
        spec = HamiltonianSpec(r, 1.7)
        for mag in (1e-3, 1e-1, 1.0, 1e2, 1e3):
            p = rng.normal(size=2)
            p *= mag / np.linalg.norm(p)
            step = 1e-5 * mag
            fd = np.array([
                (eval_H(spec, p + step * e) - eval_H(spec, p - step * e)) / (2 * step) for e in np.eye(2)
            ])
            np.testing.assert_allclose(eval_DpH(spec, p), fd, rtol=1e-6, atol=1e-12 * np.abs(fd).max())


def test_coupling_examples():
    c = CouplingSpec(2.0)
    assert eval_f(c, 1.0) == 1.0 and eval_F(c, 1.0) == 0.5 and eval_Fstar(c, 1.0) == 0.5
    assert eval_F(c, 1.0) + eval_Fstar(c, eval_f(c, 1.0)) == pytest.approx(1.0 * eval_f(c, 1.0))
    assert eval_Fstar(c, -1.0) == 0.0
    c3 = CouplingSpec(3.0, 2.0)
    oracle = legendre_1d(lambda m: float(eval_F(c3, m)), 5.0, 0.0, 20.0)
    assert float(eval_Fstar(c3, 5.0)) == pytest.approx(oracle, abs=1e-8)


def test_F_negative_density_is_infinite_and_f_rejects():
    c = CouplingSpec(2.0)
    assert eval_F(c, -0.1) == math.inf
    with pytest.raises(ValueError):
        eval_f(c, -0.1)


def test_Fstar_identically_zero_on_negative_half_line():
    a = -np.logspace(-12, 6, 200)
    for q in (1.2, 2.0, 5.0):
        assert np.all(eval_Fstar(CouplingSpec(q, 0.3), a) == 0.0)


@pytest.mark.parametrize("r", [1.5, 2.0, 3.0])
def test_fenchel_young_H(r):
    rng = np.random.default_rng(7)
    spec = HamiltonianSpec(r, 1.3)
    p = rng.normal(size=(2, 10_000)) * rng.uniform(0.01, 5, 10_000)
    v = rng.normal(size=(2, 10_000)) * rng.uniform(0.01, 5, 10_000)
    lhs = spec.H(p) + spec.Hstar(v)
    assert np.all(lhs >= np.sum(p * v, axis=0) - 1e-12 * (1 + np.abs(lhs)))
    v_eq = spec.DpH(p)
    eq = spec.H(p) + spec.Hstar(v_eq) - np.sum(p * v_eq, axis=0)
    np.testing.assert_allclose(eq, 0.0, atol=1e-9 * (1 + np.abs(spec.H(p)).max()))


@pytest.mark.parametrize("q", [1.5, 2.0, 3.0])
def test_fenchel_young_F(q):
    rng = np.random.default_rng(8)
    c = CouplingSpec(q, 0.8)
    m = rng.uniform(0, 5, 10_000)
    a = rng.uniform(-5, 5, 10_000)
    assert np.all(c.F(m) + c.Fstar(a) >= m * a - 1e-12)
    np.testing.assert_allclose(c.F(m) + c.Fstar(c.f(m)), m * c.f(m), rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("r", [1.5, 3.0])
def test_growth_sandwiches(r):
    rng = np.random.default_rng(9)
    w = rng.uniform(0.5, 2.0, size=50)
    spec = HamiltonianSpec(r, 1.5, w)
    C = spec.growth_constant
    p = rng.normal(size=(2, 50)) * 3
    H = spec.H(p, x=np.arange(50))
    n = np.linalg.norm(p, axis=0)
    assert np.all(n**r / (C * r) <= H + 1e-12) and np.all(H <= C * n**r / r + 1e-12)
    Hs = spec.Hstar(p, x=np.arange(50))
    rc = spec.r_conj
    assert np.all(n**rc / (C * rc) <= Hs + 1e-12) and np.all(Hs <= C * n**rc / rc + 1e-12)
    c = CouplingSpec(r, 0.4)
    Cf = c.growth_constant
    m = rng.uniform(0, 4, 50)
    assert np.all(m**r / (Cf * r) <= c.F(m) + 1e-12) and np.all(c.F(m) <= Cf * m**r / r + 1e-12)
    assert np.all(c.Fstar(m) <= Cf * m**c.p / c.p + 1e-12) and np.all(m**c.p / (Cf * c.p) <= c.Fstar(m) + 1e-12)


def test_double_conjugation_recovers_H():
    spec = HamiltonianSpec(3.0)
    Hs = lambda v: float(eval_Hstar(spec, np.array([v])))  # noqa: E731
    for p in (-1.7, -0.2, 0.5, 1.1, 2.3):
        assert legendre_1d(Hs, p, -40, 40) == pytest.approx(float(eval_H(spec, np.array([p]))), rel=1e-6, abs=1e-9)


def test_exponents_and_compatibility_flag():
    m0 = np.ones(8)
    base = dict(T=1.0, m0=m0, phiT=np.zeros(8))
    spec = ModelSpec(HamiltonianSpec(2.0), CouplingSpec(2.0), DiffusionSpec.isotropic(0.1), **base)
    assert conjugate_exponents(spec) == (2.0, 2.0, False)
    spec = ModelSpec(HamiltonianSpec(2.0), CouplingSpec(3.0), DiffusionSpec.zero(), **base)
    assert conjugate_exponents(spec)[1] == pytest.approx(1.5, abs=0)
    # r < p with diffusion: flagged, still constructible
    spec = ModelSpec(HamiltonianSpec(1.5), CouplingSpec(1.5), DiffusionSpec.isotropic(0.1), **base)
    assert conjugate_exponents(spec)[2] and not spec.within_hypotheses
    spec = spec.with_diffusion(DiffusionSpec.zero())
    assert spec.within_hypotheses


def test_estimate_exponents():
    assert estimate_exponents(2, 2.0, 1.5) == pytest.approx((4.0, 9.0), abs=1e-14)
    assert estimate_exponents(1, 2.0, 2.0) == (math.inf, math.inf)
    rng = np.random.default_rng(3)
    for _ in range(500):
        d = int(rng.integers(1, 4))
        r = float(rng.uniform(1.05, 5))
        p = float(rng.uniform(1.01, 1 + d / r))
        eta, gamma = estimate_exponents(d, r, p)
        if math.isfinite(gamma):
            assert gamma > r
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assert estimate_exponents(1, 2.0, 1.5) == (math.inf, math.inf)
    assert any("borderline" in str(w.message) for w in caught)


@pytest.mark.parametrize(
    "builder,hyp",
    [
        (lambda: CouplingSpec(0.5), "(H1)"),
        (lambda: CouplingSpec(2.0, -1.0), "(H1)"),
        (lambda: HamiltonianSpec(1.0), "(H2)"),
        (lambda: HamiltonianSpec(2.0, 0.0), "(H2)"),
        (lambda: DiffusionSpec.isotropic(-0.1), "(H3)"),
        (lambda: ModelSpec(HamiltonianSpec(2.0), CouplingSpec(2.0), DiffusionSpec.zero(), 1.0,
                           np.array([0.0, 2.0, 1.0, 1.0]), np.zeros(4)), "(H4)"),
        (lambda: ModelSpec(HamiltonianSpec(2.0), CouplingSpec(2.0), DiffusionSpec.zero(), 1.0,
                           np.full(4, 1.1), np.zeros(4)), "(H4)"),
        (lambda: ModelSpec(HamiltonianSpec(2.0), CouplingSpec(2.0), DiffusionSpec.zero(), 1.0,
                           np.ones(4), np.array([0, np.nan, 0, 0.0])), "(H4)"),
    ],
)
def test_hypothesis_violations_are_named(builder, hyp):
    with pytest.raises(HypothesisError) as info:
        builder()
    assert info.value.hypothesis == hyp
    assert hyp in str(info.value)


def test_factored_diffusion_is_psd_and_lipschitz():
    n = 16
    x = np.arange(n) / n
    sigma = np.zeros((1, 2, n))
    sigma[0, 0] = np.sin(2 * np.pi * x)
    sigma[0, 1] = 0.5
    diff = DiffusionSpec.factored(sigma, 1.0 / n)
    A = diff.matrix(1, n)
    np.testing.assert_allclose(A[0, 0], sigma[0, 0] ** 2 + 0.25)
    # Lipschitz constant dominates the discrete difference quotients
    dq = np.abs(np.roll(sigma, -1, axis=2) - sigma).max() * n
    assert diff.lipschitz >= dq - 1e-12
