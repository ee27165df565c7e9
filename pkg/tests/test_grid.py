import numpy as np
import pytest

from mfgdual.config import anisotropic_sigma
from mfgdual.grid import (
    LambdaOperator,
    NormalSolver,
    SpaceTimeGrid,
    apply_Lambda,
    apply_Lambda_adjoint,
    gradient,
    gradient_T,
    integrate_density,
    norms,
    opnorm_Lambda,
)
from mfgdual.model import DiffusionSpec


def diffusions(grid):
    return {
        "zero": DiffusionSpec.zero(),
        "iso": DiffusionSpec.isotropic(0.3),
        "factored": DiffusionSpec.factored(anisotropic_sigma(grid, 0.5), grid.h),
    }


# -- dense oracle ------------------------------------------------------------

def dense_lambda(grid, A):
    """Assemble Lambda as a dense matrix from 1-d circulant stencils and Kronecker products."""
    n, nt, d, h, dt = grid.n, grid.nt, grid.d, grid.h, grid.dt
    I = np.eye(n)
    P = np.roll(I, 1, axis=1)  # (P u)_i = u_{i+1}
    M = P.T  # (M u)_i = u_{i-1}
    Dp = (P - I) / h
    D0 = (P - M) / (2 * h)
    D2 = (P - 2 * I + M) / h**2

    def along(op, axis):
        mats = [I] * d
        mats[axis] = op
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        return out

    N = n**d
    Is = np.eye(N)
    upper = np.kron(np.eye(nt, nt + 1, k=1), Is)
    lower = np.kron(np.eye(nt, nt + 1, k=0), Is)
    L2 = np.zeros((N, N))
    if A is not None:
        for i in range(d):
            for j in range(d):
                stencil = along(D2, i) if i == j else along(D0, i) @ along(D0, j)
                L2 += np.diag(np.broadcast_to(A[i, j], grid.space_shape).ravel()) @ stencil
    rows_a = (upper - lower) / dt + np.kron(np.eye(nt), L2) @ upper
    rows_b = [np.kron(np.eye(nt), along(Dp, i)) @ upper for i in range(d)]
    return np.vstack([rows_a] + rows_b)


@pytest.mark.parametrize("d,n,nt", [(1, 4, 3), (2, 4, 3)])
@pytest.mark.parametrize("kind", ["zero", "iso", "factored"])
def test_lambda_and_adjoint_match_dense_assembly(d, n, nt, kind):
    grid = SpaceTimeGrid(d, n, nt)
    diff = diffusions(grid)[kind]
    op = LambdaOperator(grid, diff)
    dense = dense_lambda(grid, op.A)
    rng = np.random.default_rng(0)
    phi = rng.normal(size=grid.node_shape)
    a, b = op(phi)
    ref = dense @ phi.ravel()
    got = np.concatenate([a.ravel(), b.ravel()])
    np.testing.assert_allclose(got, ref, rtol=0, atol=1e-13 * np.abs(ref).max())
    m = rng.normal(size=grid.interval_shape)
    w = rng.normal(size=grid.vector_shape)
    ref_t = dense.T @ np.concatenate([m.ravel(), w.ravel()])
    np.testing.assert_allclose(op.adjoint(m, w).ravel(), ref_t, rtol=0, atol=1e-13 * np.abs(ref_t).max())


def test_lambda_simple_fields():
    grid = SpaceTimeGrid(2, 8, 5, T=2.0)
    for diff in diffusions(grid).values():
        a, b = apply_Lambda(grid, diff, np.full(grid.node_shape, 3.7))
        assert np.abs(a).max() < 1e-12 and np.abs(b).max() < 1e-12
        ramp = np.broadcast_to((grid.T - grid.times())[:, None, None], grid.node_shape).copy()
        a, b = apply_Lambda(grid, diff, ramp)
        np.testing.assert_allclose(a, -1.0, atol=1e-12)
        assert np.abs(b).max() < 1e-12


def test_uniform_density_is_stationary():
    grid = SpaceTimeGrid(2, 8, 5)
    for kind in ("zero", "iso"):
        psi = apply_Lambda_adjoint(grid, diffusions(grid)[kind], np.ones(grid.interval_shape),
                                   np.zeros(grid.vector_shape))
        assert np.abs(psi[1:-1]).max() < 1e-12


@pytest.mark.parametrize("d,n", [(1, 32), (2, 16)])
def test_adjointness_random(d, n):
    grid = SpaceTimeGrid(d, n, 8)
    rng = np.random.default_rng(1)
    for diff in diffusions(grid).values():
        op = LambdaOperator(grid, diff)
        for _ in range(20):
            phi = rng.normal(size=grid.node_shape)
            m = rng.normal(size=grid.interval_shape)
            w = rng.normal(size=grid.vector_shape)
            a, b = op(phi)
            lhs = grid.inner(a, m) + grid.inner(b, w)
            rhs = grid.weight * float(np.sum(phi * op.adjoint(m, w)))
            scale = grid.weight * (np.abs(a * m).sum() + np.abs(b * w).sum())
            assert abs(lhs - rhs) <= 1e-12 * scale


def test_gradient_integration_by_parts():
    grid = SpaceTimeGrid(2, 9, 3)
    rng = np.random.default_rng(2)
    u = rng.normal(size=grid.interval_shape)
    w = rng.normal(size=grid.vector_shape)
    lhs = np.sum(gradient(u, 2, grid.h) * w)
    rhs = np.sum(u * gradient_T(w, 2, grid.h))
    assert lhs == pytest.approx(rhs, rel=1e-13)


def test_translation_equivariance():
    grid = SpaceTimeGrid(2, 8, 4)
    rng = np.random.default_rng(3)
    phi = rng.normal(size=grid.node_shape)
    sigma = anisotropic_sigma(grid, 0.5)
    for axis in (1, 2):
        for diff, shifted in (
            (DiffusionSpec.zero(), DiffusionSpec.zero()),
            (DiffusionSpec.isotropic(0.2), DiffusionSpec.isotropic(0.2)),
            (DiffusionSpec.factored(sigma, grid.h), DiffusionSpec.factored(np.roll(sigma, 1, axis=axis + 1), grid.h)),
        ):
            a, b = apply_Lambda(grid, diff, phi)
            a2, b2 = apply_Lambda(grid, shifted, np.roll(phi, 1, axis=axis))
            assert np.array_equal(np.roll(a, 1, axis=axis), a2)
            assert np.array_equal(np.roll(b, 1, axis=axis + 1), b2)


def test_opnorm_matches_dense_svd():
    for d, n, nt in ((1, 6, 4), (2, 4, 3)):
        grid = SpaceTimeGrid(d, n, nt)
        for diff in diffusions(grid).values():
            op = LambdaOperator(grid, diff)
            smax = np.linalg.svd(dense_lambda(grid, op.A), compute_uv=False)[0]
            L, ok = opnorm_Lambda(grid, diff, iters=20000, tol=1e-12)
            assert ok
            assert L == pytest.approx(smax, rel=1e-6)


def test_opnorm_refinement_and_flags():
    L1, _ = opnorm_Lambda(SpaceTimeGrid(1, 64, 4), iters=5000, tol=1e-10)
    L2, _ = opnorm_Lambda(SpaceTimeGrid(1, 128, 4), iters=5000, tol=1e-10)
    assert 1.9 <= L2 / L1 <= 2.1
    L, ok = opnorm_Lambda(SpaceTimeGrid(1, 16, 8), iters=2, tol=1e-15)
    assert not ok and L > 0
    with pytest.raises(ValueError):
        opnorm_Lambda(SpaceTimeGrid(1, 16, 8), iters=0)
    # deterministic for a fixed seed
    assert opnorm_Lambda(SpaceTimeGrid(1, 16, 8), seed=4) == opnorm_Lambda(SpaceTimeGrid(1, 16, 8), seed=4)


def test_norm_examples():
    grid = SpaceTimeGrid(1, 16, 8)
    for s in (1.0, 2.0, 3.5, np.inf):
        assert norms(np.ones(grid.node_shape), grid, s) == pytest.approx(1.0, abs=1e-14)
        assert norms(np.ones(grid.interval_shape), grid, s) == pytest.approx(1.0, abs=1e-14)
    half = np.zeros(grid.interval_shape)
    half[:, ::2] = 1.0
    assert norms(half, grid, 2.0) == pytest.approx(np.sqrt(0.5), abs=1e-14)
    rng = np.random.default_rng(5)
    u = rng.normal(size=grid.node_shape)
    ref = 0.0
    for k in range(grid.nt + 1):
        tw = grid.dt * (0.5 if k in (0, grid.nt) else 1.0)
        for i in range(grid.n):
            ref += tw * grid.h * abs(u[k, i]) ** 3
    assert norms(u, grid, 3.0) == pytest.approx(ref ** (1 / 3), rel=1e-13)
    sup = max((grid.h * np.sum(np.abs(u[k]) ** 3)) ** (1 / 3) for k in range(grid.nt + 1))
    assert norms(u, grid, 3.0, mode="sup-in-time") == pytest.approx(sup, rel=1e-13)
    w = rng.normal(size=grid.vector_shape)
    assert norms(w, grid, 2.0) == pytest.approx(np.sqrt(grid.weight * np.sum(w * w)), rel=1e-13)


def test_integrate_density():
    grid = SpaceTimeGrid(2, 8, 3)
    m = np.full(grid.interval_shape, 2.0)
    assert integrate_density(m, 1, grid) == pytest.approx(2.0, abs=1e-14)
    m0 = np.random.default_rng(6).uniform(0.1, 1, grid.space_shape)
    m0 /= m0.mean()
    assert integrate_density(m0, None, grid) == pytest.approx(1.0, abs=1e-14)
    rng = np.random.default_rng(7)
    m = rng.uniform(size=grid.interval_shape)
    assert integrate_density(m, 2, grid) == pytest.approx(sum(m[2].ravel()) / 64, rel=1e-14)


def test_grid_invariants():
    grid = SpaceTimeGrid(2, 16, 10, T=2.5)
    assert grid.h * grid.n == pytest.approx(1.0, abs=1e-15)
    assert grid.dt * grid.nt == pytest.approx(2.5, abs=1e-15)
    for bad in ((4, 8, 8), (1, 3, 8), (1, 8, 0)):
        with pytest.raises(ValueError):
            SpaceTimeGrid(*bad)


@pytest.mark.parametrize("d,n,nt,eps", [(1, 12, 7, 0.0), (1, 12, 7, 0.4), (2, 8, 5, 0.1)])
def test_normal_solver_inverts_gram_on_free_slices(d, n, nt, eps):
    grid = SpaceTimeGrid(d, n, nt)
    diff = DiffusionSpec.isotropic(eps)
    op = LambdaOperator(grid, diff)
    s = np.random.default_rng(8).normal(size=grid.interval_shape)
    x = NormalSolver(grid, diff).solve(s)
    full = np.concatenate([x, np.zeros((1,) + grid.space_shape)])
    back = op.adjoint(*op(full))[:-1]
    np.testing.assert_allclose(back, s, atol=1e-10 * np.abs(s).max())
    with pytest.raises(ValueError):
        NormalSolver(grid, DiffusionSpec.factored(anisotropic_sigma(grid, 0.3), grid.h))
