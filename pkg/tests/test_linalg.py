import warnings

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from dictpbdw import (BasisMatrix, InnerProductSpace, NumericalError, dual_norm, pod, project,
                      riesz, u_inner, u_norm, u_orthonormalize)
from dictpbdw.linalg import gram_orthonormalize

from _util import laplacian_1d, random_spd


def e(i, n):
    out = np.zeros(n)
    out[i] = 1.0
    return out


class TestInnerProductSpace:
    def test_cholesky_factor_matches_gram(self, rng):
        gram = laplacian_1d(200) + sp.identity(200)
        space = InnerProductSpace(gram)
        assert space.factor_kind == "cholesky"
        err = np.linalg.norm((space.factor.T @ space.factor - gram).toarray())
        assert err <= 1e-10 * np.linalg.norm(gram.toarray())

    def test_factor_is_triangular_after_permutation(self, thermal):
        space, _ = thermal
        q = space.factor.toarray()
        # Q x reproduces the norm for arbitrary x.
        x = np.random.default_rng(0).standard_normal(space.dim)
        assert np.isclose(np.linalg.norm(q @ x) ** 2, x @ (space.gram @ x), rtol=1e-12)

    def test_rejects_nonsymmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            InnerProductSpace(np.array([[2.0, 1.0], [0.0, 2.0]]))

    def test_rejects_indefinite(self):
        with pytest.raises(NumericalError):
            InnerProductSpace(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_custom_rectangular_factor(self, rng):
        q = rng.standard_normal((12, 5))
        space = InnerProductSpace(q.T @ q, factor=q)
        assert space.factor_kind == "custom" and space.factor_rows == 12
        x = rng.standard_normal(5)
        assert np.isclose(u_norm(space, x), np.linalg.norm(q @ x), rtol=1e-12)

    def test_custom_factor_checked(self, rng):
        q = rng.standard_normal((6, 4))
        with pytest.raises(ValueError, match="Q\\^T Q"):
            InnerProductSpace(q.T @ q, factor=2 * q)


class TestUInner:
    def test_identity(self):
        space = InnerProductSpace(np.eye(2))
        assert u_inner(space, e(0, 2), e(0, 2)) == 1.0

    def test_diagonal(self):
        space = InnerProductSpace(np.diag([4.0, 1.0]))
        assert u_inner(space, e(0, 2), e(0, 2)) == 4.0

    def test_matches_dense_factor(self, rng):
        gram = random_spd(rng, 50)
        space = InnerProductSpace(gram)
        L = np.linalg.cholesky(gram)
        a, b = rng.standard_normal((2, 50))
        ref = (L.T @ a) @ (L.T @ b)
        assert abs(u_inner(space, a, b) - ref) <= 1e-12 * abs(ref)
        assert u_inner(space, a, b) == pytest.approx(u_inner(space, b, a), rel=1e-14)

    def test_dimension_mismatch(self):
        space = InnerProductSpace(np.eye(3))
        with pytest.raises(ValueError):
            u_inner(space, np.ones(2), np.ones(3))


class TestDualNorm:
    def test_zero(self):
        assert dual_norm(InnerProductSpace(np.eye(3)), np.zeros(3)) == 0.0

    def test_diagonal(self):
        space = InnerProductSpace(np.diag([4.0, 1.0]))
        assert dual_norm(space, np.array([2.0, 0.0])) == pytest.approx(1.0, rel=1e-15)

    def test_dense_solve_oracle(self, rng):
        gram = random_spd(rng, 50)
        r = rng.standard_normal(50)
        x = sla.solve(gram, r)
        assert dual_norm(InnerProductSpace(gram), r) == pytest.approx(np.sqrt(r @ x), rel=1e-10)


class TestRiesz:
    def test_zero(self):
        assert not np.any(riesz(InnerProductSpace(np.eye(4)), np.zeros(4)))

    def test_scaled_identity(self):
        x = riesz(InnerProductSpace(2 * np.eye(5)), e(3, 5))
        assert np.allclose(x, 0.5 * e(3, 5), atol=1e-15)

    def test_residual(self, rng):
        gram = random_spd(rng, 40)
        ell = rng.standard_normal(40)
        x = riesz(InnerProductSpace(gram), ell)
        assert np.linalg.norm(gram @ x - ell) <= 1e-10 * np.linalg.norm(ell)

    def test_block_rhs(self, rng):
        gram = random_spd(rng, 20)
        ells = rng.standard_normal((20, 3))
        x = riesz(InnerProductSpace(gram), ells)
        assert np.allclose(gram @ x, ells, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 30))
def test_dual_norm_equals_norm_of_riesz(seed, n):
    rng = np.random.default_rng(seed)
    space = InnerProductSpace(random_spd(rng, n))
    ell = rng.standard_normal(n)
    assert u_norm(space, riesz(space, ell)) == pytest.approx(dual_norm(space, ell), rel=1e-10)


class TestOrthonormalize:
    def test_unit_column_unchanged(self):
        space = InnerProductSpace(np.diag([4.0, 1.0, 1.0]))
        col = np.array([0.5, 0.0, 0.0])
        out = u_orthonormalize(space, col[:, None])
        assert out.u_orthonormal and np.allclose(out.columns[:, 0], col)

    def test_duplicate_dropped(self, rng):
        space = InnerProductSpace(np.eye(4))
        v = rng.standard_normal(4)
        with pytest.warns(UserWarning, match="dropped 1"):
            out = u_orthonormalize(space, np.column_stack([v, v]))
        assert out.size == 1 and out.dropped == (1,)

    def test_random_gram_identity(self, rng):
        gram = random_spd(rng, 50, shift=1.0)
        space = InnerProductSpace(gram)
        out = u_orthonormalize(space, rng.standard_normal((50, 5)))
        G = out.columns.T @ gram @ out.columns
        assert np.linalg.norm(G - np.eye(5)) <= 1e-10 * np.sqrt(5)

    def test_span_and_transform(self, rng):
        gram = random_spd(rng, 30)
        space = InnerProductSpace(gram)
        cols = rng.standard_normal((30, 4))
        out, T = u_orthonormalize(space, cols, return_transform=True)
        assert np.allclose(cols @ T, out.columns, atol=1e-12)
        # same span: least-squares residual of the input in the output basis
        coef = np.linalg.lstsq(out.columns, cols, rcond=None)[0]
        assert np.allclose(out.columns @ coef, cols, atol=1e-10)

    def test_ill_conditioned_fem_gram(self, thermal):
        space, _ = thermal
        rng = np.random.default_rng(3)
        base = rng.standard_normal((space.dim, 8))
        cols = base + 1e-6 * rng.standard_normal((space.dim, 8))
        cols[:, 4:] = cols[:, :4] + 1e-7 * rng.standard_normal((space.dim, 4))
        out = u_orthonormalize(space, cols)
        G = out.columns.T @ (space.gram @ out.columns)
        assert np.linalg.norm(G - np.eye(out.size)) <= 1e-10 * np.sqrt(out.size)

    def test_gram_orthonormalize_matches(self, rng):
        gram = random_spd(rng, 25)
        space = InnerProductSpace(gram)
        cols = rng.standard_normal((25, 6))
        out, T = u_orthonormalize(space, cols, return_transform=True)
        T2, kept = gram_orthonormalize(cols.T @ gram @ cols)
        assert kept == list(range(6))
        assert np.allclose(T, T2, atol=1e-10)


class TestPod:
    def test_equal_snapshots(self, rng):
        gram = random_spd(rng, 15)
        space = InnerProductSpace(gram)
        s = rng.standard_normal(15)
        modes, sv = pod(space, np.column_stack([s, s, s]), 3)
        assert modes.size == 1
        ref = s / u_norm(space, s)
        assert np.allclose(np.abs(modes.columns[:, 0] @ gram @ ref), 1.0, atol=1e-12)
        assert sv[0] == pytest.approx(np.sqrt(3) * u_norm(space, s), rel=1e-12)

    def test_orthonormal_snapshots(self, rng):
        gram = random_spd(rng, 12)
        space = InnerProductSpace(gram)
        V = u_orthonormalize(space, rng.standard_normal((12, 2)))
        modes, sv = pod(space, V.columns, 2)
        assert sv == pytest.approx([1.0, 1.0], rel=1e-12)
        P = modes.columns @ modes.columns.T @ gram
        assert np.allclose(P @ V.columns, V.columns, atol=1e-12)

    def test_projection_error_nonincreasing(self, rng):
        gram = random_spd(rng, 100, shift=10.0)
        space = InnerProductSpace(gram)
        snaps = rng.standard_normal((100, 20))
        modes, sv = pod(space, snaps, 20)
        assert np.all(np.diff(sv) <= 1e-12 * sv[0])
        G = modes.columns.T @ gram @ modes.columns
        assert np.linalg.norm(G - np.eye(modes.size)) <= 1e-10 * np.sqrt(modes.size)
        errs = np.array([[u_norm(space, s - project(space, BasisMatrix(modes.columns[:, :n], True), s))
                          for n in range(modes.size + 1)] for s in snaps.T])
        assert np.all(np.diff(errs, axis=1) <= 1e-12)

    def test_best_subspace_energy(self, rng):
        # POD captures the U-energy of the snapshot set better than a random subspace.
        gram = random_spd(rng, 40)
        space = InnerProductSpace(gram)
        snaps = rng.standard_normal((40, 3)) @ rng.standard_normal((3, 30)) + 1e-3 * rng.standard_normal((40, 30))
        modes, sv = pod(space, snaps, 3)
        resid = sum(u_norm(space, s - project(space, modes, s)) ** 2 for s in snaps.T)
        assert resid == pytest.approx(float(np.sum(np.linalg.eigvalsh(snaps.T @ gram @ snaps)[:-3])), rel=1e-6)

    def test_n_max_too_large(self, rng):
        space = InnerProductSpace(np.eye(5))
        with pytest.raises(ValueError):
            pod(space, rng.standard_normal((5, 2)), 3)


class TestProject:
    def test_in_span(self, rng):
        gram = random_spd(rng, 20)
        space = InnerProductSpace(gram)
        V = u_orthonormalize(space, rng.standard_normal((20, 3)))
        u = V.columns @ rng.standard_normal(3)
        assert np.allclose(project(space, V, u), u, atol=1e-12 * np.linalg.norm(u))

    def test_empty(self, rng):
        space = InnerProductSpace(np.eye(4))
        assert not np.any(project(space, BasisMatrix(np.zeros((4, 0)), True), rng.standard_normal(4)))

    def test_requires_orthonormal(self):
        space = InnerProductSpace(np.eye(3))
        with pytest.raises(ValueError):
            project(space, BasisMatrix(np.eye(3)[:, :1]), np.ones(3))

    def test_orthogonality_and_pythagoras(self, rng):
        gram = random_spd(rng, 30)
        space = InnerProductSpace(gram)
        V = u_orthonormalize(space, rng.standard_normal((30, 6)))
        u = rng.standard_normal(30)
        p = project(space, V, u)
        res = V.columns.T @ gram @ (u - p)
        assert np.max(np.abs(res)) <= 1e-10 * u_norm(space, u)
        assert np.allclose(project(space, V, p), p, atol=1e-12)
        assert u_norm(space, u) ** 2 == pytest.approx(u_norm(space, p) ** 2 + u_norm(space, u - p) ** 2,
                                                      rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 25), p=st.integers(1, 3))
def test_pythagoras_property(seed, n, p):
    rng = np.random.default_rng(seed)
    space = InnerProductSpace(random_spd(rng, n))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        V = u_orthonormalize(space, rng.standard_normal((n, p)))
    u = rng.standard_normal(n)
    pu = project(space, V, u)
    lhs = u_norm(space, u) ** 2
    assert lhs == pytest.approx(u_norm(space, pu) ** 2 + u_norm(space, u - pu) ** 2, rel=1e-10)
