import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from dictpbdw import (ConfigError, DomainError, InnerProductSpace, ParameterBox, SensorSpec,
                      advection_diffusion_lite, assemble, sample_parameters, sensor_pattern,
                      sensors_radial, solve_state, thermal_block)
from dictpbdw.problems import GridMesh, _refined_midpoints, snapshots


def five_point_laplacian(n):
    t = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])
    eye = sp.identity(n)
    return (sp.kron(eye, t) + sp.kron(t, eye)).tocsr()


class TestMesh:
    def test_geometry(self):
        mesh = GridMesh(4)
        assert mesh.n_dofs == 9
        assert mesh.areas.sum() == pytest.approx(1.0)
        assert np.allclose(mesh.areas, 1 / 32)

    def test_rejects_tiny(self):
        with pytest.raises(ValueError):
            GridMesh(1)

    def test_quadrature_rule(self):
        for n in (1, 2, 5):
            lam, wts = _refined_midpoints(n)
            assert len(wts) == n * n and wts.sum() == pytest.approx(1.0)
            assert np.allclose(lam.sum(axis=1), 1.0) and np.all(lam > 0)
            # exact for linear integrands
            assert np.allclose(wts @ lam, 1 / 3)

    def test_load_converges_under_refinement(self):
        mesh = GridMesh(6)

        def func(x, y):
            return np.exp(-((x - 0.4) ** 2 + (y - 0.6) ** 2) / 0.05)

        ref = mesh.load(func, n_sub=64)
        errs = [np.abs(mesh.load(func, n_sub=n) - ref).max() for n in (2, 4, 8)]
        assert errs[0] > errs[1] > errs[2]
        assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.2)


class TestThermalBlock:
    def test_stiffness_is_five_point_laplacian(self):
        space, model = thermal_block(9)
        diff = space.gram - five_point_laplacian(8)
        assert abs(diff).max() <= 1e-13

    def test_constant_source_load(self):
        _, model = thermal_block(12)
        h = 1 / 12
        assert np.allclose(model.rhs_terms[0], h * h, rtol=1e-14)

    def test_block_terms(self, thermal):
        space, model = thermal
        assert space.dim == 1024 and len(model.operator_terms) == 10
        assert model.operator_terms[0].nnz == 0
        total = sum(model.operator_terms[1:])
        assert abs(total - space.gram).max() <= 1e-13
        B, _ = assemble(model, np.full(9, 0.5))
        assert abs(B - 0.5 * space.gram).max() <= 1e-13

    def test_validation(self):
        for n in (0, 10, 3 * 7 + 1):
            with pytest.raises(ValueError):
                thermal_block(n)

    def test_box(self, thermal):
        _, model = thermal
        assert np.allclose(model.box.lo, 0.1) and np.allclose(model.box.hi, 1.0)
        assert set(model.box.sampling) == {"log_uniform"}

    def test_maximum_principle(self, thermal):
        _, model = thermal
        for xi in sample_parameters(model.box, 3, 2):
            assert solve_state(model, xi).min() > 0


class TestAdvection:
    def test_nonsymmetric_and_solvable(self, advection):
        space, model = advection
        assert space.dim == 39 * 39 and len(model.operator_terms) == 11
        B, f = assemble(model, model.box.center)
        assert abs(B - B.T).max() > 1e-6
        u = solve_state(model, model.box.center)
        assert np.linalg.norm(B @ u - f) <= 1e-10 * np.linalg.norm(f)

    def test_advection_terms_skew_on_interior(self, advection):
        # divergence-free field vanishing on the boundary: A + A^T is small
        space, model = advection
        A = model.operator_terms[1]
        assert abs(A + A.T).max() <= 0.1 * abs(A).max()

    def test_parameters_identifiable(self, advection):
        # the ten advection directions acting on a state are linearly independent
        space, model = advection
        u = solve_state(model, model.box.center)
        cols = np.column_stack([space.apply_factor(space.solve(A @ u)) for A in model.operator_terms[1:]])
        s = np.linalg.svd(cols, compute_uv=False)
        assert s[-1] > 1e-3 * s[0]

    def test_peclet_guard(self, advection):
        _, model = advection
        assert model.metadata["max_cell_peclet"] < 2
        with pytest.raises(ConfigError, match="Peclet"):
            advection_diffusion_lite(n_h=10, kappa=0.001)

    def test_box_rejects_zero(self, advection):
        _, model = advection
        with pytest.raises(DomainError):
            assemble(model, np.zeros(10))

    def test_argument_checks(self):
        with pytest.raises(ValueError):
            advection_diffusion_lite(n_h=4)
        with pytest.raises(ValueError):
            advection_diffusion_lite(n_h=20, kappa=0.0)


class TestSensors:
    def test_patterns(self):
        assert sensor_pattern("m64").m == 64
        assert sensor_pattern("m36").m == 36
        assert sensor_pattern("m9").m == 9
        assert set(map(tuple, sensor_pattern("m9").locations)) == {
            (i / 9, j / 9) for i in (1, 4, 7) for j in (1, 4, 7)}
        with pytest.raises(ValueError):
            sensor_pattern("m10")

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SensorSpec([(0.0, 0.5)])
        with pytest.raises(ValueError):
            SensorSpec([(0.5, 0.5)], width=0.0)
        with pytest.raises(ValueError):
            SensorSpec(np.zeros((0, 2)))
        assert SensorSpec([(0.5, 0.5)], 0.1, "one").manifest()["pattern"] == "one"

    def test_nonnegative_and_mass(self, thermal):
        space, model = thermal
        spec = SensorSpec([(0.5, 0.5)], 0.05)
        ell = sensors_radial(space, model.mesh, spec)[:, 0]
        assert ell.min() >= 0
        # sum_i l(phi_i) approximates the Gaussian mass pi sigma^2 (partition of unity)
        assert ell.sum() == pytest.approx(math.pi * 0.05**2, rel=1e-3)

    def test_symmetry(self, thermal):
        space, model = thermal
        n = model.mesh.n_h - 1
        spec = SensorSpec([(2 / 9, 5 / 9), (5 / 9, 2 / 9), (7 / 9, 4 / 9)], 2.0**-6)
        L = sensors_radial(space, model.mesh, spec)
        grid = lambda v: v.reshape(n, n)  # noqa: E731  rows are y
        # swapping the coordinates of a location transposes its sensor
        assert np.allclose(grid(L[:, 0]), grid(L[:, 1]).T, rtol=1e-10, atol=1e-14 * L.max())
        # 180 degree rotation maps (x, y) to (1 - x, 1 - y)
        rot = sensors_radial(space, model.mesh, SensorSpec([(2 / 9, 5 / 9)], 2.0**-6))[:, 0]
        assert np.allclose(grid(rot)[::-1, ::-1],
                           grid(sensors_radial(space, model.mesh,
                                               SensorSpec([(7 / 9, 4 / 9)], 2.0**-6))[:, 0]),
                           rtol=1e-8, atol=1e-14 * L.max())

    def test_quadrature_refinement(self, thermal):
        space, model = thermal
        spec = sensor_pattern("m9")
        coarse = sensors_radial(space, model.mesh, spec)
        fine = sensors_radial(space, model.mesh, spec, n_sub=32)
        assert np.linalg.norm(coarse - fine) <= 1e-2 * np.linalg.norm(fine)

    def test_shape(self, thermal):
        space, model = thermal
        assert sensors_radial(space, model.mesh, sensor_pattern("m36")).shape == (1024, 36)


class TestSampling:
    def test_log_uniform_median(self):
        box = ParameterBox([0.1], [1.0], "log_uniform")
        draws = sample_parameters(box, 20_000, 3)[:, 0]
        assert np.median(draws) == pytest.approx(math.sqrt(0.1), rel=0.02)

    def test_uniform_mean(self):
        box = ParameterBox([-2.0, 0.0], [-1.0, 4.0])
        draws = sample_parameters(box, 20_000, 4)
        assert np.allclose(draws.mean(axis=0), [-1.5, 2.0], atol=0.03)

    def test_reproducible(self, thermal):
        _, model = thermal
        a = sample_parameters(model.box, 10, 8)
        assert np.array_equal(a, sample_parameters(model.box, 10, 8))
        assert not np.array_equal(a, sample_parameters(model.box, 10, 9))
        # prefix property: more draws extend the same stream
        assert np.array_equal(a, sample_parameters(model.box, 20, 8)[:10])

    def test_count(self, thermal):
        with pytest.raises(ValueError):
            sample_parameters(thermal[1].box, 0, 1)

    def test_snapshots(self, small_thermal):
        space, model, _ = small_thermal
        params = sample_parameters(model.box, 3, 0)
        S = snapshots(model, params)
        assert S.shape == (space.dim, 3)
        assert np.array_equal(S[:, 1], solve_state(model, params[1]))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**63), count=st.integers(1, 50))
def test_samples_inside_box(seed, count):
    box = ParameterBox([0.1, -1.0], [1.0, -0.5], ["log_uniform", "uniform"])
    draws = sample_parameters(box, count, seed)
    assert draws.shape == (count, 2)
    assert all(box.contains(x) for x in draws)


def test_inner_product_space_from_problem(advection):
    space, _ = advection
    assert isinstance(space, InnerProductSpace)
    x = np.random.default_rng(0).standard_normal(space.dim)
    assert x @ (space.gram @ x) > 0
