"""Affine registration: analytic gradients, recovery of known transforms."""

import numpy as np
import pytest
from regfixtures import mean_corner_displacement, random_perturbation, registration_phantom

from t1qc.model import ValidationFailed, Volume
from t1qc.phantom import PhantomSpec, generate_phantom, inject_gadolinium
from t1qc.registration import (
    AffineParams,
    _Problem,
    apply_affine,
    register_affine,
    sample_trilinear,
)


class TestAffineParams:
    def test_vector_round_trip(self):
        p = AffineParams((1, 2, 3), (0.1, 0.2, 0.3), (0.01, 0.02, 0.03), (0.001, 0.002, 0.003))
        assert AffineParams.from_vector(p.to_vector()) == p

    def test_identity_matrix(self):
        m = AffineParams().to_matrix(np.array([5.0, 5.0, 5.0]))
        assert np.allclose(m, np.eye(4))

    def test_positive_determinant(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = AffineParams.from_vector(rng.normal(scale=0.3, size=12))
            assert np.linalg.det(p.linear_matrix()) > 0


class TestSampling:
    def test_exact_at_integer_positions(self):
        rng = np.random.default_rng(1)
        data = rng.random((4, 5, 6))
        idx = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0], [3.0, 4.0, 5.0]])
        values, _ = sample_trilinear(data, idx)
        assert np.allclose(values, [data[1, 2, 3], data[0, 0, 0], data[3, 4, 5]])

    def test_edge_clamping(self):
        data = np.arange(27, dtype=float).reshape(3, 3, 3)
        values, grad = sample_trilinear(data, np.array([[-5.0, 1.0, 1.0]]))
        assert values[0] == data[0, 1, 1]
        assert grad[0, 0] == 0.0  # clamped axis has zero gradient

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        data = rng.random((6, 6, 6))
        idx = rng.uniform(0.5, 4.5, size=(50, 3))
        _, grad = sample_trilinear(data, idx)
        h = 1e-6
        for axis in range(3):
            shift = np.zeros(3)
            shift[axis] = h
            vp, _ = sample_trilinear(data, idx + shift)
            vm, _ = sample_trilinear(data, idx - shift)
            fd = (vp - vm) / (2 * h)
            assert np.allclose(grad[:, axis], fd, atol=1e-6)


class TestObjective:
    def test_gradient_matches_finite_differences(self):
        ref = registration_phantom(seed=1)
        problem = _Problem(ref, ref)
        theta = np.array([1.0, -2.0, 0.5, 0.05, -0.03, 0.08, 0.02, -0.04, 0.01, 0.03, -0.02, 0.04])
        _, grad = problem.value_and_grad(theta)
        h = 1e-6
        for i in range(12):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += h
            tm[i] -= h
            fd = (problem.value(tp) - problem.value(tm)) / (2 * h)
            assert abs(fd - grad[i]) <= 1e-6 * max(1.0, abs(fd))


class TestRecovery:
    def test_self_registration_is_near_identity(self):
        ref = registration_phantom(seed=3)
        result = register_affine(ref, ref)
        vec = result.params.to_vector()
        assert np.all(np.abs(vec[0:3]) < 0.1)  # translation, voxels (1 mm spacing)
        assert np.all(np.abs(vec[3:6]) < 0.01)  # rotation, radians
        # the warp at identity parameters is exact
        assert np.allclose(result.warped.data, ref.data, atol=1e-12)

    def test_translation_recovery(self):
        ref = generate_phantom(PhantomSpec(shape=(32, 32, 32), seed=1))
        ref = inject_gadolinium(ref, seed=42)
        generated = AffineParams(translation=(4.0, 0.0, 0.0))
        moving = apply_affine(ref, generated)
        result = register_affine(moving, ref)
        recovered = result.params.to_vector()
        # registering the shifted copy recovers the inverse shift
        assert abs(recovered[0] + 4.0) < 0.5
        assert np.all(np.abs(recovered[1:3]) < 0.5)

    def test_rotation_recovery(self):
        ref = registration_phantom(seed=5)
        generated = AffineParams(rotation=(0.0, 0.0, np.deg2rad(8.0)))
        moving = apply_affine(ref, generated)
        result = register_affine(moving, ref)
        err = mean_corner_displacement(result.params, generated, ref.shape)
        assert err <= 2.0

    def test_objective_non_increasing_within_levels(self):
        ref = registration_phantom(seed=7)
        moving = apply_affine(ref, AffineParams(translation=(3.0, -2.0, 1.0)))
        result = register_affine(moving, ref)
        for level in result.objective_trace:
            diffs = np.diff(level)
            assert np.all(diffs <= 1e-15)

    def test_constant_volume_rejected(self):
        flat = Volume(data=np.zeros((8, 8, 8)))
        ref = registration_phantom(seed=9)
        with pytest.raises(ValidationFailed):
            register_affine(flat, ref)

    def test_deterministic(self):
        ref = registration_phantom(seed=11)
        moving = apply_affine(ref, AffineParams(translation=(2.0, 1.0, -3.0)))
        a = register_affine(moving, ref)
        b = register_affine(moving, ref)
        assert np.array_equal(a.params.to_vector(), b.params.to_vector())
        assert np.array_equal(a.warped.data, b.warped.data)

    def test_composite_perturbation_recovery(self):
        rng = np.random.default_rng(77)
        ref = registration_phantom(seed=13)
        generated = random_perturbation(rng)
        moving = apply_affine(ref, generated)
        result = register_affine(moving, ref)
        assert mean_corner_displacement(result.params, generated, ref.shape) <= 2.0
