import numpy as np

from django.test import SimpleTestCase

from motionseg.segmentation import constants
from motionseg.segmentation.exceptions import InsufficientData, NumericalFailure, ValidationError
from motionseg.segmentation.motion_model import (
    LinearMotionModel,
    PixelSample,
    design_matrix,
    fit_linear_model,
    fit_model,
    fit_quadratic_model,
    model_residual,
    normal_equation_gradient,
    normalize_coords,
    predict_flow,
    sample_pixels,
    sum_squared_error,
)
from motionseg.segmentation.synthetic import PlaneDepth, ScrewMotion, render_flow

from .factories import SequenceFactory


def grid_points(n=12):
    x, y = np.meshgrid(np.linspace(-1, 1, n), np.linspace(-1, 1, n))
    return x.ravel(), y.ravel()


def random_motion(rng):
    return ScrewMotion(*rng.uniform(-0.05, 0.05, size=6))


def random_plane(rng):
    return PlaneDepth(z=rng.uniform(1.0, 10.0), slope_x=rng.uniform(-0.4, 0.4), slope_y=rng.uniform(-0.4, 0.4))


def rigid_sample(motion, plane, focal=1.0, n=12):
    x, y = grid_points(n)
    q = plane.inverse_depth(x, y)
    u, v = render_flow(motion, x, y, q, focal)
    return PixelSample(x=x, y=y, q=q, u=u, v=v)


class NormalizeCoordsTests(SimpleTestCase):

    def test_square_image_corners(self):
        grid = normalize_coords(64, 64)
        self.assertEqual(grid.s_norm, 32.0)
        self.assertAlmostEqual(grid.x[0, 0], -31.5 / 32)
        self.assertAlmostEqual(grid.y[-1, -1], 31.5 / 32)

    def test_wide_image_uses_longer_side(self):
        grid = normalize_coords(128, 64)
        self.assertEqual(grid.s_norm, 64.0)
        self.assertEqual(grid.x.shape, (64, 128))
        self.assertAlmostEqual(grid.y[0, 0], -31.5 / 64)
        self.assertAlmostEqual(grid.x[0, -1], 63.5 / 64)

    def test_to_pixels_inverts(self):
        grid = normalize_coords(10, 6)
        cols, rows = grid.to_pixels(grid.x, grid.y)
        np.testing.assert_allclose(cols[2], np.arange(10))
        np.testing.assert_allclose(rows[:, 3], np.arange(6))

    def test_rejects_empty_image(self):
        with self.assertRaises(ValidationError):
            normalize_coords(0, 4)


class DesignMatrixTests(SimpleTestCase):

    def test_unknown_kind(self):
        with self.assertRaises(ValidationError):
            design_matrix('cubic', np.zeros(3), np.zeros(3))

    def test_linear_needs_inverse_depth(self):
        with self.assertRaises(ValidationError):
            design_matrix(constants.MODEL_LINEAR_DEPTH, np.zeros(3), np.zeros(3))

    def test_shapes(self):
        x = np.arange(5.0)
        self.assertEqual(design_matrix(constants.MODEL_QUADRATIC, x, x).shape, (10, 12))
        self.assertEqual(design_matrix(constants.MODEL_LINEAR_DEPTH, x, x, x).shape, (10, 8))


class LinearModelTests(SimpleTestCase):

    def test_expresses_every_rigid_motion(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            sample = rigid_sample(random_motion(rng), random_plane(rng))
            model = fit_linear_model(sample)
            self.assertLessEqual(model_residual(model, sample), 1e-12)

    def test_expresses_rigid_motion_for_other_focal_lengths(self):
        rng = np.random.default_rng(4)
        for focal in (0.5, 2.0):
            sample = rigid_sample(random_motion(rng), random_plane(rng), focal=focal)
            self.assertLessEqual(model_residual(fit_linear_model(sample), sample), 1e-12)

    def test_zero_flow_fits_zero_model(self):
        x, y = grid_points()
        sample = PixelSample(x=x, y=y, q=np.full_like(x, 0.5), u=np.zeros_like(x), v=np.zeros_like(x))
        np.testing.assert_allclose(fit_linear_model(sample).coefficients, 0.0, atol=1e-12)

    def test_pure_rotation_about_optical_axis(self):
        sample = rigid_sample(ScrewMotion(omega3=0.02), PlaneDepth(z=2.0, slope_x=0.3))
        model = fit_linear_model(sample)
        self.assertAlmostEqual(model.d, 0.02, places=10)
        np.testing.assert_allclose(np.delete(model.coefficients, 3), 0.0, atol=1e-10)

    def test_parallax_separates_models(self):
        rng = np.random.default_rng(5)
        x, y = rng.uniform(-1, 1, size=(2, 200))
        q = np.where(rng.random(200) < 0.5, 1.0, 0.1)  # two depth layers in one object
        u, v = render_flow(ScrewMotion(tau1=0.05, tau3=-0.05), x, y, q)
        sample = PixelSample(x=x, y=y, q=q, u=u, v=v)
        self.assertLessEqual(model_residual(fit_linear_model(sample), sample), 1e-12)
        self.assertGreater(model_residual(fit_quadratic_model(sample), sample), 1e-6)

    def test_depth_translation_predicts_inverse_depth(self):
        x, y = grid_points(4)
        q = np.linspace(0.1, 2.0, x.size)
        u, v = predict_flow(LinearMotionModel(b=1.0, h=1.0), x, y, q)
        np.testing.assert_allclose(u, q)
        np.testing.assert_allclose(v, q)

    def test_printed_variant_fits_its_own_flow(self):
        rng = np.random.default_rng(6)
        truth = LinearMotionModel(*rng.uniform(-0.1, 0.1, size=8), printed=True)
        x, y = grid_points()
        q = random_plane(rng).inverse_depth(x, y)
        u, v = predict_flow(truth, x, y, q)
        sample = PixelSample(x=x, y=y, q=q, u=u, v=v)
        fitted = fit_linear_model(sample, printed=True)
        self.assertEqual(fitted.kind, constants.MODEL_LINEAR_DEPTH_PRINTED)
        self.assertLessEqual(model_residual(fitted, sample), 1e-12)

    def test_depth_scale_invariance(self):
        rng = np.random.default_rng(7)
        sample = rigid_sample(random_motion(rng), random_plane(rng))
        noisy = PixelSample(x=sample.x, y=sample.y, q=sample.q,
                            u=sample.u + rng.normal(0, 1e-3, sample.n),
                            v=sample.v + rng.normal(0, 1e-3, sample.n))
        baseline = model_residual(fit_linear_model(noisy), noisy)
        for scale in (0.1, 3.0, 50.0):
            scaled = noisy.scaled_depth(scale)
            self.assertAlmostEqual(model_residual(fit_linear_model(scaled), scaled) / baseline, 1.0, places=6)


class QuadraticModelTests(SimpleTestCase):

    def test_affine_flow(self):
        x, y = grid_points()
        sample = PixelSample(x=x, y=y, q=np.ones_like(x), u=1.0 + 2.0 * x, v=-y)
        model = fit_quadratic_model(sample)
        expected = np.zeros(12)
        expected[[0, 1, 8]] = [1.0, 2.0, -1.0]
        np.testing.assert_allclose(model.coefficients, expected, atol=1e-10)

    def test_kind_ignores_depth(self):
        x, y = grid_points()
        sample = PixelSample(x=x, y=y, q=np.ones_like(x), u=x * y, v=y * y)
        self.assertLessEqual(model_residual(fit_model(constants.MODEL_QUADRATIC, sample), sample), 1e-20)


class ObjectiveTests(SimpleTestCase):

    def setUp(self):
        rng = np.random.default_rng(8)
        clean = rigid_sample(random_motion(rng), random_plane(rng))
        self.sample = PixelSample(x=clean.x, y=clean.y, q=clean.q,
                                  u=clean.u + rng.normal(0, 0.01, clean.n),
                                  v=clean.v + rng.normal(0, 0.01, clean.n))

    def test_zero_model_against_unit_flow(self):
        x, y = grid_points(3)
        sample = PixelSample(x=x, y=y, q=np.ones_like(x), u=np.ones_like(x), v=np.zeros_like(x))
        self.assertEqual(model_residual(LinearMotionModel(), sample), 1.0)

    def test_gradient_matches_central_differences(self):
        model = LinearMotionModel(*np.linspace(-0.2, 0.2, 8))
        gradient = normal_equation_gradient(model, self.sample)
        step = 1e-6
        numeric = np.zeros(8)
        for index in range(8):
            delta = np.zeros(8)
            delta[index] = step
            plus = sum_squared_error(model, self.sample, model.coefficients + delta)
            minus = sum_squared_error(model, self.sample, model.coefficients - delta)
            numeric[index] = (plus - minus) / (2 * step)
        np.testing.assert_allclose(numeric, gradient, rtol=1e-6, atol=1e-9)

    def test_fit_is_a_minimum(self):
        model = fit_linear_model(self.sample)
        best = sum_squared_error(model, self.sample)
        for index in range(8):
            for sign in (-1.0, 1.0):
                delta = np.zeros(8)
                delta[index] = sign * 1e-3
                self.assertGreaterEqual(sum_squared_error(model, self.sample, model.coefficients + delta), best)

    def test_refitting_a_prediction_is_idempotent(self):
        model = fit_linear_model(self.sample)
        u, v = predict_flow(model, self.sample.x, self.sample.y, self.sample.q)
        again = fit_linear_model(PixelSample(x=self.sample.x, y=self.sample.y, q=self.sample.q, u=u, v=v))
        u2, v2 = predict_flow(again, self.sample.x, self.sample.y, self.sample.q)
        np.testing.assert_allclose(u2, u, atol=1e-10)
        np.testing.assert_allclose(v2, v, atol=1e-10)


class PixelSampleTests(SimpleTestCase):

    def setUp(self):
        labels = SequenceFactory.blocks(30, 30, [(0, 0, 20, 20, 1), (25, 25, 28, 28, 2)])
        u = np.tile(np.arange(30.0), (30, 1))
        flows = [SequenceFactory.flow(u, -u)]
        depths = [SequenceFactory.depth(np.full((30, 30), 4.0))] * 2
        self.seq = SequenceFactory.sequence([labels, labels], flows=flows, depths=depths)

    def test_cap_and_determinism(self):
        first = sample_pixels(1, 0, self.seq, max_n=100, seed=9)
        second = sample_pixels(1, 0, self.seq, max_n=100, seed=9)
        other = sample_pixels(1, 0, self.seq, max_n=100, seed=10)
        self.assertEqual(first.n, 100)
        np.testing.assert_array_equal(first.x, second.x)
        self.assertFalse(np.array_equal(first.x, other.x))

    def test_small_track_keeps_every_pixel(self):
        sample = sample_pixels(2, 0, self.seq, max_n=100)
        self.assertEqual(sample.n, 9)
        np.testing.assert_allclose(sample.q, 0.25)

    def test_flow_is_normalized(self):
        sample = sample_pixels(1, 0, self.seq, max_n=1000)
        cols, _ = normalize_coords(30, 30).to_pixels(sample.x, sample.y)
        np.testing.assert_allclose(sample.u, cols / 15.0)
        np.testing.assert_allclose(sample.v, -cols / 15.0)

    def test_quorum(self):
        with self.assertRaises(InsufficientData):
            sample_pixels(2, 0, self.seq, quorum=16)
        with self.assertRaises(InsufficientData):
            fit_model(constants.MODEL_LINEAR_DEPTH, sample_pixels(2, 0, self.seq), quorum=16)

    def test_seed_barely_moves_the_fit_residual(self):
        rng = np.random.default_rng(13)
        labels = np.ones((100, 100), dtype=np.int64)
        flow = SequenceFactory.flow(2.0 + rng.normal(0, 0.1, (100, 100)), -1.0 + rng.normal(0, 0.1, (100, 100)))
        seq = SequenceFactory.sequence([labels, labels], flows=[flow])
        residuals = []
        for seed in range(5):
            sample = sample_pixels(1, 0, seq, max_n=constants.MAX_SAMPLES, seed=seed)
            self.assertEqual(sample.n, constants.MAX_SAMPLES)
            residuals.append(model_residual(fit_linear_model(sample), sample))
        self.assertLessEqual((max(residuals) - min(residuals)) / min(residuals), 0.10)

    def test_rejects_nan(self):
        with self.assertRaises(NumericalFailure):
            PixelSample(x=[0.0], y=[0.0], q=[1.0], u=[np.nan], v=[0.0])

    def test_rejects_ragged_arrays(self):
        with self.assertRaises(InsufficientData):
            PixelSample(x=[0.0, 1.0], y=[0.0], q=[1.0], u=[0.0], v=[0.0])
