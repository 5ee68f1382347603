import numpy as np
import pytest

from regstrain import (
    AsgdConfig,
    GrayImage,
    RegistrationConfig,
    cumulative_displacement,
    new_transform,
    register_pair,
    register_sequence,
    resample_moving,
    ssim,
)
from regstrain.exceptions import ParameterError
from regstrain.registration import transform_displacement
from regstrain.synthetic import AnalyticField, generate_pair, generate_sequence, generate_speckle


def _rms(field, truth):
    ok = field.valid & truth.valid
    return float(np.sqrt(np.mean((field.u - truth.u)[ok] ** 2 + (field.v - truth.v)[ok] ** 2)))


@pytest.fixture(scope="module")
def base():
    return generate_speckle(128, 128, seed=8)


class TestConfig:
    @pytest.mark.parametrize("kw,key", [({"spacing": -3}, "spacing"), ({"n_samples": 10}, "n_samples"),
                                        ({"pyramid_levels": (0, 1)}, "pyramid_levels"),
                                        ({"metric": "XYZ"}, "metric"),
                                        ({"interpolation": "sinc"}, "interpolation")])
    def test_invalid(self, kw, key):
        with pytest.raises(ParameterError, match=key):
            RegistrationConfig(**kw)

    def test_scalar_spacing(self):
        assert RegistrationConfig(spacing=15).spacing == (15.0, 15.0)

    def test_size_mismatch(self, base):
        with pytest.raises(ParameterError):
            register_pair(base, GrayImage(np.zeros((64, 64))))


class TestResample:
    def test_identity_bit_exact(self, base):
        out = resample_moving(base, new_transform((128, 128), (30, 30)))
        np.testing.assert_array_equal(out.intensities, base.intensities)
        assert out.mask is None or out.mask.all()

    def test_integer_shift(self, base):
        T = new_transform((128, 128), (30, 30))
        coef = np.zeros_like(T.coefficients)
        coef[0] = 2.0
        out = resample_moving(base, T.with_parameters(coef))
        np.testing.assert_allclose(out.intensities[:, :-2], base.intensities[:, 2:], atol=1e-12)
        assert not out.mask[:, -2:].any() and out.mask[:, :-2].all()


class TestPair:
    def test_identity_pair(self, base):
        T, trace = register_pair(base, base)
        u = transform_displacement(T, base.shape)
        assert np.max(u.magnitude()[u.valid]) < 0.05
        assert not trace.aborted

    def test_translation_sign_and_accuracy(self, base):
        fixed, moving, truth = generate_pair(base, AnalyticField.translation(3.25, -1.5))
        T, _ = register_pair(fixed, moving)
        u = transform_displacement(T, fixed.shape)
        # moving(T(x)) = fixed(x) and moving(x + d) = fixed(x): T(x) = x + d
        assert np.median(u.u[u.valid]) == pytest.approx(3.25, abs=0.05)
        assert np.median(u.v[u.valid]) == pytest.approx(-1.5, abs=0.05)
        assert _rms(u, truth) < 0.05

    def test_registration_improves_ssim(self, base):
        fixed, moving, _ = generate_pair(base, AnalyticField.sinusoid(0.8, 60.0), noise=0.005, seed=1)
        T, _ = register_pair(fixed, moving)
        warped = resample_moving(moving, T)
        before = ssim(fixed, moving, fixed.roi & moving.roi).mean
        after = ssim(fixed, warped, warped.roi).mean
        assert after > before

    @pytest.mark.parametrize("metric", ["SSD", "NCC", "MI"])
    def test_all_metrics_recover_small_warp(self, base, metric):
        fixed, moving, truth = generate_pair(base, AnalyticField.translation(0.7, 0.4))
        T, _ = register_pair(fixed, moving, RegistrationConfig(metric=metric))
        assert _rms(transform_displacement(T, fixed.shape), truth) < 0.05

    def test_pyramid_handles_large_shift(self, base):
        fixed, moving, truth = generate_pair(base, AnalyticField.translation(7.0, 3.0))
        cfg = RegistrationConfig(pyramid_levels=(2, 1, 0), spacing=30)
        T, trace = register_pair(fixed, moving, cfg)
        assert set(trace.levels) == {2, 1, 0}
        assert _rms(transform_displacement(T, fixed.shape), truth) < 0.05

    def test_deterministic_across_runs_and_workers(self, base):
        fixed, moving, _ = generate_pair(base, AnalyticField.translation(0.5, 0.2))
        cfg1 = RegistrationConfig(n_samples=3000, asgd=AsgdConfig(max_iterations=60, seed=3))
        cfg4 = RegistrationConfig(n_samples=3000, workers=4,
                                  asgd=AsgdConfig(max_iterations=60, seed=3))
        a, ta = register_pair(fixed, moving, cfg1)
        b, tb = register_pair(fixed, moving, cfg1)
        c, tc = register_pair(fixed, moving, cfg4)
        np.testing.assert_array_equal(a.coefficients, b.coefficients)
        np.testing.assert_array_equal(a.coefficients, c.coefficients)
        assert ta.values == tb.values == tc.values


class TestSequence:
    def test_translation_composition(self, base):
        images, truths = generate_sequence(
            base, [AnalyticField.translation(1, 0), AnalyticField.translation(1, 1)])
        result = register_sequence(images)
        assert len(result) == 2
        final = cumulative_displacement(result, 1)
        assert final.shape == base.shape
        assert _rms(final, truths[-1]) < 0.07

    def test_identity_sequence_is_stable(self, base):
        result = register_sequence([base] * 5)
        mags = [np.max(cumulative_displacement(result, k).magnitude()) for k in range(4)]
        assert max(mags) < 0.1
        for k, m in enumerate(mags, start=1):
            assert m <= 2 * k * mags[0] + 0.05
        assert all(s > 0.99 for s in result.ssim_means)

    def test_two_frames_match_pair(self, base):
        fixed, moving, _ = generate_pair(base, AnalyticField.translation(0.4, 0.0))
        cfg = RegistrationConfig(asgd=AsgdConfig(max_iterations=80))
        result = register_sequence([fixed, moving], cfg)
        T, _ = register_pair(fixed, moving, cfg, seed=(cfg.asgd.seed, 0))
        np.testing.assert_array_equal(result.transforms[0].coefficients, T.coefficients)

    def test_step_index_checked(self, base):
        result = register_sequence([base, base], RegistrationConfig(asgd=AsgdConfig(max_iterations=5)))
        with pytest.raises(IndexError):
            cumulative_displacement(result, 1)

    def test_invalidity_is_sticky(self, base):
        images, _ = generate_sequence(base, [AnalyticField.translation(4, 0),
                                             AnalyticField.translation(0, 0)])
        result = register_sequence(images, RegistrationConfig(pyramid_levels=(1, 0)))
        first, second = result.displacements
        assert not first.valid.all()
        assert not np.any(second.valid & ~first.valid)

    def test_needs_two_images(self, base):
        with pytest.raises(ParameterError):
            register_sequence([base])
