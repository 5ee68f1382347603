import numpy as np
import pytest

from regstrain import DisplacementField, GrayImage
from regstrain.dic import DicParams, dic_displacement, dic_strain, seed_grid, zncc
from regstrain.exceptions import EmptyResultError, ParameterError
from regstrain.synthetic import AnalyticField, generate_pair, generate_speckle


@pytest.fixture(scope="module")
def ref():
    return generate_speckle(120, 120, seed=17)


def _shifted(image, dx, dy):
    """Integer shift: out(x + d) = in(x); uncovered pixels masked."""
    data = np.full(image.shape, 0.5)
    mask = np.zeros(image.shape, bool)
    h, w = image.shape
    src = image.intensities[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
    data[max(0, dy):h - max(0, -dy), max(0, dx):w - max(0, -dx)] = src
    mask[max(0, dy):h - max(0, -dy), max(0, dx):w - max(0, -dx)] = True
    return GrayImage(data, mask)


class TestParams:
    @pytest.mark.parametrize("kw", [{"subset_radius": 4}, {"step": 0}, {"search_radius": 0},
                                    {"strain_window": 1.5}, {"subset_radius": 7.5}])
    def test_ranges(self, kw):
        with pytest.raises(ParameterError):
            DicParams(**kw)

    def test_defaults(self):
        p = DicParams()
        assert (p.subset_radius, p.step, p.search_radius, p.strain_window) == (10, 4, 20, 5.0)


def test_zncc_affine_invariant(rng):
    a = rng.uniform(size=(21, 21))
    b = rng.uniform(size=(21, 21))
    assert zncc(a, 3 * a + 1) == pytest.approx(1.0)
    assert zncc(a, b) == pytest.approx(zncc(0.5 * a + 0.2, 2 * b), abs=1e-12)


def test_seed_grid_respects_roi():
    roi = np.ones((60, 60), bool)
    roi[:, 30:] = False
    xs, ys = seed_grid((60, 60), DicParams(), roi)
    assert xs.size > 0 and np.all(xs + 10 < 30)


def test_identity_exact(ref):
    field = dic_displacement(ref, ref)
    assert field.valid.any()
    assert np.all(field.u[field.valid] == 0) and np.all(field.v[field.valid] == 0)
    # non-seed pixels are never valid
    assert field.valid.sum() == field.valid[10::4, 10::4].sum()


def test_integer_shift_exact(ref):
    moved = _shifted(ref, 5, -3)
    field = dic_displacement(ref, moved)
    assert field.valid.sum() > 20
    np.testing.assert_array_equal(field.u[field.valid], 5.0)
    np.testing.assert_array_equal(field.v[field.valid], -3.0)


def test_half_pixel_shift(ref):
    _, moved, _ = generate_pair(ref, AnalyticField.translation(0.5, 0.0))
    field = dic_displacement(ref, moved)
    assert np.max(np.abs(field.u[field.valid] - 0.5)) < 0.1
    assert np.max(np.abs(field.v[field.valid])) < 0.1


def test_intensity_rescaling_invariance(ref):
    _, moved, _ = generate_pair(ref, AnalyticField.translation(1.3, -0.6))
    a, ca = dic_displacement(ref, moved, return_correlation=True)
    scaled = GrayImage(0.2 + 0.5 * moved.intensities, moved.mask)
    b, cb = dic_displacement(ref, scaled, return_correlation=True)
    np.testing.assert_array_equal(a.valid, b.valid)
    # integer stage identical; sub-pixel stage equal up to rounding
    np.testing.assert_array_equal(np.rint(a.u), np.rint(b.u))
    np.testing.assert_allclose(a.u[a.valid], b.u[b.valid], atol=1e-9)


def test_low_correlation_is_invalid(ref, rng):
    noise = GrayImage(rng.uniform(size=ref.shape))
    with pytest.raises(EmptyResultError):
        dic_displacement(ref, noise)


def test_uniform_field_zero_strain():
    shape = (40, 40)
    valid = np.zeros(shape, bool)
    valid[::4, ::4] = True
    s = dic_strain(DisplacementField(np.full(shape, 2.0), np.full(shape, -1.0), valid), 5.0)
    assert s.valid.any()
    assert s.max_abs() == pytest.approx(0.0, abs=1e-12)


def test_linear_field_strain():
    ys, xs = np.mgrid[0:60, 0:60].astype(float)
    valid = np.zeros(xs.shape, bool)
    valid[10:50:4, 10:50:4] = True
    for window in (5.0, 8.0, 12.0):
        s = dic_strain(DisplacementField(0.1 * xs, np.zeros_like(xs), valid), window)
        np.testing.assert_allclose(s.exx[s.valid], 0.105, atol=1e-12)
        np.testing.assert_allclose(s.eyy[s.valid], 0.0, atol=1e-12)


def test_window_smoothing_tradeoff(rng):
    ys, xs = np.mgrid[0:120, 0:120].astype(float)
    valid = np.zeros(xs.shape, bool)
    valid[10:110:4, 10:110:4] = True
    u = 0.01 * xs + rng.normal(0, 0.02, xs.shape)
    field = DisplacementField(u, np.zeros_like(u), valid)
    sd5 = dic_strain(field, 5.0).exx[dic_strain(field, 5.0).valid].std()
    s10 = dic_strain(field, 10.0)
    assert s10.exx[s10.valid].std() < sd5


def test_sparse_seeds_invalid():
    valid = np.zeros((30, 30), bool)
    valid[5, 5] = valid[5, 20] = True
    s = dic_strain(DisplacementField(np.zeros((30, 30)), np.zeros((30, 30)), valid), 5.0)
    assert not s.valid.any()


def test_collinear_neighbours_invalid():
    valid = np.zeros((30, 30), bool)
    valid[10, 4:26:4] = True
    s = dic_strain(DisplacementField(np.zeros((30, 30)), np.zeros((30, 30)), valid), 5.0)
    assert not s.valid.any()
