import numpy as np
import pytest

from coreg.geomodels import FittedModel, ModelSpec
from coreg.synthgen import (
    NonInvertibleWarpError,
    SynthSpec,
    check_invertible,
    generate,
    identity_warp,
    invert_warp_grid,
    spec_from_manifest,
    spec_to_manifest,
    translation_warp,
)


def _poly2(num_x, num_y):
    return FittedModel.from_coefficients(ModelSpec("polynomial", 2),
                                         num_x=num_x, num_y=num_y)


# -- spec validation ---------------------------------------------------------


@pytest.mark.parametrize("kwargs", [
    dict(size=8),
    dict(texture="speckles"),
    dict(radiometry="exp"),
    dict(speckle_var=-0.1),
])
def test_bad_spec_rejected(kwargs):
    with pytest.raises(ValueError):
        SynthSpec(**kwargs)


def test_rfm_truth_rejected():
    spec = ModelSpec("rfm", 1, "unit")
    b = spec.basis_size
    warp = FittedModel.from_coefficients(spec, np.zeros(b), np.zeros(b))
    with pytest.raises(ValueError):
        generate(SynthSpec(size=32, warp=warp))


# -- generation --------------------------------------------------------------


def test_identity_pair_is_bitwise_equal():
    ref, sen, truth, dem = generate(SynthSpec(size=64, seed=3))
    assert np.array_equal(ref.data, sen.data)
    assert truth.apply(10.0, 20.0) == (10.0, 20.0)
    assert ref.crs_tag == sen.crs_tag == dem.crs_tag
    assert ref.geotransform == sen.geotransform
    assert dem.data.shape == (64, 64)
    assert float(dem.data.min()) >= 0.0
    assert float(dem.data.max()) <= 500.0


def test_same_seed_reproduces_bitwise():
    spec = SynthSpec(size=64, warp=translation_warp(3.0, -2.0),
                     radiometry="gamma", gamma=0.5, speckle_var=0.02, seed=9)
    a = generate(spec)
    b = generate(spec)
    for ga, gb in zip((a[0], a[1], a[3]), (b[0], b[1], b[3])):
        assert np.array_equal(ga.data, gb.data)
    c = generate(SynthSpec(size=64, warp=translation_warp(3.0, -2.0),
                           radiometry="gamma", gamma=0.5, speckle_var=0.02,
                           seed=10))
    assert not np.array_equal(a[1].data, c[1].data)


def test_integer_translation_moves_content_exactly():
    # truth sends ref (x, y) to sensed (x+7, y+4): the sensed image holds
    # the reference shifted down-right, zero padded on the entry edges
    ref, sen, truth, _ = generate(SynthSpec(size=48,
                                            warp=translation_warp(7.0, 4.0),
                                            seed=1))
    assert np.array_equal(sen.data[4:, 7:], ref.data[:-4, :-7])
    assert np.all(sen.data[:4, :] == 0.0)
    assert np.all(sen.data[:, :7] == 0.0)


def test_gamma_radiometry_is_pointwise_power():
    base = generate(SynthSpec(size=48, seed=5))
    out = generate(SynthSpec(size=48, seed=5, radiometry="gamma", gamma=0.4))
    assert np.allclose(out[1].data,
                       np.clip(base[0].data, 0, 1) ** 0.4, atol=1e-6)


def test_log_radiometry_formula_and_monotonicity():
    base = generate(SynthSpec(size=48, seed=6))
    out = generate(SynthSpec(size=48, seed=6, radiometry="log"))
    x = np.clip(base[0].data.astype(np.float64), 0, 1)
    assert np.allclose(out[1].data, np.log1p(60.0 * x) / np.log1p(60.0),
                       atol=1e-6)
    flat_in = base[0].data.ravel()
    flat_out = out[1].data.ravel()
    order = np.argsort(flat_in)
    assert np.all(np.diff(flat_out[order]) >= -1e-6)


def test_speckle_preserves_mean_brightness():
    clean = generate(SynthSpec(size=256, seed=7))
    noisy = generate(SynthSpec(size=256, seed=7, speckle_var=0.05))
    ratio = float(noisy[1].data.mean() / clean[1].data.mean())
    assert abs(ratio - 1.0) < 0.01
    assert not np.array_equal(noisy[1].data, clean[1].data)


def test_blob_texture_generates():
    ref, sen, _, _ = generate(SynthSpec(size=64, texture="blobs", seed=2))
    assert ref.data.min() >= 0.0 and ref.data.max() <= 1.0
    assert float(ref.data.std()) > 0.05


# -- warp inversion ----------------------------------------------------------


def test_invert_translation_exactly():
    warp = translation_warp(7.0, 4.0)
    tx = np.array([10.0, 0.0])
    ty = np.array([5.0, 0.0])
    sx, sy, ok = invert_warp_grid(warp, tx, ty)
    assert ok.all()
    assert np.allclose(sx, tx - 7.0, atol=1e-12)
    assert np.allclose(sy, ty - 4.0, atol=1e-12)


def test_invert_mild_quadratic_round_trip():
    warp = _poly2(num_x=[5.0, 1.0, 0.02, 1e-4, 0.0, 0.0],
                  num_y=[-3.0, 0.0, 1.0, 0.0, 1e-4, 0.0])
    rng = np.random.default_rng(8)
    tx = rng.uniform(20, 200, 50)
    ty = rng.uniform(20, 200, 50)
    sx, sy, ok = invert_warp_grid(warp, tx, ty)
    assert ok.all()
    fx, fy = warp.apply(sx, sy)
    assert float(np.max(np.hypot(fx - tx, fy - ty))) < 1e-9


def test_folding_warp_rejected():
    # x' = (X - 24)^2 / 48: Jacobian determinant changes sign at X = 24
    fold = _poly2(num_x=[12.0, -1.0, 0.0, 1.0 / 48.0, 0.0, 0.0],
                  num_y=[0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
    with pytest.raises(NonInvertibleWarpError):
        check_invertible(fold, 0.0, 0.0, 47.0, 47.0)
    with pytest.raises(NonInvertibleWarpError):
        generate(SynthSpec(size=48, warp=fold))


def test_collapsing_warp_rejected():
    # x' = X / 1e5 squeezes the footprint to a sliver
    squash = _poly2(num_x=[0.0, 1e-5, 0.0, 0.0, 0.0, 0.0],
                    num_y=[0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
    with pytest.raises(NonInvertibleWarpError):
        check_invertible(squash, 0.0, 0.0, 47.0, 47.0)


# -- manifest ----------------------------------------------------------------


def test_manifest_round_trip_with_warp():
    warp = _poly2(num_x=[5.0, 1.0, 0.02, 1e-4, 0.0, 0.0],
                  num_y=[-3.0, 0.0, 1.0, 0.0, 1e-4, 2e-5])
    spec = SynthSpec(size=96, texture="blobs", warp=warp, radiometry="gamma",
                     gamma=0.55, speckle_var=0.03, seed=21)
    text = spec_to_manifest(spec)
    back = spec_from_manifest(text)
    assert (back.size, back.texture, back.radiometry) == (96, "blobs", "gamma")
    assert back.gamma == 0.55
    assert back.speckle_var == 0.03
    assert back.seed == 21
    assert back.warp.spec == warp.spec
    assert np.array_equal(back.warp.num_x, warp.num_x)
    assert np.array_equal(back.warp.num_y, warp.num_y)
    assert spec_to_manifest(back) == text


def test_manifest_defaults_and_identity_warp():
    spec = spec_from_manifest("size=32\n")
    assert spec.size == 32
    assert spec.warp is None
    gen = spec_from_manifest(spec_to_manifest(SynthSpec(size=32)))
    x, y = gen.warp.apply(4.0, 9.0)
    assert (x, y) == (4.0, 9.0)


def test_manifest_garbage_line_rejected():
    with pytest.raises(ValueError):
        spec_from_manifest("size=32\nnot a key value line\n")
