import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthface.align import (
    CROP_SIZE,
    DEFAULT_TEMPLATE,
    AlignedCropCache,
    CsvLandmarkProvider,
    LandmarkSet,
    SimilarityTransform,
    SingularConfigurationError,
    align_face,
    estimate_similarity_transform,
    normalize_image,
    to_unit,
    warp_and_crop,
    write_landmark_csv,
)


def umeyama_oracle(src, dst):
    """SVD-based reference fit (rotation matrix, scale, translation)."""
    mu_s, mu_d = src.mean(0), dst.mean(0)
    s_c, d_c = src - mu_s, dst - mu_d
    cov = d_c.T @ s_c / len(src)
    u, sig, vt = np.linalg.svd(cov)
    sign = np.diag([1.0, np.sign(np.linalg.det(u @ vt))])
    r = u @ sign @ vt
    var = (s_c**2).sum() / len(src)
    scale = np.trace(np.diag(sig) @ sign) / var
    t = mu_d - scale * r @ mu_s
    return scale, r, t


def random_points(rng):
    while True:
        pts = rng.uniform(-50, 150, size=(5, 2))
        sv = np.linalg.svd(pts - pts.mean(0), compute_uv=False)
        if sv[-1] > 0.05 * sv[0]:
            return pts


def test_identity_fit():
    t = estimate_similarity_transform(DEFAULT_TEMPLATE, DEFAULT_TEMPLATE)
    assert t.scale == pytest.approx(1.0, abs=1e-12)
    assert t.rotation == pytest.approx(0.0, abs=1e-12)
    assert t.tx == pytest.approx(0.0, abs=1e-10) and t.ty == pytest.approx(0.0, abs=1e-10)
    assert t.residual(DEFAULT_TEMPLATE, DEFAULT_TEMPLATE) < 1e-20


def test_scaled_and_shifted_template():
    src = DEFAULT_TEMPLATE * 2 + np.array([-3.0, 5.0])
    t = estimate_similarity_transform(src, DEFAULT_TEMPLATE)
    assert t.scale == pytest.approx(0.5, abs=1e-12)
    assert t.rotation == pytest.approx(0.0, abs=1e-12)
    assert t.max_error(src, DEFAULT_TEMPLATE) < 1e-8
    np.testing.assert_allclose(t.apply(src), DEFAULT_TEMPLATE, atol=1e-10)


def test_matches_svd_oracle_on_noisy_points():
    rng = np.random.default_rng(5)
    for _ in range(50):
        src = random_points(rng)
        dst = rng.uniform(0, 112, size=(5, 2))
        t = estimate_similarity_transform(src, dst)
        scale, r, tr = umeyama_oracle(src, dst)
        np.testing.assert_allclose(t.matrix[:, :2], scale * r, atol=1e-9)
        np.testing.assert_allclose(t.matrix[:, 2], tr, atol=1e-7)


def test_residual_beats_brute_force_grid():
    rng = np.random.default_rng(6)
    src = random_points(rng)
    truth = SimilarityTransform(0.7, 0.3, 10.0, -4.0)
    dst = truth.apply(src) + rng.normal(scale=2.0, size=(5, 2))
    best = estimate_similarity_transform(src, dst).residual(src, dst)
    grid = np.stack(
        np.meshgrid(np.linspace(0.5, 0.9, 10), np.linspace(0.1, 0.5, 10), np.linspace(5, 15, 10), np.linspace(-9, 1, 10)),
        -1,
    ).reshape(-1, 4)
    assert len(grid) == 10**4
    brute = min(SimilarityTransform(*g).residual(src, dst) for g in grid)
    assert best <= brute


@settings(max_examples=200, deadline=None)
@given(
    st.integers(0, 2**31 - 1),
    st.floats(0.05, 20.0),
    st.floats(-math.pi + 1e-3, math.pi - 1e-3),
    st.floats(-500, 500),
    st.floats(-500, 500),
)
def test_recovers_exact_transform(seed, scale, rot, tx, ty):
    src = random_points(np.random.default_rng(seed))
    truth = SimilarityTransform(scale, rot, tx, ty)
    t = estimate_similarity_transform(src, truth.apply(src))
    assert t.scale == pytest.approx(scale, rel=1e-9)
    assert math.remainder(t.rotation - rot, 2 * math.pi) == pytest.approx(0.0, abs=1e-9)
    assert t.tx == pytest.approx(tx, abs=1e-7) and t.ty == pytest.approx(ty, abs=1e-7)


@pytest.mark.parametrize(
    "pts",
    [
        np.zeros((5, 2)),
        np.array([[0, 0], [1, 1], [2, 2], [3, 3], [4, 4]], dtype=float),
        np.array([[3, 3]] * 5, dtype=float),
    ],
)
def test_degenerate_sources_rejected(pts):
    with pytest.raises(SingularConfigurationError):
        estimate_similarity_transform(pts, DEFAULT_TEMPLATE)


def test_landmark_set_validation():
    with pytest.raises(ValueError):
        LandmarkSet(np.zeros((4, 2)))
    with pytest.raises(ValueError):
        LandmarkSet(np.array([[np.nan, 0]] + [[0, 0]] * 4))
    lm = LandmarkSet.from_flat(range(10))
    assert lm.flat() == [float(v) for v in range(10)]


def test_inverse_composes_to_identity():
    t = SimilarityTransform(1.7, -0.4, 3.0, 9.0)
    pts = np.random.default_rng(0).normal(size=(7, 2))
    np.testing.assert_allclose(t.inverse().apply(t.apply(pts)), pts, atol=1e-12)
    with pytest.raises(ValueError):
        SimilarityTransform(0.0).inverse()


def test_matrix_round_trip_and_determinant():
    t = SimilarityTransform(2.5, 1.1, -4.0, 6.0)
    m = t.matrix
    assert np.linalg.det(m[:, :2]) == pytest.approx(2.5**2)
    u = SimilarityTransform.from_matrix(m)
    for a, b in zip((u.scale, u.rotation, u.tx, u.ty), (2.5, 1.1, -4.0, 6.0)):
        assert a == pytest.approx(b)


def test_identity_warp_is_exact():
    img = np.random.default_rng(0).integers(0, 256, size=(112, 112, 3), dtype=np.uint8)
    assert np.array_equal(warp_and_crop(img, SimilarityTransform()), img)


def test_translation_warp_shifts_columns():
    img = np.random.default_rng(1).integers(0, 256, size=(112, 112, 3), dtype=np.uint8)
    out = warp_and_crop(img, SimilarityTransform(tx=-10.0))
    assert np.array_equal(out[:, : 112 - 10], img[:, 10:])
    assert np.all(out[:, 112 - 10 + 1:] == 0)


def test_zero_image_stays_zero():
    out = warp_and_crop(np.zeros((200, 150, 3), np.uint8), SimilarityTransform(0.6, 0.2, 5, 7))
    assert out.shape == (CROP_SIZE, CROP_SIZE, 3) and not out.any()


def test_round_trip_warp_on_smooth_image():
    ys, xs = np.mgrid[0:112, 0:112] / 111.0
    img = np.stack([0.5 + 0.4 * np.sin(3 * xs), 0.5 + 0.4 * np.cos(2 * ys), 0.3 + 0.5 * xs * ys], -1)
    t = SimilarityTransform(1.05, 0.1, -3.0, 4.0)
    back = warp_and_crop(warp_and_crop(img, t), t.inverse())
    interior = (slice(20, 92), slice(20, 92))
    assert np.max(np.abs(back[interior] - img[interior])) <= 2 / 255


def test_grayscale_and_float_inputs():
    img = np.random.default_rng(2).random((112, 112))
    out = warp_and_crop(img, SimilarityTransform())
    assert out.shape == (112, 112) and out.dtype == np.float64
    np.testing.assert_array_equal(out, img)


def test_normalize_image():
    assert normalize_image(np.array([0.5]))[0] == 0.0
    np.testing.assert_array_equal(normalize_image(np.array([0.0, 1.0])), [-1.0, 1.0])
    np.testing.assert_array_equal(normalize_image(np.full((2, 2, 3), 0.75)), np.full((2, 2, 3), 0.5))
    with pytest.raises(ValueError):
        normalize_image(np.array([1.5]))
    with pytest.raises(ValueError):
        normalize_image(np.zeros(3, np.uint8))
    assert to_unit(np.array([255], np.uint8))[0] == 1.0


def test_align_face_lands_landmarks_on_template():
    rng = np.random.default_rng(3)
    img = rng.integers(0, 256, size=(300, 260, 3), dtype=np.uint8)
    truth = SimilarityTransform(0.45, -0.2, 12.0, -30.0)
    src = truth.inverse().apply(DEFAULT_TEMPLATE)
    face = align_face(img, LandmarkSet(src), source="x.png")
    assert face.image.shape == (112, 112, 3) and face.source == "x.png"
    assert face.transform.max_error(src, DEFAULT_TEMPLATE) < 1e-8


def test_landmark_csv_round_trip(tmp_path):
    rows = [(f"a/{i}.png", LandmarkSet(np.random.default_rng(i).random((5, 2)) * 100)) for i in range(3)]
    write_landmark_csv(rows, tmp_path / "lm.csv")
    prov = CsvLandmarkProvider(tmp_path / "lm.csv")
    assert prov.paths() == [r[0] for r in rows]
    for path, lm in rows:
        np.testing.assert_array_equal(prov(path).points, lm.points)
    with pytest.raises(KeyError, match="missing.png"):
        prov("missing.png")


def test_landmark_csv_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("path,x1,y1\n")
    with pytest.raises(ValueError, match="header"):
        CsvLandmarkProvider(p)
    p.write_text("path,x1,y1,x2,y2,x3,y3,x4,y4,x5,y5\na.png,1,2,3\n")
    with pytest.raises(ValueError, match=":2:"):
        CsvLandmarkProvider(p)
    p.write_text("path,x1,y1,x2,y2,x3,y3,x4,y4,x5,y5\na.png,1,2,3,4,5,6,7,8,9,1\nb.png,1,2,3,4,5,6,7,8,9,nan\n")
    with pytest.raises(ValueError, match=":3:"):
        CsvLandmarkProvider(p)


def test_aligned_crop_cache(tmp_path):
    img = np.random.default_rng(4).integers(0, 256, size=(150, 150, 3), dtype=np.uint8)
    lm = LandmarkSet(DEFAULT_TEMPLATE + 10)
    cache = AlignedCropCache(tmp_path / "cache")
    crop, path = cache.get_or_align(img, lm)
    again, path2 = cache.get_or_align(img, lm)
    assert path == path2 and path.exists()
    assert np.array_equal(crop, again)
    assert np.array_equal(crop, align_face(img, lm).image)
    other = LandmarkSet(DEFAULT_TEMPLATE + 11)
    assert cache.key(img, lm) != cache.key(img, other)
