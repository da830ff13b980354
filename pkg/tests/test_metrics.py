import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg
from scipy.stats import ortho_group

from mgcc.metrics import (
    FeatureSet,
    bootstrap_stderr,
    clip_similarity,
    cosine,
    fid,
    fid_report,
    lpips_distance,
    lpips_report,
)


def fs(x, prefix="i"):
    x = np.asarray(x, dtype=np.float64)
    return FeatureSet(x, [f"{prefix}{i}" for i in range(len(x))])


# -- cosine / clip ------------------------------------------------------------
def test_cosine_fixed_points():
    assert cosine(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 1.0
    assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
    assert cosine(np.array([1.0, 2.0]), np.array([-1.0, -2.0])) == -1.0


def test_identical_sets_score_exactly_one():
    x = np.random.default_rng(0).standard_normal((20, 16))
    rep = clip_similarity(fs(x), fs(x), bootstrap=0)
    assert all(v == 1.0 for v in rep.values)
    assert rep.mean == 1.0


def test_clip_matches_loop_oracle():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((10, 8)), rng.standard_normal((10, 8))
    rep = clip_similarity(fs(a), fs(b), bootstrap=0)
    for i in range(10):
        dot = sum(a[i, j] * b[i, j] for j in range(8))
        na = math.sqrt(sum(v * v for v in a[i]))
        nb = math.sqrt(sum(v * v for v in b[i]))
        assert abs(rep.values[i] - dot / (na * nb)) < 1e-9


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), s1=st.floats(1e-3, 1e3), s2=st.floats(1e-3, 1e3))
def test_cosine_scale_invariance(seed, s1, s2):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(8), rng.standard_normal(8)
    assert abs(cosine(s1 * a, s2 * b) - cosine(a, b)) < 1e-9


def test_zero_vector_excluded():
    a = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    rep = clip_similarity(fs(a), fs(a), bootstrap=10)
    assert rep.excluded == ["i1"] and rep.n == 2


def test_misaligned_ids_rejected():
    with pytest.raises(ValueError):
        clip_similarity(fs(np.eye(2), "a"), fs(np.eye(2), "b"))


# -- lpips --------------------------------------------------------------------
def test_lpips_identity_is_zero():
    img = np.random.default_rng(2).integers(0, 256, (32, 32, 3), dtype=np.uint8)
    assert lpips_distance(img, img) == 0.0


def test_lpips_symmetric_and_positive():
    rng = np.random.default_rng(3)
    a = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    b = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    assert lpips_distance(a, b) == pytest.approx(lpips_distance(b, a), abs=1e-15)
    assert lpips_distance(a, b) > 0


def test_lpips_two_patch_oracle():
    # identity extractor on an 8x16 grayscale image: two patches
    rng = np.random.default_rng(4)
    a, b = rng.random((8, 16)), rng.random((8, 16))

    def unit(v):
        n = math.sqrt(sum(x * x for x in v))
        return [x / (n + 1e-10) for x in v]

    total = 0.0
    for x0 in (0, 8):
        pa = unit([a[y, x] for y in range(8) for x in range(x0, x0 + 8)])
        pb = unit([b[y, x] for y in range(8) for x in range(x0, x0 + 8)])
        total += sum((u - v) ** 2 for u, v in zip(pa, pb))
    assert abs(lpips_distance(a, b, extractor=lambda p: p) - total / 2) < 1e-12


def test_lpips_shape_mismatch():
    with pytest.raises(ValueError):
        lpips_distance(np.zeros((8, 8)), np.zeros((16, 8)))


def test_lpips_report_identity():
    imgs = [np.random.default_rng(i).integers(0, 256, (8, 8, 3), dtype=np.uint8) for i in range(3)]
    rep = lpips_report(imgs, imgs, ["a", "b", "c"], bootstrap=100)
    assert rep.mean == 0.0 and rep.stderr == 0.0


# -- fid ----------------------------------------------------------------------
def test_fid_of_set_with_itself():
    x = np.random.default_rng(5).standard_normal((100, 16))
    assert fid(x, x) < 1e-6


def test_fid_mean_shift():
    x = np.random.default_rng(6).standard_normal((200, 8))
    delta = np.linspace(-1, 1, 8)
    assert fid(x, x + delta) == pytest.approx(float(delta @ delta), abs=1e-6)


def test_fid_rotation_invariance():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((200, 6))
    b = rng.standard_normal((200, 6)) * 1.5 + 0.3
    R = ortho_group.rvs(6, random_state=8)
    assert abs(fid(a @ R, b @ R) - fid(a, b)) < 1e-5


def test_fid_matches_scipy_sqrtm_reference():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((300, 5))
    b = rng.standard_normal((300, 5)) @ rng.standard_normal((5, 5)) + 1.0
    cr, cg = np.cov(a, rowvar=False), np.cov(b, rowvar=False)
    ref = np.sum((a.mean(0) - b.mean(0)) ** 2) + np.trace(cr + cg - 2 * linalg.sqrtm(cr @ cg).real)
    assert fid(a, b) == pytest.approx(ref, rel=1e-8)


def test_fid_needs_enough_samples():
    x = np.random.default_rng(10).standard_normal((4, 8))
    with pytest.raises(ValueError):
        fid(x, x + 1)
    val = fid(x, x + 1, diagonal_fallback=True)
    assert val == pytest.approx(8.0, abs=1e-9)
    with pytest.raises(ValueError):
        fid(x[:1], x[:1], diagonal_fallback=True)


def test_fid_report_has_no_stderr():
    x = np.random.default_rng(11).standard_normal((10, 3))
    rep = fid_report(fs(x), fs(x + 0.5))
    assert rep.stderr is None and rep.n == 10
    assert rep.mean == pytest.approx(0.75, abs=1e-9)


# -- bootstrap ----------------------------------------------------------------
def test_bootstrap_of_constant_is_zero():
    assert bootstrap_stderr([0.3] * 10) == 0.0


def test_bootstrap_deterministic_for_fixed_seed():
    vals = np.random.default_rng(12).random(30)
    assert bootstrap_stderr(vals, 500, seed=4) == bootstrap_stderr(vals, 500, seed=4)
    assert bootstrap_stderr(vals, 500, seed=4) != bootstrap_stderr(vals, 500, seed=5)


def test_bootstrap_exhaustive_two_points():
    # resample means over {0,1}^2: 0, .5, .5, 1 -> variance 1/8
    assert bootstrap_stderr([0.0, 1.0], exhaustive=True) == pytest.approx(math.sqrt(0.125), abs=1e-15)


def test_bootstrap_sampled_close_to_analytic():
    vals = np.random.default_rng(13).random(50)
    analytic = vals.std() / math.sqrt(50)
    assert bootstrap_stderr(vals, 20000, seed=0) == pytest.approx(analytic, rel=0.05)


def test_bootstrap_needs_two_values():
    with pytest.raises(ValueError):
        bootstrap_stderr([1.0])
