import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egochunk.errors import DegenerateConfiguration, DegenerateProjection, DegenerateResult, TooFewMatches
from egochunk.geometry import (
    Correspondence,
    Homography,
    canonical_scale,
    compose,
    fit_dlt,
    fit_dlt_matches,
    hartley_normalize,
    inverse,
    project,
    project_points,
    reprojection_errors,
)

from conftest import random_homography

UNIT_SQUARE = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
seeds = st.integers(0, 2**32 - 1)


# ---- examples

def test_project_identity():
    assert project(Homography.identity(), (3.0, 4.0)) == (3.0, 4.0)


def test_project_translation():
    p = project(Homography.translation(5, -3), (1, 1))
    assert p == pytest.approx((6, -2), abs=1e-12)


def test_project_scaled_matrix_same_result():
    m = np.array([[2.0, 0, 0], [0, 2.0, 0], [0, 0, 2.0]])
    assert project(Homography(m), (7.5, -1.25)) == pytest.approx((7.5, -1.25), abs=1e-12)


def test_project_degenerate():
    h = Homography(np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 0, 1.0]]))
    with pytest.raises(DegenerateProjection):
        project(h, (-1.0, 5.0))


def test_compose_translations():
    c = compose(Homography.translation(3, 4), Homography.translation(1, 2))
    assert c.allclose(Homography.translation(4, 6), 1e-12)


def test_compose_with_inverse_identity(rng):
    h = random_homography(rng)
    assert np.abs(compose(h, inverse(h)).m - np.eye(3)).max() < 1e-9


def test_inverse_examples(rng):
    assert inverse(Homography.identity()).allclose(Homography.identity())
    assert inverse(Homography.translation(5, -3)).allclose(Homography.translation(-5, 3), 1e-12)
    h = random_homography(rng)
    pts = rng.uniform(0, 320, size=(20, 2))
    back = project_points(inverse(h), project_points(h, pts))
    assert np.abs(back - pts).max() < 1e-9


def test_singular_rejected():
    with pytest.raises(DegenerateResult):
        Homography(np.array([[1.0, 2, 3], [2, 4, 6], [0, 0, 1]]))


def test_canonical_scale_rules():
    m = canonical_scale(np.diag([2.0, 2.0, 2.0]))
    assert np.array_equal(m, np.eye(3))
    # m22 == 0 -> unit Frobenius norm, first nonzero positive
    z = canonical_scale(np.array([[0, -3.0, 0], [4.0, 0, 0], [0, 0, 0]]) * -1)
    assert math.isclose(np.linalg.norm(z), 1.0)
    assert z[0, 1] > 0


def test_json_round_trip(rng):
    h = random_homography(rng)
    doc = json.loads(json.dumps(h.to_json()))
    assert np.array_equal(Homography.from_json(doc).m, h.m)


def test_fit_dlt_identity_square():
    h = fit_dlt(UNIT_SQUARE, UNIT_SQUARE)
    assert h.allclose(Homography.identity(), 1e-12)


def test_fit_dlt_translation_corners():
    dst = UNIT_SQUARE + [5, -3]
    h = fit_dlt(UNIT_SQUARE, dst)
    assert np.abs(h.m - Homography.translation(5, -3).m).max() < 1e-9


def test_fit_dlt_projective_grid():
    true = Homography(np.array([[1.02, 0.03, 4.0], [-0.02, 0.98, -2.0], [1e-3, 0.0, 1.0]]))
    gx, gy = np.meshgrid(np.linspace(0, 300, 4), np.linspace(0, 200, 3))
    src = np.column_stack([gx.ravel(), gy.ravel()])
    dst = project_points(true, src)
    h = fit_dlt(src, dst)
    assert reprojection_errors(h, src, dst).max() < 1e-6


def test_fit_dlt_matches_wrapper():
    ms = [Correspondence(tuple(p), tuple(p + 1)) for p in UNIT_SQUARE]
    assert fit_dlt_matches(ms).allclose(Homography.translation(1, 1), 1e-9)


def test_fit_dlt_too_few():
    with pytest.raises(TooFewMatches):
        fit_dlt(UNIT_SQUARE[:3], UNIT_SQUARE[:3])


def test_fit_dlt_collinear():
    line = np.column_stack([np.arange(6.0), 2 * np.arange(6.0)])
    with pytest.raises(DegenerateConfiguration):
        fit_dlt(line, line + 1)


def test_fit_dlt_duplicated():
    pts = np.array([[0, 0], [0, 0], [1, 1], [1, 1]], dtype=float)
    with pytest.raises(DegenerateConfiguration):
        fit_dlt(pts, pts)


def test_hartley_normalize_stats(rng):
    pts = rng.uniform(-50, 400, size=(30, 2))
    pn, T = hartley_normalize(pts)
    assert np.allclose(pn.mean(axis=0), 0, atol=1e-12)
    assert math.isclose(np.linalg.norm(pn, axis=1).mean(), math.sqrt(2), rel_tol=1e-12)
    assert np.allclose(project_points(T, pts), pn, atol=1e-12)


# ---- properties (200+ seeded instances each)

@settings(max_examples=200, deadline=None)
@given(seeds, st.floats(-1e3, 1e3).filter(lambda s: abs(s) > 1e-3))
def test_projection_scale_invariance(seed, factor):
    rng = np.random.default_rng(seed)
    h = random_homography(rng)
    p = tuple(rng.uniform(0, 320, 2))
    a = project(h, p)
    b = project(Homography(h.m * factor), p)
    assert np.allclose(a, b, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max()))
    # canonical scaling is idempotent
    assert np.array_equal(canonical_scale(h.m), h.m)


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_compose_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_homography(rng) for _ in range(3))
    left = compose(compose(a, b), c)
    right = compose(a, compose(b, c))
    assert np.abs(left.m - right.m).max() < 1e-9


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_fit_dlt_recovers_ground_truth(seed):
    rng = np.random.default_rng(seed)
    true = random_homography(rng, perspective=5e-4)
    src = rng.uniform(0, [320, 240], size=(12, 2))
    h = fit_dlt(src, project_points(true, src))
    gx, gy = np.meshgrid(np.linspace(0, 320, 9), np.linspace(0, 240, 7))
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    assert np.abs(project_points(h, grid) - project_points(true, grid)).max() < 1e-6


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_fit_dlt_similarity_invariance(seed):
    rng = np.random.default_rng(seed)
    true = random_homography(rng, perspective=5e-4)
    src = rng.uniform(0, [320, 240], size=(10, 2))
    dst = project_points(true, src)
    s1, s2 = rng.uniform(0.01, 100, 2)
    t1, t2 = rng.uniform(-1e3, 1e3, (2, 2))
    src2, dst2 = s1 * src + t1, s2 * dst + t2
    h = fit_dlt(src2, dst2)
    assert reprojection_errors(h, src2, dst2).max() < 1e-6 * max(1.0, s2)
