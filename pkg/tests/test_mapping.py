import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from modlab.catalog import CATALOG_NAMES, make_catalog_map
from modlab.errors import EvaluationDomain, NearSingularity
from modlab.geometry import make_domain
from modlab.mapping import (MappingSpec, constant_map, differential_report,
                            finite_distortion_survey, identity_map, inner_dilatation, linear_map,
                            numeric_jacobian, outer_dilatation, radial_map, radial_stretches,
                            report_from_jacobian, sample_points)


def power_map(alpha, n):
    return radial_map(lambda r: r ** alpha, lambda r: alpha * r ** (alpha - 1), n, punctured=False)


# -- differential reports ----------------------------------------------------------

@pytest.mark.parametrize("n", [2, 3])
def test_identity_report(n):
    rep = differential_report(identity_map(n), np.full(n, 0.3), 1e-5)
    assert np.allclose(rep.singular_values, 1) and rep.J == pytest.approx(1)
    assert rep.L == pytest.approx(1) and rep.l == pytest.approx(1)


def test_blowup_report():
    g = make_catalog_map("annulus_blowup", alpha=0.5, n=3).mapping
    rep = differential_report(g, [0.25, 0, 0], 1e-5)
    assert np.allclose(rep.singular_values, [1, 6, 6], rtol=1e-12)
    assert abs(rep.J) == pytest.approx(36, rel=1e-12)
    num = differential_report(g, [0.25, 0, 0], 1e-5, numeric=True)
    assert np.allclose(num.singular_values, [1, 6, 6], rtol=1e-8)


def test_square_map_report():
    z2 = make_catalog_map("planar_power", k=2).mapping
    rep = differential_report(z2, [1.0, 0.0], 1e-5)
    assert np.allclose(rep.singular_values, [2, 2]) and rep.J == pytest.approx(4)


def test_report_invariants_on_random_linear_maps():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = rng.integers(2, 4)
        rep = differential_report(linear_map(rng.normal(size=(n, n))), np.zeros(n), 1e-5)
        sv = rep.singular_values
        assert sv[0] >= 0 and rep.L >= rep.l
        assert abs(rep.J) == pytest.approx(np.prod(sv), rel=1e-8)
        assert np.prod(sv[:-1]) <= np.prod(sv[1:]) * (1 + 1e-12)


def test_near_singularity():
    with pytest.raises(NearSingularity):
        differential_report(power_map(0.5, 2), [1e-6, 0], 1e-5)


def test_outside_domain_raises():
    f = make_catalog_map("annulus_blowup").mapping
    with pytest.raises(EvaluationDomain):
        f(np.array([[2.0, 0, 0]]))


def test_richardson_improves_derivative():
    f = MappingSpec(lambda x: np.column_stack([np.sin(x[:, 0]) * x[:, 1], np.exp(x[:, 1])]), 2)
    x = np.array([0.4, 0.7])
    exact = np.array([[np.cos(0.4) * 0.7, np.sin(0.4)], [0, np.exp(0.7)]])
    plain = numeric_jacobian(f.evaluator, x, 1e-2)
    rich = numeric_jacobian(f.evaluator, x, 1e-2, richardson=True)
    assert np.abs(rich - exact).max() < np.abs(plain - exact).max()


# -- radial stretches ---------------------------------------------------------------

@pytest.mark.parametrize("rho,drho,r,expected", [
    (lambda r: r, lambda r: 1.0, 0.3, (1.0, 1.0)),
    (lambda r: 1 + r ** 0.5, lambda r: 0.5 * r ** -0.5, 0.25, (6.0, 1.0)),
    (lambda r: r ** 2, lambda r: 2 * r, 0.5, (0.5, 1.0)),
])
def test_radial_stretches(rho, drho, r, expected):
    assert radial_stretches((rho, drho), r) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("n", [2, 3])
def test_radial_consistency(n):
    f = radial_map(lambda r: r ** 2 + r, lambda r: 2 * r + 1, n)
    rng = np.random.default_rng(n)
    for x in rng.uniform(-1, 1, size=(20, n)):
        r = np.linalg.norm(x)
        tang, rad = radial_stretches(f.radial_profile, r)
        expected = np.sort([rad] + [tang] * (n - 1))
        assert np.allclose(differential_report(f, x, 1e-5).singular_values, expected, rtol=1e-6)


# -- dilatations ------------------------------------------------------------------------

def test_identity_dilatations():
    rep = differential_report(identity_map(3), [0.1, 0.2, 0.3], 1e-5)
    for p in (1.0, 2.0, 3.5):
        assert inner_dilatation(rep, p) == 1 and outer_dilatation(rep, p) == 1


def test_blowup_inner_dilatation():
    g = make_catalog_map("annulus_blowup", alpha=0.5, n=3).mapping
    assert inner_dilatation(differential_report(g, [0, 0.25, 0], 1e-5), 3) == pytest.approx(36)


@pytest.mark.parametrize("r", [0.01, 0.3, 0.9])
def test_power_map_dilatations(r):
    rep = differential_report(power_map(0.5, 2), [r, 0.0], 1e-5)
    assert inner_dilatation(rep, 2) == pytest.approx(2.0, rel=1e-12)
    assert outer_dilatation(rep, 2) == pytest.approx(2.0, rel=1e-12)


def test_square_map_outer_dilatation():
    rep = differential_report(make_catalog_map("planar_power").mapping, [1.0, 0.0], 1e-5)
    assert outer_dilatation(rep, 2) == pytest.approx(1.0)


def test_degenerate_branches():
    zero = report_from_jacobian([0, 0], np.zeros((2, 2)))
    assert inner_dilatation(zero, 2) == 1 and outer_dilatation(zero, 2) == 1
    rank_one = report_from_jacobian([0, 0], np.array([[1.0, 0.0], [0.0, 0.0]]))
    assert inner_dilatation(rank_one, 2) == np.inf and outer_dilatation(rank_one, 2) == np.inf
    assert not rank_one.finite_distortion_flag and zero.finite_distortion_flag


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(1.0, 4.0), st.sampled_from(list(CATALOG_NAMES)))
def test_dilatations_are_rotation_invariant(seed, p, name):
    entry = make_catalog_map(name)
    f, n = entry.mapping, entry.dimension
    x = sample_points(f, 1, seed, margin=0.05)[0]
    rot = Rotation.random(random_state=seed).as_matrix()
    if n == 2:
        rot = rot[:2, :2]
        u, _, vt = np.linalg.svd(rot)
        rot = u @ vt
    # f o R^{-1} evaluated at R x has the same stretches as f at x
    rotated = MappingSpec(lambda y: f.evaluator(y @ rot), n,
                          exact_derivative=lambda y: f.exact_derivative(y @ rot) @ rot.T)
    a = differential_report(f, x, 1e-5)
    b = differential_report(rotated, rot @ x, 1e-5)
    for k in (inner_dilatation, outer_dilatation):
        assert k(b, p) == pytest.approx(k(a, p), rel=1e-6)
        # the lower bound 1 is a property of the conformal exponent p = n
        assert k(a, n) >= 1 - 1e-12


# -- surveys ------------------------------------------------------------------------------

def test_finite_distortion_survey():
    assert finite_distortion_survey(identity_map(2), 100, 0) == 1.0
    assert finite_distortion_survey(make_catalog_map("counterexample_n").mapping, 100, 0) == 1.0
    assert finite_distortion_survey(constant_map(3), 100, 0) == 1.0


def test_survey_needs_samples():
    with pytest.raises(ValueError):
        finite_distortion_survey(identity_map(2), 0, 0)


def test_sample_points_respect_domain():
    f = make_catalog_map("annulus_blowup").mapping
    pts = sample_points(f, 200, 3)
    dom = make_domain("punctured_ball", [0, 0, 0], 0, 1)
    assert np.all(dom.contains(pts))
    assert np.array_equal(pts, sample_points(f, 200, 3))
