import numpy as np
import pytest
from scipy.integrate import quad

from modlab.catalog import (CATALOG_NAMES, CriterionProfile, blowup_dominating_weight,
                            catalog_listing, exact_dilatation, extrapolate_limit,
                            make_catalog_map, probe_limit_set)
from modlab.criteria import ls_integrability_test
from modlab.errors import NearSingularity, ParameterRange
from modlab.geometry import make_domain
from modlab.mapping import (differential_report, inner_dilatation, outer_dilatation,
                            sample_points)

E = np.e


def test_listing_has_six_entries():
    names = [name for name, _ in catalog_listing()]
    assert names == list(CATALOG_NAMES) and len(names) == 6


@pytest.mark.parametrize("name", CATALOG_NAMES)
def test_every_entry_builds_with_defaults(name):
    entry = make_catalog_map(name)
    assert entry.name == name
    assert entry.mapping.exact_derivative is not None
    assert entry.mapping.multiplicity >= 1


@pytest.mark.parametrize("name,params", [
    ("twisting", {"n": 2}), ("twisting", {"m": 0}), ("planar_power", {"n": 3}),
    ("radial_power", {"alpha": -1}), ("annulus_blowup", {"alpha": 1.0}),
    ("counterexample_alpha", {"n": 2, "alpha": 2.5}),
])
def test_parameter_ranges(name, params):
    with pytest.raises(ParameterRange):
        make_catalog_map(name, **params)


def test_unknown_entry():
    with pytest.raises(ParameterRange):
        make_catalog_map("moebius")


def test_q0_with_infinite_criterion_integral_rejected():
    with pytest.raises(ParameterRange):
        make_catalog_map("counterexample_n", q0=lambda t: np.log(E / t))


def test_q0_below_one_rejected():
    with pytest.raises(ParameterRange):
        make_catalog_map("counterexample_n", q0=lambda t: 0.5 * np.ones_like(t))


# -- entry facts ------------------------------------------------------------------------

def test_radial_power_alpha_one_is_identity():
    entry = make_catalog_map("radial_power", alpha=1.0)
    x = sample_points(entry.mapping, 30, 0)
    assert np.allclose(entry.mapping(x), x, rtol=1e-15)
    assert np.allclose(entry.dilatation(x, 2.7), 1.0)
    assert exact_dilatation(entry, x[0], 1.3) == pytest.approx(1.0)


def test_blowup_entry():
    entry = make_catalog_map("annulus_blowup", alpha=0.5, n=3)
    lam = entry.stretches(np.array([[0.25, 0, 0]]))[0]
    assert sorted(lam) == pytest.approx([1.0, 6.0, 6.0], rel=1e-15)
    assert entry.limit_set.kind == "sphere" and entry.limit_set.radius == 1.0
    assert exact_dilatation(entry, [0.25, 0, 0], 3) == 36.0


def test_counterexample_limit_radius():
    entry = make_catalog_map("counterexample_n", n=2)
    assert entry.limit_set.radius == pytest.approx(np.exp(-1), rel=1e-6)
    r = np.array([1e-3, 1e-6, 1e-12, 1e-100])
    rho = np.linalg.norm(entry.mapping(np.column_stack([r, 0 * r])), axis=1)
    assert np.all(np.diff(rho) < 0) and rho[-1] == pytest.approx(np.exp(-1), rel=0.01)


def test_counterexample_dilatation_equals_q0():
    entry = make_catalog_map("counterexample_n", n=2)
    assert exact_dilatation(entry, [np.exp(-1), 0], 2) == pytest.approx(4.0, rel=1e-12)
    x = sample_points(entry.mapping, 50, 4, margin=1e-3)
    r = np.linalg.norm(x, axis=1)
    assert np.allclose(entry.dilatation(x, 2), np.log(E / r) ** 2, rtol=1e-10)


def test_counterexample_dilatation_equals_q0_in_space():
    entry = make_catalog_map("counterexample_n", n=3)
    x = sample_points(entry.mapping, 20, 5)
    r = np.linalg.norm(x, axis=1)
    assert np.allclose(entry.dilatation(x, 3), np.log(E / r) ** 4, rtol=1e-10)


@pytest.mark.parametrize("name,kwargs,power", [
    ("counterexample_n", {"n": 2}, None),
    ("counterexample_n", {"n": 3}, None),
    ("counterexample_alpha", {"n": 2, "alpha": 1.5}, 1.5),
    ("counterexample_alpha", {"n": 3, "alpha": 2.5}, 2.5),
])
def test_profile_matches_direct_quadrature(name, kwargs, power):
    n = kwargs["n"]
    from modlab.catalog import default_q0
    q0 = default_q0(name, n)
    prof = CriterionProfile(q0, n, kwargs.get("alpha"))
    for r in (0.9, 0.1, 1e-3, 1e-7):
        if power is None:
            w = lambda t: 1.0 / (t * q0(t) ** (1.0 / (n - 1)))  # noqa: E731
        else:
            w = lambda t: t ** (-(n - 1) / (power - 1)) * q0(t) ** (-1.0 / (power - 1))  # noqa: E731
        ref = quad(lambda u: w(np.exp(-u)) * np.exp(-u), 0, np.log(1 / r), limit=400,
                   epsabs=0, epsrel=1e-12)[0]
        assert float(prof.F(np.array([r]))[0]) == pytest.approx(ref, rel=1e-6)


def test_counterexample_alpha_limit_radius():
    assert make_catalog_map("counterexample_alpha", n=2).limit_set.radius == pytest.approx(0.5, rel=1e-6)
    assert make_catalog_map("counterexample_alpha", n=3).limit_set.radius == pytest.approx(0.125, rel=1e-6)


def test_exact_dilatation_at_puncture():
    entry = make_catalog_map("annulus_blowup")
    with pytest.raises(NearSingularity):
        exact_dilatation(entry, [0, 0, 0], 3)


# -- oracle agreement -------------------------------------------------------------------

@pytest.mark.parametrize("name", CATALOG_NAMES)
def test_exact_and_numeric_dilatations_agree(name):
    entry = make_catalog_map(name)
    pts = sample_points(entry.mapping, 50, 11, margin=1e-2)
    for p in (entry.dimension, 1.5):
        exact_i = entry.dilatation(pts, p, "inner")
        exact_o = entry.dilatation(pts, p, "outer")
        for x, ki, ko in zip(pts, exact_i, exact_o):
            rep = differential_report(entry.mapping, x, 1e-5, numeric=True)
            assert inner_dilatation(rep, p) == pytest.approx(ki, rel=1e-4)
            assert outer_dilatation(rep, p) == pytest.approx(ko, rel=1e-4)


@pytest.mark.parametrize("name", CATALOG_NAMES)
def test_exact_and_numeric_singular_values_agree(name):
    entry = make_catalog_map(name)
    pts = sample_points(entry.mapping, 50, 12, margin=1e-2)
    for x in pts:
        a = differential_report(entry.mapping, x, 1e-5).singular_values
        b = differential_report(entry.mapping, x, 1e-5, numeric=True).singular_values
        assert np.allclose(b, a, rtol=1e-5)


# -- multiplicity ------------------------------------------------------------------------

@pytest.mark.parametrize("name,params", [
    ("twisting", {"m": 3}), ("planar_power", {"k": 4}), ("radial_power", {}),
    ("annulus_blowup", {"n": 2}), ("counterexample_n", {}), ("counterexample_alpha", {"n": 3}),
])
def test_preimage_count_matches_multiplicity(name, params):
    entry = make_catalog_map(name, **params)
    targets = entry.mapping(sample_points(entry.mapping, 20, 21, margin=1e-2))
    for y in targets:
        assert len(entry.preimages(y)) == entry.mapping.multiplicity


# -- integrability threshold for the blow-up weight ------------------------------------------

@pytest.mark.parametrize("alpha,n", [(0.3, 2), (0.5, 3), (0.9, 3)])
def test_dominating_weight_bounds_dilatation(alpha, n):
    entry = make_catalog_map("annulus_blowup", alpha=alpha, n=n)
    x = sample_points(entry.mapping, 200, 2)
    assert np.all(entry.dilatation(x, n) <= blowup_dominating_weight(alpha, n)(x) * (1 + 1e-12))


@pytest.mark.parametrize("delta,converges", [(-0.05, True), (0.05, False)])
def test_integrability_flips_at_threshold(delta, converges):
    n, p = 3, 2
    alpha = n / (p * (n - 1)) + delta
    assert ((n - 1) * (p * alpha - 1) < 1) == converges
    rep = ls_integrability_test(blowup_dominating_weight(alpha, n),
                                make_domain("ball", [0, 0, 0], 0, 1), p)
    assert rep.converged == converges


# -- limit sets ------------------------------------------------------------------------------

def test_extrapolation_recovers_models():
    r = 10.0 ** -np.arange(2, 7)
    lim, model = extrapolate_limit(r, 0.7 + 0.3 / np.log(1 / r))
    assert model == "log" and lim == pytest.approx(0.7, abs=1e-9)
    lim, model = extrapolate_limit(r, 2.0 + 3 * r ** 0.5)
    assert model == "power" and lim == pytest.approx(2.0, abs=1e-6)


def test_probe_point_limit():
    probe = probe_limit_set(make_catalog_map("radial_power", alpha=0.5))
    assert probe.descriptor_confirmed and probe.descriptor.kind == "point"
    assert all(b < a for a, b in zip(probe.separations, probe.separations[1:]))


def test_probe_blowup_sphere():
    probe = probe_limit_set(make_catalog_map("annulus_blowup", alpha=0.5))
    assert probe.descriptor_confirmed
    assert probe.limit == pytest.approx(2.0, rel=0.02)


def test_probe_counterexample_sphere():
    probe = probe_limit_set(make_catalog_map("counterexample_n"))
    assert probe.descriptor_confirmed
    assert probe.limit == pytest.approx(2 * np.exp(-1), rel=0.02)
