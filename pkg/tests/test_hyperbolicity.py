import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from contactflow import (
    Cone2,
    ConeField3,
    HyperbolicityParams,
    SuspensionFlow,
    build_roof,
    check_bunching,
    check_cone_invariance,
    check_transversality,
    complexity_counts,
    default_params,
    expansion_constants,
    single_piece_map,
    standard_map,
)


def test_boundary_rays_report_exact_aperture():
    for a in (0.01, 0.1, 1.0, 3.0):
        cone = Cone2(a)
        ap = cone.aperture_of(cone.boundary_rays())
        assert np.max(np.abs(ap - a)) < 1e-12


@given(
    c=st.floats(-1e4, 1e4).filter(lambda v: abs(v) > 1e-8),
    u=st.floats(-0.95, 0.95),
)
def test_cone_aperture_homogeneous(c, u):
    cone = Cone2(0.3)
    v = cone.sample_directions(9)[int((u + 1) * 4)]
    ap1 = float(cone.aperture_of(v))
    ap2 = float(cone.aperture_of(c * np.asarray(v)))
    assert ap2 == pytest.approx(ap1, rel=1e-9, abs=1e-12)
    if abs(ap1 - cone.aperture) > 1e-9:  # rounding can flip boundary rays
        assert bool(cone.contains(v)) == bool(cone.contains(c * np.asarray(v)))


def test_sample_directions_stay_inside():
    cone = Cone2(0.4)
    dirs = cone.sample_directions(101)
    assert np.all(cone.aperture_of(dirs) <= 0.4 + 1e-12)
    with pytest.raises(ValueError):
        cone.sample_directions(1)


def test_cone_field_excludes_flow_direction():
    field = ConeField3(Cone2(1.0), 0.25)
    assert not bool(field.contains((0.0, 0.0, 1.0)))
    assert bool(field.contains((1.0, 1.0, 0.0)))
    assert bool(field.contains((1.0, 1.0, 0.5)))
    # membership is homogeneous
    assert bool(field.contains((2.0, 2.0, 1.0)))


def test_unit_cone_contracts_to_quarter_aperture():
    report = check_cone_invariance(standard_map(), Cone2(1.0), n_rays=64)
    assert report.ok
    assert report.max_image_aperture <= 0.25 + 1e-12
    assert report.margin >= 0.75 - 1e-12


def test_tenth_cone_contracts_to_fortieth():
    report = check_cone_invariance(standard_map(), Cone2(0.1), n_rays=64)
    assert report.max_image_aperture <= 0.025 * (1 + 1e-9)


def test_identity_map_margin_zero_constants_one():
    ident = single_piece_map()
    report = check_cone_invariance(ident, Cone2(1.0), n_rays=32)
    assert report.margin == pytest.approx(0.0, abs=1e-15)
    lam_u, lam_s, big_lam = expansion_constants(ident, Cone2(1.0))
    assert lam_u == pytest.approx(1.0, abs=1e-15)
    assert lam_s == pytest.approx(1.0, abs=1e-15)
    assert big_lam == pytest.approx(1.0, abs=1e-15)


def test_cone_invariance_requires_enough_rays():
    with pytest.raises(ValueError):
        check_cone_invariance(standard_map(), Cone2(1.0), n_rays=8)


def test_expansion_constants_near_planar_eigenvalues():
    lam_u, lam_s, big_lam = expansion_constants(standard_map(), Cone2(0.01))
    assert lam_u == pytest.approx(1.992329388425, rel=1e-9)
    assert lam_s == pytest.approx(0.503127543677, rel=1e-9)
    assert big_lam == pytest.approx(2.007323752993, rel=1e-9)
    assert lam_u > 1.0 > lam_s > 0.0
    assert big_lam >= lam_u
    # within 1% of the planar eigenvalues at this aperture
    assert abs(lam_u - 2.0) <= 0.02
    assert abs(lam_s - 0.5) <= 0.005


def test_expansion_submultiplicative():
    cone = Cone2(0.1)
    base = standard_map()
    lam = {n: expansion_constants(base, cone, n=n)[0] for n in (1, 2, 3, 4)}
    for n1, n2 in ((1, 1), (1, 2), (2, 2), (1, 3)):
        assert lam[n1 + n2] >= lam[n1] * lam[n2] - 1e-10


def test_four_step_expansion_rate_pinned():
    lam_u4, _, _ = expansion_constants(standard_map(), Cone2(0.1), n=4)
    assert lam_u4 == pytest.approx(15.0878935326, rel=1e-8)


def test_bunching_arithmetic_true_case():
    params = HyperbolicityParams(
        lambda_u=2.0, lambda_s=0.5, Lambda_u=2.0, beta=0.0, t00=0.25
    )
    ok, margin = check_bunching(params)
    assert ok
    assert margin == pytest.approx(0.5, abs=1e-15)


def test_bunching_arithmetic_false_case():
    # beta ~ 1 fails for spread-out expansion rates; beta = 1 itself is
    # outside the admissible range and rejected by the parameter type
    params = HyperbolicityParams(
        lambda_u=2.0, lambda_s=0.9, Lambda_u=4.0, beta=0.99, t00=0.25
    )
    ok, margin = check_bunching(params)
    assert not ok
    value = 0.9 ** 0.01 / 2.0 * 4.0 ** 1.99
    assert margin == pytest.approx(1.0 - value, rel=1e-12)
    with pytest.raises(ValueError):
        HyperbolicityParams(
            lambda_u=2.0, lambda_s=0.9, Lambda_u=4.0, beta=1.0, t00=0.25
        )


def test_bunching_for_standard_flow_constants(flow):
    small = default_params(flow, beta=0.1, n=4)
    ok_small, margin_small = check_bunching(small)
    assert ok_small and margin_small > 0
    formula = (small.lambda_s ** 0.9 / small.lambda_u
               * small.Lambda_u ** 1.1)
    assert 1.0 - margin_small == pytest.approx(formula, abs=1e-12)
    assert 1.0 - margin_small == pytest.approx(0.684154, abs=5e-3)
    ok_big, margin_big = check_bunching(default_params(flow, beta=0.5, n=4))
    assert not ok_big
    assert 1.0 - margin_big == pytest.approx(1.103890, abs=5e-3)


def test_default_params_t00_quarter_of_floor(flow):
    params = default_params(flow, beta=0.1)
    assert params.t00 == pytest.approx(0.25)
    assert params.lambda_u > 1 > params.lambda_s > 0
    assert params.Lambda_u >= params.lambda_u


def test_transversality_of_discontinuity_images(flow):
    stable = Cone2(1.0).stable_partner()
    report = check_transversality(flow, stable, samples_per_segment=64)
    assert report.ok
    assert report.min_clearance > 0
    dense = check_transversality(flow, stable, samples_per_segment=128)
    assert dense.min_clearance == pytest.approx(
        report.min_clearance, rel=0.02
    )


def test_transversality_fails_for_unstable_axis_cone(flow):
    # image tangents live in the unstable cone, so using it as the
    # "stable" cone must report no clearance
    report = check_transversality(flow, Cone2(1.0), samples_per_segment=64)
    assert report.min_clearance <= 0
    assert not report.ok


def test_complexity_counts_exact_small(flow):
    reports = complexity_counts(flow, 4, method="exact")
    assert [r.n for r in reports] == [1, 2, 3, 4]
    assert [r.D_b for r in reports] == [4, 9, 11, 13]
    assert [r.D_e for r in reports] == [4, 7, 9, 11]
    assert [r.cells_b for r in reports] == [4, 12, 34, 90]
    for r in reports:
        assert not r.lower_bound
        assert r.rate_b == pytest.approx(np.log(r.D_b) / r.n)
        assert r.rate_e == pytest.approx(np.log(r.D_e) / r.n)
    # incidence counts never decrease with word length
    for a, b in zip(reports[:-1], reports[1:]):
        assert b.D_b >= a.D_b and b.D_e >= a.D_e


def test_complexity_single_piece_control():
    base = single_piece_map()
    control = SuspensionFlow(base, build_roof(base, 1.0), label="control")
    reports = complexity_counts(control, 4, method="exact")
    assert all(r.D_b == 1 and r.D_e == 1 for r in reports)


def test_complexity_sampling_is_labeled_lower_bound(flow):
    exact = complexity_counts(flow, 3, method="exact")
    sampled = complexity_counts(flow, 3, method="sampling")
    assert all(s.lower_bound for s in sampled)
    assert not any(e.lower_bound for e in exact)
    # refining itineraries within a fixed sample window never loses codes
    for prev, cur in zip(sampled, sampled[1:]):
        assert cur.D_b >= prev.D_b
        assert cur.D_e >= prev.D_e
    # at n = 1 every piece is hit, so both methods see all four codes
    assert sampled[0].D_b == exact[0].D_b == 4
    assert sampled[0].D_e == exact[0].D_e == 4
