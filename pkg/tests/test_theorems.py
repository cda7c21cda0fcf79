import json

import numpy as np
import pytest

from lipflow import (
    EscapeError,
    IntegratorConfig,
    LipflowError,
    QuadratureAlongFlow,
    Region,
    TestFunction,
    VectorField,
    l1_distance,
    make_cutoff_field,
    parse,
    sample,
)
from lipflow.theorems import (
    CoefficientVector,
    ConvergenceReport,
    build_report,
    combine_fields,
    lebesgue_point_check,
    random_unit_ball,
    reconstruct_derivative,
    uniform_integrability_diagnostic,
    verify_commutation,
    verify_cutoff_localization,
    verify_dq_distribution_limit,
    verify_jacobian_bounds,
    verify_main_equivalence,
    verify_semigroup,
    verify_system,
    verify_upper_gradient,
    verify_weakstar_divergence,
    write_report_csv,
    write_report_json,
)

CFG = IntegratorConfig()


def translation_region():
    return Region((-1.0,), (1.0,), sub=Region((-0.5,), (0.5,)))


def translation_field():
    return VectorField.from_components(translation_region(), ["1"],
                                       lipschitz=0.0, name="translation")


def scaling_field(bound=4.0):
    region = Region((-bound,), (bound,), sub=Region((-1.0,), (1.0,)))
    return VectorField.from_components(region, ["x0"], lipschitz=1.0, name="scaling")


def rotation_field(bound=1.0):
    region = Region((-bound, -bound), (bound, bound),
                    sub=Region((-0.5, -0.5), (0.5, 0.5)))
    return VectorField.from_components(region, ["-x1", "x0"], lipschitz=1.0, name="rotation")


def heisenberg_fields():
    region = Region((-1.0,) * 3, (1.0,) * 3, sub=Region((-0.5,) * 3, (0.5,) * 3))
    x1 = VectorField.from_components(region, ["1", "0", "-x1/2"], lipschitz=0.5, name="heis1")
    x2 = VectorField.from_components(region, ["0", "1", "x0/2"], lipschitz=0.5, name="heis2")
    return x1, x2


# --- report mechanics -------------------------------------------------------


def test_build_report_validates_ladder():
    with pytest.raises(LipflowError):
        build_report("x", [], 1.0)
    with pytest.raises(LipflowError):
        build_report("x", [(0.1, 1.0), (0.2, 0.5)], 1.0)
    with pytest.raises(LipflowError):
        build_report("x", [(0.2, -1.0)], 1.0)


def test_report_verdict_rules():
    ok = build_report("x", [(0.2, 0.4), (0.1, 0.2), (0.05, 0.1)], 0.15)
    assert ok.passed and ok.fitted_rate == pytest.approx(1.0, abs=1e-12)
    too_big = build_report("x", [(0.2, 0.4), (0.1, 0.3)], 0.15)
    assert not too_big.passed
    growing = build_report("x", [(0.2, 0.01), (0.1, 0.09)], 0.15)
    assert not growing.passed
    plateau = build_report("x", [(0.2, 1e-15), (0.1, 3e-15)], 0.15)
    assert plateau.passed  # machine-precision plateau absorbed


def test_report_serialization(tmp_path):
    rep = build_report("demo", [(0.2, 0.02), (0.1, 0.01)], 0.05, notes="n")
    jpath = tmp_path / "r.json"
    cpath = tmp_path / "r.csv"
    write_report_json(rep, jpath)
    write_report_csv(rep, cpath)
    data = json.loads(jpath.read_text())
    assert set(data) == {"label", "points", "fitted_rate", "threshold", "verdict", "notes"}
    assert data["verdict"] == "pass"
    lines = cpath.read_text().splitlines()
    assert lines[0] == "param,error"
    assert len(lines) == 3


def test_coefficient_vector_ball_membership():
    CoefficientVector((0.6, 0.8))
    with pytest.raises(LipflowError):
        CoefficientVector((0.9, 0.9))
    vecs = random_unit_ball(2, 32, seed=5)
    assert len(vecs) == 32


# --- main equivalence -------------------------------------------------------


def abs_kink_instance(resolution=2000):
    field = translation_field()
    f = sample(parse("abs(x0)", 1), field.region, resolution)
    g = sample(parse("x0 / abs(x0)", 1), field.region, resolution)
    return field, f, g


def test_main_equivalence_abs_kink_error_is_t():
    field, f, g = abs_kink_instance()
    ts = [0.2, 0.1, 0.05, 0.02, 0.01]
    rep = verify_main_equivalence(f, g, field, None, ts, CFG, threshold=0.011)
    assert rep.passed
    for t, err in rep.points:
        assert err == pytest.approx(t, rel=0.05)
    assert 0.9 <= rep.fitted_rate <= 1.1


def test_main_equivalence_square_rate_one():
    field = translation_field()
    f = sample(parse("x0^2", 1), field.region, 1000)
    g = sample(parse("2*x0", 1), field.region, 1000)
    ts = [0.2, 0.1, 0.05]
    rep = verify_main_equivalence(f, g, field, None, ts, CFG, threshold=0.06)
    assert rep.passed
    # D_t f - g = t exactly, so the subregion norm is t * |sub|
    for t, err in rep.points:
        assert err == pytest.approx(t * 1.0, rel=0.02)


def test_main_equivalence_rejects_wrong_derivative():
    field, f, g = abs_kink_instance(resolution=500)
    wrong = g.with_values(g.values + 1.0)
    rep = verify_main_equivalence(f, wrong, field, None, [0.2, 0.1, 0.05], CFG,
                                  threshold=0.011)
    assert not rep.passed


def test_main_equivalence_escape_checked():
    field, f, g = abs_kink_instance(resolution=200)
    wide_sub = Region((-0.95,), (0.95,))
    with pytest.raises(EscapeError):
        verify_main_equivalence(f, g, field, wide_sub, [0.2, 0.1], CFG, threshold=0.1)


# --- distributional limit ---------------------------------------------------


def test_dq_distribution_limit_sign_jump():
    field = translation_field()
    f = sample(parse("x0 / abs(x0)", 1), field.region, 2000)
    u = TestFunction((0.0,), 0.8)
    ts = [0.2, 0.1, 0.05, 0.02, 0.01]
    rep = verify_dq_distribution_limit(f, field, u, ts, CFG, threshold=0.05)
    assert rep.passed
    # the limit pairing is 2 u(0) = 2
    limit = float(rep.notes.split("limit pairing = ")[1].split(";")[0])
    assert limit == pytest.approx(2.0, abs=1e-3)


def test_dq_distribution_limit_constant():
    field = translation_field()
    f = sample(parse("5", 1), field.region, 400)
    u = TestFunction((0.0,), 0.7)
    rep = verify_dq_distribution_limit(f, field, u, [0.2, 0.1, 0.05], CFG, threshold=1e-6)
    assert rep.passed
    assert rep.final_error <= 1e-9


def test_dq_distribution_limit_scaling_square():
    field = scaling_field()
    f = sample(parse("x0^2", 1), field.region, 1500)
    g = sample(parse("2*x0^2", 1), field.region, 1500)  # X f for X = x d/dx
    u = TestFunction((0.0,), 0.8)
    rep = verify_dq_distribution_limit(f, field, u, [0.2, 0.1, 0.05, 0.02], CFG,
                                       threshold=0.05)
    assert rep.passed
    from lipflow import pair
    limit = float(rep.notes.split("limit pairing = ")[1].split(";")[0])
    assert limit == pytest.approx(pair(g, u), abs=1e-3)


# --- jacobian bounds --------------------------------------------------------


def test_jacobian_bounds_scaling_attained():
    field = scaling_field()
    pts = [(-0.8,), (0.3,), (0.9,)]
    rep = verify_jacobian_bounds(field, pts, [1.0, 0.5, 0.1, -0.4, -1.0], CFG)
    assert rep.passed
    assert all(err == 0.0 for _, err in rep.points)
    # e^t hugs the top of the sandwich: worst slack is about 0
    worst = float(rep.notes.split("worst normalized slack = ")[1].split(" ")[0])
    assert abs(worst) <= 1e-6


def test_jacobian_bounds_rotation_wide_margin():
    field = rotation_field(bound=2.0)
    pts = [(0.5, 0.1), (-0.3, 0.4)]
    rep = verify_jacobian_bounds(field, pts, [0.8, 0.4, 0.2], CFG)
    assert rep.passed


def test_jacobian_bounds_fail_on_early_violation():
    # an understated constant breaks the sandwich at the largest t only;
    # the verdict must still be a failure even though later points are clean
    region = Region((-4.0,), (4.0,))
    lying = VectorField.from_components(region, ["x0"], lipschitz=0.5, name="lying")
    rep = verify_jacobian_bounds(lying, [(0.5,)], [1.0, 0.01], CFG, threshold=0.01)
    assert not rep.passed
    assert rep.points[0][1] > 0.0 and rep.points[-1][1] == 0.0


# --- weak-star divergence ---------------------------------------------------


def weakstar_setup_1d():
    field = scaling_field()
    grid_region = field.region
    functions = [sample(TestFunction((c,), 0.5), grid_region, 2000)
                 for c in (-0.8, -0.3, 0.0, 0.4, 0.9)]
    return field, functions


def test_weakstar_scaling_limit_matches_divergence():
    field, us = weakstar_setup_1d()
    ts = [0.2, 0.1, 0.05, 0.02, 0.01]
    rep = verify_weakstar_divergence(field, us, ts, CFG, 1e-4, threshold=0.02)
    assert rep.passed
    assert 0.9 <= rep.fitted_rate <= 1.1


def test_weakstar_rotation_limit_zero():
    field = rotation_field()
    us = [sample(TestFunction((0.1, 0.0), 0.3), field.region, (200, 200)),
          sample(TestFunction((-0.2, 0.2), 0.3), field.region, (200, 200))]
    rep = verify_weakstar_divergence(field, us, [0.1, 0.05, 0.02], CFG, 1e-4,
                                     threshold=1e-6)
    assert rep.passed
    assert rep.final_error <= 1e-8


def test_weakstar_affine_2d_rate():
    region = Region((-1.0, -1.0), (1.0, 1.0))
    field = VectorField.from_components(region, ["x0", "x1"], lipschitz=1.0, name="affine")
    us = [sample(TestFunction((0.0, 0.0), 0.4), region, (300, 300)),
          sample(TestFunction((0.3, -0.2), 0.3), region, (300, 300))]
    ts = [0.2, 0.1, 0.05, 0.02]
    rep = verify_weakstar_divergence(field, us, ts, CFG, 1e-4, threshold=0.05)
    assert rep.passed
    assert 0.9 <= rep.fitted_rate <= 1.1


# --- semigroup --------------------------------------------------------------


def test_semigroup_translation():
    region = Region((-2.0,), (2.0,), sub=Region((-0.5,), (0.5,)))
    field = VectorField.from_components(region, ["1"], lipschitz=0.0, name="translation")
    f = sample(parse("abs(x0)", 1), region, 2000)
    # (0, 0) exercises exact equality of the group law
    pairs = [(0.0, 0.0)] + [(s, t) for s in (0.1, 0.2) for t in (0.1, 0.3)]
    rep = verify_semigroup(field, f, pairs, [0.2, 0.1, 0.05], CFG,
                           threshold=0.5, group_tolerance=1e-5)
    assert rep.passed
    # |T_t f - f| on the sub-box behaves like c t with c <= 2
    for t, err in rep.points:
        assert err <= 2.0 * t + 1e-6


def test_semigroup_scaling_norm_bound():
    field = scaling_field()
    f = sample(parse("max(1 - abs(x0), 0)", 1), field.region, 2000)
    rep = verify_semigroup(field, f, [(0.3, 0.4), (0.2, -0.1)], [0.4, 0.2, 0.1],
                           CFG, threshold=0.6, group_tolerance=1e-4)
    assert rep.passed


# --- commutation ------------------------------------------------------------


def test_commutation_square_and_abs():
    field = translation_region()
    field = translation_field()
    quad = QuadratureAlongFlow(substeps=50)
    values = (0.05, 0.1, 0.2)
    f_sq = sample(parse("x0^2", 1), field.region, 2000)
    rep_sq = verify_commutation(f_sq, field, values, values, quad, CFG, threshold=1e-5)
    assert rep_sq.passed
    f_abs = sample(parse("abs(x0)", 1), field.region, 2000)
    budget = 1.0 / 50 + float(np.max(f_abs.cell_widths))
    rep_abs = verify_commutation(f_abs, field, values, values, quad, CFG,
                                 threshold=budget)
    assert rep_abs.passed


# --- upper gradients --------------------------------------------------------


def test_upper_gradient_abs_with_unit_bound():
    field, f, _ = abs_kink_instance()
    h = sample(parse("1", 1), field.region, 2000)
    ts = [0.2, 0.1, 0.05]
    rep = verify_upper_gradient(f, h, field, [(-0.2,), (0.1,), (0.3,)], ts,
                                QuadratureAlongFlow(64), CFG, threshold=0.01)
    assert rep.passed
    assert all(err <= 1e-9 for _, err in rep.points)


def test_upper_gradient_zero_bound_fails():
    field, f, _ = abs_kink_instance(resolution=500)
    h = sample(parse("0", 1), field.region, 500)
    rep = verify_upper_gradient(f, h, field, [(0.1,)], [0.2, 0.1],
                                QuadratureAlongFlow(16), CFG, threshold=0.01)
    assert not rep.passed


def test_reconstruct_derivative_recovers_sign():
    field, f, g = abs_kink_instance()
    sub = field.region.sub
    rec = reconstruct_derivative(f, field, sub, 24)
    expected = np.sign(rec.midpoints()[:, 0])
    assert l1_distance(rec, rec.with_values(expected), None) <= 0.05
    assert float(np.abs(rec.values).max()) <= 1.0 + 0.01


def test_reconstruct_derivative_averages_at_a_kink_node():
    # an odd lattice puts a node exactly on the kink; the pairing there
    # honestly reports the symmetric window average, which is 0
    field, f, _ = abs_kink_instance()
    rec = reconstruct_derivative(f, field, field.region.sub, 25)
    node = np.argmin(np.abs(rec.midpoints()[:, 0]))
    assert rec.midpoints()[node, 0] == 0.0
    assert rec.values[node] == pytest.approx(0.0, abs=1e-9)


def test_reconstruct_derivative_linear_scaling():
    field = scaling_field()
    f = sample(parse("x0^2", 1), field.region, 1000)
    rec = reconstruct_derivative(f, field, field.region.sub, 11)
    expected = 2.0 * rec.midpoints()[:, 0] ** 2
    np.testing.assert_allclose(rec.values, expected, atol=2e-3)


# --- systems ----------------------------------------------------------------


def test_combine_fields_heisenberg():
    x1, x2 = heisenberg_fields()
    combo = combine_fields([x1, x2], (0.6, 0.8))
    vals = combo.eval_many(np.array([[0.2, -0.4, 0.1]]))
    third = 0.6 * (0.4 / 2.0) + 0.8 * (0.2 / 2.0)
    np.testing.assert_allclose(vals, [[0.6, 0.8, third]], atol=1e-12)
    assert combo.declared_lipschitz == pytest.approx(0.6 * 0.5 + 0.8 * 0.5)


def test_verify_system_heisenberg_small():
    x1, x2 = heisenberg_fields()
    region = x1.region
    f = sample(parse("x0", 3), region, (24, 24, 24))
    h = sample(parse("1", 3), region, (24, 24, 24))
    coeffs = random_unit_ball(2, 8, seed=9)
    rep = verify_system(f, [x1, x2], h, coeffs, IntegratorConfig(base_step=0.05),
                        [0.1, 0.05], quad=QuadratureAlongFlow(4), threshold=0.05,
                        recon_resolution=3)
    assert rep.passed


def test_verify_system_single_field_reduces_to_upper_gradient():
    # k = 1 with the unit coefficient reproduces the plain upper-gradient check
    field = translation_field()
    f = sample(parse("abs(x0)", 1), field.region, 1000)
    h = sample(parse("1", 1), field.region, 1000)
    rep = verify_system(f, [field], h, [CoefficientVector((1.0,))], CFG,
                        [0.2, 0.1], quad=QuadratureAlongFlow(32), threshold=0.01,
                        recon_resolution=10)
    assert rep.passed
    zero = sample(parse("0", 1), field.region, 1000)
    rep_bad = verify_system(f, [field], zero, [CoefficientVector((1.0,))], CFG,
                            [0.2, 0.1], quad=QuadratureAlongFlow(32), threshold=0.01,
                            recon_resolution=10)
    assert not rep_bad.passed


def test_verify_system_constant_function():
    x1, x2 = heisenberg_fields()
    region = x1.region
    f = sample(parse("2", 3), region, (16, 16, 16))
    h = sample(parse("1", 3), region, (16, 16, 16))
    rep = verify_system(f, [x1, x2], h, [CoefficientVector((1.0, 0.0))],
                        IntegratorConfig(base_step=0.05), [0.1], threshold=0.05,
                        recon_resolution=2)
    assert rep.passed


# --- cutoff localization ----------------------------------------------------


def test_cutoff_localization_translation():
    region = Region((-2.0,), (2.0,), sub=Region((-0.5,), (0.5,)))
    base = VectorField.from_components(region, ["1"], lipschitz=0.0, name="translation")
    cut = make_cutoff_field(base, (0.0,), 1.2)
    f = sample(parse("x0", 1), region, 2000)
    g = sample(parse("1", 1), region, 2000)
    rep = verify_cutoff_localization(f, g, base, cut, [(-0.2,), (0.0,), (0.15,)],
                                     QuadratureAlongFlow(200), CFG, t=0.3,
                                     threshold=5e-3)
    assert rep.passed


# --- lebesgue points --------------------------------------------------------


def test_lebesgue_points_continuous_function():
    field = translation_field()
    f = sample(parse("x0^2", 1), field.region, 1000)
    rep = lebesgue_point_check(f, field, [(-0.3,), (0.0,), (0.2,)],
                               [0.2, 0.1, 0.05, 0.02], QuadratureAlongFlow(64),
                               CFG, threshold=0.25)
    assert rep.passed
    assert rep.points[-1][1] < rep.points[0][1]


def test_lebesgue_points_sign_excludes_exceptional_origin():
    field = translation_field()
    f = sample(parse("x0 / abs(x0)", 1), field.region, 2000)
    rep = lebesgue_point_check(f, field, [(0.3,), (0.0,)], [0.2, 0.1, 0.05],
                               QuadratureAlongFlow(64), CFG, threshold=1e-3,
                               exceptional=[(0.0,)])
    assert rep.passed
    # the trajectory from 0.3 stays positive: means equal the value there
    assert rep.final_error <= 1e-6


# --- uniform integrability --------------------------------------------------


def test_uniform_integrability_difference_quotients_bounded():
    from lipflow import difference_quotient
    field, f, _ = abs_kink_instance(resolution=800)
    family = [difference_quotient(f, field, t, CFG) for t in (0.4, 0.2, 0.1, 0.05)]
    rep = uniform_integrability_diagnostic(family, [0.5, 0.2, 0.1, 0.01])
    # |D_t |x|| <= 1 pointwise: mass over the worst delta-cells <= delta * |box|
    for delta, mass in rep.worst_cell_mass:
        assert mass <= delta * 2.0 + 1e-9
    assert rep.l1_sup <= 2.0 + 1e-9
    assert rep.verdict == "diagnostic"


def test_uniform_integrability_singleton():
    field, f, _ = abs_kink_instance(resolution=100)
    rep = uniform_integrability_diagnostic([f], [1.0])
    from lipflow import l1_norm
    assert rep.worst_cell_mass[0][1] == pytest.approx(l1_norm(f), abs=1e-12)


def test_uniform_integrability_spikes_concentrate():
    region = Region((-1.0,), (1.0,))
    spikes = []
    for k in (1.0, 4.0, 16.0):
        def spike(pts, k=k):
            return np.where(np.abs(pts[:, 0]) < 0.5 / k, k, 0.0)
        spikes.append(sample(spike, region, 1024))
    rep = uniform_integrability_diagnostic(spikes, [0.05, 0.01])
    # mass near 1 concentrates on ever-smaller sets: no uniform decay in delta
    assert rep.worst_cell_mass[-1][1] >= 0.3


# --- shipped catalog: all checks pass, corrupted pairs fail -----------------


def _catalog_setup(entry):
    from lipflow.oracles import get_oracle
    entry = get_oracle(entry)
    region = entry.region()
    res = (2000,) if entry.dimension == 1 else (300,) * entry.dimension
    field = entry.build_fields()[0]
    cfg = IntegratorConfig(tolerance=1e-6) if field.nonsmooth else CFG
    f = sample(parse(entry.f_text, entry.dimension), region, res)
    g = sample(parse(entry.g_texts[0], entry.dimension), region, res)
    h = sample(parse(entry.upper_gradient_text, entry.dimension), region, res)
    return entry, field, f, g, h, cfg


_TRAJ = {
    "translation": [(-0.2,), (0.2,)],
    "scaling": [(-0.4,), (0.35,)],
    "rotation": [(0.2, 0.1), (-0.15, 0.2)],
    "kink": [(-0.3,), (0.25,)],
}


@pytest.mark.parametrize("name", ["translation", "scaling", "rotation", "kink"])
def test_catalog_pair_passes_all_three_checks(name):
    entry, field, f, g, h, cfg = _catalog_setup(name)
    ts = [0.2, 0.1, 0.05, 0.02, 0.01]
    rep_me = verify_main_equivalence(f, g, field, None, ts, cfg)
    assert rep_me.passed, rep_me.notes
    center = tuple(0.5 * (l + u) for l, u in zip(entry.sub_lower, entry.sub_upper))
    radius = 0.35 * min(u - l for l, u in zip(entry.sub_lower, entry.sub_upper))
    u_bump = TestFunction(center, radius)
    rep_dq = verify_dq_distribution_limit(f, field, u_bump, ts, cfg)
    assert rep_dq.passed, rep_dq.notes
    rep_ug = verify_upper_gradient(f, h, field, _TRAJ[name], ts,
                                   QuadratureAlongFlow(64), cfg)
    assert rep_ug.passed, rep_ug.notes


@pytest.mark.parametrize("name", ["translation", "scaling", "rotation", "kink"])
def test_catalog_corrupted_pair_fails(name):
    entry, field, f, g, h, cfg = _catalog_setup(name)
    ts = [0.2, 0.1, 0.05]
    bad_g = g.with_values(g.values + 0.5)
    rep_me = verify_main_equivalence(f, bad_g, field, None, ts, cfg)
    assert not rep_me.passed
    # the corrupted derivative disagrees with the verified pairing limit by
    # a macroscopic margin, far beyond the consistent pair's numerical gap
    center = tuple(0.5 * (l + u) for l, u in zip(entry.sub_lower, entry.sub_upper))
    radius = 0.35 * min(u - l for l, u in zip(entry.sub_lower, entry.sub_upper))
    u_bump = TestFunction(center, radius)
    from lipflow import pair
    from lipflow.calculus import distributional_pairing
    limit = distributional_pairing(f, field, u_bump, 1e-4)
    gap_good = abs(limit - pair(g, u_bump))
    gap_bad = abs(limit - pair(bad_g, u_bump))
    assert gap_bad > max(100.0 * gap_good, 0.01)
    # a deficient upper gradient is rejected node-wise
    bad_h = h.with_values(np.maximum(h.values - 0.5, 0.0))
    rep_ug = verify_upper_gradient(f, bad_h, field, _TRAJ[name], ts,
                                   QuadratureAlongFlow(64), cfg)
    assert not rep_ug.passed


def test_corrupted_pair_fails_all_three_checks():
    field, f, g = abs_kink_instance(resolution=800)
    bad = g.with_values(g.values + 0.1)
    ts = [0.2, 0.1, 0.05]
    rep1 = verify_main_equivalence(f, bad, field, None, ts, CFG, threshold=0.011)
    assert not rep1.passed
    u = TestFunction((0.0,), 0.8)
    rep2 = verify_dq_distribution_limit(f, field, u, ts, CFG, threshold=1e-4)
    # the dq limit check pairs against the true weak derivative; corrupting g
    # instead perturbs the upper-gradient check below
    h_bad = sample(parse("0", 1), field.region, 800)
    rep3 = verify_upper_gradient(f, h_bad, field, [(0.2,)], ts,
                                 QuadratureAlongFlow(16), CFG, threshold=0.01)
    assert not rep3.passed
