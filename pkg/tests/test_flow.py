import math

import numpy as np
import pytest

from lipflow import (
    EscapeError,
    IntegrationError,
    IntegratorConfig,
    Region,
    VectorField,
    check_advance_estimate,
    check_gronwall,
    flow_many,
    flow_point,
    jacobian_det,
    jacobian_many,
    jacobian_matrix,
)

CFG = IntegratorConfig()


def translation_field(bound=2.0):
    region = Region((-bound,), (bound,))
    return VectorField.from_components(region, ["1"], lipschitz=0.0, name="translation")


def scaling_field(bound=4.0):
    region = Region((-bound,), (bound,))
    return VectorField.from_components(region, ["x0"], lipschitz=1.0, name="scaling")


def rotation_field(bound=1.5):
    region = Region((-bound, -bound), (bound, bound))
    return VectorField.from_components(region, ["-x1", "x0"], lipschitz=1.0, name="rotation")


def kink_field():
    region = Region((-2.0,), (2.0,))
    return VectorField.from_components(region, ["abs(x0)"], lipschitz=1.0, name="kink")


def test_translation_flow():
    s = flow_point(translation_field(), (0.0,), 1.0, CFG)
    assert s.gamma[0] == pytest.approx(1.0, abs=1e-12)
    assert s.advance[0] == pytest.approx(1.0, abs=1e-12)
    assert not s.escaped


def test_scaling_flow_doubles_at_log2():
    s = flow_point(scaling_field(), (1.0,), math.log(2.0), CFG)
    assert s.gamma[0] == pytest.approx(2.0, abs=1e-9)


def test_zero_time_is_identity_exactly():
    s = flow_point(rotation_field(), (0.3, -0.2), 0.0, CFG)
    assert s.gamma == (0.3, -0.2)
    assert s.advance == (0.0, 0.0)
    assert s.jac_det == 1.0


def test_kink_flow_negative_branch():
    # trajectories starting at x < 0 follow x e^{-t}
    s = flow_point(kink_field(), (-1.0,), 1.0, CFG)
    assert s.gamma[0] == pytest.approx(-math.exp(-1.0), abs=1e-9)


def test_escape_detection_and_bisection():
    field = translation_field(bound=1.0)
    s = flow_point(field, (0.5,), 1.0, CFG)
    assert s.escaped
    assert s.escape_time == pytest.approx(0.5, abs=10 * CFG.tolerance)
    assert s.gamma[0] == pytest.approx(1.0, abs=1e-6)
    assert math.isnan(s.jac_det)


def test_max_steps_enforced():
    cfg = IntegratorConfig(base_step=0.01, max_steps=10)
    with pytest.raises(IntegrationError):
        flow_point(translation_field(), (0.0,), 1.0, cfg)


def test_jacobian_matrix_rotation_quarter_turn():
    m = jacobian_matrix(rotation_field(), (0.1, 0.1), math.pi / 2.0, CFG)
    np.testing.assert_allclose(m, [[0.0, -1.0], [1.0, 0.0]], atol=1e-6)


def test_jacobian_matrix_identity_at_zero():
    m = jacobian_matrix(rotation_field(), (0.1, 0.1), 0.0, CFG)
    np.testing.assert_array_equal(m, np.eye(2))


def test_jacobian_scaling_is_exponential():
    m = jacobian_matrix(scaling_field(), (0.5,), 1.0, CFG)
    assert m[0, 0] == pytest.approx(math.e, abs=1e-6)


def test_jacobian_modes_agree_on_smooth_fields():
    fd_cfg = IntegratorConfig(jacobian_mode="forward_difference")
    for field, x, t in ((scaling_field(), (0.5,), 0.7),
                        (rotation_field(), (0.2, -0.4), 0.9)):
        a = jacobian_matrix(field, x, t, CFG)
        b = jacobian_matrix(field, x, t, fd_cfg)
        np.testing.assert_allclose(a, b, atol=1e-6)


def test_jacobian_det_rotation_volume_preserving():
    for t in (-1.0, 0.3, 1.2):
        assert jacobian_det(rotation_field(), (0.2, 0.1), t, CFG) == pytest.approx(1.0, abs=1e-6)


def test_jacobian_det_scaling_attains_paper_bound():
    # n = 1, L = 1: the sandwich is [e^{-|t|}, e^{|t|}] and e^t sits at the top
    t = 1.0
    det = jacobian_det(scaling_field(), (0.3,), t, CFG)
    assert det == pytest.approx(math.e, abs=1e-6)
    assert math.exp(-t) - 1e-9 <= det <= math.exp(t) + 1e-6


def test_group_law():
    field = rotation_field()
    x = np.array([[0.4, -0.3]])
    for s, t in ((0.3, 0.5), (-0.2, 0.7), (0.25, -0.55)):
        gt, e1 = flow_many(field, x, t, CFG)
        gst, e2 = flow_many(field, gt, s, CFG)
        direct, e3 = flow_many(field, x, s + t, CFG)
        assert not (e1[0] or e2[0] or e3[0])
        assert np.linalg.norm(gst - direct) <= 10 * CFG.tolerance


def test_inverse_law():
    field = scaling_field()
    x = np.array([[0.8]])
    for t in (0.5, -0.7, 1.0):
        gt, _ = flow_many(field, x, t, CFG)
        back, _ = flow_many(field, gt, -t, CFG)
        assert abs(back[0, 0] - 0.8) <= 10 * CFG.tolerance


def test_jacobian_cocycle_product_formula():
    field = scaling_field()
    x = (0.4,)
    t = 0.8
    full = jacobian_det(field, x, t, CFG)
    for k in (2, 4, 8):
        prod = 1.0
        state = np.array([x])
        for _ in range(k):
            prod *= jacobian_det(field, tuple(state[0]), t / k, CFG)
            state, _ = flow_many(field, state, t / k, CFG)
        assert abs(full - prod) <= 10 * CFG.tolerance * k


def test_jacobian_det_reciprocal_along_flow():
    field = rotation_field()
    x = (0.5, 0.2)
    t = 0.9
    d1 = jacobian_det(field, x, t, CFG)
    gamma, _ = flow_many(field, np.array([x]), t, CFG)
    d2 = jacobian_det(field, tuple(gamma[0]), -t, CFG)
    assert d1 * d2 == pytest.approx(1.0, abs=10 * CFG.tolerance)


def test_determinant_positive_when_near_identity():
    # substep factors stay within operator-norm 1 of the identity by the
    # step cap, so every reported determinant is positive
    field = scaling_field()
    for t in (0.05, 0.3, 1.0, -1.0):
        assert jacobian_det(field, (0.2,), t, CFG) > 0.0


def test_gronwall_translation_ratio_is_one():
    field = translation_field()
    pairs = [((-0.5,), (0.25,)), ((0.1,), (0.6,))]
    rep = check_gronwall(field, pairs, 0.8, CFG)
    assert rep.passed
    assert rep.worst_ratio == pytest.approx(1.0, abs=1e-12)
    assert rep.bound == 1.0


def test_gronwall_scaling_attains_bound():
    field = scaling_field()
    pairs = [((-0.5,), (0.25,)), ((0.1,), (0.6,)), ((-1.0,), (1.0,))]
    t = 1.0
    rep = check_gronwall(field, pairs, t, CFG)
    assert rep.passed
    assert rep.worst_ratio == pytest.approx(math.e, abs=1e-6)


def test_gronwall_zero_time():
    rep = check_gronwall(scaling_field(), [((-0.5,), (0.5,))], 0.0, CFG)
    assert rep.worst_ratio == 1.0 and rep.bound == 1.0


def test_advance_translation_is_constant():
    rep = check_advance_estimate(translation_field(), [((-0.5,), (0.3,))], 0.9, CFG)
    assert rep.worst_ratio == pytest.approx(0.0, abs=1e-12)
    assert rep.passed


def test_advance_scaling_attains_bound():
    t = 0.7
    rep = check_advance_estimate(scaling_field(), [((-0.4,), (0.8,))], t, CFG)
    assert rep.worst_ratio == pytest.approx(math.exp(t) - 1.0, abs=1e-6)
    assert rep.passed


def test_advance_rotation_quarter_turn():
    # |R_t - I| acting on any pair gives 2 sin(t/2) = sqrt(2) at t = pi/2
    field = rotation_field()
    t = math.pi / 2.0
    pairs = [((0.5, 0.0), (0.0, 0.5)), ((0.3, 0.1), (-0.2, 0.4))]
    rep = check_advance_estimate(field, pairs, t, CFG)
    assert rep.worst_ratio == pytest.approx(math.sqrt(2.0), abs=1e-6)
    assert rep.worst_ratio <= math.exp(t) - 1.0
    assert rep.passed


def test_escape_raises_in_pair_checks():
    field = translation_field(bound=1.0)
    with pytest.raises(EscapeError):
        check_gronwall(field, [((0.5,), (0.9,))], 1.0, CFG)


def test_flow_many_marks_escapes():
    field = translation_field(bound=1.0)
    pts = np.array([[0.0], [0.8]])
    gamma, escaped = flow_many(field, pts, 0.5, CFG)
    assert not escaped[0] and escaped[1]
    assert gamma[0, 0] == pytest.approx(0.5, abs=1e-10)
