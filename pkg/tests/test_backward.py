import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splatmap.backward import PARAM_CLASSES, backward, check_gradients, finite_difference_check, random_scene
from splatmap.core import Camera, GaussianMap
from splatmap.renderer import RenderConfig, render
from splatmap.sh import SH_C0, rgb_to_dc


def one_pixel_scene(opacity=0.6):
    cam = Camera(fx=10, fy=10, cx=0, cy=0, width=1, height=1)
    m = GaussianMap(np.array([[0.0, 0.0, 2.0]]), [0.5], [opacity], rgb_to_dc(np.array([[0.7, 0.4, 0.2]])),
                    rgb_to_dc(np.array([[0.3, 0.3, 0.3]])))
    return m, cam


def test_zero_pixel_gradients_give_zero():
    gmap, cam, _ = random_scene(3)
    out = render(gmap, cam)
    g = backward(out, gmap, cam)
    assert all(np.all(v == 0) for v in g.as_dict().values())


def test_one_term_chain_rule_on_red_dc():
    m, cam = one_pixel_scene(0.6)
    out = render(m, cam)
    g = backward(out, m, cam, grad_rgb=np.array([[[1.0, 0.0, 0.0]]]))
    weight = out.contributors(0, 0)[0][1]
    assert weight == pytest.approx(0.6)
    assert g.rgb_feature[0, 0] == pytest.approx(weight * SH_C0, rel=1e-14)
    assert np.all(g.rgb_feature[0, 1:] == 0)
    # dR/do = c for an unoccluded primitive on a black background
    assert g.opacity[0] == pytest.approx(0.7, rel=1e-12)


def test_shape_mismatch_rejected():
    gmap, cam, pix = random_scene(1)
    out = render(gmap, cam)
    with pytest.raises(ValueError):
        backward(out, gmap, cam, grad_rgb=np.zeros((3, 3, 3)))


@pytest.mark.parametrize("seed", [42, 7])
def test_finite_difference_agreement(seed):
    report = check_gradients(seed=seed)
    assert report.passed, report.format()
    assert set(report.max_rel_error) == set(PARAM_CLASSES)
    assert all(v < 1e-3 for v in report.max_rel_error.values())


@pytest.mark.parametrize("degree", [1, 2])
def test_finite_difference_with_view_dependent_color(degree):
    scene = random_scene(5, size=24, n_primitives=8, sh_degree=degree)
    report = check_gradients(seed=5, size=24, scene=scene)
    assert report.passed, report.format()


def test_clamp_boundary_is_excluded():
    m, cam = one_pixel_scene(opacity=0.999)
    pix = dict(grad_rgb=np.ones((1, 1, 3)), grad_depth=np.ones((1, 1)), grad_semantic=np.ones((1, 1, 3)))
    report = check_gradients(seed=0, size=1, scene=(m, cam, pix))
    assert ("opacity", 0, 0) in report.excluded
    assert "excluded boundary case: opacity[0][0]" in report.format()


def test_clamped_alpha_has_zero_opacity_gradient():
    m, cam = one_pixel_scene(opacity=1.0)
    out = render(m, cam)
    g = backward(out, m, cam, grad_rgb=np.ones((1, 1, 3)))
    assert g.opacity[0] == 0.0


def test_empty_scene_vacuous_pass():
    cam = Camera(fx=10, fy=10, cx=2, cy=2, width=4, height=4)
    pix = dict(grad_rgb=np.ones((4, 4, 3)), grad_depth=np.ones((4, 4)), grad_semantic=np.ones((4, 4, 3)))
    report = check_gradients(seed=0, size=4, scene=(GaussianMap(), cam, pix))
    assert report.passed and all(v == 0 for v in report.n_checked.values())


def test_report_text_reproducible():
    assert check_gradients(seed=3, size=16, n_primitives=5).format() == \
        check_gradients(seed=3, size=16, n_primitives=5).format()


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1))
def test_gradients_linear_in_pixel_gradients(seed):
    gmap, cam, pix = random_scene(seed % 1000, size=16, n_primitives=10)
    out = render(gmap, cam)
    g1 = backward(out, gmap, cam, **pix).as_dict()
    g2 = backward(out, gmap, cam, **{k: 2.5 * v for k, v in pix.items()}).as_dict()
    for k in PARAM_CLASSES:
        assert np.allclose(g2[k], 2.5 * g1[k], rtol=1e-10, atol=1e-14)
