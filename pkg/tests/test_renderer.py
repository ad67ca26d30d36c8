import json
import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, strategies as st

from splatmap.core import Camera, GaussianMap
from splatmap.imageio import read_depth_png, read_rgb_png, to_uint8
from splatmap.renderer import RenderConfig, render, render_at_level, render_naive, save_render_pngs
from splatmap.sh import rgb_to_dc

from conftest import camera, random_map


def single(pos, r, o, color, sem=(0.2, 0.4, 0.6)):
    return GaussianMap(np.array([pos], float), [r], [o], rgb_to_dc(np.array([color], float)),
                       rgb_to_dc(np.array([sem], float)))


def channels(out):
    return np.concatenate([out.rgb, out.depth[..., None], out.semantic], axis=2)


def test_empty_map_is_background():
    cfg = RenderConfig(background_rgb=(0.1, 0.2, 0.3), background_depth=0.0)
    out = render(GaussianMap(), camera(16, 12), cfg)
    assert np.all(out.rgb == [0.1, 0.2, 0.3]) and np.all(out.transmittance == 1.0)
    naive = render_naive(GaussianMap(), camera(16, 12), cfg)
    assert np.array_equal(channels(out), channels(naive))


def test_single_primitive_one_term():
    cam = Camera(fx=50, fy=50, cx=8, cy=8, width=17, height=17)
    m = single((0, 0, 2.0), 0.1, 0.6, (0.8, 0.5, 0.25))
    for out in (render(m, cam), render_naive(m, cam)):
        assert np.allclose(out.rgb[8, 8], [0.48, 0.3, 0.15], atol=1e-15)
        assert out.depth[8, 8] == pytest.approx(1.2, abs=1e-15)
        # neighbor pixel: alpha = o * exp(-1 / (2 r2d^2)), r2d = 50 * 0.1 / 2
        a = 0.6 * np.exp(-1 / (2 * 2.5 ** 2))
        assert out.rgb[8, 9, 0] == pytest.approx(a * 0.8, rel=1e-12)


def test_two_primitives_on_axis():
    cam = Camera(fx=50, fy=50, cx=8, cy=8, width=17, height=17)
    m = single((0, 0, 2.0), 0.1, 0.6, (0.8, 0.1, 0.1))
    m.append(np.array([[0, 0, 3.0]]), [0.1], [0.5], rgb_to_dc(np.array([[0.1, 0.9, 0.1]])), np.zeros((1, 3)))
    out = render(m, cam)
    expected = 0.6 * np.array([0.8, 0.1, 0.1]) + 0.4 * 0.5 * np.array([0.1, 0.9, 0.1])
    assert np.allclose(out.rgb[8, 8], expected, atol=1e-15)
    assert out.depth[8, 8] == pytest.approx(0.6 * 2 + 0.4 * 0.5 * 3)
    assert out.contributors(8, 8)[0][0] == 0 and out.contributors(8, 8)[1] == (1, pytest.approx(0.2))


@pytest.mark.parametrize("seed,n", [(0, 1), (1, 30), (2, 500), (3, 5000)])
def test_tiled_matches_naive(seed, n):
    rng = np.random.default_rng(seed)
    m = random_map(rng, n, sh_degree=seed % 3, radius=(0.01, 0.3))
    cam = camera(64, 64)
    a, b = render(m, cam), render_naive(m, cam)
    assert np.abs(channels(a) - channels(b)).max() <= 1e-5
    assert np.abs(a.transmittance - b.transmittance).max() <= 1e-5


@given(st.integers(0, 2**32 - 1), st.integers(1, 12), st.integers(1, 40), st.integers(1, 40))
def test_tiled_matches_naive_any_tile_size(seed, tile, w, h):
    rng = np.random.default_rng(seed)
    m = random_map(rng, 40, radius=(0.02, 0.4))
    cam = camera(w, h, f=30.0)
    cfg = RenderConfig(tile_size=tile)
    assert np.abs(channels(render(m, cam, cfg)) - channels(render_naive(m, cam, cfg))).max() <= 1e-5


def test_weights_and_transmittance_sum_to_one():
    rng = np.random.default_rng(5)
    m = random_map(rng, 300)
    out = render(m, camera(32, 32), RenderConfig(transmittance_floor=0.0))
    for r, c in [(0, 0), (5, 17), (16, 16), (31, 31)]:
        w = sum(x for _, x in out.contributors(r, c))
        assert w <= 1 + 1e-12
        assert w + out.transmittance[r, c] == pytest.approx(1.0, abs=1e-6)


def test_render_is_deterministic_and_permutation_invariant():
    rng = np.random.default_rng(9)
    m = random_map(rng, 800)
    cam = camera(48, 40)
    a, b = render(m, cam), render(m, cam)
    assert np.array_equal(channels(a), channels(b))
    perm = rng.permutation(len(m))
    p = m.copy()
    p.compact(perm)
    assert np.array_equal(channels(render(p, cam)), channels(a))


def test_bit_identical_across_thread_counts(tmp_path):
    rng = np.random.default_rng(11)
    m = random_map(rng, 1500)
    cam = camera(96, 80)
    ref = channels(render(m, cam))
    from splatmap.ply import save_map
    m32 = m.copy()
    for name in ("positions", "radii", "opacities", "rgb_features", "sem_features"):
        setattr(m32, name, getattr(m32, name).astype(np.float32).astype(np.float64))
    save_map(m32, tmp_path / "m.ply")
    ref = channels(render(m32, cam))
    script = textwrap.dedent(f"""
        import numba, numpy as np
        from splatmap import load_map, render, Camera
        numba.set_num_threads(4)
        cam = Camera(**{cam.intrinsics()!r})
        out = render(load_map({str(tmp_path / 'm.ply')!r}), cam)
        np.save({str(tmp_path / 'out.npy')!r}, np.concatenate([out.rgb, out.depth[..., None], out.semantic], axis=2))
    """)
    env = dict(os.environ, NUMBA_NUM_THREADS="4")
    subprocess.run([sys.executable, "-c", script], check=True, env=env)
    assert np.array_equal(np.load(tmp_path / "out.npy"), ref)


def test_render_at_level():
    rng = np.random.default_rng(2)
    m = random_map(rng, 50)
    cam = Camera(fx=500, fy=500, cx=319.5, cy=239.5, width=640, height=480)
    assert np.array_equal(channels(render_at_level(m, cam, 0)), channels(render(m, cam)))
    out = render_at_level(m, cam, 1)
    assert out.shape == (240, 320)
    assert render_at_level(m, cam, 2).camera.cx == 79.5
    with pytest.raises(IndexError):
        render_at_level(m, cam, 3)


def test_near_clip_and_background_fill():
    m = single((0, 0, 0.005), 0.1, 0.9, (1, 1, 1))
    out = render(m, camera(8, 8), RenderConfig(background_rgb=(0, 1, 0)))
    assert np.all(out.rgb == [0, 1, 0])


def test_save_render_pngs(tmp_path):
    rng = np.random.default_rng(4)
    out = render(random_map(rng, 60), camera(20, 16))
    paths = save_render_pngs(out, tmp_path, ("rgb", "depth", "semantic"))
    assert [p.name for p in paths] == ["rgb.png", "depth.png", "semantic.png"]
    assert np.array_equal(read_rgb_png(tmp_path / "rgb.png"), to_uint8(out.rgb) / 255.0)
    depth, _ = read_depth_png(tmp_path / "depth.png")
    assert np.abs(depth - out.depth).max() <= 0.5 / 5000 + 1e-12
    with pytest.raises(ValueError):
        save_render_pngs(out, tmp_path, ("normals",))
