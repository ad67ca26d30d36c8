import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from splatmap.core import Camera, FrameSet, GaussianMap
from splatmap.datasets import make_a1_spec, synthesize
from splatmap.sh import rgb_to_dc

settings.register_profile("splatmap", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("splatmap")


def random_map(rng, n, depth=(1.5, 4.0), spread=0.6, radius=(0.02, 0.15), sh_degree=0):
    z = rng.uniform(*depth, n)
    pos = np.stack([rng.uniform(-spread, spread, n) * z, rng.uniform(-spread, spread, n) * z, z], axis=1)
    k = 3 * (sh_degree + 1) ** 2
    rgb = rng.normal(scale=0.3, size=(n, k))
    rgb[:, :3] = rgb_to_dc(rng.uniform(0.05, 0.95, (n, 3)))
    sem = np.zeros((n, 3))
    sem[:, :3] = rgb_to_dc(rng.uniform(0.05, 0.95, (n, 3)))
    return GaussianMap(pos, rng.uniform(*radius, n), rng.uniform(0.05, 0.95, n), rgb, sem,
                       sh_degree_rgb=sh_degree)


def camera(width=64, height=64, f=None, rotation=None, translation=None):
    f = f if f is not None else 0.9 * width
    return Camera(fx=f, fy=f, cx=(width - 1) / 2, cy=(height - 1) / 2, width=width, height=height,
                  rotation=np.eye(3) if rotation is None else rotation,
                  translation=np.zeros(3) if translation is None else translation)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


@pytest.fixture(scope="session")
def small_a1():
    """A1 layout at 64x48 with its noiseless frames."""
    spec = make_a1_spec(width=64, height=48)
    frames, clean = synthesize(spec)
    return spec, clean
