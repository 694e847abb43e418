import pytest

from odf.domain import make_rng, uniform_ball_sample, uniform_dir_sample
from odf.geometry import ExactODF
from odf.shapes import SphereODF, half_sphere, open_quad, torus, unit_sphere


@pytest.fixture(autouse=True)
def cache_dir(tmp_path, monkeypatch):
    path = tmp_path / "cache"
    monkeypatch.setenv("ODF_CACHE_DIR", str(path))
    return path


@pytest.fixture(scope="session")
def sphere_mesh():
    return unit_sphere()


@pytest.fixture(scope="session")
def torus_mesh():
    return torus()


@pytest.fixture(scope="session")
def quad_mesh():
    return open_quad()


@pytest.fixture(scope="session")
def half_sphere_mesh():
    return half_sphere()


@pytest.fixture(scope="session")
def exact_sphere(sphere_mesh):
    return ExactODF(sphere_mesh)


@pytest.fixture
def analytic_sphere():
    return SphereODF()


@pytest.fixture
def rng():
    return make_rng(1234)


def random_rays(rng, n, radius=1.3):
    return uniform_ball_sample(rng, radius, n), uniform_dir_sample(rng, n)
