import numpy as np
import pytest

from odf.domain import CountingBackend, OdfBackend, OdfSamples, Ray, make_rng
from odf.errors import ConfigError
from odf.inference import InferenceConfig, batch_recursive_inference, recursive_inference, single_inference
from odf.shapes import EmptyODF, SphereODF
from tests.conftest import random_rays


class OvershootingPlane(OdfBackend):
    """Plane z = 0 whose downward answers are 20% too long."""

    def batch_query(self, origins, dirs):
        z, dz = origins[:, 2], dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -z / dz
        hit = (dz != 0) & (t >= 0)
        t = np.where(dz < 0, 1.2 * t, t)
        return OdfSamples(np.where(hit, t, 0.5), hit.astype(float))


class ShortMissUpward(OdfBackend):
    """Plane z = 0 seen only from above; other directions miss with depth 0.1."""

    def batch_query(self, origins, dirs):
        z, dz = origins[:, 2], dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -z / dz
        hit = (dz < 0) & (t >= 0)
        return OdfSamples(np.where(hit, t, 0.1), hit.astype(float))


def test_config_validation():
    with pytest.raises(ConfigError):
        InferenceConfig(n=0)
    with pytest.raises(ConfigError):
        InferenceConfig(tau=0.0)
    assert InferenceConfig().with_n(5).n == 5


def test_single_inference_clamps():
    backend = SphereODF()
    depth, hit = single_inference(backend, Ray([0, 0, 0], [1, 0, 0]))
    assert (depth, hit) == (0.5, True)
    depth, hit = single_inference(backend, Ray([0.8, 0, 0], [1, 0, 0]))
    assert depth == pytest.approx(0.2) and hit


def test_reaches_surface_when_within_budget(rng):
    backend = SphereODF()
    origins, dirs = random_rays(rng, 5000)
    gt = backend.batch_query(origins, dirs)
    out = batch_recursive_inference(backend, origins, dirs, InferenceConfig(n=3))

    reachable = gt.hit & (gt.depth <= 1.5 - 1e-9)
    assert reachable.sum() > 2000
    assert out.mask[reachable].all()
    expected = origins[reachable] + gt.depth[reachable, None] * dirs[reachable]
    np.testing.assert_allclose(out.points[reachable], expected, atol=1e-9)
    np.testing.assert_allclose(out.depth[reachable], gt.depth[reachable], atol=1e-9)


def test_mask_is_sound(rng):
    backend = SphereODF()
    origins, dirs = random_rays(rng, 5000)
    gt = backend.batch_query(origins, dirs)
    out = batch_recursive_inference(backend, origins, dirs, InferenceConfig(n=3))
    assert not out.mask[~gt.hit].any()
    r = np.linalg.norm(out.points[out.mask], axis=1)
    assert np.abs(r - 1.0).max() < 0.01
    reachable = out.mask & (gt.depth <= 1.5)
    assert np.abs(np.linalg.norm(out.points[reachable], axis=1) - 1.0).max() < 1e-6


def test_exact_mesh_backend_lands_on_first_hit(exact_sphere, rng):
    origins, dirs = random_rays(rng, 2000)
    gt = exact_sphere.batch_query(origins, dirs)
    out = batch_recursive_inference(exact_sphere, origins, dirs, InferenceConfig(n=5))
    np.testing.assert_array_equal(out.mask, gt.hit)
    np.testing.assert_allclose(out.points[gt.hit], origins[gt.hit] + gt.depth[gt.hit, None] * dirs[gt.hit],
                               atol=1e-9)


@pytest.mark.parametrize("n", [1, 3, 5])
def test_query_budget(n, rng):
    backend = CountingBackend(SphereODF())
    origins, dirs = random_rays(rng, 300)
    batch_recursive_inference(backend, origins, dirs, InferenceConfig(n=n))
    assert backend.queries == (2 * n + 1) * 300
    assert backend.calls == n + 1


def test_chunking_and_workers_do_not_change_results(rng):
    backend = SphereODF()
    origins, dirs = random_rays(rng, 1000)
    serial = batch_recursive_inference(backend, origins, dirs, InferenceConfig(n=3))
    threaded = batch_recursive_inference(backend, origins, dirs, InferenceConfig(n=3, workers=4, chunk=97))
    np.testing.assert_array_equal(serial.points, threaded.points)
    np.testing.assert_array_equal(serial.depth, threaded.depth)
    np.testing.assert_array_equal(serial.mask, threaded.mask)


def test_backward_step_corrects_overshoot():
    result = recursive_inference(OvershootingPlane(), Ray([0, 0, 0.2], [0, 0, -1]), InferenceConfig(n=2))
    assert result.mask
    assert result.total_depth == pytest.approx(0.2)
    np.testing.assert_allclose(result.surface_point, [0, 0, 0], atol=1e-12)


def test_backward_miss_is_never_taken():
    # upward answers are misses with a short sentinel depth
    result = recursive_inference(ShortMissUpward(), Ray([0, 0, 0.9], [0, 0, -1]), InferenceConfig(n=2))
    assert result.mask
    assert result.total_depth == pytest.approx(0.9)
    np.testing.assert_allclose(result.surface_point, [0, 0, 0], atol=1e-12)


def test_single_step_is_not_enough_for_far_surfaces():
    result = recursive_inference(SphereODF(), Ray([0, 0, 0], [0, 1, 0]), InferenceConfig(n=1))
    assert not result.mask
    assert result.total_depth == 0.5


def test_empty_scene_and_empty_batch():
    out = batch_recursive_inference(EmptyODF(), np.zeros((10, 3)), np.tile([1.0, 0, 0], (10, 1)))
    assert not out.mask.any()
    empty = batch_recursive_inference(SphereODF(), np.zeros((0, 3)), np.zeros((0, 3)))
    assert len(empty) == 0


def test_deterministic():
    origins, dirs = random_rays(make_rng(9), 200)
    a = batch_recursive_inference(SphereODF(), origins, dirs)
    b = batch_recursive_inference(SphereODF(), origins, dirs)
    np.testing.assert_array_equal(a.points, b.points)
