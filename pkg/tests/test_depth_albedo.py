import numpy as np
import pytest

from ils.albedo import AlbedoError, estimate_albedo, shading
from ils.depth import (DepthImage, denoise_depth, depth_to_patches, load_depth, masked_median,
                       read_pgm16, save_depth, write_pgm16)


def plane_image(z=2.0, h=33, w=41):
    return DepthImage(np.full((h, w), z), fx=50.0, fy=50.0, cx=w / 2, cy=h / 2)


def test_median_removes_salt_and_ignores_holes():
    d = np.full((9, 9), 1.0)
    d[4, 4] = 5.0
    d[2, 2] = 0.0  # invalid
    img = DepthImage(d, 50, 50, 4, 4)
    out = masked_median(img, 3)
    assert out[4, 4] == 1.0
    assert out[2, 2] == 0.0
    with pytest.raises(ValueError):
        masked_median(img, 4)


def test_denoise_reduces_noise_and_keeps_edge():
    rng = np.random.default_rng(0)
    clean = np.where(np.arange(40)[None, :] < 20, 1.0, 2.0) * np.ones((30, 1))
    noisy = clean + rng.normal(0, 0.01, clean.shape)
    out = denoise_depth(DepthImage(noisy, 50, 50, 20, 15)).depth
    left, right = (slice(None), slice(2, 17)), (slice(None), slice(23, 38))
    assert np.var(out[left] - 1.0) < np.var(noisy[left] - 1.0) / 4
    assert np.abs(out[right] - 2.0).max() < 0.05  # no bleeding across the step


def test_meshing_flat_plane():
    img = plane_image()
    patches = depth_to_patches(img, cell=8)
    assert len(patches) == 4 * 5 and not patches.warning
    for p in patches:
        assert np.allclose(p.normal, [0, 0, -1], atol=1e-9)  # towards the camera
        assert np.allclose(p.vertices[:, 2], 2.0)


def test_meshing_pose_and_holes():
    d = plane_image().depth.copy()
    d[:9, :9] = 0.0
    img = DepthImage(d, 50, 50, 20.5, 16.5)
    T = np.eye(4)
    T[:3, 3] = [1, 2, 3]
    patches = depth_to_patches(img, pose=T, cell=8)
    # the hole reaches pixel (8, 8), a corner shared by four blocks
    assert len(patches) == 16
    assert np.allclose([p.vertices[:, 2] for p in patches], 5.0)


def test_meshing_empty_warns():
    img = DepthImage(np.zeros((10, 10)), 50, 50, 5, 5)
    assert depth_to_patches(img).warning


def test_pgm_and_depth_io(tmp_path):
    a = np.arange(12, dtype=np.uint16).reshape(3, 4) * 1000
    write_pgm16(tmp_path / "a.pgm", a)
    assert np.array_equal(read_pgm16(tmp_path / "a.pgm"), a)
    img = plane_image(1.234)
    save_depth(img, tmp_path / "d.pgm")
    back = load_depth(tmp_path / "d.pgm")
    assert np.allclose(back.depth, 1.234, atol=5e-4)
    assert back.fx == img.fx and back.cy == img.cy


LIGHTS = np.array([[1.0, 0, 0, 0], [0.5, 1, 0, 0], [0.5, 0, 1, 0], [0.5, 0, 0, 1], [0.8, 0.3, -0.2, 0.5]])


def test_albedo_recovers_reflectance():
    n = np.array([0.0, 0.6, 0.8])
    rng = np.random.default_rng(1)
    I = 0.42 * shading(LIGHTS, n) + rng.normal(0, 1e-4, len(LIGHTS))
    est = estimate_albedo(I, LIGHTS, n)
    assert est.rho == pytest.approx(0.42, abs=1e-3)


def test_albedo_clamps():
    n = np.array([0.0, 0.0, 1.0])
    est = estimate_albedo(3.0 * shading(LIGHTS, n), LIGHTS, n)
    assert est.raw == pytest.approx(3.0) and est.rho < 1.0


def test_albedo_needs_diverse_lighting():
    n = np.array([0.0, 0.0, 1.0])
    same = np.tile(LIGHTS[:1], (5, 1))
    with pytest.raises(AlbedoError, match="diversity"):
        estimate_albedo(np.ones(5), same, n)
    with pytest.raises(AlbedoError):
        estimate_albedo(np.ones(3), LIGHTS[:3], n)
