"""Shared synthetic fixtures: camera rigs and random Gaussian scenes."""

from __future__ import annotations

import numpy as np
import pytest

from zoomsplat.geometry import Camera, GaussianPrimitive, look_at_rotation
from zoomsplat.lod import GaussianScene, LodConfig, add_layer, mean_scale_projection


def make_camera(position, target, fx=80.0, width=64, height=64,
                near=0.05, far=100.0, cam_id="") -> Camera:
    position = np.asarray(position, dtype=np.float64)
    rot = look_at_rotation(position, target)
    return Camera(fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0,
                  width=width, height=height,
                  rotation_wc=rot, translation_wc=-rot @ position,
                  near=near, far=far, id=cam_id)


def convergent_rig(n=8, radius=5.0, fx=80.0, size=64, target=(0, 0, 0),
                   tilt=0.35) -> list[Camera]:
    """Cameras on a tilted circle, all aimed at the target."""
    cams = []
    for i in range(n):
        ang = 2.0 * np.pi * i / n
        pos = np.array([radius * np.cos(ang), radius * np.sin(ang),
                        radius * tilt * np.sin(ang + 0.7)])
        cams.append(make_camera(pos, target, fx=fx, width=size, height=size,
                                cam_id=f"cam{i:02d}"))
    return cams


def random_primitives(rng, n, cameras, extent=1.0, sh_degree=1,
                      opacity_range=(0.4, 0.95), scale_range=(0.08, 0.3),
                      psi_stamp="mean"):
    prims = []
    centers = rng.uniform(-extent, extent, size=(n, 3))
    if psi_stamp == "max":
        # stamp above every rig camera's value: the layer-0 one-sided rule
        # then pins the LoD weight to exactly 1 from all views (needed by
        # gradient checks, where the weight is treated as a constant)
        per_cam = np.stack([np.linalg.norm(centers - c.position[None, :], axis=1)
                            / c.fx for c in cameras])
        psi = per_cam.max(axis=0) * 1.05
    else:
        psi = mean_scale_projection(cameras, centers)
    b = (sh_degree + 1) ** 2
    for i in range(n):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        o = rng.uniform(*opacity_range)
        sh = np.zeros((b, 3))
        # DC chosen so base colors land in a comfortably positive range
        sh[0] = (rng.uniform(0.25, 0.85, size=3) - 0.5) / 0.28209479177387814
        if b > 1:
            sh[1:] = rng.normal(scale=0.08, size=(b - 1, 3))
        prims.append(GaussianPrimitive(
            center=centers[i],
            log_scale=np.log(rng.uniform(*scale_range, size=3)),
            rotation=q,
            opacity_logit=float(np.log(o / (1 - o))),
            sh_coeffs=sh,
            lod_layer=-1,
            psi_ref=float(psi[i]),
        ))
    return prims


def backdrop_primitive(cameras, sh_degree=1, sigma=8.0, opacity=0.9):
    """A huge soft Gaussian at the rig target that keeps every pixel's
    accumulated alpha far above the geometry term's 0.5 selection threshold
    (gradient fixtures need that mask constant under perturbation)."""
    center = np.zeros(3)
    per_cam = max(np.linalg.norm(center - c.position) / c.fx for c in cameras)
    b = (sh_degree + 1) ** 2
    sh = np.zeros((b, 3))
    sh[0] = (np.array([0.45, 0.5, 0.55]) - 0.5) / 0.28209479177387814
    return GaussianPrimitive(
        center=center, log_scale=np.full(3, np.log(sigma)),
        rotation=np.array([1.0, 0.0, 0.0, 0.0]),
        opacity_logit=float(np.log(opacity / (1 - opacity))),
        sh_coeffs=sh, lod_layer=-1, psi_ref=float(per_cam) * 1.05)


def random_scene(rng, n, cameras, extent=1.0, sh_degree=1, zoom_factor=4.0,
                 backdrop=False, **kw) -> GaussianScene:
    scene = GaussianScene(sh_degree=sh_degree,
                          lod_config=LodConfig(zoom_factor_s=zoom_factor))
    prims = random_primitives(rng, n, cameras, extent=extent,
                              sh_degree=sh_degree, **kw)
    if backdrop:
        prims.append(backdrop_primitive(cameras, sh_degree=sh_degree))
    add_layer(scene, prims)
    return scene


@pytest.fixture
def rig():
    return convergent_rig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
