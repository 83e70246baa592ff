"""Depth-based cross-view warping with occlusion-aware validity masks.

Pixels are transported between posed views by unprojecting with a depth map
and reprojecting into the other camera. Warping is formulated backward: each
destination pixel (with rendered destination depth) is looked up in the
source view, which avoids splatting holes; a sample is kept only when the
reprojected depth agrees with the source depth map within a relative
tolerance, which rejects occluded correspondences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, UndefinedMetricError
from .geometry import Camera, DepthMap, ImageBuffer

DEFAULT_OCCLUSION_TOL = 0.05


@dataclass
class WarpResult:
    warped: ImageBuffer            # source content seen from the destination
    valid_mask: ImageBuffer        # 1 channel, exactly 0 or 1
    reprojected_depth: DepthMap    # destination geometry in source-frame depth


def reproject_pixel(pixel, depth_value: float, cam_src: Camera,
                    cam_dst: Camera):
    """Map one pixel with known depth from cam_src into cam_dst.

    Returns (pixel_dst, depth_dst) or None when the point lands behind the
    destination camera.
    """
    if depth_value <= 0:
        raise InvalidParameterError("depth must be positive")
    u, v = float(pixel[0]), float(pixel[1])
    x_cam = np.array([(u - cam_src.cx) / cam_src.fx * depth_value,
                      (v - cam_src.cy) / cam_src.fy * depth_value,
                      depth_value])
    world = cam_src.rotation_wc.T @ (x_cam - cam_src.translation_wc)
    x_dst = cam_dst.rotation_wc @ world + cam_dst.translation_wc
    if x_dst[2] <= 0:
        return None
    return (np.array([cam_dst.fx * x_dst[0] / x_dst[2] + cam_dst.cx,
                      cam_dst.fy * x_dst[1] / x_dst[2] + cam_dst.cy]),
            float(x_dst[2]))


def _reproject_grid(depth: np.ndarray, cam_from: Camera, cam_to: Camera):
    """Vectorized reprojection of every pixel of ``cam_from`` with the given
    depth into ``cam_to``; returns (pix (H,W,2), z_to (H,W))."""
    h, w = depth.shape
    us = np.arange(w) + 0.5
    vs = np.arange(h) + 0.5
    uu, vv = np.meshgrid(us, vs)
    x = (uu - cam_from.cx) / cam_from.fx * depth
    y = (vv - cam_from.cy) / cam_from.fy * depth
    pts_cam = np.stack([x, y, depth], axis=-1).reshape(-1, 3)
    world = (pts_cam - cam_from.translation_wc) @ cam_from.rotation_wc
    pts_to = world @ cam_to.rotation_wc.T + cam_to.translation_wc
    z = pts_to[:, 2].reshape(h, w)
    safe_z = np.where(z > 0, z, 1.0)
    px = cam_to.fx * pts_to[:, 0].reshape(h, w) / safe_z + cam_to.cx
    py = cam_to.fy * pts_to[:, 1].reshape(h, w) / safe_z + cam_to.cy
    return np.stack([px, py], axis=-1), z


def _bilinear(data: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Sample (H,W,C) at continuous coords; texel centers at half-integers.
    Returns (values, support_min) where support_min is the minimum of the
    four support texels (used to reject samples touching empty depth)."""
    h, w = data.shape[:2]
    u = x - 0.5
    v = y - 0.5
    i0 = np.floor(v).astype(np.int64)
    j0 = np.floor(u).astype(np.int64)
    fu = u - j0
    fv = v - i0
    i0c = np.clip(i0, 0, h - 1)
    i1c = np.clip(i0 + 1, 0, h - 1)
    j0c = np.clip(j0, 0, w - 1)
    j1c = np.clip(j0 + 1, 0, w - 1)
    w00 = (1 - fu) * (1 - fv)
    w01 = fu * (1 - fv)
    w10 = (1 - fu) * fv
    w11 = fu * fv
    vals = (data[i0c, j0c] * w00[..., None] + data[i0c, j1c] * w01[..., None]
            + data[i1c, j0c] * w10[..., None] + data[i1c, j1c] * w11[..., None])
    support = np.minimum(np.minimum(data[i0c, j0c], data[i0c, j1c]),
                         np.minimum(data[i1c, j0c], data[i1c, j1c]))
    return vals, support


def warp_image(source: ImageBuffer, depth_src: DepthMap, depth_dst: DepthMap,
               cam_src: Camera, cam_dst: Camera,
               occlusion_tol: float = DEFAULT_OCCLUSION_TOL) -> WarpResult:
    """Warp the source view into the destination view (backward sampling)."""
    if (source.height, source.width) != (depth_src.height, depth_src.width):
        raise InvalidParameterError("source image and depth sizes differ")
    if (depth_src.height, depth_src.width) != (cam_src.height, cam_src.width):
        raise InvalidParameterError("source buffers do not match cam_src")
    if (depth_dst.height, depth_dst.width) != (cam_dst.height, cam_dst.width):
        raise InvalidParameterError("destination depth does not match cam_dst")

    h, w = depth_dst.height, depth_dst.width
    d_dst = depth_dst.data
    has_depth = d_dst > 0
    pix, z_src = _reproject_grid(np.where(has_depth, d_dst, 1.0),
                                 cam_dst, cam_src)
    x, y = pix[..., 0], pix[..., 1]

    in_front = z_src > 0
    inside = (x >= 0.5) & (x <= cam_src.width - 0.5) & \
             (y >= 0.5) & (y <= cam_src.height - 0.5)
    candidate = has_depth & in_front & inside

    xs = np.where(candidate, x, 1.0)
    ys = np.where(candidate, y, 1.0)
    sampled_depth, support = _bilinear(depth_src.data[:, :, None], xs, ys)
    sampled_depth = sampled_depth[..., 0]
    support = support[..., 0]
    agree = (support > 0) & \
        (np.abs(z_src - sampled_depth) <= occlusion_tol * sampled_depth)
    valid = candidate & agree

    colors, _ = _bilinear(source.data, xs, ys)
    warped = np.where(valid[..., None], colors, 0.0)
    reproj = np.where(valid, z_src, 0.0)
    return WarpResult(warped=ImageBuffer(warped),
                      valid_mask=ImageBuffer(valid.astype(np.float64)[:, :, None]),
                      reprojected_depth=DepthMap(reproj))


def warp_consistency_error(seq: list) -> float:
    """Mean masked L1 between each frame and its successor warped into it.

    ``seq`` is a list of (ImageBuffer, DepthMap, Camera); lower is more
    cross-view consistent.
    """
    if len(seq) < 2:
        raise InvalidParameterError("need at least 2 frames")
    pair_errors = []
    for (img_a, dep_a, cam_a), (img_b, dep_b, cam_b) in zip(seq[:-1], seq[1:]):
        res = warp_image(img_b, dep_b, dep_a, cam_b, cam_a)
        mask = res.valid_mask.data[:, :, 0] > 0
        if not np.any(mask):
            continue
        diff = np.abs(res.warped.data - img_a.data)[mask]
        pair_errors.append(float(diff.mean()))
    if not pair_errors:
        raise UndefinedMetricError("every warp mask is empty")
    return float(np.mean(pair_errors))
