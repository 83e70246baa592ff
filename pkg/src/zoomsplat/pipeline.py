"""Progressive zoom orchestration.

One zoom step: render the current level's views and depth, warp each view's
nearest neighbors into it, ask the prompt provider to describe coarse and
zoomed context renders, super-resolve every view, freeze the active layer,
seed and add the next one, then optimize it against the super-resolved
targets with the dual-scale anchor to the pre-step renders. A failing step
rolls the state back to its serialized pre-step snapshot.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, RoiUndefinedError
from .geometry import Camera, GaussianPrimitive, look_at_rotation, quat_to_rot
from .lod import GaussianScene, add_layer, mean_scale_projection
from .optimizer import LossWeights, Schedule, optimize_layer, prune, seed_new_layer
from .renderer import RenderOptions, render
from .sr_bridge import SrRequest, request_prompt, super_resolve
from .storage import scene_from_ply_bytes, scene_to_ply_bytes
from .warp import warp_image

logger = logging.getLogger(__name__)


@dataclass
class Roi:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)


@dataclass
class PipelineConfig:
    zoom_factor_s: int = 4
    num_zoom_steps: int = 1
    weights: LossWeights = field(default_factory=LossWeights)
    base_iterations: int = 500
    step_iterations: int = 300
    neighbor_count: int = 2
    sr_provider: str = "builtin"
    sr_endpoint: str | None = None
    rng_seed: int = 0
    fallback_seed_count: int = 10000
    render_options: RenderOptions = field(default_factory=RenderOptions)

    def __post_init__(self):
        if self.zoom_factor_s < 2:
            raise InvalidParameterError("zoom_factor_s must be >= 2")
        if self.num_zoom_steps < 0:
            raise InvalidParameterError("num_zoom_steps must be >= 0")


@dataclass
class ZoomState:
    scene: GaussianScene
    base_cameras: list
    roi: Roi
    current_level: int = 0
    supervision: dict = field(default_factory=dict)  # level -> list of views


@dataclass
class ZoomStepArtifacts:
    """Everything a zoom step produced, for the CLI to persist."""

    level: int                    # the new level
    renders: list                 # pre-step views at the old level
    depths: list
    sr_images: list
    prompts: list
    cameras: list                 # HR training cameras of the new level
    report: object
    pruned: int


# ---------------------------------------------------------------------------
# region of interest


def _frustum_contains(cam: Camera, point: np.ndarray) -> bool:
    p = cam.world_to_cam(point)
    if not (cam.near < p[2] < cam.far):
        return False
    u = cam.fx * p[0] / p[2] + cam.cx
    v = cam.fy * p[1] / p[2] + cam.cy
    return 0.0 <= u <= cam.width and 0.0 <= v <= cam.height


def compute_roi(cameras: list) -> Roi:
    """Least-squares closest point to the cameras' optical axes, nudged into
    every frustum; radius is a tenth of the median camera distance."""
    if len(cameras) < 2:
        raise InvalidParameterError("compute_roi needs at least 2 cameras")
    origins = np.stack([c.position for c in cameras])
    axes = np.stack([c.optical_axis for c in cameras])

    spread = np.linalg.norm(origins - origins[0], axis=1).max()
    axis_spread = np.linalg.norm(axes - axes[0], axis=1).max()
    if spread < 1e-12 and axis_spread < 1e-12:
        # identical cameras: midpoint of [near, far] on the shared axis
        cam = cameras[0]
        center = cam.position + cam.optical_axis * 0.5 * (cam.near + cam.far)
        return Roi(center=center, radius=0.1 * 0.5 * (cam.near + cam.far))

    a_mat = np.zeros((3, 3))
    b_vec = np.zeros(3)
    for o, d in zip(origins, axes):
        proj = np.eye(3) - np.outer(d, d)
        a_mat += proj
        b_vec += proj @ o
    center, *_ = np.linalg.lstsq(a_mat, b_vec, rcond=None)

    inside = all(_frustum_contains(c, center) for c in cameras)
    if not inside:
        centroid = origins.mean(axis=0)
        if not all(_frustum_contains(c, centroid) for c in cameras):
            raise RoiUndefinedError(
                "no frustum-interior point found for the camera rig")
        lo, hi = 0.0, 1.0  # blend factor toward the centroid
        for _ in range(32):
            mid = 0.5 * (lo + hi)
            candidate = center * (1 - mid) + centroid * mid
            if all(_frustum_contains(c, candidate) for c in cameras):
                hi = mid
            else:
                lo = mid
        center = center * (1 - hi) + centroid * hi

    radius = 0.1 * float(np.median(np.linalg.norm(origins - center, axis=1)))
    return Roi(center=center, radius=radius)


def make_zoom_cameras(base_cameras: list, roi: Roi, level: int, s: float) -> list:
    """Re-aim each base camera at the ROI (rotation only) and scale the focal
    length by s^level; image size is unchanged. Cameras with the ROI behind
    them are dropped with a warning."""
    zoom = float(s) ** level
    out = []
    for cam in base_cameras:
        to_roi = roi.center - cam.position
        if to_roi @ cam.optical_axis <= 0.0:
            logger.warning("camera %s faces away from the ROI; dropped", cam.id)
            continue
        up_hint = -cam.rotation_wc[1]  # current image-up direction in world
        rot = look_at_rotation(cam.position, roi.center, up_hint=up_hint)
        out.append(Camera(
            fx=cam.fx * zoom, fy=cam.fy * zoom, cx=cam.cx, cy=cam.cy,
            width=cam.width, height=cam.height,
            rotation_wc=rot, translation_wc=-rot @ cam.position,
            near=cam.near, far=cam.far, id=cam.id))
    if not out:
        raise RoiUndefinedError("every camera faces away from the ROI")
    return out


# ---------------------------------------------------------------------------
# scene initialization


def init_scene_from_points(points: np.ndarray, colors, cameras: list,
                           sh_degree: int = 1,
                           zoom_factor_s: float = 4.0) -> GaussianScene:
    """One primitive per sparse point: isotropic scale from the mean distance
    to the 3 nearest neighbors, opacity 0.1, color from the point if given."""
    from scipy.spatial import cKDTree

    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n == 0:
        raise InvalidParameterError("no points to initialize from")
    k = min(4, n)
    dist, _ = cKDTree(points).query(points, k=k)
    if k > 1:
        nn = dist[:, 1:].mean(axis=1)
    else:
        nn = np.full(n, 0.1)
    nn = np.maximum(nn, 1e-6)
    psi = mean_scale_projection(cameras, points)
    b = (sh_degree + 1) ** 2
    from .geometry import SH_C0
    prims = []
    for i in range(n):
        sh = np.zeros((b, 3))
        if colors is not None:
            sh[0] = (np.clip(colors[i], 0.0, 1.0) - 0.5) / SH_C0
        prims.append(GaussianPrimitive(
            center=points[i], log_scale=np.full(3, np.log(nn[i])),
            rotation=np.array([1.0, 0.0, 0.0, 0.0]),
            opacity_logit=float(np.log(0.1 / 0.9)),
            sh_coeffs=sh, lod_layer=-1, psi_ref=float(psi[i])))
    from .lod import LodConfig
    scene = GaussianScene(sh_degree=sh_degree,
                          lod_config=LodConfig(zoom_factor_s=zoom_factor_s))
    add_layer(scene, prims)
    return scene


def init_scene_uniform(roi: Roi, cameras: list, count: int = 10000,
                       sh_degree: int = 1, zoom_factor_s: float = 4.0,
                       rng_seed: int = 0) -> GaussianScene:
    rng = np.random.default_rng(rng_seed)
    dirs = rng.normal(size=(count, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = roi.radius * rng.uniform(size=count) ** (1.0 / 3.0)
    points = roi.center[None, :] + dirs * radii[:, None]
    return init_scene_from_points(points, None, cameras, sh_degree,
                                  zoom_factor_s)


# ---------------------------------------------------------------------------
# the zoom loop


def _nearest_neighbors(cameras: list, i: int, count: int) -> list:
    pos = cameras[i].position
    dists = [(float(np.linalg.norm(c.position - pos)), j)
             for j, c in enumerate(cameras) if j != i]
    dists.sort()
    return [j for _, j in dists[:count]]


def _snapshot(state: ZoomState) -> dict:
    return {
        "scene": scene_to_ply_bytes(state.scene),
        "frozen": [layer.frozen for layer in state.scene.layers],
        "level": state.current_level,
        "supervision": dict(state.supervision),
        "roi": (state.roi.center.copy(), state.roi.radius),
    }


def _restore(state: ZoomState, snap: dict):
    state.scene = scene_from_ply_bytes(snap["scene"])
    for layer, frozen in zip(state.scene.layers, snap["frozen"]):
        layer.frozen = frozen
    state.current_level = snap["level"]
    state.supervision = snap["supervision"]
    state.roi = Roi(center=snap["roi"][0], radius=snap["roi"][1])


def zoom_step(state: ZoomState, config: PipelineConfig,
              provider=None) -> ZoomStepArtifacts:
    """Advance the hierarchy by one level. Atomic: on any error the state is
    rolled back to the pre-step snapshot before the exception propagates."""
    from .sr_bridge import make_provider

    provider = provider or make_provider(config.sr_provider, config.sr_endpoint)
    snap = _snapshot(state)
    try:
        return _zoom_step_inner(state, config, provider)
    except Exception:
        _restore(state, snap)
        raise


def _zoom_step_inner(state: ZoomState, config: PipelineConfig,
                     provider) -> ZoomStepArtifacts:
    k = state.current_level
    s = config.zoom_factor_s
    opts = config.render_options
    rng = np.random.default_rng(config.rng_seed + 7919 * (k + 1))

    # (1) render the current level's views and depth
    level_cams = make_zoom_cameras(state.base_cameras, state.roi, k, s)
    coarse_cams = make_zoom_cameras(state.base_cameras, state.roi, 0, s)
    outs = [render(state.scene, cam, opts) for cam in level_cams]

    # (2) warp each view's nearest neighbors into it
    neighbors = []
    for i in range(len(level_cams)):
        packed = []
        for j in _nearest_neighbors(level_cams, i, config.neighbor_count):
            res = warp_image(outs[j].color, outs[j].depth, outs[i].depth,
                             level_cams[j], level_cams[i])
            packed.append((res.warped, res.valid_mask))
        neighbors.append(packed)

    # (3) prompts from coarse + zoomed context renders
    coarse = [render(state.scene, cam, opts).color for cam in coarse_cams]
    prompts = [request_prompt(coarse[i], outs[i].color, provider)
               for i in range(len(level_cams))]

    # (4) super-resolve each view
    sr_images = []
    for i in range(len(level_cams)):
        req = SrRequest(lr_image=outs[i].color, scale=s,
                        warped_neighbors=neighbors[i],
                        context_coarse=coarse[i], context_zoom=outs[i].color,
                        prompt=prompts[i])
        sr_images.append(super_resolve(req, provider).hr_image)

    # (5) freeze, seed, add the next layer
    state.scene.freeze_active()
    next_cams = make_zoom_cameras(state.base_cameras, state.roi, k + 1, s)
    seeds = seed_new_layer(state.scene, next_cams, state.roi, rng=rng,
                           fallback_count=config.fallback_seed_count)
    add_layer(state.scene, seeds, zoom_level=k + 1)

    # (6) optimize the new layer on the SR outputs, anchored to the pre-step
    # renders through the decimation branch
    hr_cams = [cam.scaled(s) for cam in level_cams]
    views = [(sr_images[i], outs[i].color, hr_cams[i])
             for i in range(len(level_cams))]
    report = optimize_layer(state.scene, views, config.weights,
                            Schedule(iterations=config.step_iterations,
                                     rng_seed=config.rng_seed + k + 1,
                                     render_options=opts))
    removed = prune(state.scene)
    if removed:
        logger.info("pruned %d primitives after level %d", removed, k + 1)

    state.supervision[k + 1] = views
    state.current_level = k + 1
    return ZoomStepArtifacts(
        level=k + 1,
        renders=[o.color for o in outs],
        depths=[o.depth for o in outs],
        sr_images=sr_images,
        prompts=prompts,
        cameras=hr_cams,
        report=report,
        pruned=removed,
    )


def run_zoom(state: ZoomState, config: PipelineConfig, provider=None,
             on_step=None) -> list:
    """Run config.num_zoom_steps zoom steps; returns per-step artifacts."""
    artifacts = []
    for _ in range(config.num_zoom_steps):
        art = zoom_step(state, config, provider)
        artifacts.append(art)
        if on_step is not None:
            on_step(art, state)
    return artifacts


# ---------------------------------------------------------------------------
# trajectory rendering


def _rot_to_quat(r: np.ndarray) -> np.ndarray:
    t = np.trace(r)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        return np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                         (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    i = int(np.argmax(np.diag(r)))
    j, k = (i + 1) % 3, (i + 2) % 3
    s = np.sqrt(1.0 + r[i, i] - r[j, j] - r[k, k]) * 2
    q = np.empty(4)
    q[0] = (r[k, j] - r[j, k]) / s
    q[1 + i] = 0.25 * s
    q[1 + j] = (r[j, i] + r[i, j]) / s
    q[1 + k] = (r[k, i] + r[i, k]) / s
    return q


def _slerp(qa: np.ndarray, qb: np.ndarray, t: float) -> np.ndarray:
    dot = float(qa @ qb)
    if dot < 0:
        qb = -qb
        dot = -dot
    if dot > 0.9995:
        q = qa + t * (qb - qa)
        return q / np.linalg.norm(q)
    theta = np.arccos(np.clip(dot, -1, 1))
    return (np.sin((1 - t) * theta) * qa + np.sin(t * theta) * qb) / np.sin(theta)


def render_trajectory(state: ZoomState, focal_range: tuple, frame_count: int,
                      camera_path: list, options: RenderOptions | None = None):
    """Render a focal sweep: multiplier interpolated log-uniformly across
    frames, pose interpolated along the camera path. Returns the frames in
    order."""
    if frame_count < 1:
        raise InvalidParameterError("frame_count must be >= 1")
    if not camera_path:
        raise InvalidParameterError("camera_path must not be empty")
    options = options or RenderOptions()
    lo, hi = focal_range
    if lo <= 0 or hi <= 0:
        raise InvalidParameterError("focal multipliers must be positive")

    frames = []
    for f in range(frame_count):
        t = f / (frame_count - 1) if frame_count > 1 else 0.0
        mult = lo * (hi / lo) ** t
        if len(camera_path) == 1:
            cam = camera_path[0]
            frame_cam = cam.with_focal(cam.fx * mult, cam.fy * mult)
        else:
            x = t * (len(camera_path) - 1)
            seg = min(int(np.floor(x)), len(camera_path) - 2)
            u = x - seg
            ca, cb = camera_path[seg], camera_path[seg + 1]
            pose_pos = (1 - u) * ca.position + u * cb.position
            q = _slerp(_rot_to_quat(ca.rotation_wc),
                       _rot_to_quat(cb.rotation_wc), u)
            pose_rot = quat_to_rot(q)
            frame_cam = Camera(
                fx=ca.fx * mult, fy=ca.fy * mult, cx=ca.cx, cy=ca.cy,
                width=ca.width, height=ca.height,
                rotation_wc=pose_rot, translation_wc=-pose_rot @ pose_pos,
                near=ca.near, far=ca.far, id=f"frame{f:04d}")
        frames.append(render(state.scene, frame_cam, options).color)
    return frames
