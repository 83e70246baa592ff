"""Losses and the parameter-update loop.

Dual-scale RGB supervision (full-resolution fidelity plus fidelity of the
bicubically decimated render against the coarse input), a depth-distortion
geometry regularizer, and Adam-style updates restricted to the active LoD
layer. The decimation kernel is the shared one from :mod:`zoomsplat.kernels`,
so training degradation and the built-in upsampler can never diverge.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    InvalidParameterError,
    LayerOwnershipError,
    OptimizationDivergedError,
)
from .geometry import Camera, GaussianPrimitive, ImageBuffer, project_all
from .lod import GaussianScene, mean_scale_projection
from .metrics import psnr, ssim_with_gradient
from .renderer import (
    BlendRecords,
    ParamGradients,
    RenderOptions,
    render,
    render_backward,
)

logger = logging.getLogger(__name__)


@dataclass
class LossWeights:
    lambda_hr: float = 0.6
    lambda_lr: float = 0.4
    lambda_geo: float = 0.05
    lambda_dssim: float = 0.2

    def __post_init__(self):
        for name in ("lambda_hr", "lambda_lr", "lambda_geo", "lambda_dssim"):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"{name} must be >= 0")


@dataclass
class LearningRates:
    center: float = 1.6e-4       # scaled by scene extent
    log_scale: float = 5e-3
    rotation: float = 1e-3
    opacity_logit: float = 5e-2
    sh: float = 2.5e-3
    center_decay: float = 0.01   # exponential center-lr factor over the run


@dataclass
class Schedule:
    iterations: int
    rates: LearningRates = field(default_factory=LearningRates)
    rng_seed: int = 0
    render_options: RenderOptions = field(default_factory=RenderOptions)
    eval_every: int = 0          # 0: PSNR only at the end


# ---------------------------------------------------------------------------
# losses


def _as_image(x) -> np.ndarray:
    return x.data if isinstance(x, ImageBuffer) else np.asarray(x, dtype=np.float64)


def rgb_loss(rendered, target, lambda_dssim: float = 0.2):
    """(1 - l) * mean-L1 + l * (1 - SSIM) / 2, with its gradient image."""
    r = _as_image(rendered)
    t = _as_image(target)
    if r.shape != t.shape:
        raise InvalidParameterError(f"image shapes differ: {r.shape} vs {t.shape}")
    diff = r - t
    l1 = float(np.abs(diff).mean())
    grad = np.sign(diff) / diff.size
    if lambda_dssim > 0.0:
        s, s_grad = ssim_with_gradient(r, t)
        loss = (1.0 - lambda_dssim) * l1 + lambda_dssim * 0.5 * (1.0 - s)
        grad = (1.0 - lambda_dssim) * grad - lambda_dssim * 0.5 * s_grad
    else:
        loss = l1
    return loss, grad


def degrade_downsample(image, factor: int) -> ImageBuffer:
    """Bicubic decimation with the shared Catmull-Rom kernel."""
    arr = _as_image(image)
    return ImageBuffer(kernels.bicubic_downsample(arr, factor))


def dual_scale_loss(render_hr, target_hr, lr_input, weights: LossWeights,
                    geo_value: float = 0.0):
    """Dual-scale RGB objective and its gradient at the full-resolution render.

    The low-resolution branch compares the decimated render against the
    coarse input and back-propagates through the decimation kernel. The
    geometry term enters the total as a precomputed scalar; its parameter
    gradients flow through the renderer, not through this image gradient.
    Returns (total, grad_image_hr, parts).
    """
    r = _as_image(render_hr)
    t = _as_image(target_hr)
    if r.shape != t.shape:
        raise InvalidParameterError(
            f"HR render {r.shape} does not match target {t.shape}")
    l_hr, g_hr = rgb_loss(r, t, weights.lambda_dssim)
    grad = weights.lambda_hr * g_hr
    l_lr = 0.0
    if lr_input is not None and weights.lambda_lr > 0.0:
        lr = _as_image(lr_input)
        if r.shape[0] % lr.shape[0] or r.shape[1] % lr.shape[1]:
            raise InvalidParameterError(
                f"HR {r.shape} not an integer multiple of LR {lr.shape}")
        s = r.shape[0] // lr.shape[0]
        if r.shape[1] // lr.shape[1] != s:
            raise InvalidParameterError("anisotropic HR/LR scale factors")
        down = kernels.bicubic_downsample(r, s)
        l_lr, g_lr = rgb_loss(down, lr, weights.lambda_dssim)
        grad = grad + weights.lambda_lr * kernels.bicubic_downsample_adjoint(g_lr, s)
    total = weights.lambda_hr * l_hr + weights.lambda_lr * l_lr \
        + weights.lambda_geo * geo_value
    return total, grad, {"hr": l_hr, "lr": l_lr, "geo": geo_value}


def geo_regularizer(records: BlendRecords):
    """Depth-distortion term from per-ray blend records.

    Per pixel: sum_{i,j} w_i w_j |d_i - d_j| with w = T * alpha, averaged over
    pixels whose accumulated alpha exceeds 0.5. Returns (value, gradients).
    """
    sel = records.alpha_image > 0.5
    n_sel = int(sel.sum())
    value = 0.0
    if n_sel:
        for i in np.flatnonzero(sel.ravel()):
            w = records.weights[i]
            d = records.depths[i]
            if len(w) > 1:
                value += float(np.sum(
                    w[:, None] * w[None, :] * np.abs(d[:, None] - d[None, :])))
        value /= n_sel
    grads, fused_value, _ = render_backward(
        records.scene, records.camera, records.options,
        np.zeros((records.height, records.width, 3)), geo_weight=1.0)
    if n_sel and abs(fused_value - value) > 1e-9 * max(1.0, abs(value)):
        raise RuntimeError("blend-record and fused geometry terms disagree")
    return value, grads


# ---------------------------------------------------------------------------
# training loop


class OptimState:
    """Adam moments for the active layer's parameter groups."""

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-15

    def __init__(self, scene: GaussianScene, active_ids: np.ndarray):
        self.step = 0
        self.m = {}
        self.v = {}
        for name in ("centers", "log_scales", "rotations", "opacity_logits",
                     "sh_coeffs"):
            shape = getattr(scene, name)[active_ids].shape
            self.m[name] = np.zeros(shape)
            self.v[name] = np.zeros(shape)

    def update(self, name: str, grad: np.ndarray, lr: float) -> np.ndarray:
        m = self.m[name] = self.BETA1 * self.m[name] + (1 - self.BETA1) * grad
        v = self.v[name] = self.BETA2 * self.v[name] + (1 - self.BETA2) * grad**2
        m_hat = m / (1 - self.BETA1 ** self.step)
        v_hat = v / (1 - self.BETA2 ** self.step)
        return -lr * m_hat / (np.sqrt(v_hat) + self.EPS)


def scene_extent(cameras: list[Camera]) -> float:
    """Radius of the bounding sphere of the camera centers (min 1e-6)."""
    pos = np.stack([c.position for c in cameras])
    centroid = pos.mean(axis=0)
    return max(float(np.linalg.norm(pos - centroid, axis=1).max()), 1e-6)


@dataclass
class TrainingReport:
    records: list = field(default_factory=list)
    final_psnr: float = 0.0

    def to_jsonl(self) -> str:
        lines = [json.dumps(r) for r in self.records]
        lines.append(json.dumps({"final_psnr": self.final_psnr}))
        return "\n".join(lines) + "\n"


def training_loss(scene: GaussianScene, camera: Camera, target, lr_input,
                  weights: LossWeights, options: RenderOptions) -> float:
    """Forward-only render -> dual-scale-loss value (the quantity the
    finite-difference oracle probes)."""
    if weights.lambda_geo != 0.0:
        out, geo_value = render(scene, camera, options, want_geo=True)
    else:
        out = render(scene, camera, options)
        geo_value = 0.0
    total, _, _ = dual_scale_loss(out.color, target, lr_input, weights,
                                  geo_value=geo_value)
    return total


def training_loss_and_grads(scene: GaussianScene, camera: Camera, target,
                            lr_input, weights: LossWeights,
                            options: RenderOptions):
    """Full render -> dual-scale-loss composition: scalar, parameter
    gradients, and branch values. This is the objective the update loop and
    the gradient-verification suite both differentiate."""
    geo_w = weights.lambda_geo
    out = render(scene, camera, options)
    # gradient image from the RGB branches, then one fused backward pass
    total_rgb, grad_img, parts = dual_scale_loss(out.color, target, lr_input, weights)
    grads, geo_value, _ = render_backward(scene, camera, options, grad_img,
                                          geo_weight=geo_w, forward_output=out)
    total = total_rgb + weights.lambda_geo * geo_value
    parts["geo"] = geo_value
    return total, grads, parts, out


def optimize_layer(scene: GaussianScene, views: list, weights: LossWeights,
                   schedule: Schedule) -> TrainingReport:
    """Adam updates applied only to the active layer.

    ``views`` is a list of (target ImageBuffer, lr_input ImageBuffer | None,
    Camera) tuples. Quaternions are renormalized after every step. Raises
    OptimizationDivergedError with a diagnostic dump if the loss goes
    non-finite.
    """
    active_layer = scene.active_layer
    if active_layer is None:
        raise LayerOwnershipError("optimize_layer needs exactly one active layer")
    active_ids = np.flatnonzero(scene.lod_layer == active_layer.index)
    report = TrainingReport()
    if schedule.iterations == 0 or len(active_ids) == 0:
        report.final_psnr = _held_in_psnr(scene, views, schedule.render_options)
        return report

    state = OptimState(scene, active_ids)
    extent = scene_extent([v[2] for v in views])
    rng = np.random.default_rng(schedule.rng_seed)
    rates = schedule.rates

    for it in range(schedule.iterations):
        target, lr_input, camera = views[int(rng.integers(len(views)))]
        try:
            total, grads, parts, _ = training_loss_and_grads(
                scene, camera, target, lr_input, weights,
                schedule.render_options)
        except InvalidParameterError as exc:
            # non-finite parameters surface inside the renderer first
            raise OptimizationDivergedError(
                f"iteration failed: {exc}", it,
                {"iteration": it, "camera": camera.id, "error": str(exc),
                 "parts": {}}) from exc
        if not np.isfinite(total):
            raise OptimizationDivergedError(
                "loss became non-finite", it,
                {"iteration": it, "parts": parts,
                 "camera": camera.id, "total": total})

        frac = it / max(schedule.iterations - 1, 1)
        lr_center = rates.center * extent * rates.center_decay ** frac
        state.step = it + 1
        for name, lr in (("centers", lr_center),
                         ("log_scales", rates.log_scale),
                         ("rotations", rates.rotation),
                         ("opacity_logits", rates.opacity_logit),
                         ("sh_coeffs", rates.sh)):
            grad = getattr(grads, name)[active_ids]
            arr = getattr(scene, name)
            arr[active_ids] += state.update(name, grad, lr)
        qs = scene.rotations[active_ids]
        scene.rotations[active_ids] = qs / np.linalg.norm(qs, axis=1, keepdims=True)

        rec = {"iteration": it, "total": float(total),
               "hr": float(parts["hr"]), "lr": float(parts["lr"]),
               "geo": float(parts["geo"])}
        if schedule.eval_every and (it + 1) % schedule.eval_every == 0:
            rec["psnr"] = _held_in_psnr(scene, views, schedule.render_options)
        report.records.append(rec)

    report.final_psnr = _held_in_psnr(scene, views, schedule.render_options)
    return report


def _held_in_psnr(scene: GaussianScene, views: list,
                  options: RenderOptions) -> float:
    vals = []
    for target, _, camera in views:
        out = render(scene, camera, options)
        vals.append(psnr(out.color, target))
    return float(np.mean(vals)) if vals else 0.0


# ---------------------------------------------------------------------------
# capacity management


def seed_new_layer(scene: GaussianScene, zoom_cameras: list[Camera], roi,
                   rng: np.random.Generator | None = None,
                   fallback_count: int = 10000) -> list[GaussianPrimitive]:
    """Seeds for the next zoom level.

    Clones every newest-frozen-layer primitive whose center lies inside the
    ROI sphere and whose (pre-floor) projected footprint exceeds 2 px in any
    zoom camera; clone scales shrink by the zoom factor and psi_ref is
    stamped from the zoom cameras. An empty selection falls back to uniform
    seeding inside the ROI with a warning.
    """
    if not scene.layers:
        raise LayerOwnershipError("seed_new_layer needs an existing layer")
    prev = scene.layers[-1]
    if not prev.frozen:
        raise LayerOwnershipError("freeze the previous layer before seeding")
    rng = rng or np.random.default_rng(0)
    s = scene.lod_config.zoom_factor_s

    ids = np.flatnonzero(scene.lod_layer == prev.index)
    centers = scene.centers[ids]
    in_roi = np.linalg.norm(centers - np.asarray(roi.center)[None, :], axis=1) \
        <= roi.radius
    big = np.zeros(len(ids), dtype=bool)
    if np.any(in_roi):
        from .geometry import covariances_from_params
        cov3d = covariances_from_params(scene.log_scales[ids], scene.rotations[ids])
        for cam in zoom_cameras:
            proj = project_all(centers, cov3d, cam)
            raw = proj["cov2d_raw"]
            a, b, c = raw[:, 0, 0], raw[:, 0, 1], raw[:, 1, 1]
            lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(
                0.25 * (a - c) ** 2 + b * b, 0.0))
            footprint = 6.0 * np.sqrt(np.maximum(lam_max, 0.0))
            big |= proj["visible"] & (footprint > 2.0)
    chosen = np.flatnonzero(in_roi & big)

    seeds = []
    if len(chosen):
        sel = ids[chosen]
        psi = mean_scale_projection(zoom_cameras, scene.centers[sel])
        for j, row in enumerate(sel):
            q = scene.rotations[row]
            seeds.append(GaussianPrimitive(
                center=scene.centers[row].copy(),
                log_scale=scene.log_scales[row] - np.log(s),
                rotation=q / np.linalg.norm(q),
                opacity_logit=float(scene.opacity_logits[row]),
                sh_coeffs=scene.sh_coeffs[row].copy(),
                lod_layer=-1,
                psi_ref=float(psi[j]),
            ))
        return seeds

    logger.warning("no primitives qualify for seeding; falling back to %d "
                   "uniform seeds in the ROI", fallback_count)
    dirs = rng.normal(size=(fallback_count, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = roi.radius * rng.uniform(size=fallback_count) ** (1.0 / 3.0)
    centers = np.asarray(roi.center)[None, :] + dirs * radii[:, None]
    psi = mean_scale_projection(zoom_cameras, centers)
    sigma = max(roi.radius * fallback_count ** (-1.0 / 3.0), 1e-6)
    b = scene.sh_coeffs.shape[1]
    for j in range(fallback_count):
        seeds.append(GaussianPrimitive(
            center=centers[j],
            log_scale=np.full(3, np.log(sigma)),
            rotation=np.array([1.0, 0.0, 0.0, 0.0]),
            opacity_logit=float(np.log(0.1 / 0.9)),
            sh_coeffs=np.zeros((b, 3)),
            lod_layer=-1,
            psi_ref=float(psi[j]),
        ))
    return seeds


def prune(scene: GaussianScene, opacity_threshold: float = 0.005) -> int:
    """Remove active-layer primitives whose opacity fell below the threshold."""
    layer = scene.active_layer
    if layer is None:
        return 0
    active = scene.lod_layer == layer.index
    drop = active & (scene.opacities() < opacity_threshold)
    n = int(drop.sum())
    if n:
        keep = ~drop
        scene.centers = scene.centers[keep]
        scene.log_scales = scene.log_scales[keep]
        scene.rotations = scene.rotations[keep]
        scene.opacity_logits = scene.opacity_logits[keep]
        scene.sh_coeffs = scene.sh_coeffs[keep]
        scene.lod_layer = scene.lod_layer[keep]
        scene.psi_ref = scene.psi_ref[keep]
    return n
