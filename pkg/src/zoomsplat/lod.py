"""Expandable continuous level-of-detail hierarchy.

A scene is a flat store of Gaussian primitives tagged with the LoD layer
that created them. Each layer corresponds to one zoom step; at most one
layer is active (trainable) at a time and earlier layers stay frozen. At
render time every primitive's opacity is modulated by a weight derived from
the ratio of its current scale projection coefficient to the one stamped at
creation, which fades detail in and out smoothly across scales.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateGeometryError,
    InvalidParameterError,
    LayerOwnershipError,
)
from .geometry import Camera, GaussianPrimitive, sh_coeff_count


@dataclass
class LodConfig:
    zoom_factor_s: float = 4.0
    weight_floor: float = 0.0  # minimum retained weight for layer 0

    def __post_init__(self):
        if self.zoom_factor_s <= 1.0:
            raise InvalidParameterError("zoom_factor_s must be > 1")
        if self.weight_floor < 0.0:
            raise InvalidParameterError("weight_floor must be >= 0")


@dataclass
class LodLayer:
    """One band of primitives created at a single zoom step."""

    index: int
    zoom_level: int
    frozen: bool = False

    def primitive_ids(self, scene: "GaussianScene") -> np.ndarray:
        return np.flatnonzero(scene.lod_layer == self.index)


class GaussianScene:
    """Structure-of-arrays store for Gaussian primitives plus layer bookkeeping.

    Parameter arrays are float64 and mutated only by the optimizer's single
    control thread; renders treat the scene as immutable for the duration of
    a call.
    """

    def __init__(self, sh_degree: int = 1, lod_config: LodConfig | None = None):
        if sh_degree not in (0, 1, 2, 3):
            raise InvalidParameterError("sh_degree must be 0..3")
        b = sh_coeff_count(sh_degree)
        self.sh_degree = sh_degree
        self.lod_config = lod_config or LodConfig()
        self.centers = np.zeros((0, 3))
        self.log_scales = np.zeros((0, 3))
        self.rotations = np.zeros((0, 4))
        self.opacity_logits = np.zeros(0)
        self.sh_coeffs = np.zeros((0, b, 3))
        self.lod_layer = np.zeros(0, dtype=np.int32)
        self.psi_ref = np.zeros(0)
        self.layers: list[LodLayer] = []

    # -- basic accessors ----------------------------------------------------

    def __len__(self) -> int:
        return self.centers.shape[0]

    @property
    def active_layer(self) -> LodLayer | None:
        for layer in self.layers:
            if not layer.frozen:
                return layer
        return None

    def active_mask(self) -> np.ndarray:
        layer = self.active_layer
        if layer is None:
            return np.zeros(len(self), dtype=bool)
        return self.lod_layer == layer.index

    def primitive(self, i: int) -> GaussianPrimitive:
        q = self.rotations[i]
        return GaussianPrimitive(
            center=self.centers[i].copy(),
            log_scale=self.log_scales[i].copy(),
            rotation=q / np.linalg.norm(q),  # deserialized rows carry f32 noise
            opacity_logit=float(self.opacity_logits[i]),
            sh_coeffs=self.sh_coeffs[i].copy(),
            lod_layer=int(self.lod_layer[i]),
            psi_ref=float(self.psi_ref[i]),
        )

    def opacities(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.opacity_logits))

    def copy(self) -> "GaussianScene":
        out = GaussianScene(self.sh_degree, LodConfig(self.lod_config.zoom_factor_s,
                                                      self.lod_config.weight_floor))
        out.centers = self.centers.copy()
        out.log_scales = self.log_scales.copy()
        out.rotations = self.rotations.copy()
        out.opacity_logits = self.opacity_logits.copy()
        out.sh_coeffs = self.sh_coeffs.copy()
        out.lod_layer = self.lod_layer.copy()
        out.psi_ref = self.psi_ref.copy()
        out.layers = [LodLayer(l.index, l.zoom_level, l.frozen) for l in self.layers]
        return out

    def layer_parameter_bytes(self, layer_index: int) -> bytes:
        """Concatenated parameter bytes of one layer, for freeze-contract checks."""
        ids = np.flatnonzero(self.lod_layer == layer_index)
        parts = [self.centers[ids], self.log_scales[ids], self.rotations[ids],
                 self.opacity_logits[ids], self.sh_coeffs[ids], self.psi_ref[ids]]
        return b"".join(np.ascontiguousarray(p).tobytes() for p in parts)

    def validate(self, quat_tol: float = 1e-6):
        # the serialization-grade tolerance: scenes passing through float32
        # storage carry ~1e-8 quaternion norm error; in-memory mutations
        # renormalize to 1e-9
        n = len(self)
        for name in ("centers", "log_scales", "rotations", "opacity_logits",
                     "sh_coeffs", "psi_ref"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                bad = int(np.flatnonzero(~np.isfinite(arr).reshape(n, -1).all(axis=1))[0])
                raise InvalidParameterError(f"non-finite {name} at primitive {bad}")
        norms = np.linalg.norm(self.rotations, axis=1)
        if n and np.any(np.abs(norms - 1.0) > quat_tol):
            bad = int(np.flatnonzero(np.abs(norms - 1.0) > quat_tol)[0])
            raise InvalidParameterError(f"non-unit quaternion at primitive {bad}")
        if n and np.any(self.psi_ref <= 0):
            bad = int(np.flatnonzero(self.psi_ref <= 0)[0])
            raise InvalidParameterError(f"non-positive psi_ref at primitive {bad}")
        if n and (np.any(self.lod_layer < 0) or np.any(self.lod_layer >= len(self.layers))):
            bad = int(np.flatnonzero((self.lod_layer < 0) |
                                     (self.lod_layer >= len(self.layers)))[0])
            raise InvalidParameterError(f"layer tag out of range at primitive {bad}")

    # -- lifecycle ----------------------------------------------------------

    def freeze_active(self):
        layer = self.active_layer
        if layer is not None:
            layer.frozen = True


def scale_projection_coefficient(camera: Camera, center: np.ndarray) -> float:
    """Distance from the camera center to a point, over focal length in px."""
    center = np.asarray(center, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(center)):
        raise InvalidParameterError("center must be finite")
    d = float(np.linalg.norm(camera.position - center))
    if d < 1e-12:
        raise DegenerateGeometryError("point coincides with the camera center")
    return d / camera.fx


def mean_scale_projection(cameras: list[Camera], centers: np.ndarray) -> np.ndarray:
    """Per-point mean of the scale projection coefficient over a camera rig."""
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    psi = np.zeros(centers.shape[0])
    for cam in cameras:
        d = np.linalg.norm(centers - cam.position[None, :], axis=1)
        psi += d / cam.fx
    return psi / len(cameras)


def lod_weight(psi_now: float, psi_ref: float, s: float):
    """Logarithmic attenuation: full at the creation scale, zero one zoom
    level (factor s) away on either side."""
    psi_now = np.asarray(psi_now, dtype=np.float64)
    psi_ref = np.asarray(psi_ref, dtype=np.float64)
    if np.any(psi_now <= 0) or np.any(psi_ref <= 0) or s <= 1:
        raise InvalidParameterError("lod_weight needs positive psi and s > 1")
    w = np.maximum(0.0, 1.0 - np.abs(np.log(psi_now / psi_ref) / np.log(s)))
    return float(w) if w.ndim == 0 else w


def layer_weights(scene: GaussianScene, camera: Camera) -> np.ndarray:
    """Per-primitive LoD weight under one camera: (N,).

    Layer 0 is one-sided: its weight stays 1 whenever the current scale
    projection coefficient is at or below the reference (ratio <= 1), so the
    coarsest layer never fades out with nothing beneath it. The weight_floor
    from the config is a lower bound for layer 0 on the other side.
    """
    n = len(scene)
    if n == 0:
        return np.zeros(0)
    d = np.linalg.norm(scene.centers - camera.position[None, :], axis=1)
    psi_now = d / camera.fx
    s = scene.lod_config.zoom_factor_s
    ratio = psi_now / scene.psi_ref
    w = np.maximum(0.0, 1.0 - np.abs(np.log(ratio) / np.log(s)))
    base = scene.lod_layer == 0
    w = np.where(base & (ratio <= 1.0), 1.0, w)
    w = np.where(base, np.maximum(w, scene.lod_config.weight_floor), w)
    return w


def effective_opacity(primitive: GaussianPrimitive, camera: Camera,
                      config: LodConfig) -> float:
    """Stored opacity times the LoD weight for the rendering camera."""
    if primitive.lod_layer < 0:
        raise LayerOwnershipError("primitive does not belong to a layer")
    psi_now = scale_projection_coefficient(camera, primitive.center)
    ratio = psi_now / primitive.psi_ref
    if primitive.lod_layer == 0 and ratio <= 1.0:
        w = 1.0
    else:
        w = lod_weight(psi_now, primitive.psi_ref, config.zoom_factor_s)
        if primitive.lod_layer == 0:
            w = max(w, config.weight_floor)
    return primitive.opacity * w


def add_layer(scene: GaussianScene, seed_primitives: list[GaussianPrimitive],
              zoom_level: int | None = None) -> LodLayer:
    """Append a new active layer populated with the given seeds.

    The current active layer (if any) must have been frozen first. Seeds must
    be unowned (lod_layer == -1) and carry a stamped psi_ref.
    """
    if scene.active_layer is not None:
        raise LayerOwnershipError(
            "freeze the active layer before adding a new one")
    for i, p in enumerate(seed_primitives):
        if p.lod_layer >= 0:
            raise LayerOwnershipError(
                f"seed {i} already belongs to layer {p.lod_layer}")
        if p.psi_ref <= 0:
            raise InvalidParameterError(f"seed {i} has no stamped psi_ref")
        if p.sh_coeffs.shape[0] != sh_coeff_count(scene.sh_degree):
            raise InvalidParameterError(
                f"seed {i} SH degree does not match the scene")

    index = len(scene.layers)
    layer = LodLayer(index=index,
                     zoom_level=index if zoom_level is None else zoom_level,
                     frozen=False)
    scene.layers.append(layer)
    if seed_primitives:
        scene.centers = np.vstack([scene.centers,
                                   [p.center for p in seed_primitives]])
        scene.log_scales = np.vstack([scene.log_scales,
                                      [p.log_scale for p in seed_primitives]])
        scene.rotations = np.vstack([scene.rotations,
                                     [p.rotation for p in seed_primitives]])
        scene.opacity_logits = np.concatenate(
            [scene.opacity_logits, [p.opacity_logit for p in seed_primitives]])
        scene.sh_coeffs = np.concatenate(
            [scene.sh_coeffs, np.stack([p.sh_coeffs for p in seed_primitives])])
        scene.lod_layer = np.concatenate(
            [scene.lod_layer, np.full(len(seed_primitives), index, dtype=np.int32)])
        scene.psi_ref = np.concatenate(
            [scene.psi_ref, [p.psi_ref for p in seed_primitives]])
    return layer
