"""Domain types and closed-form per-primitive math.

Covariance construction from scale/rotation, perspective projection with a
first-order Jacobian, and real spherical-harmonics color evaluation. All
operations here are pure functions; values are immutable once constructed.

Conventions:
  - world-to-camera transform: x_cam = R @ x_world + t
  - image coordinates are continuous, pixel (row i, col j) has its center
    at (j + 0.5, i + 0.5); projection is u = fx * x/z + cx, v = fy * y/z + cy
  - quaternions are (w, x, y, z), kept unit-norm
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError

# Low-pass floor added to the diagonal of every projected 2D covariance, in
# px^2. Keeps sub-pixel primitives renderable (screen-space dilation).
COV2D_FLOOR = 0.3

# Real SH basis constants, bands 0..3.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

SH_OFFSET = 0.5  # DC offset added after basis expansion


def sh_coeff_count(degree: int) -> int:
    return (degree + 1) ** 2


def sh_degree_from_count(count: int) -> int:
    degree = int(round(np.sqrt(count))) - 1
    if sh_coeff_count(degree) != count:
        raise InvalidParameterError(f"{count} is not a valid SH coefficient count")
    return degree


@dataclass
class GaussianPrimitive:
    """One anisotropic Gaussian.

    ``lod_layer`` is -1 until the primitive is adopted by a scene layer.
    ``psi_ref`` is the scale projection coefficient stamped at creation.
    """

    center: np.ndarray          # (3,) world units
    log_scale: np.ndarray       # (3,) log of per-axis std-dev
    rotation: np.ndarray        # (4,) unit quaternion (w, x, y, z)
    opacity_logit: float
    sh_coeffs: np.ndarray       # (B, 3) real SH coefficients
    lod_layer: int = -1
    psi_ref: float = 1.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.sh_coeffs = np.asarray(self.sh_coeffs, dtype=np.float64).reshape(-1, 3)
        self.validate()

    def validate(self):
        if not np.all(np.isfinite(self.center)):
            raise InvalidParameterError("primitive center must be finite")
        if not np.all(np.isfinite(self.log_scale)):
            raise InvalidParameterError("log_scale must be finite")
        norm = float(np.linalg.norm(self.rotation))
        if not np.isfinite(norm) or abs(norm - 1.0) > 1e-9:
            raise InvalidParameterError(f"rotation quaternion norm {norm} is not 1")
        if not np.isfinite(self.opacity_logit):
            raise InvalidParameterError("opacity_logit must be finite")
        if not np.all(np.isfinite(self.sh_coeffs)):
            raise InvalidParameterError("sh_coeffs must be finite")
        sh_degree_from_count(self.sh_coeffs.shape[0])
        if self.psi_ref <= 0 or not np.isfinite(self.psi_ref):
            raise InvalidParameterError("psi_ref must be positive and finite")

    @property
    def opacity(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.opacity_logit)))


def _orthonormality_error(rotation: np.ndarray) -> float:
    return float(np.abs(rotation @ rotation.T - np.eye(3)).max())


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: intrinsics in pixels, world-to-camera rigid pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation_wc: np.ndarray     # (3,3) orthonormal
    translation_wc: np.ndarray  # (3,)
    near: float = 0.01
    far: float = 100.0
    id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "rotation_wc",
                           np.asarray(self.rotation_wc, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation_wc",
                           np.asarray(self.translation_wc, dtype=np.float64).reshape(3))
        self.rotation_wc.setflags(write=False)
        self.translation_wc.setflags(write=False)
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidParameterError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise InvalidParameterError("image size must be positive")
        if not (0 < self.near < self.far):
            raise InvalidParameterError("need 0 < near < far")
        if _orthonormality_error(self.rotation_wc) > 1e-9:
            raise InvalidParameterError("rotation_wc is not orthonormal within 1e-9")

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation_wc.T @ self.translation_wc

    @property
    def optical_axis(self) -> np.ndarray:
        """Viewing direction (+z of the camera frame) in world coordinates."""
        return self.rotation_wc[2].copy()

    def world_to_cam(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation_wc.T + self.translation_wc

    def project_points(self, points_cam: np.ndarray) -> np.ndarray:
        """Perspective-project camera-space points to continuous pixel coords."""
        p = np.asarray(points_cam, dtype=np.float64)
        z = p[..., 2]
        u = self.fx * p[..., 0] / z + self.cx
        v = self.fy * p[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1)

    def scaled(self, factor: float) -> "Camera":
        """Same framing at ``factor``x the pixel count per axis."""
        return Camera(
            fx=self.fx * factor, fy=self.fy * factor,
            cx=self.cx * factor, cy=self.cy * factor,
            width=int(round(self.width * factor)),
            height=int(round(self.height * factor)),
            rotation_wc=self.rotation_wc, translation_wc=self.translation_wc,
            near=self.near, far=self.far, id=self.id,
        )

    def with_focal(self, fx: float, fy: float) -> "Camera":
        return Camera(fx=fx, fy=fy, cx=self.cx, cy=self.cy,
                      width=self.width, height=self.height,
                      rotation_wc=self.rotation_wc, translation_wc=self.translation_wc,
                      near=self.near, far=self.far, id=self.id)

    def with_pose(self, rotation_wc: np.ndarray, translation_wc: np.ndarray) -> "Camera":
        return Camera(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
                      width=self.width, height=self.height,
                      rotation_wc=rotation_wc, translation_wc=translation_wc,
                      near=self.near, far=self.far, id=self.id)


@dataclass
class ImageBuffer:
    """Row-major float raster; color values nominally in [0, 1]."""

    data: np.ndarray  # (H, W, C) float64

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise InvalidParameterError("image data must be (H, W) or (H, W, C)")
        if not np.all(np.isfinite(arr)):
            raise InvalidParameterError("image values must be finite")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def zeros(cls, width: int, height: int, channels: int = 3) -> "ImageBuffer":
        return cls(np.zeros((height, width, channels)))

    def copy(self) -> "ImageBuffer":
        return ImageBuffer(self.data.copy())


@dataclass
class DepthMap:
    """World-unit depth per pixel; 0 marks empty."""

    data: np.ndarray  # (H, W) float64

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidParameterError("depth data must be (H, W)")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise InvalidParameterError("depth values must be finite and >= 0")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


# ---------------------------------------------------------------------------
# quaternions / covariance


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion (w, x, y, z).

    Accepts (4,) or (N, 4); normalizes internally so callers may pass raw
    optimizer state.
    """
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R[0] if single else R


def quat_rot_jacobian(q: np.ndarray) -> np.ndarray:
    """d(rotation matrix)/d(unit quaternion): shape (4, 3, 3).

    Derivatives are with respect to the normalized quaternion; chain the
    normalization pullback (I - q q^T) separately when the stored vector may
    drift off the unit sphere.
    """
    w, x, y, z = np.asarray(q, dtype=np.float64).reshape(4)
    dw = 2 * np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    dx = 2 * np.array([[0.0, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    dy = 2 * np.array([[-2 * y, x, w], [x, 0.0, z], [-w, z, -2 * y]])
    dz = 2 * np.array([[-2 * z, -w, x], [w, -2 * z, y], [x, y, 0.0]])
    return np.stack([dw, dx, dy, dz])


def covariance_from_params(log_scale: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    """World-space covariance R * S * S^T * R^T with S = diag(exp(log_scale))."""
    log_scale = np.asarray(log_scale, dtype=np.float64).reshape(3)
    rotation = np.asarray(rotation, dtype=np.float64).reshape(4)
    if not np.all(np.isfinite(log_scale)) or not np.all(np.isfinite(rotation)):
        raise InvalidParameterError("non-finite covariance parameters")
    norm = float(np.linalg.norm(rotation))
    if abs(norm - 1.0) > 1e-9:
        raise InvalidParameterError(f"quaternion norm {norm} is not 1")
    R = quat_to_rot(rotation)
    s2 = np.exp(2.0 * log_scale)
    cov = (R * s2[None, :]) @ R.T
    return 0.5 * (cov + cov.T)


def covariances_from_params(log_scales: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """Vectorized covariance construction: (N,3),(N,4) -> (N,3,3)."""
    R = quat_to_rot(rotations)
    s2 = np.exp(2.0 * np.asarray(log_scales, dtype=np.float64))
    cov = np.einsum("nij,nj,nkj->nik", R, s2, R)
    return 0.5 * (cov + np.transpose(cov, (0, 2, 1)))


# ---------------------------------------------------------------------------
# projection


@dataclass
class Projection:
    """Screen-space footprint of one primitive under one camera."""

    mean2d: np.ndarray   # (2,) px
    cov2d: np.ndarray    # (2,2) px^2, after the low-pass floor
    depth: float         # camera-space z, world units
    cov2d_raw: np.ndarray = field(repr=False, default=None)  # before flooring


def project_gaussian(primitive: GaussianPrimitive, camera: Camera) -> Projection | None:
    """Project one primitive; returns None when culled by the near plane."""
    cov = covariance_from_params(primitive.log_scale, primitive.rotation)
    out = project_all(primitive.center[None, :], cov[None, :, :], camera)
    if not out["visible"][0]:
        return None
    return Projection(
        mean2d=out["mean2d"][0],
        cov2d=out["cov2d"][0],
        depth=float(out["depth"][0]),
        cov2d_raw=out["cov2d_raw"][0],
    )


def project_all(centers: np.ndarray, covariances: np.ndarray, camera: Camera) -> dict:
    """Vectorized projection of N primitives.

    Returns dict with ``visible`` (N,) bool, ``mean2d`` (N,2), ``cov2d`` (N,2,2)
    floored, ``cov2d_raw`` (N,2,2), ``depth`` (N,), ``t_cam`` (N,3) and the
    per-primitive Jacobian-rotation product ``M`` (N,2,3) needed by the
    backward pass. Entries for culled primitives are filled but meaningless.
    """
    centers = np.asarray(centers, dtype=np.float64)
    t = centers @ camera.rotation_wc.T + camera.translation_wc  # (N,3)
    tz = t[:, 2]
    visible = tz > camera.near
    safe_z = np.where(visible, tz, 1.0)

    u = camera.fx * t[:, 0] / safe_z + camera.cx
    v = camera.fy * t[:, 1] / safe_z + camera.cy
    mean2d = np.stack([u, v], axis=1)

    n = centers.shape[0]
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = camera.fx / safe_z
    J[:, 1, 1] = camera.fy / safe_z
    J[:, 0, 2] = -camera.fx * t[:, 0] / safe_z**2
    J[:, 1, 2] = -camera.fy * t[:, 1] / safe_z**2
    M = J @ camera.rotation_wc  # (N,2,3)

    cov2d_raw = np.einsum("nij,njk,nlk->nil", M, covariances, M)
    cov2d_raw = 0.5 * (cov2d_raw + np.transpose(cov2d_raw, (0, 2, 1)))
    cov2d = cov2d_raw.copy()
    cov2d[:, 0, 0] += COV2D_FLOOR
    cov2d[:, 1, 1] += COV2D_FLOOR

    return {
        "visible": visible,
        "mean2d": mean2d,
        "cov2d": cov2d,
        "cov2d_raw": cov2d_raw,
        "depth": tz,
        "t_cam": t,
        "M": M,
    }


# ---------------------------------------------------------------------------
# spherical harmonics


def sh_basis(directions: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis values, bands 0..degree, at unit directions: (..., B)."""
    if degree not in (0, 1, 2, 3):
        raise InvalidParameterError(f"SH degree {degree} unsupported (0..3)")
    d = np.asarray(directions, dtype=np.float64)
    out = np.empty(d.shape[:-1] + (sh_coeff_count(degree),))
    out[..., 0] = SH_C0
    if degree >= 1:
        x, y, z = d[..., 0], d[..., 1], d[..., 2]
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 4] = SH_C2[0] * x * y
        out[..., 5] = SH_C2[1] * y * z
        out[..., 6] = SH_C2[2] * (2 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * x * z
        out[..., 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        out[..., 9] = SH_C3[0] * y * (3 * xx - yy)
        out[..., 10] = SH_C3[1] * x * y * z
        out[..., 11] = SH_C3[2] * y * (4 * zz - xx - yy)
        out[..., 12] = SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        out[..., 13] = SH_C3[4] * x * (4 * zz - xx - yy)
        out[..., 14] = SH_C3[5] * z * (xx - yy)
        out[..., 15] = SH_C3[6] * x * (xx - 3 * yy)
    return out


def quat_rot_jacobians(qs: np.ndarray) -> np.ndarray:
    """Batched d(rotation)/d(quaternion): (N, 4) -> (N, 4, 3, 3)."""
    q = np.asarray(qs, dtype=np.float64).reshape(-1, 4)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    n = q.shape[0]
    zero = np.zeros(n)
    out = np.empty((n, 4, 3, 3))
    out[:, 0] = 2 * np.stack([
        np.stack([zero, -z, y], axis=1),
        np.stack([z, zero, -x], axis=1),
        np.stack([-y, x, zero], axis=1)], axis=1)
    out[:, 1] = 2 * np.stack([
        np.stack([zero, y, z], axis=1),
        np.stack([y, -2 * x, -w], axis=1),
        np.stack([z, w, -2 * x], axis=1)], axis=1)
    out[:, 2] = 2 * np.stack([
        np.stack([-2 * y, x, w], axis=1),
        np.stack([x, zero, z], axis=1),
        np.stack([-w, z, -2 * y], axis=1)], axis=1)
    out[:, 3] = 2 * np.stack([
        np.stack([-2 * z, -w, x], axis=1),
        np.stack([w, -2 * z, y], axis=1),
        np.stack([x, y, zero], axis=1)], axis=1)
    return out


def sh_basis_gradients(directions: np.ndarray, degree: int) -> np.ndarray:
    """Batched d(basis)/d(direction): (N, 3) -> (N, B, 3)."""
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    n = d.shape[0]
    g = np.zeros((n, sh_coeff_count(degree), 3))
    if degree >= 1:
        g[:, 1, 1] = -SH_C1
        g[:, 2, 2] = SH_C1
        g[:, 3, 0] = -SH_C1
    if degree >= 2:
        g[:, 4, 0] = SH_C2[0] * y
        g[:, 4, 1] = SH_C2[0] * x
        g[:, 5, 1] = SH_C2[1] * z
        g[:, 5, 2] = SH_C2[1] * y
        g[:, 6, 0] = -2 * SH_C2[2] * x
        g[:, 6, 1] = -2 * SH_C2[2] * y
        g[:, 6, 2] = 4 * SH_C2[2] * z
        g[:, 7, 0] = SH_C2[3] * z
        g[:, 7, 2] = SH_C2[3] * x
        g[:, 8, 0] = 2 * SH_C2[4] * x
        g[:, 8, 1] = -2 * SH_C2[4] * y
    if degree >= 3:
        g[:, 9, 0] = SH_C3[0] * 6 * x * y
        g[:, 9, 1] = SH_C3[0] * (3 * x * x - 3 * y * y)
        g[:, 10, 0] = SH_C3[1] * y * z
        g[:, 10, 1] = SH_C3[1] * x * z
        g[:, 10, 2] = SH_C3[1] * x * y
        g[:, 11, 0] = SH_C3[2] * -2 * x * y
        g[:, 11, 1] = SH_C3[2] * (4 * z * z - x * x - 3 * y * y)
        g[:, 11, 2] = SH_C3[2] * 8 * y * z
        g[:, 12, 0] = SH_C3[3] * -6 * x * z
        g[:, 12, 1] = SH_C3[3] * -6 * y * z
        g[:, 12, 2] = SH_C3[3] * (6 * z * z - 3 * x * x - 3 * y * y)
        g[:, 13, 0] = SH_C3[4] * (4 * z * z - 3 * x * x - y * y)
        g[:, 13, 1] = SH_C3[4] * -2 * x * y
        g[:, 13, 2] = SH_C3[4] * 8 * x * z
        g[:, 14, 0] = SH_C3[5] * 2 * x * z
        g[:, 14, 1] = SH_C3[5] * -2 * y * z
        g[:, 14, 2] = SH_C3[5] * (x * x - y * y)
        g[:, 15, 0] = SH_C3[6] * (3 * x * x - 3 * y * y)
        g[:, 15, 1] = SH_C3[6] * -6 * x * y
    return g


def sh_basis_gradient(direction: np.ndarray, degree: int) -> np.ndarray:
    """d(basis)/d(direction) for one unit direction: (B, 3)."""
    x, y, z = np.asarray(direction, dtype=np.float64).reshape(3)
    g = np.zeros((sh_coeff_count(degree), 3))
    if degree >= 1:
        g[1] = (0.0, -SH_C1, 0.0)
        g[2] = (0.0, 0.0, SH_C1)
        g[3] = (-SH_C1, 0.0, 0.0)
    if degree >= 2:
        g[4] = (SH_C2[0] * y, SH_C2[0] * x, 0.0)
        g[5] = (0.0, SH_C2[1] * z, SH_C2[1] * y)
        g[6] = (-2 * SH_C2[2] * x, -2 * SH_C2[2] * y, 4 * SH_C2[2] * z)
        g[7] = (SH_C2[3] * z, 0.0, SH_C2[3] * x)
        g[8] = (2 * SH_C2[4] * x, -2 * SH_C2[4] * y, 0.0)
    if degree >= 3:
        g[9] = (SH_C3[0] * 6 * x * y, SH_C3[0] * (3 * x * x - 3 * y * y), 0.0)
        g[10] = (SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y)
        g[11] = (SH_C3[2] * -2 * x * y,
                 SH_C3[2] * (4 * z * z - x * x - 3 * y * y),
                 SH_C3[2] * 8 * y * z)
        g[12] = (SH_C3[3] * -6 * x * z,
                 SH_C3[3] * -6 * y * z,
                 SH_C3[3] * (6 * z * z - 3 * x * x - 3 * y * y))
        g[13] = (SH_C3[4] * (4 * z * z - 3 * x * x - y * y),
                 SH_C3[4] * -2 * x * y,
                 SH_C3[4] * 8 * x * z)
        g[14] = (SH_C3[5] * 2 * x * z, SH_C3[5] * -2 * y * z,
                 SH_C3[5] * (x * x - y * y))
        g[15] = (SH_C3[6] * (3 * x * x - 3 * y * y), SH_C3[6] * -6 * x * y, 0.0)
    return g


def evaluate_sh(sh_coeffs: np.ndarray, view_direction: np.ndarray, degree: int) -> np.ndarray:
    """RGB color from SH coefficients: clamp(basis . coeffs + 0.5, min 0)."""
    coeffs = np.asarray(sh_coeffs, dtype=np.float64).reshape(-1, 3)
    if coeffs.shape[0] != sh_coeff_count(degree):
        raise InvalidParameterError(
            f"{coeffs.shape[0]} SH coefficients inconsistent with degree {degree}")
    d = np.asarray(view_direction, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise InvalidParameterError("view direction must be unit-norm")
    basis = sh_basis(d, degree)
    return np.maximum(basis @ coeffs + SH_OFFSET, 0.0)


def evaluate_sh_batch(sh_coeffs: np.ndarray, directions: np.ndarray, degree: int) -> np.ndarray:
    """(N,B,3),(N,3) -> (N,3) clamped colors (one direction per primitive)."""
    basis = sh_basis(directions, degree)  # (N,B)
    colors = np.einsum("nb,nbc->nc", basis, np.asarray(sh_coeffs, dtype=np.float64))
    return np.maximum(colors + SH_OFFSET, 0.0)


def look_at_rotation(position: np.ndarray, target: np.ndarray,
                     up_hint: np.ndarray | None = None) -> np.ndarray:
    """World-to-camera rotation whose +z axis points from position to target.

    ``up_hint`` is a world vector the camera's -y axis should roughly follow
    (image y runs downward); defaults to world +z.
    """
    position = np.asarray(position, dtype=np.float64).reshape(3)
    target = np.asarray(target, dtype=np.float64).reshape(3)
    forward = target - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise InvalidParameterError("look-at target coincides with camera position")
    forward = forward / norm
    hint = np.array([0.0, 0.0, 1.0]) if up_hint is None else \
        np.asarray(up_hint, dtype=np.float64).reshape(3)
    down = -hint
    right = np.cross(down, forward)
    if np.linalg.norm(right) < 1e-9:
        # hint parallel to forward; pick any perpendicular
        alt = np.array([1.0, 0.0, 0.0])
        if abs(forward @ alt) > 0.9:
            alt = np.array([0.0, 1.0, 0.0])
        right = np.cross(-alt, forward)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.stack([right, down, forward])
