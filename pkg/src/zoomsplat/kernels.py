"""Shared resampling kernels.

Single source of truth for the bicubic Catmull-Rom kernel, border handling,
and the unsharp-mask constants. Both the built-in super-resolution upsampler
and the training-time degradation downsampler import from here, so the two
directions of the scale pipeline can never drift apart.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidParameterError

CATMULL_ROM_A = -0.5
BORDER_MODE = "reflect-101"
UNSHARP_SIGMA = 1.0
UNSHARP_AMOUNT = 0.5
UNSHARP_RADIUS = 4


def catmull_rom(t: np.ndarray) -> np.ndarray:
    """Catmull-Rom cubic kernel (a = -0.5), support [-2, 2]."""
    a = CATMULL_ROM_A
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2 = t * t
    t3 = t2 * t
    inner = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    outer = a * (t3 - 5.0 * t2 + 8.0 * t - 4.0)
    return np.where(t <= 1.0, inner, np.where(t < 2.0, outer, 0.0))


def reflect101(idx: np.ndarray, n: int) -> np.ndarray:
    """Map integer indices into [0, n) by border reflection without edge repeat."""
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def _axis_taps(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample positions for resampling one axis from n_in to n_out texels.

    Output texel o reads the source at x = (o + 0.5) * n_in / n_out - 0.5
    through the 4-tap Catmull-Rom kernel. Returns (indices, weights), both
    shaped (n_out, 4), indices already reflected into range.
    """
    o = np.arange(n_out, dtype=np.float64)
    x = (o + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(x).astype(np.int64)
    taps = base[:, None] + np.arange(-1, 3)[None, :]
    weights = catmull_rom(x[:, None] - taps)
    return reflect101(taps, n_in), weights


def resample(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bicubic resample of an (H, W, C) or (H, W) array."""
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w = img.shape[:2]
    ridx, rw = _axis_taps(h, out_h)
    tmp = np.einsum("otwc,ot->owc", img[ridx], rw)
    cidx, cw = _axis_taps(w, out_w)
    out = np.einsum("hotc,ot->hoc", tmp[:, cidx], cw)
    return out[:, :, 0] if squeeze else out


def resample_adjoint(grad_out: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Transpose of :func:`resample`: scatter an (out_h, out_w, C) gradient
    back onto the (in_h, in_w, C) source grid."""
    g = np.asarray(grad_out, dtype=np.float64)
    squeeze = g.ndim == 2
    if squeeze:
        g = g[:, :, None]
    out_h, out_w = g.shape[:2]
    c = g.shape[2]

    cidx, cw = _axis_taps(in_w, out_w)
    tmp = np.zeros((out_h, in_w, c))
    contrib = g[:, :, None, :] * cw[None, :, :, None]          # (out_h, out_w, 4, C)
    np.add.at(tmp, (slice(None), cidx), contrib)

    ridx, rw = _axis_taps(in_h, out_h)
    out = np.zeros((in_h, in_w, c))
    contrib = tmp[:, None, :, :] * rw[:, :, None, None]        # (out_h, 4, in_w, C)
    np.add.at(out, (ridx,), contrib)
    return out[:, :, 0] if squeeze else out


def gaussian_kernel1d(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image: np.ndarray, sigma: float = UNSHARP_SIGMA,
                  radius: int = UNSHARP_RADIUS) -> np.ndarray:
    """Separable Gaussian blur with reflect-101 borders."""
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    k = gaussian_kernel1d(sigma, radius)
    h, w = img.shape[:2]
    offs = np.arange(-radius, radius + 1)
    ridx = reflect101(np.arange(h)[:, None] + offs[None, :], h)
    tmp = np.einsum("otwc,t->owc", img[ridx], k)
    cidx = reflect101(np.arange(w)[:, None] + offs[None, :], w)
    out = np.einsum("hotc,t->hoc", tmp[:, cidx], k)
    return out[:, :, 0] if squeeze else out


def unsharp_mask(image: np.ndarray, amount: float = UNSHARP_AMOUNT,
                 sigma: float = UNSHARP_SIGMA) -> np.ndarray:
    """Sharpen by adding back the high-pass residual; clamps to [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    return np.clip(img + amount * (img - gaussian_blur(img, sigma)), 0.0, 1.0)


def bicubic_upsample(image: np.ndarray, scale: int) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if scale < 1:
        raise InvalidParameterError("scale must be >= 1")
    return resample(img, img.shape[0] * scale, img.shape[1] * scale)


def bicubic_downsample(image: np.ndarray, factor: int) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if factor < 1 or h % factor or w % factor:
        raise InvalidParameterError(
            f"image {w}x{h} not divisible by downsample factor {factor}")
    return resample(img, h // factor, w // factor)


def bicubic_downsample_adjoint(grad_out: np.ndarray, factor: int) -> np.ndarray:
    g = np.asarray(grad_out, dtype=np.float64)
    return resample_adjoint(g, g.shape[0] * factor, g.shape[1] * factor)
