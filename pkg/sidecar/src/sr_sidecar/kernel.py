"""Mock-mode enhancement kernel.

This reimplements the wire contract's pinned reference upsampler: separable
bicubic interpolation with the Catmull-Rom kernel (a = -0.5), reflect-101
borders, output texel o sampling the source at (o + 0.5) / scale - 0.5,
followed by unsharp masking (Gaussian sigma 1.0, radius 4 taps, amount 0.5)
and a clamp to [0, 1]. Everything is float64; matching these constants and
conventions is what makes mock responses byte-identical to the client's
built-in provider after PNG quantization.
"""

from __future__ import annotations

import numpy as np

KERNEL_A = -0.5
UNSHARP_SIGMA = 1.0
UNSHARP_AMOUNT = 0.5
UNSHARP_RADIUS = 4
SUPPORTED_SCALES = (2, 4)


def cubic_weight(t: np.ndarray) -> np.ndarray:
    a = KERNEL_A
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2 = t * t
    t3 = t2 * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * (t3 - 5.0 * t2 + 8.0 * t - 4.0)
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def mirror_index(idx: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def _taps(n_in: int, n_out: int):
    x = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(x).astype(np.int64)
    offsets = base[:, None] + np.arange(-1, 3)[None, :]
    weights = cubic_weight(x[:, None] - offsets)
    return mirror_index(offsets, n_in), weights


def upsample(image: np.ndarray, scale: int) -> np.ndarray:
    """Separable bicubic upsample of an (H, W, C) float array."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    ridx, rw = _taps(h, h * scale)
    tmp = np.einsum("otwc,ot->owc", img[ridx], rw)
    cidx, cw = _taps(w, w * scale)
    return np.einsum("hotc,ot->hoc", tmp[:, cidx], cw)


def gaussian_blur(image: np.ndarray) -> np.ndarray:
    x = np.arange(-UNSHARP_RADIUS, UNSHARP_RADIUS + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / UNSHARP_SIGMA) ** 2)
    k /= k.sum()
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    offs = np.arange(-UNSHARP_RADIUS, UNSHARP_RADIUS + 1)
    ridx = mirror_index(np.arange(h)[:, None] + offs[None, :], h)
    tmp = np.einsum("otwc,t->owc", img[ridx], k)
    cidx = mirror_index(np.arange(w)[:, None] + offs[None, :], w)
    return np.einsum("hotc,t->hoc", tmp[:, cidx], k)


def enhance(image: np.ndarray, scale: int) -> np.ndarray:
    """The full mock enhancement: upsample, sharpen, clamp."""
    if scale not in SUPPORTED_SCALES:
        raise ValueError(f"unsupported scale {scale}")
    up = upsample(image, scale)
    return np.clip(up + UNSHARP_AMOUNT * (up - gaussian_blur(up)), 0.0, 1.0)
