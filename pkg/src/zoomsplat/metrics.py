"""Full-reference image metrics: PSNR and SSIM.

The SSIM kernel here (11x11 Gaussian window, sigma 1.5, C1 = 0.01^2,
C2 = 0.03^2 on the [0, 1] range, valid-window mean) is the single shared
definition; the training loss imports its gradient from this module rather
than re-deriving it.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

from .errors import InvalidParameterError
from .geometry import ImageBuffer

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

_RADIUS = SSIM_WINDOW // 2
_x = np.arange(-_RADIUS, _RADIUS + 1, dtype=np.float64)
_KERNEL_1D = np.exp(-0.5 * (_x / SSIM_SIGMA) ** 2)
_KERNEL_1D /= _KERNEL_1D.sum()


def _as_array(image) -> np.ndarray:
    if isinstance(image, ImageBuffer):
        return image.data
    arr = np.asarray(image, dtype=np.float64)
    return arr[:, :, None] if arr.ndim == 2 else arr


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise InvalidParameterError(f"image shapes differ: {a.shape} vs {b.shape}")


def psnr(a, b) -> float:
    """10 log10(1 / MSE) on the [0, 1] range; exact equality reports the
    99 dB cap so tables stay finite."""
    x, y = _as_array(a), _as_array(b)
    _check_pair(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / mse))


def _filter_valid(x: np.ndarray) -> np.ndarray:
    """Valid-mode separable window filter of a (H, W) plane."""
    t = correlate1d(x, _KERNEL_1D, axis=0, mode="constant")
    t = correlate1d(t, _KERNEL_1D, axis=1, mode="constant")
    return t[_RADIUS:-_RADIUS, _RADIUS:-_RADIUS]


def _spread(a_valid: np.ndarray, h: int, w: int) -> np.ndarray:
    """Adjoint of :func:`_filter_valid`: scatter a valid-grid plane back to
    full resolution through the (symmetric) window."""
    z = np.zeros((h, w))
    z[_RADIUS:h - _RADIUS, _RADIUS:w - _RADIUS] = a_valid
    t = correlate1d(z, _KERNEL_1D, axis=0, mode="constant")
    return correlate1d(t, _KERNEL_1D, axis=1, mode="constant")


def _ssim_channel(x: np.ndarray, y: np.ndarray, want_grad: bool):
    mux = _filter_valid(x)
    muy = _filter_valid(y)
    sxx = _filter_valid(x * x) - mux * mux
    syy = _filter_valid(y * y) - muy * muy
    sxy = _filter_valid(x * y) - mux * muy
    a1 = 2.0 * mux * muy + SSIM_C1
    a2 = 2.0 * sxy + SSIM_C2
    b1 = mux * mux + muy * muy + SSIM_C1
    b2 = sxx + syy + SSIM_C2
    s_map = (a1 * a2) / (b1 * b2)
    if not want_grad:
        return s_map, None

    h, w = x.shape
    n = s_map.size
    g_mu = (2.0 * a2 * (muy * b1 - mux * a1)) / (b1 * b1 * b2) / n
    g_sxx = -(a1 * a2) / (b1 * b2 * b2) / n
    g_sxy = (2.0 * a1) / (b1 * b2) / n
    grad = (_spread(g_mu, h, w)
            + 2.0 * x * _spread(g_sxx, h, w)
            - 2.0 * _spread(g_sxx * mux, h, w)
            + y * _spread(g_sxy, h, w)
            - _spread(g_sxy * muy, h, w))
    return s_map, grad


def ssim(a, b) -> float:
    """Mean local SSIM over valid window positions and channels."""
    x, y = _as_array(a), _as_array(b)
    _check_pair(x, y)
    if min(x.shape[0], x.shape[1]) < SSIM_WINDOW:
        raise InvalidParameterError(
            f"image smaller than the {SSIM_WINDOW}px SSIM window")
    total = 0.0
    for c in range(x.shape[2]):
        s_map, _ = _ssim_channel(x[:, :, c], y[:, :, c], want_grad=False)
        total += float(s_map.mean())
    return total / x.shape[2]


def ssim_with_gradient(a, b):
    """SSIM value plus d(SSIM)/d(a), channel-mean convention as :func:`ssim`."""
    x, y = _as_array(a), _as_array(b)
    _check_pair(x, y)
    if min(x.shape[0], x.shape[1]) < SSIM_WINDOW:
        raise InvalidParameterError(
            f"image smaller than the {SSIM_WINDOW}px SSIM window")
    c_count = x.shape[2]
    total = 0.0
    grad = np.zeros_like(x)
    for c in range(c_count):
        s_map, g = _ssim_channel(x[:, :, c], y[:, :, c], want_grad=True)
        total += float(s_map.mean())
        grad[:, :, c] = g
    return total / c_count, grad / c_count
