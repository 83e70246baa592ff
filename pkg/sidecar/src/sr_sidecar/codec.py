"""Base64 PNG payloads to and from float arrays in [0, 1]."""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image


class PayloadError(ValueError):
    """Raised when a base64/PNG payload cannot be decoded."""


def decode_b64_png(text: str) -> np.ndarray:
    try:
        raw = base64.b64decode(text, validate=True)
    except Exception as exc:
        raise PayloadError(f"invalid base64: {exc}") from exc
    try:
        pil = Image.open(io.BytesIO(raw))
        pil.load()
    except Exception as exc:
        raise PayloadError(f"undecodable PNG: {exc}") from exc
    if pil.mode not in ("L", "RGB"):
        pil = pil.convert("RGB")
    arr = np.asarray(pil)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float64) / 255.0


def encode_b64_png(array: np.ndarray) -> str:
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    u8 = np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    if u8.shape[2] == 1:
        pil = Image.fromarray(u8[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(u8, mode="RGB")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")
