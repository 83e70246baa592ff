"""PNG (de)serialization shared by file storage and the SR wire protocol.

Images are 8-bit PNG on the wire and on disk, converted to and from [0, 1]
floats with round-half-up; all internal math stays floating point.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image

from .errors import InvalidParameterError, ProtocolError
from .geometry import ImageBuffer


def quantize_u8(data: np.ndarray) -> np.ndarray:
    """[0, 1] floats to uint8 with round-half-up."""
    return np.floor(np.clip(data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def dequantize_u8(data: np.ndarray) -> np.ndarray:
    return data.astype(np.float64) / 255.0


def image_to_png_bytes(image: ImageBuffer | np.ndarray) -> bytes:
    arr = image.data if isinstance(image, ImageBuffer) else np.asarray(image)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    u8 = quantize_u8(arr)
    if u8.shape[2] == 1:
        pil = Image.fromarray(u8[:, :, 0], mode="L")
    elif u8.shape[2] == 3:
        pil = Image.fromarray(u8, mode="RGB")
    else:
        raise InvalidParameterError(f"unsupported channel count {u8.shape[2]}")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_image(data: bytes) -> ImageBuffer:
    try:
        pil = Image.open(io.BytesIO(data))
        pil.load()
    except Exception as exc:
        raise ProtocolError(f"undecodable PNG payload: {exc}") from exc
    if pil.mode not in ("L", "RGB"):
        pil = pil.convert("RGB")
    arr = np.asarray(pil)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return ImageBuffer(dequantize_u8(arr))


def image_to_b64(image) -> str:
    return base64.b64encode(image_to_png_bytes(image)).decode("ascii")


def b64_to_image(text: str) -> ImageBuffer:
    try:
        raw = base64.b64decode(text, validate=True)
    except Exception as exc:
        raise ProtocolError(f"invalid base64 image payload: {exc}") from exc
    return png_bytes_to_image(raw)


def png_round_trip(image: ImageBuffer | np.ndarray) -> ImageBuffer:
    """Quantization an image suffers when crossing the wire once."""
    return png_bytes_to_image(image_to_png_bytes(image))
