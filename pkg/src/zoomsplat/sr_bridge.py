"""Pluggable super-resolution stage.

One request/response contract serves two providers: a deterministic built-in
reference upsampler (bicubic Catmull-Rom plus unsharp masking) and a client
for the out-of-process sidecar speaking JSON with base64 PNG payloads. The
whole pipeline must run with the built-in provider alone; the sidecar is an
optional upgrade path for learned backends.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import requests

from . import kernels, pngcodec
from .errors import (
    ContractViolationError,
    InvalidParameterError,
    ProtocolError,
    TransportError,
)
from .geometry import ImageBuffer

logger = logging.getLogger(__name__)

DEFAULT_PROMPT = "a sharp, detailed photograph"
DEFAULT_ENDPOINT = "http://127.0.0.1:8377"
RETRY_BACKOFF = (0.5, 1.0)  # seconds; 2 retries then error
PROMPT_MAX_CHARS = 512


@dataclass
class SrRequest:
    lr_image: ImageBuffer
    scale: int
    warped_neighbors: list = field(default_factory=list)  # (image, valid_mask)
    context_coarse: ImageBuffer | None = None
    context_zoom: ImageBuffer | None = None
    prompt: str = ""

    def __post_init__(self):
        if self.scale < 2:
            raise InvalidParameterError("scale must be >= 2")
        h, w = self.lr_image.height, self.lr_image.width
        for i, (img, mask) in enumerate(self.warped_neighbors):
            if (img.height, img.width) != (h, w) or \
                    (mask.height, mask.width) != (h, w):
                raise InvalidParameterError(
                    f"warped neighbor {i} does not match the LR resolution")
        for name in ("context_coarse", "context_zoom"):
            img = getattr(self, name)
            if img is not None and (img.height, img.width) != (h, w):
                raise InvalidParameterError(f"{name} does not match the LR resolution")


@dataclass
class SrResponse:
    hr_image: ImageBuffer
    prompt_used: str
    provider: str  # "builtin" | "remote"


def builtin_reference_sr(lr_image: ImageBuffer | np.ndarray, scale: int) -> ImageBuffer:
    """Deterministic reference upsampler: bicubic Catmull-Rom (a = -0.5,
    reflect-101 borders) followed by unsharp masking (sigma 1.0, amount 0.5),
    clamped to [0, 1]."""
    if scale not in (2, 4):
        raise InvalidParameterError(f"builtin SR supports scales 2 and 4, got {scale}")
    arr = lr_image.data if isinstance(lr_image, ImageBuffer) else np.asarray(lr_image)
    up = kernels.bicubic_upsample(arr, scale)
    return ImageBuffer(kernels.unsharp_mask(up))


class BuiltinProvider:
    """In-process provider; pure and safe to call concurrently."""

    name = "builtin"

    def __init__(self, static_prompt: str = DEFAULT_PROMPT):
        self.static_prompt = static_prompt

    def super_resolve(self, request: SrRequest) -> SrResponse:
        hr = builtin_reference_sr(request.lr_image, request.scale)
        return SrResponse(hr_image=hr,
                          prompt_used=request.prompt or self.static_prompt,
                          provider="builtin")

    def request_prompt(self, context_coarse, context_zoom) -> str:
        return self.static_prompt


class RemoteProvider:
    """Client for the sidecar's wire protocol (same byte-exact contract)."""

    name = "remote"

    def __init__(self, endpoint: str = DEFAULT_ENDPOINT, timeout: float = 30.0,
                 backoff: tuple = RETRY_BACKOFF,
                 static_prompt: str = DEFAULT_PROMPT):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.backoff = backoff
        self.fallback = BuiltinProvider(static_prompt)

    def _post(self, path: str, payload: dict) -> dict:
        last_exc = None
        for attempt in range(len(self.backoff) + 1):
            try:
                resp = requests.post(self.endpoint + path, json=payload,
                                     timeout=self.timeout)
            except requests.RequestException as exc:
                last_exc = exc
                if attempt < len(self.backoff):
                    time.sleep(self.backoff[attempt])
                continue
            if resp.status_code >= 500:
                last_exc = TransportError(
                    f"{path} answered {resp.status_code}")
                if attempt < len(self.backoff):
                    time.sleep(self.backoff[attempt])
                continue
            if resp.status_code != 200:
                raise ProtocolError(
                    f"{path} answered {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ProtocolError(f"{path} returned non-JSON body") from exc
        raise TransportError(
            f"{self.endpoint}{path} unreachable after "
            f"{len(self.backoff) + 1} attempts: {last_exc}")

    def super_resolve(self, request: SrRequest) -> SrResponse:
        payload = {
            "scale": request.scale,
            "lr_image": pngcodec.image_to_b64(request.lr_image),
            "warped_neighbors": [
                {"image": pngcodec.image_to_b64(img),
                 "mask": pngcodec.image_to_b64(mask)}
                for img, mask in request.warped_neighbors],
            "context_coarse": pngcodec.image_to_b64(
                request.context_coarse if request.context_coarse is not None
                else request.lr_image),
            "context_zoom": pngcodec.image_to_b64(
                request.context_zoom if request.context_zoom is not None
                else request.lr_image),
            "prompt": request.prompt,
        }
        body = self._post("/v1/super_resolve", payload)
        try:
            hr = pngcodec.b64_to_image(body["hr_image"])
            prompt_used = str(body.get("prompt_used", request.prompt))
        except KeyError as exc:
            raise ProtocolError(f"response missing field {exc}") from exc
        want = (request.lr_image.height * request.scale,
                request.lr_image.width * request.scale)
        if (hr.height, hr.width) != want:
            raise ContractViolationError(
                f"remote produced {hr.width}x{hr.height}, expected "
                f"{want[1]}x{want[0]}")
        return SrResponse(hr_image=hr, prompt_used=prompt_used, provider="remote")

    def request_prompt(self, context_coarse, context_zoom) -> str:
        payload = {
            "context_coarse": pngcodec.image_to_b64(context_coarse),
            "context_zoom": pngcodec.image_to_b64(context_zoom),
        }
        try:
            body = self._post("/v1/prompt", payload)
            prompt = str(body["prompt"]).strip()
        except (TransportError, ProtocolError, KeyError) as exc:
            logger.warning("prompt request failed (%s); using the static "
                           "fallback prompt", exc)
            return self.fallback.static_prompt
        if not prompt:
            logger.warning("remote returned an empty prompt; using fallback")
            return self.fallback.static_prompt
        return prompt[:PROMPT_MAX_CHARS]


def make_provider(name: str, endpoint: str | None = None,
                  static_prompt: str = DEFAULT_PROMPT, **kw):
    if name == "builtin":
        return BuiltinProvider(static_prompt)
    if name == "remote":
        return RemoteProvider(endpoint or DEFAULT_ENDPOINT,
                              static_prompt=static_prompt, **kw)
    raise InvalidParameterError(f"unknown SR provider {name!r}")


def super_resolve(request: SrRequest, provider) -> SrResponse:
    """Run one request through a provider and enforce the output contract."""
    response = provider.super_resolve(request)
    want_h = request.lr_image.height * request.scale
    want_w = request.lr_image.width * request.scale
    if (response.hr_image.height, response.hr_image.width) != (want_h, want_w):
        raise ContractViolationError(
            f"provider {provider.name} returned {response.hr_image.width}x"
            f"{response.hr_image.height}, expected {want_w}x{want_h}")
    if not np.all(np.isfinite(response.hr_image.data)):
        raise ContractViolationError("non-finite values in the HR output")
    return response


def request_prompt(context_coarse, context_zoom, provider) -> str:
    prompt = provider.request_prompt(context_coarse, context_zoom)
    if not prompt:
        prompt = DEFAULT_PROMPT
    return prompt[:PROMPT_MAX_CHARS]
