"""HTTP server and request handling.

Handlers are pure functions of (config, request body): identical requests in
mock mode produce byte-identical responses. Every error body carries a
machine-readable ``{"error": {"code", "message", "field"?}}`` object; schema
violations answer 400 with the offending field path, dimension problems
answer 422, and an unavailable real backend answers 503.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from . import __version__
from .adapters import AdapterError, load_adapter
from .codec import PayloadError, decode_b64_png, encode_b64_png
from .config import ServiceConfig
from .kernel import SUPPORTED_SCALES, enhance

PROMPT_MAX_CHARS = 512


class RequestError(Exception):
    def __init__(self, status: int, code: str, message: str, field: str = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.field = field

    def body(self) -> dict:
        err = {"code": self.code, "message": str(self)}
        if self.field is not None:
            err["field"] = self.field
        return {"error": err}


def _require(body: dict, field: str, kind, path: str = None):
    path = path or field
    if field not in body:
        raise RequestError(400, "missing_field", f"missing required field",
                           field=path)
    value = body[field]
    if kind is int and isinstance(value, bool):
        raise RequestError(400, "wrong_type", "expected an integer", field=path)
    if not isinstance(value, kind):
        raise RequestError(400, "wrong_type",
                           f"expected {getattr(kind, '__name__', kind)}",
                           field=path)
    return value


def _decode_image(text, path: str) -> np.ndarray:
    if not isinstance(text, str):
        raise RequestError(400, "wrong_type", "expected a base64 PNG string",
                           field=path)
    try:
        return decode_b64_png(text)
    except PayloadError as exc:
        raise RequestError(400, "bad_payload", str(exc), field=path)


class App:
    """Route logic, independent of the HTTP plumbing."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self._adapter = None
        self._adapter_error = None
        self._flight_lock = threading.Lock()
        if config.mode == "real":
            try:
                self._adapter = load_adapter(config.adapter_path)
            except AdapterError as exc:
                self._adapter_error = str(exc)

    # -- endpoints ----------------------------------------------------------

    def health(self) -> tuple:
        degraded = self.config.mode == "real" and self._adapter is None
        return 200, {"status": "degraded" if degraded else "ok",
                     "mode": self.config.mode,
                     "version": __version__}

    def super_resolve(self, body: dict) -> tuple:
        scale = _require(body, "scale", int)
        lr = _decode_image(_require(body, "lr_image", str), "lr_image")
        h, w = lr.shape[:2]

        neighbors = body.get("warped_neighbors", [])
        if not isinstance(neighbors, list):
            raise RequestError(400, "wrong_type", "expected a list",
                               field="warped_neighbors")
        decoded_neighbors = []
        for i, entry in enumerate(neighbors):
            if not isinstance(entry, dict):
                raise RequestError(400, "wrong_type", "expected an object",
                                   field=f"warped_neighbors[{i}]")
            img = _decode_image(
                _require(entry, "image", str, f"warped_neighbors[{i}].image"),
                f"warped_neighbors[{i}].image")
            mask = _decode_image(
                _require(entry, "mask", str, f"warped_neighbors[{i}].mask"),
                f"warped_neighbors[{i}].mask")
            for name, arr in (("image", img), ("mask", mask)):
                if arr.shape[:2] != (h, w):
                    raise RequestError(
                        422, "dimension_mismatch",
                        f"{arr.shape[1]}x{arr.shape[0]} does not match the "
                        f"{w}x{h} LR image",
                        field=f"warped_neighbors[{i}].{name}")
            decoded_neighbors.append((img, mask))

        context = {}
        for name in ("context_coarse", "context_zoom"):
            if name in body:
                arr = _decode_image(body[name], name)
                if arr.shape[:2] != (h, w):
                    raise RequestError(
                        422, "dimension_mismatch",
                        f"{arr.shape[1]}x{arr.shape[0]} does not match the "
                        f"{w}x{h} LR image", field=name)
                context[name] = arr

        prompt = body.get("prompt", "")
        if not isinstance(prompt, str):
            raise RequestError(400, "wrong_type", "expected a string",
                               field="prompt")

        if self.config.mode == "mock":
            if scale not in SUPPORTED_SCALES:
                raise RequestError(422, "dimension_mismatch",
                                   f"mock mode supports scales "
                                   f"{SUPPORTED_SCALES}", field="scale")
            hr = enhance(lr, scale)
            provider = "mock"
        else:
            if self._adapter is None:
                raise RequestError(503, "backend_unavailable",
                                   self._adapter_error or "no adapter loaded")
            if scale < 2:
                raise RequestError(422, "dimension_mismatch",
                                   "scale must be >= 2", field="scale")
            hr = self._run_adapter(
                "enhance", lr, scale, decoded_neighbors,
                context.get("context_coarse"), context.get("context_zoom"),
                prompt)
            hr = np.asarray(hr, dtype=np.float64)
            if hr.shape[:2] != (h * scale, w * scale):
                raise RequestError(503, "backend_unavailable",
                                   "adapter returned the wrong resolution")
            provider = "real"

        return 200, {"hr_image": encode_b64_png(hr),
                     "prompt_used": prompt,
                     "provider": provider}

    def prompt(self, body: dict) -> tuple:
        for name in ("context_coarse", "context_zoom"):
            _decode_image(_require(body, name, str), name)
        if self.config.mode == "mock":
            text = self.config.fixed_prompt
        else:
            if self._adapter is None:
                raise RequestError(503, "backend_unavailable",
                                   self._adapter_error or "no adapter loaded")
            text = str(self._run_adapter(
                "describe", decode_b64_png(body["context_coarse"]),
                decode_b64_png(body["context_zoom"])))
        truncated = len(text) > PROMPT_MAX_CHARS
        payload = {"prompt": text[:PROMPT_MAX_CHARS]}
        if truncated:
            payload["truncated"] = True
        return 200, payload

    def _run_adapter(self, fn, *args):
        call = getattr(self._adapter, fn)
        if getattr(self._adapter, "SINGLE_FLIGHT", False):
            with self._flight_lock:
                result = call(*args)
        else:
            result = call(*args)
        return result

    # -- dispatch -----------------------------------------------------------

    def handle(self, method: str, path: str, body: dict | None) -> tuple:
        try:
            if method == "GET" and path == "/v1/health":
                return self.health()
            if method == "POST" and path == "/v1/super_resolve":
                return self.super_resolve(body or {})
            if method == "POST" and path == "/v1/prompt":
                return self.prompt(body or {})
            raise RequestError(404, "not_found", f"no route {method} {path}")
        except RequestError as exc:
            return exc.status, exc.body()
        except AdapterError as exc:
            return 503, RequestError(503, "backend_unavailable",
                                     str(exc)).body()


def make_handler(app: App):
    class Handler(BaseHTTPRequestHandler):
        server_version = f"zoomsplat-sidecar/{__version__}"

        def _dispatch(self, method):
            body = None
            if method == "POST":
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                try:
                    body = json.loads(raw) if raw else {}
                except json.JSONDecodeError:
                    self._send(400, {"error": {"code": "bad_json",
                                               "message": "body is not JSON"}})
                    return
                if not isinstance(body, dict):
                    self._send(400, {"error": {"code": "bad_json",
                                               "message": "body must be an "
                                                          "object"}})
                    return
            status, payload = app.handle(method, self.path, body)
            self._send(status, payload)

        def _send(self, status, payload):
            data = json.dumps(payload, sort_keys=True).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            self._dispatch("GET")

        def do_POST(self):
            self._dispatch("POST")

        def log_message(self, *args):
            pass

    return Handler


def create_server(config: ServiceConfig, port: int | None = None) -> ThreadingHTTPServer:
    app = App(config)
    return ThreadingHTTPServer(("0.0.0.0", config.port if port is None else port),
                               make_handler(app))


def serve_forever(config: ServiceConfig):
    server = create_server(config)
    print(f"sidecar listening on :{server.server_port} (mode={config.mode})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
