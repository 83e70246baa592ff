"""Real-backend adapter loading.

An adapter is any module (or object) reachable by dotted path exposing two
callables:

    enhance(lr_image, scale, warped_neighbors, context_coarse, context_zoom,
            prompt) -> (H*scale, W*scale, C) float array in [0, 1]
    describe(context_coarse, context_zoom) -> str

An adapter may declare ``SINGLE_FLIGHT = True`` to have the server serialize
calls into it.
"""

from __future__ import annotations

import importlib


class AdapterError(RuntimeError):
    """The configured backend is missing or unusable."""


def load_adapter(dotted_path: str):
    if not dotted_path:
        raise AdapterError("real mode requires adapter_path")
    module_path, _, attr = dotted_path.partition(":")
    try:
        obj = importlib.import_module(module_path)
    except ImportError as exc:
        raise AdapterError(f"cannot import adapter {module_path!r}: {exc}") from exc
    if attr:
        try:
            obj = getattr(obj, attr)
        except AttributeError as exc:
            raise AdapterError(f"adapter {module_path!r} has no attribute "
                               f"{attr!r}") from exc
    for fn in ("enhance", "describe"):
        if not callable(getattr(obj, fn, None)):
            raise AdapterError(f"adapter {dotted_path!r} lacks callable {fn!r}")
    return obj
