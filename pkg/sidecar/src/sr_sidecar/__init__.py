"""Out-of-process super-resolution and prompt sidecar.

Serves three endpoints over plain HTTP with JSON bodies and base64 PNG
payloads: /v1/super_resolve, /v1/prompt, /v1/health. Mock mode reproduces
the client's built-in reference kernel byte-for-byte; real backends plug in
through a two-function adapter loaded by dotted path.
"""

__version__ = "0.1.0"
