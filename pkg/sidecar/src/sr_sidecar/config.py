"""Service configuration: JSON file with keys mode, fixed_prompt,
adapter_path, port."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

DEFAULT_PORT = 8377
DEFAULT_PROMPT = "a sharp, detailed photograph"


@dataclass
class ServiceConfig:
    mode: str = "mock"              # "mock" | "real"
    fixed_prompt: str = DEFAULT_PROMPT
    adapter_path: str = ""          # dotted path for real mode
    port: int = DEFAULT_PORT

    def __post_init__(self):
        if self.mode not in ("mock", "real"):
            raise ValueError(f"mode must be 'mock' or 'real', got {self.mode!r}")


def load_config(path) -> ServiceConfig:
    data = json.loads(Path(path).read_text())
    known = {"mode", "fixed_prompt", "adapter_path", "port"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ServiceConfig(**data)
