import threading

import pytest

from sr_sidecar.config import ServiceConfig
from sr_sidecar.server import create_server


@pytest.fixture
def mock_server():
    server = create_server(ServiceConfig(mode="mock",
                                         fixed_prompt="fine brushed metal"),
                           port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


def serve(config):
    server = create_server(config, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, f"http://127.0.0.1:{server.server_port}"
