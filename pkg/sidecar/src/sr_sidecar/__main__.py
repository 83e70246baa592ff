import argparse

from .config import ServiceConfig, load_config
from .server import serve_forever


def main():
    parser = argparse.ArgumentParser(prog="zoomsplat-sidecar")
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--port", type=int, default=None)
    parser.add_argument("--mode", choices=["mock", "real"], default=None)
    args = parser.parse_args()
    config = load_config(args.config) if args.config else ServiceConfig()
    if args.port is not None:
        config.port = args.port
    if args.mode is not None:
        config.mode = args.mode
    serve_forever(config)


if __name__ == "__main__":
    main()
