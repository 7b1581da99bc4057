import argparse

import uvicorn

from .app import create_app
from .config import SidecarConfig


def main() -> int:
    parser = argparse.ArgumentParser(prog="resynth-sidecar")
    parser.add_argument("--model", default="stub-768")
    parser.add_argument("--caption-model", default="stub", help="empty string disables captioning")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8871)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-request-bytes", type=int, default=32 * 1024 * 1024)
    args = parser.parse_args()
    config = SidecarConfig(
        model=args.model,
        caption_model=args.caption_model,
        host=args.host,
        port=args.port,
        device=args.device,
        max_request_bytes=args.max_request_bytes,
    )
    uvicorn.run(create_app(config), host=config.host, port=config.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
