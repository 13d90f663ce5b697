"""Command line: one `serve` invocation per shim kind.

    surgforge-shim serve --kind embed.text --transport http --port 8701
    surgforge-shim serve --kind asr.transcribe --transport stdio
    surgforge-shim serve --kind text.judge --engine openai \
        --base-url https://api.example.com/v1 --model gpt-class --api-key ...
"""

import argparse
import logging
import sys

from surgforge_shims.engines import build_engine
from surgforge_shims.server import serve_http, serve_stdio
from surgforge_shims.wire import KINDS


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="surgforge-shim")
    sub = parser.add_subparsers(dest="command", required=True)
    serve = sub.add_parser("serve", help="serve one protocol kind")
    serve.add_argument("--kind", required=True, choices=KINDS)
    serve.add_argument("--engine", default="local",
                       help="local (default: the built-in engine) or openai")
    serve.add_argument("--transport", default="stdio", choices=("stdio", "http"))
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8701)
    serve.add_argument("--token", default="", help="require this bearer token (http)")
    serve.add_argument("--max-concurrency", type=int, default=8)
    serve.add_argument("--base-url", default="", help="openai engine API base URL")
    serve.add_argument("--model", default="", help="openai engine model identifier")
    serve.add_argument("--api-key", default="", help="openai engine credential")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        engine = build_engine(args.kind, args.engine, args.base_url, args.model,
                              args.api_key)
    except ValueError as exc:
        parser.error(str(exc))
        return 2
    if args.transport == "stdio":
        serve_stdio(args.kind, engine)
        return 0
    server = serve_http(args.kind, engine, args.host, args.port, args.token,
                        args.max_concurrency)
    logging.getLogger(__name__).info(
        "serving %s on http://%s:%d", args.kind, *server.server_address
    )
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
