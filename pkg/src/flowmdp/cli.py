"""Command-line entry point.

Subcommands mirror the pipeline stages. By default each command talks to
an in-process instance of the HTTP service (no network involved); pass
``--server http://host:port`` to send the same request to a running
server instead, and use the ``serve`` subcommand to start one.

Exit codes: 0 success, 2 configuration error (argparse uses the same code
for usage errors), 3 I/O error, 4 contract violation, 5 verification
failure.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

import httpx

from . import __version__
from .errors import EXIT_IO, EXIT_OK, EXIT_VERIFY, FlowMdpError, error_for_category


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowmdp",
        description="Flow-field decision model pipeline: generate, build, solve, roll out.",
    )
    parser.add_argument("--version", action="version", version=f"flowmdp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, threads=False, out=False):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument(
            "--server",
            default=None,
            help="base URL of a running service (default: run in-process)",
        )
        if threads:
            p.add_argument(
                "--threads", type=int, default=None, help="override config thread count"
            )
        if out:
            p.add_argument("--out", required=True, help="output path")

    add_common(
        sub.add_parser("generate-env", help="synthesize an environment container"),
        out=True,
    )
    add_common(sub.add_parser("reduce", help="reduce a raw ensemble to modes"))
    add_common(sub.add_parser("build", help="build the sparse model"), threads=True)
    add_common(sub.add_parser("solve", help="solve the model by value iteration"))
    add_common(
        sub.add_parser("rollout", help="roll the policy through the ensemble"),
        threads=True,
    )
    add_common(sub.add_parser("verify", help="run the verification checks"))
    add_common(sub.add_parser("bench", help="time builds across sizes and threads"), out=True)

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _post(server: str | None, path: str, payload: dict) -> dict:
    """Send one request, in-process unless a server URL is given."""
    if server is not None:
        with httpx.Client(base_url=server, timeout=None) as client:
            response = client.post(path, json=payload)
    else:
        from .service import create_app

        transport = httpx.ASGITransport(app=create_app())

        async def go():
            async with httpx.AsyncClient(
                transport=transport, base_url="http://flowmdp.local", timeout=None
            ) as client:
                return await client.post(path, json=payload)

        response = asyncio.run(go())

    if response.status_code != 200:
        try:
            body = response.json()
        except ValueError:
            body = {"category": "io", "message": response.text}
        raise error_for_category(
            body.get("category", "error"), body.get("message", "request failed")
        )
    return response.json()


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return EXIT_OK

    try:
        if args.command == "generate-env":
            result = _post(
                args.server,
                "/generate-env",
                {"config_path": args.config, "out": args.out},
            )
        elif args.command == "bench":
            result = _post(
                args.server, "/bench", {"config_path": args.config, "out": args.out}
            )
        else:
            payload: dict = {"config_path": args.config}
            if getattr(args, "threads", None) is not None:
                payload["threads"] = args.threads
            result = _post(args.server, f"/{args.command}", payload)
    except FlowMdpError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except httpx.HTTPError as exc:
        print(f"io: cannot reach service: {exc}", file=sys.stderr)
        return EXIT_IO

    if args.command == "verify":
        for check in result["checks"]:
            mark = "PASS" if check["passed"] else "FAIL"
            print(f"{mark} {check['name']}: {check['detail']}")
        if not result["passed"]:
            print("verification failed", file=sys.stderr)
            return EXIT_VERIFY
        return EXIT_OK

    print(json.dumps(result, sort_keys=True, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
