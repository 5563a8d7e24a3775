"""Serve a local causal LM behind the logprob protocol."""

from __future__ import annotations

import argparse

import uvicorn

from .app import ServiceConfig, create_app
from .model import CausalLMBackend


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="scorer-service")
    parser.add_argument("--model", required=True,
                        help="model path or hub id loadable by transformers")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8400)
    parser.add_argument("--max-context-tokens", type=int, default=4096)
    parser.add_argument("--max-pending", type=int, default=8)
    args = parser.parse_args(argv)

    backend = CausalLMBackend(args.model, device=args.device,
                              max_context_tokens=args.max_context_tokens)
    app = create_app(backend, ServiceConfig(max_pending=args.max_pending))
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
