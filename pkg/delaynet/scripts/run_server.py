#!/usr/bin/env python
"""
Run the delaynet MCP server
"""
import argparse
import asyncio
import json
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from delaynet.mcp_server import DelayMCPServer

_LOGGER = logging.getLogger(__name__)


def parse_args(argv: Optional[List[str]] = None):
    """Parse command line arguments"""
    parser = argparse.ArgumentParser(description="Run the delaynet MCP server")
    parser.add_argument(
        "--config", "-c",
        default=None,
        help="Path to a JSON config file",
    )
    parser.add_argument(
        "--host", "-H",
        default="0.0.0.0",
        help="Host to listen on",
    )
    parser.add_argument(
        "--port", "-p",
        type=int,
        default=8000,
        help="Port to listen on",
    )
    parser.add_argument(
        "--stdio",
        action="store_true",
        help="Serve over stdio instead of SSE",
    )
    parser.add_argument(
        "--debug", "-d",
        action="store_true",
        help="Enable debug logging",
    )

    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    """Main function"""
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    args = parse_args(argv)

    if args.debug:
        logging.getLogger().setLevel(logging.DEBUG)

    config = {}
    if args.config:
        try:
            with open(args.config, "r") as f:
                config = json.load(f)
        except (FileNotFoundError, json.JSONDecodeError) as e:
            _LOGGER.error(f"Failed to load config file: {e}")
            return 1

    try:
        server = DelayMCPServer(config)
    except ValidationError as e:
        _LOGGER.error(f"Invalid config: {e}")
        return 1

    if args.stdio:
        server.server.run(transport="stdio")
        return 0

    try:
        _LOGGER.info(f"Starting delaynet MCP server on {args.host}:{args.port}")
        asyncio.run(server.start(host=args.host, port=args.port))
    except KeyboardInterrupt:
        _LOGGER.info("Shutting down delaynet MCP server")
    except Exception as e:
        _LOGGER.error(f"Server error: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
