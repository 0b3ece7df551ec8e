"""
Delaynet MCP Server - A Model Context Protocol server for delay-filter experiments
"""

import json
import logging
from typing import Any, Dict, List, Optional

from fastmcp import FastMCP
from fastmcp.exceptions import ClientError

from .errors import DelayNetError
from .evaluation import box_stats
from .experiment_manager import ExperimentManager
from .models import RunConfig

_LOGGER = logging.getLogger(__name__)


class DelayMCPServer:
    """MCP Server exposing the experiment workflows"""

    def __init__(self, config: Dict[str, Any]):
        """Initialize the MCP Server

        Args:
            config: RunConfig dictionary
        """
        self.config = RunConfig(**config)
        self.server = FastMCP(name="DelayNetMCP")
        self.manager = ExperimentManager(self.config)

        self._register_tools()

    def _register_tools(self):
        """Register all tools with the MCP server"""

        @self.server.tool()
        async def simulate(out_dir: str) -> Dict[str, Any]:
            """Generate synthetic plant data with a known dead time

            Args:
                out_dir: Directory for series.csv, manifest.json and ground_truth.json

            Returns:
                Dict[str, Any]: Row count, dead time and event counts
            """
            try:
                return self.manager.simulate(out_dir)
            except DelayNetError as e:
                _LOGGER.error(f"Simulation failed: {e}")
                raise ClientError(f"Simulation failed: {e}")

        @self.server.tool()
        async def prepare(data_dir: str, out_dir: str) -> Dict[str, Any]:
            """Window, normalize and split a series into a sample cache

            Args:
                data_dir: Directory with series.csv and manifest.json
                out_dir: Directory for the sample cache

            Returns:
                Dict[str, Any]: Train and validation sample counts
            """
            try:
                return self.manager.prepare(data_dir, out_dir)
            except (DelayNetError, OSError) as e:
                _LOGGER.error(f"Failed to prepare samples: {e}")
                raise ClientError(f"Failed to prepare samples: {e}")

        @self.server.tool()
        async def train(samples_dir: str, out_dir: str) -> Dict[str, Any]:
            """Train the configured network and save the best checkpoint

            Args:
                samples_dir: Sample cache written by prepare
                out_dir: Directory for checkpoint.json, metrics.csv and report.json

            Returns:
                Dict[str, Any]: Best epoch, best validation MAE and epochs run
            """
            try:
                report = self.manager.train(samples_dir, out_dir)
                return {
                    "best_epoch": report.best_epoch,
                    "best_val_mae": report.best_val_mae,
                    "epochs": len(report.epochs),
                    "stopped_early": report.stopped_early,
                }
            except (DelayNetError, OSError) as e:
                _LOGGER.error(f"Training failed: {e}")
                raise ClientError(f"Training failed: {e}")

        @self.server.tool()
        async def evaluate(
            checkpoint_dir: str, samples_dir: str, out_dir: str, data_dir: Optional[str] = None
        ) -> Dict[str, Any]:
            """Evaluate a checkpoint against the Zero predictor

            Args:
                checkpoint_dir: Directory with checkpoint.json
                samples_dir: Sample cache written by prepare
                out_dir: Directory for the evaluation CSVs and report
                data_dir: Directory with ground_truth.json for the quiet subset

            Returns:
                Dict[str, Any]: The evaluation report
            """
            try:
                return self.manager.evaluate(checkpoint_dir, samples_dir, out_dir, data_dir).model_dump(mode="json")
            except (DelayNetError, OSError) as e:
                _LOGGER.error(f"Evaluation failed: {e}")
                raise ClientError(f"Evaluation failed: {e}")

        @self.server.tool()
        async def gradcheck(points: int = 2) -> List[Dict[str, Any]]:
            """Run the finite-difference gradient checks

            Args:
                points: Random points per check

            Returns:
                List[Dict[str, Any]]: Worst relative error per check
            """
            try:
                return [r.model_dump() for r in self.manager.gradcheck(points=points)]
            except DelayNetError as e:
                _LOGGER.error(f"Gradient check failed: {e}")
                raise ClientError(f"Gradient check failed: {e}")

        @self.server.tool()
        async def get_box_stats(values: List[float], name: str = "") -> Dict[str, Any]:
            """Boxplot statistics with whiskers at the 10th and 90th percentile

            Args:
                values: Values to summarize
                name: Label of the box

            Returns:
                Dict[str, Any]: Percentiles, outliers and count
            """
            try:
                return box_stats(values, name=name).model_dump()
            except DelayNetError as e:
                _LOGGER.error(f"Failed to compute box statistics: {e}")
                raise ClientError(f"Failed to compute box statistics: {e}")

    async def start(self, host: str = "0.0.0.0", port: int = 8000):
        """Start the MCP server

        Args:
            host: Host to listen on
            port: Port to listen on
        """
        await self.server.run_async(transport="sse", host=host, port=port)


def create_server(config_path: Optional[str] = None) -> DelayMCPServer:
    """Create an MCP server from a config file

    Args:
        config_path: Path to a JSON config file; defaults are used when omitted

    Returns:
        DelayMCPServer: MCP server instance
    """
    config: Dict[str, Any] = {}
    if config_path:
        with open(config_path, "r") as f:
            config = json.load(f)

    return DelayMCPServer(config)
