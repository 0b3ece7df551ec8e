"""
Checkpoint encoding and file persistence
"""
import logging
import os
from typing import Dict, Optional

import numpy as np

from .const import CHECKPOINT_FILE, CHECKPOINT_FORMAT_VERSION
from .errors import StateError
from .layers import Module
from .model import DelayNet, build
from .models import Checkpoint, HexArray, PipelineConfig, TrainConfig

_LOGGER = logging.getLogger(__name__)


def encode_array(array: np.ndarray) -> HexArray:
    """Exact text form of a float64 array"""
    array = np.asarray(array, dtype=np.float64)
    return HexArray(shape=list(array.shape), data=[float(v).hex() for v in array.reshape(-1)])


def decode_array(encoded: HexArray) -> np.ndarray:
    values = np.array([float.fromhex(v) for v in encoded.data], dtype=np.float64)
    return values.reshape(tuple(encoded.shape))


def make_checkpoint(
    net: Module,
    train: Optional[TrainConfig] = None,
    pipeline: Optional[PipelineConfig] = None,
    best_val_mae: float = float("inf"),
    best_epoch: int = -1,
    seed: int = 0,
    state: Optional[tuple] = None,
) -> Checkpoint:
    """Snapshot a network's parameters and buffers

    Args:
        net: Network to snapshot
        train: Training configuration echo
        pipeline: Preprocessing constants echo
        best_val_mae: Validation MAE at the snapshot
        best_epoch: Epoch of the snapshot
        seed: Build seed
        state: (params, buffers) to store instead of the network's current state

    Returns:
        Checkpoint: Serializable checkpoint
    """
    params, buffers = state if state is not None else net.state_dict()
    return Checkpoint(
        format_version=CHECKPOINT_FORMAT_VERSION,
        net=net.cfg if isinstance(net, DelayNet) else None,
        train=train or TrainConfig(),
        pipeline=pipeline or PipelineConfig(),
        parameters={name: encode_array(v) for name, v in params.items()},
        buffers={name: encode_array(v) for name, v in buffers.items()},
        best_val_mae=best_val_mae,
        best_epoch=best_epoch,
        seed=seed,
    )


def checkpoint_state(checkpoint: Checkpoint) -> tuple:
    """Decoded (params, buffers) dictionaries"""
    params: Dict[str, np.ndarray] = {k: decode_array(v) for k, v in checkpoint.parameters.items()}
    buffers: Dict[str, np.ndarray] = {k: decode_array(v) for k, v in checkpoint.buffers.items()}
    return params, buffers


def restore(checkpoint: Checkpoint) -> DelayNet:
    """Rebuild the network a checkpoint was taken from

    Raises:
        StateError: If the checkpoint has no network config or a different format
    """
    if checkpoint.format_version != CHECKPOINT_FORMAT_VERSION:
        raise StateError(f"Unsupported checkpoint format {checkpoint.format_version}")
    if checkpoint.net is None:
        raise StateError("Checkpoint carries no network configuration")
    net = build(checkpoint.net, seed=checkpoint.seed)
    net.load_state_dict(*checkpoint_state(checkpoint))
    net.eval()
    return net


class CheckpointStore:
    """Class for managing checkpoint files in one directory"""

    def __init__(self, directory: str):
        """Initialize the store

        Args:
            directory: Directory holding checkpoint files, created if needed
        """
        self.directory = directory
        os.makedirs(self.directory, exist_ok=True)

    def path(self, name: str = CHECKPOINT_FILE) -> str:
        return os.path.join(self.directory, name)

    def save(self, checkpoint: Checkpoint, name: str = CHECKPOINT_FILE) -> str:
        """Write a checkpoint as JSON

        Returns:
            str: Path written
        """
        path = self.path(name)
        with open(path, "w") as f:
            f.write(checkpoint.model_dump_json(indent=1))
        _LOGGER.debug(f"Checkpoint saved to {path}")
        return path

    def load(self, name: str = CHECKPOINT_FILE) -> Optional[Checkpoint]:
        """Read a checkpoint

        Returns:
            Optional[Checkpoint]: The checkpoint, or None if the file does not exist
        """
        path = self.path(name)
        if not os.path.exists(path):
            _LOGGER.debug(f"No checkpoint at {path}")
            return None
        with open(path, "r") as f:
            checkpoint = Checkpoint.model_validate_json(f.read())
        _LOGGER.debug(f"Loaded checkpoint from {path}")
        return checkpoint

    def clear(self, name: str = CHECKPOINT_FILE) -> bool:
        """Remove a checkpoint file

        Returns:
            bool: True if a file was removed
        """
        path = self.path(name)
        if os.path.exists(path):
            try:
                os.remove(path)
                _LOGGER.debug(f"Checkpoint {path} cleared")
                return True
            except OSError as e:
                _LOGGER.error(f"Failed to clear checkpoint {path}: {e}")
        return False
