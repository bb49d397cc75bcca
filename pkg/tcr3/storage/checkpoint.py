"""
Checkpoints: the model config as a JSON entry plus one entry per tensor.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import torch

from ..errors import ContainerFormatError
from ..model.dit import ModelConfig
from ..model.pipeline import TrackingNetwork
from .clips import json_entry, parse_json_entry
from .container import read_container, write_container

logger = logging.getLogger(__name__)

CONFIG_ENTRY = "config"
PARAM_PREFIX = "param/"


def save_checkpoint(path: Union[str, Path], network: TrackingNetwork, meta: Optional[Dict[str, Any]] = None):
    entries = {CONFIG_ENTRY: json_entry({"model": network.config.to_dict(), "meta": meta or {}})}
    for name, tensor in network.state_dict().items():
        entries[PARAM_PREFIX + name] = tensor.detach().cpu().numpy()
    write_container(path, entries)
    logger.info(f"Saved checkpoint with {len(entries) - 1} tensors to {path}")


def load_checkpoint(path: Union[str, Path]) -> Tuple[TrackingNetwork, Dict[str, Any]]:
    """
    Rebuild the network stored at `path`.

    Returns:
        (network, metadata saved alongside it)
    """
    entries = read_container(path)
    if CONFIG_ENTRY not in entries:
        raise ContainerFormatError(f"{path}: checkpoint lacks a config entry")
    stored = parse_json_entry(entries[CONFIG_ENTRY], CONFIG_ENTRY)
    network = TrackingNetwork(ModelConfig.from_dict(stored["model"]))

    state = {name[len(PARAM_PREFIX) :]: array for name, array in entries.items() if name.startswith(PARAM_PREFIX)}
    expected = network.state_dict()
    if set(state) != set(expected):
        missing = sorted(set(expected) - set(state))
        extra = sorted(set(state) - set(expected))
        raise ContainerFormatError(f"{path}: checkpoint tensors do not match the model (missing {missing}, extra {extra})")
    dtype = next(iter(state.values())).dtype if state else np.float32
    if dtype == np.float64:
        network = network.to(torch.float64)
    network.load_state_dict({name: torch.from_numpy(np.ascontiguousarray(array)) for name, array in state.items()})
    return network, stored.get("meta", {})
