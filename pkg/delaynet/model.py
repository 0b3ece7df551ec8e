"""
The Delay network and the Zero baseline
"""
import logging
from typing import Any, Dict, Optional, Union

import numpy as np
from pydantic import ValidationError

from .autodiff import Tensor, as_tensor, concat, leaky_relu
from .const import BlockPosition
from .errors import ConfigurationError
from .layers import Aggregator, FilterBank, Module, TemporalAggregator
from .models import DelayNetConfig

_LOGGER = logging.getLogger(__name__)


def validate_net_config(cfg: Union[DelayNetConfig, Dict[str, Any]]) -> DelayNetConfig:
    """Validate a network config, reporting the offending fields

    Raises:
        ConfigurationError: Listing every invalid field
    """
    if isinstance(cfg, DelayNetConfig):
        return cfg
    try:
        return DelayNetConfig.model_validate(cfg)
    except ValidationError as e:
        fields = ", ".join(".".join(str(p) for p in err["loc"]) or "<root>" for err in e.errors())
        raise ConfigurationError(f"Invalid DelayNetConfig fields: {fields}: {e}")


class DelayNet(Module):
    """FilterLow -> AggLow -> TemporalAgg -> concat(X2) -> FilterHigh -> AggHigh"""

    def __init__(self, cfg: DelayNetConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.seed = seed
        seeds = [int(s) for s in np.random.SeedSequence(seed).generate_state(5)]
        bn = {"bn_eps": cfg.bn_eps, "bn_momentum": cfg.bn_momentum}

        self.low = self.register_module("low", FilterBank(cfg.bank(BlockPosition.LOW), cfg.F, cfg.S, seed=seeds[0], **bn))
        self.agg_low = self.register_module("agg_low", Aggregator(cfg.agg_low, self.low.out_channels, cfg.Fc, seed=seeds[1]))
        self.temporal = self.register_module(
            "temporal",
            TemporalAggregator(
                cfg.temporal_kind,
                cfg.Fc,
                cfg.S,
                cfg.T,
                seed=seeds[2],
                apply_batchnorm=cfg.apply_batchnorm,
                norm_kind=cfg.norm_kind,
                causal_kernel_size=cfg.causal_kernel_size,
                init=cfg.init,
                **bn,
            ),
        )
        self.high = self.register_module(
            "high", FilterBank(cfg.bank(BlockPosition.HIGH), cfg.Fc + cfg.C, cfg.T, seed=seeds[3], **bn)
        )
        self.agg_high = self.register_module("agg_high", Aggregator(cfg.agg_high, self.high.out_channels, cfg.Fy, seed=seeds[4]))
        _LOGGER.debug(f"Built DelayNet with {self.param_count()} parameters (seed {seed})")

    def forward(self, x1: Tensor, x2: Tensor, training: Optional[bool] = None) -> Tensor:
        """Predict normalized targets

        Args:
            x1: Known past [B, F, S]
            x2: Future commands [B, C, T]
            training: Switch BatchNorm mode before running, if given

        Returns:
            Tensor: [B, Fy, T]
        """
        cfg = self.cfg
        x1, x2 = as_tensor(x1), as_tensor(x2)
        if x1.ndim != 3 or x1.shape[1:] != (cfg.F, cfg.S):
            raise ConfigurationError(f"x1 must be [B, {cfg.F}, {cfg.S}], got {x1.shape}")
        if x2.ndim != 3 or x2.shape != (x1.shape[0], cfg.C, cfg.T):
            raise ConfigurationError(f"x2 must be [{x1.shape[0]}, {cfg.C}, {cfg.T}], got {x2.shape}")
        if training is not None:
            self.train(training)
        h = self.agg_low(self.low(x1))
        h = leaky_relu(h)
        h = leaky_relu(self.temporal(h))
        h = concat([h, x2], axis=1)
        h = leaky_relu(self.high(h))
        return self.agg_high(h)


def build(cfg: Union[DelayNetConfig, Dict[str, Any]], seed: int = 0) -> DelayNet:
    """Construct a DelayNet with deterministic per-block initialization"""
    return DelayNet(validate_net_config(cfg), seed=seed)


def forward(net: DelayNet, x1: Tensor, x2: Tensor, training: bool) -> Tensor:
    return net(x1, x2, training=training)


def param_count(net: Module) -> int:
    """Number of learnable scalars"""
    return net.param_count()


class ZeroPredictor:
    """Outputs zeros in normalized space, i.e. the recent target average"""

    def __init__(self, Fy: int, T: int):
        self.Fy = Fy
        self.T = T

    def __call__(self, x1: Tensor, x2: Tensor, training: Optional[bool] = None) -> Tensor:
        return zero_predictor(x1, x2, self.Fy, self.T)

    def train(self, mode: bool = True) -> "ZeroPredictor":
        return self

    def eval(self) -> "ZeroPredictor":
        return self


def zero_predictor(x1: Tensor, x2: Tensor, Fy: int, T: Optional[int] = None) -> Tensor:
    """Zeros of shape [B, Fy, T]; T defaults to the command length"""
    x1 = as_tensor(x1)
    T = T if T is not None else as_tensor(x2).shape[2]
    return Tensor(np.zeros((x1.shape[0], Fy, T)))
