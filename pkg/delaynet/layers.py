"""
Network blocks: filter banks, normalization, causal convolution and aggregators
"""
import logging
import math
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .autodiff import Tensor, concat, conv1d, conv1d_depthwise, einsum, interp1d, leaky_relu, matmul, parameter
from .const import BN_EPS, BN_MOMENTUM, CAUSAL_KERNEL_SIZE, FilterFamily, FilterMode, NormKind, Padding, TemporalKind
from .errors import ConfigurationError, StateError
from .kernels import (
    KernelParams,
    affine_source,
    affine_warp,
    gabor_at,
    gabor_kernel,
    gabor_magnitude,
    gabor_response,
    gauss_at,
    gauss_kernel,
    init_params,
    kernel_support,
    lognormal_at,
    lognormal_kernel,
)
from .models import AggregatorConfig, FilterBankConfig, KernelInit

_LOGGER = logging.getLogger(__name__)


class Module:
    """Container of parameters, buffers and child modules"""

    def __init__(self):
        self._parameters: "OrderedDict[str, Tensor]" = OrderedDict()
        self._buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._modules: "OrderedDict[str, Module]" = OrderedDict()
        self.training = True

    def register_parameter(self, name: str, tensor: Tensor) -> Tensor:
        if not tensor.requires_grad:
            raise ConfigurationError(f"Parameter {name} must require grad")
        self._parameters[name] = tensor
        return tensor

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = np.asarray(value, dtype=np.float64)

    def register_module(self, name: str, module: "Module") -> "Module":
        self._modules[name] = module
        return module

    def buffer(self, name: str) -> np.ndarray:
        return self._buffers[name]

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, tensor in self._parameters.items():
            yield prefix + name, tensor
        for name, module in self._modules.items():
            yield from module.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, value in self._buffers.items():
            yield prefix + name, value
        for name, module in self._modules.items():
            yield from module.named_buffers(prefix + name + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for module in self._modules.values():
            yield from module.modules()

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_parameters()]

    def param_count(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for module in self._modules.values():
            module.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
        """Copies of all parameter and buffer arrays keyed by dotted name"""
        params = {name: t.data.copy() for name, t in self.named_parameters()}
        buffers = {name: v.copy() for name, v in self.named_buffers()}
        return params, buffers

    def load_state_dict(self, params: Dict[str, np.ndarray], buffers: Optional[Dict[str, np.ndarray]] = None) -> None:
        """Overwrite parameters and buffers in place

        Raises:
            StateError: On missing, unexpected or mis-shaped entries
        """
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(params))
        unexpected = sorted(set(params) - set(own))
        if missing or unexpected:
            raise StateError(f"Parameter mismatch: missing {missing}, unexpected {unexpected}")
        for name, tensor in own.items():
            value = np.asarray(params[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise StateError(f"Parameter {name} has shape {value.shape}, expected {tensor.shape}")
            tensor.data[...] = value
        if buffers is not None:
            self._load_buffers(buffers, "")

    def _load_buffers(self, buffers: Dict[str, np.ndarray], prefix: str) -> None:
        for name, current in self._buffers.items():
            key = prefix + name
            if key not in buffers:
                raise StateError(f"Missing buffer {key}")
            value = np.asarray(buffers[key], dtype=np.float64)
            if value.shape != current.shape:
                raise StateError(f"Buffer {key} has shape {value.shape}, expected {current.shape}")
            self._buffers[name] = value.copy()
        for name, module in self._modules.items():
            module._load_buffers(buffers, prefix + name + ".")

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _keepdims_shape(shape: Tuple[int, ...], axes: Tuple[int, ...]) -> Tuple[int, ...]:
    return tuple(1 if i in axes else extent for i, extent in enumerate(shape))


class BatchNorm(Module):
    """Batch normalization with running statistics

    Statistics have shape stat_shape and are reduced over axes; per-channel
    normalization of [B, Ch, S] uses axes (0, 2), per-cell uses axes (0,).
    """

    def __init__(self, stat_shape: Tuple[int, ...], axes: Tuple[int, ...], eps: float = BN_EPS, momentum: float = BN_MOMENTUM):
        super().__init__()
        self.stat_shape = tuple(stat_shape)
        self.axes = tuple(axes)
        self.eps = eps
        self.momentum = momentum
        self.gamma = self.register_parameter("gamma", parameter(np.ones(self.stat_shape)))
        self.beta = self.register_parameter("beta", parameter(np.zeros(self.stat_shape)))
        self.register_buffer("running_mean", np.zeros(self.stat_shape))
        self.register_buffer("running_var", np.ones(self.stat_shape))

    def forward(self, x: Tensor) -> Tensor:
        keep = _keepdims_shape(x.shape, self.axes)
        if self.training:
            n = int(np.prod([x.shape[a] for a in self.axes]))
            if n < 2:
                raise ConfigurationError(f"BatchNorm needs at least 2 values per statistic in training, got {n}")
            mean = x.mean(axis=self.axes, keepdims=True)
            centered = x - mean.broadcast_to(x.shape)
            var = centered.square().mean(axis=self.axes, keepdims=True)
            x_hat = centered / (var + self.eps).sqrt().broadcast_to(x.shape)
            m = self.momentum
            self._buffers["running_mean"] = (1.0 - m) * self._buffers["running_mean"] + m * mean.data.reshape(self.stat_shape)
            unbiased = var.data.reshape(self.stat_shape) * n / (n - 1)
            self._buffers["running_var"] = (1.0 - m) * self._buffers["running_var"] + m * unbiased
        else:
            mean = np.broadcast_to(self._buffers["running_mean"].reshape(keep), x.shape)
            std = np.broadcast_to(np.sqrt(self._buffers["running_var"].reshape(keep) + self.eps), x.shape)
            x_hat = (x - Tensor(mean)) / Tensor(std)
        gamma = self.gamma.reshape(keep).broadcast_to(x.shape)
        beta = self.beta.reshape(keep).broadcast_to(x.shape)
        return x_hat * gamma + beta


def batchnorm_forward(
    bn: BatchNorm,
    x: Tensor,
    training: bool,
    momentum: Optional[float] = None,
    eps: Optional[float] = None,
) -> Tensor:
    """Run a BatchNorm in the given mode, optionally overriding momentum and eps"""
    if momentum is not None:
        bn.momentum = momentum
    if eps is not None:
        bn.eps = eps
    bn.train(training)
    return bn(x)


class AffineNorm(Module):
    """Learnable scale and shift without statistics"""

    def __init__(self, stat_shape: Tuple[int, ...], axes: Tuple[int, ...]):
        super().__init__()
        self.stat_shape = tuple(stat_shape)
        self.axes = tuple(axes)
        self.gamma = self.register_parameter("gamma", parameter(np.ones(self.stat_shape)))
        self.beta = self.register_parameter("beta", parameter(np.zeros(self.stat_shape)))

    def forward(self, x: Tensor) -> Tensor:
        keep = _keepdims_shape(x.shape, self.axes)
        return x * self.gamma.reshape(keep).broadcast_to(x.shape) + self.beta.reshape(keep).broadcast_to(x.shape)


def make_norm(kind: NormKind, stat_shape: Tuple[int, ...], axes: Tuple[int, ...], eps: float = BN_EPS, momentum: float = BN_MOMENTUM) -> Module:
    if NormKind(kind) == NormKind.AFFINE:
        return AffineNorm(stat_shape, axes)
    return BatchNorm(stat_shape, axes, eps=eps, momentum=momentum)


class FilterBank(Module):
    """n learnable filters per input feature, per feature or per output cell

    Per-feature output channels are feature-major (channel f*n + j); gabor
    banks emit the magnitude block followed by the angle block. Per-cell
    output position tau reads the input around position S - T + tau.
    """

    def __init__(
        self,
        cfg: FilterBankConfig,
        F: int,
        S: int,
        seed: int = 0,
        params: Optional[KernelParams] = None,
        bn_eps: float = BN_EPS,
        bn_momentum: float = BN_MOMENTUM,
    ):
        super().__init__()
        self.cfg = cfg
        self.family = FilterFamily(cfg.family)
        self.mode = FilterMode(cfg.mode)
        self.F = F
        self.S = S
        self.n = cfg.n_filters
        self.T = cfg.out_time if self.mode == FilterMode.PER_CELL else S
        if self.mode == FilterMode.PER_CELL and cfg.out_time is None:
            raise ConfigurationError("per_cell filter banks need out_time")
        if self.family == FilterFamily.IDENTITY and self.T > S:
            raise ConfigurationError(f"Identity bank cannot extend {S} steps to {self.T}")

        self.params: Optional[KernelParams] = None
        if self.family != FilterFamily.IDENTITY:
            grid = (F * self.n,) if self.mode == FilterMode.PER_FEATURE else (F, self.n, self.T)
            if params is None:
                params = init_params(self.family, S, seed, grid, cfg.init)
            elif params.family != self.family or params.grid != grid:
                raise ConfigurationError(
                    f"Filter bank expects {self.family.value} parameters on grid {grid}, got {params.family.value} on {params.grid}"
                )
            self.params = params
            for name, tensor in params.items():
                self.register_parameter(name, tensor)

        self.support: Optional[int] = None
        if self.mode == FilterMode.PER_FEATURE and self.family in (FilterFamily.GAUSS, FilterFamily.LOGNORMAL, FilterFamily.GABOR):
            if cfg.kernel_support is not None:
                if cfg.kernel_support % 2 == 0:
                    raise ConfigurationError(f"kernel_support must be odd, got {cfg.kernel_support}")
                self.support = cfg.kernel_support
            else:
                self.support = kernel_support(self.family, S, self.params, cfg.gabor_bandwidth)

        self.norm: Optional[Module] = None
        if cfg.apply_batchnorm and self.family != FilterFamily.IDENTITY:
            if self.mode == FilterMode.PER_FEATURE:
                stat_shape, axes = (self.out_channels,), (0, 2)
            else:
                stat_shape, axes = (self.out_channels, self.T), (0,)
            self.norm = self.register_module("norm", make_norm(cfg.norm_kind, stat_shape, axes, bn_eps, bn_momentum))
        _LOGGER.debug(
            f"FilterBank {self.family.value}/{self.mode.value}: F={F} n={self.n} S={S} T={self.T} "
            f"support={self.support} params={self.param_count()}"
        )

    @property
    def out_channels(self) -> int:
        if self.family == FilterFamily.IDENTITY:
            return self.F
        width = self.F * self.n
        return 2 * width if self.family == FilterFamily.GABOR else width

    def _repeat(self, x: Tensor) -> Tensor:
        B = x.shape[0]
        if self.n == 1:
            return x
        return x.reshape(B, self.F, 1, self.S).broadcast_to((B, self.F, self.n, self.S)).reshape(B, self.F * self.n, self.S)

    def _per_feature(self, x: Tensor) -> Tensor:
        xr = self._repeat(x)
        if self.family == FilterFamily.AFFINE:
            return affine_warp(xr, self.params)
        if self.family == FilterFamily.GAUSS:
            return conv1d_depthwise(xr, gauss_kernel(self.params, self.support), Padding.SAME_ZERO)
        if self.family == FilterFamily.LOGNORMAL:
            return conv1d_depthwise(xr, lognormal_kernel(self.params, self.support), Padding.SAME_ZERO)
        re, im = gabor_kernel(self.params, self.S, self.cfg.gabor_bandwidth, self.support)
        mag, ang = gabor_response(xr, re, im, params=self.params)
        return concat([mag, ang], axis=1)

    def _per_cell(self, x: Tensor) -> Tensor:
        B, F, n, S, T = x.shape[0], self.F, self.n, self.S, self.T
        anchors = np.arange(T, dtype=np.float64) + (S - T)
        if self.family == FilterFamily.AFFINE:
            coords = affine_source(self.params, anchors, (S - 1) / 2.0, per_cell=True)
            return interp1d(self._repeat(x), coords.reshape(F * n, T))
        offsets = np.arange(S, dtype=np.float64)[None, :] - anchors[:, None]
        if self.family == FilterFamily.GABOR:
            re, im = gabor_at(self.params, offsets, S, self.cfg.gabor_bandwidth)
            o_re = einsum("bfs,fjts->bfjt", x, re).reshape(B, F * n, T)
            o_im = einsum("bfs,fjts->bfjt", x, im).reshape(B, F * n, T)
            mag, ang = gabor_magnitude(o_re, o_im)
            return concat([mag, ang], axis=1)
        weights = gauss_at(self.params, offsets) if self.family == FilterFamily.GAUSS else lognormal_at(self.params, offsets)
        return einsum("bfs,fjts->bfjt", x, weights).reshape(B, F * n, T)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[1] != self.F or x.shape[2] != self.S:
            raise ConfigurationError(f"FilterBank expects [B, {self.F}, {self.S}], got {x.shape}")
        if self.family == FilterFamily.IDENTITY:
            return x if self.T == self.S else x[:, :, self.S - self.T:]
        out = self._per_feature(x) if self.mode == FilterMode.PER_FEATURE else self._per_cell(x)
        if self.norm is not None:
            out = self.norm(out)
        return out


def filter_bank_forward(
    cfg: FilterBankConfig,
    params: Optional[KernelParams],
    x: Tensor,
    training: bool = True,
    bank: Optional[FilterBank] = None,
) -> Tensor:
    """Apply a filter bank with the given parameters to x [B, F, S]

    Without bank this is stateless: a fresh FilterBank is built per call, so
    training mode normalizes with the batch statistics and eval mode with the
    initial running statistics (mean 0, var 1). Pass a FilterBank to keep its
    running statistics across calls; params must then be None or its own.

    Raises:
        ConfigurationError: If bank was built for other parameters or another config
    """
    if bank is None:
        bank = FilterBank(cfg, x.shape[1], x.shape[2], params=params)
    elif (params is not None and params is not bank.params) or bank.cfg != cfg:
        raise ConfigurationError("filter_bank_forward got a bank built for other parameters or another config")
    bank.train(training)
    return bank(x)


class CausalConv(Module):
    """Left-padded channel-mixing convolution without bias"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = CAUSAL_KERNEL_SIZE, seed: int = 0):
        super().__init__()
        if kernel_size < 1:
            raise ConfigurationError(f"Causal kernel size must be >= 1, got {kernel_size}")
        rng = np.random.default_rng(seed)
        std = 1.0 / math.sqrt(in_channels * kernel_size)
        self.weight = self.register_parameter(
            "weight", parameter(rng.normal(0.0, std, size=(out_channels, in_channels, kernel_size)))
        )

    def forward(self, x: Tensor) -> Tensor:
        return causal_conv_forward(self.weight, x)


def causal_conv_forward(weights: Tensor, x: Tensor) -> Tensor:
    """out[t] depends on x[..., :t+1] only"""
    return conv1d(x, weights, Padding.CAUSAL_LEFT)


class Linear(Module):
    """Dense layer with Glorot-normal weights [in, out] and zero bias"""

    def __init__(self, in_features: int, out_features: int, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        std = math.sqrt(2.0 / (in_features + out_features))
        self.weight = self.register_parameter("weight", parameter(rng.normal(0.0, std, size=(in_features, out_features))))
        self.bias = self.register_parameter("bias", parameter(np.zeros(out_features)))

    def forward(self, x: Tensor) -> Tensor:
        out = matmul(x, self.weight)
        return out + self.bias.reshape(1, -1).broadcast_to(out.shape)


def aggregator_widths(cfg: AggregatorConfig, in_features: int, out_features: int) -> List[int]:
    """Layer widths in, hidden x n_intermediate, out"""
    hidden = max(1, int(round(cfg.expansion * in_features)))
    return [in_features] + [hidden] * cfg.n_intermediate + [out_features]


class Aggregator(Module):
    """The same fully connected network applied at every time position"""

    def __init__(self, cfg: AggregatorConfig, in_features: int, out_features: Optional[int] = None, seed: int = 0):
        super().__init__()
        out_features = out_features or cfg.out_features
        if out_features is None:
            raise ConfigurationError("Aggregator needs out_features")
        self.widths = aggregator_widths(cfg, in_features, out_features)
        seeds = np.random.SeedSequence(seed).generate_state(len(self.widths) - 1)
        self.layers: List[Linear] = []
        for i, (a, b) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            self.layers.append(self.register_module(f"layer{i}", Linear(a, b, seed=int(seeds[i]))))

    @property
    def out_features(self) -> int:
        return self.widths[-1]

    def forward(self, x: Tensor) -> Tensor:
        B, Ch, T = x.shape
        if Ch != self.widths[0]:
            raise ConfigurationError(f"Aggregator expects {self.widths[0]} channels, got {Ch}")
        h = x.transpose(0, 2, 1).reshape(B * T, Ch)
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = leaky_relu(h)
        return h.reshape(B, T, self.out_features).transpose(0, 2, 1)


def aggregator_forward(agg: Aggregator, x: Tensor) -> Tensor:
    """[B, Ch, T] -> [B, out_features, T]"""
    return agg(x)


class TemporalAggregator(Module):
    """Maps the past length S to the output length T"""

    def __init__(
        self,
        kind: TemporalKind,
        channels: int,
        S: int,
        T: int,
        seed: int = 0,
        apply_batchnorm: bool = True,
        norm_kind: NormKind = NormKind.BATCHNORM,
        causal_kernel_size: int = CAUSAL_KERNEL_SIZE,
        init: Optional[KernelInit] = None,
        bn_eps: float = BN_EPS,
        bn_momentum: float = BN_MOMENTUM,
    ):
        super().__init__()
        try:
            self.kind = TemporalKind(kind)
        except ValueError:
            raise ConfigurationError(f"Invalid temporal kind: {kind}")
        self.S, self.T = S, T
        self.bank: Optional[FilterBank] = None
        self.conv: Optional[CausalConv] = None
        if self.kind in (TemporalKind.IDENTITY, TemporalKind.CAUSAL_CONV) and T > S:
            raise ConfigurationError(f"{self.kind.value} temporal aggregation needs T <= S, got T={T}, S={S}")
        if self.kind == TemporalKind.CAUSAL_CONV:
            self.conv = self.register_module("conv", CausalConv(channels, channels, causal_kernel_size, seed=seed))
        elif self.kind != TemporalKind.IDENTITY:
            cfg = FilterBankConfig(
                family=FilterFamily(self.kind.value),
                n_filters=1,
                mode=FilterMode.PER_CELL,
                out_time=T,
                apply_batchnorm=apply_batchnorm,
                norm_kind=norm_kind,
                init=init or KernelInit(),
            )
            self.bank = self.register_module("bank", FilterBank(cfg, channels, S, seed=seed, bn_eps=bn_eps, bn_momentum=bn_momentum))

    def forward(self, x: Tensor) -> Tensor:
        if self.bank is not None:
            return self.bank(x)
        if self.conv is not None:
            x = self.conv(x)
        return x if self.T == self.S else x[:, :, self.S - self.T:]


def temporal_aggregate(kind: TemporalKind, params: Optional[object], x: Tensor, T: int, training: bool = True) -> Tensor:
    """Functional temporal aggregation

    Args:
        kind: identity, causal_conv or a per-cell filter family
        params: KernelParams (grid [Ch, 1, T]) for filter kinds, weights Tensor [Ch, Ch, K] for causal_conv
        x: Input [B, Ch, S]
        T: Output length
        training: BatchNorm mode; running statistics are not kept between calls

    Returns:
        Tensor: [B, Ch, T]
    """
    try:
        kind = TemporalKind(kind)
    except ValueError:
        raise ConfigurationError(f"Invalid temporal kind: {kind}")
    S = x.shape[2]
    if kind == TemporalKind.CAUSAL_CONV:
        if T > S:
            raise ConfigurationError(f"causal_conv temporal aggregation needs T <= S, got T={T}, S={S}")
        return causal_conv_forward(params, x)[:, :, S - T:]
    if kind == TemporalKind.IDENTITY:
        if T > S:
            raise ConfigurationError(f"identity temporal aggregation needs T <= S, got T={T}, S={S}")
        return x if T == S else x[:, :, S - T:]
    cfg = FilterBankConfig(family=FilterFamily(kind.value), n_filters=1, mode=FilterMode.PER_CELL, out_time=T)
    return filter_bank_forward(cfg, params, x, training)
