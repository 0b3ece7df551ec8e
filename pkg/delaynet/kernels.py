"""
Learnable kernel families and the affine time warp
"""
import logging
import math
from typing import Dict, Optional, Tuple

import numpy as np

from .autodiff import Tensor, conv1d_depthwise, elementwise, interp1d, parameter
from .const import (
    GABOR_BANDWIDTH_OCTAVES,
    GABOR_EPS,
    GABOR_SUPPORT_MARGIN,
    LOGNORMAL_HALF_SUPPORT,
    SIGMA_SUPPORT_MARGIN,
    FilterFamily,
    Padding,
)
from .errors import ConfigurationError, NumericError
from .models import KernelInit

_LOGGER = logging.getLogger(__name__)

PARAM_NAMES: Dict[FilterFamily, Tuple[str, ...]] = {
    FilterFamily.IDENTITY: (),
    FilterFamily.AFFINE: ("s", "t"),
    FilterFamily.GAUSS: ("mu", "sigma"),
    FilterFamily.LOGNORMAL: ("s", "t"),
    FilterFamily.GABOR: ("s", "mu"),
}


class KernelParams:
    """Learnable scalars of one kernel family, one value per grid cell

    The grid is () for a single filter, [Ch] for a per-feature bank and
    [F, n, T] for a per-cell bank.
    """

    def __init__(self, family: FilterFamily, tensors: Dict[str, Tensor], grid: Tuple[int, ...] = ()):
        self.family = FilterFamily(family)
        expected = PARAM_NAMES[self.family]
        if set(tensors) != set(expected):
            raise ConfigurationError(f"{self.family.value} needs parameters {expected}, got {sorted(tensors)}")
        for name, tensor in tensors.items():
            if tensor.shape != tuple(grid):
                raise ConfigurationError(f"{self.family.value}.{name} has shape {tensor.shape}, expected {tuple(grid)}")
        self.tensors = tensors
        self.grid = tuple(grid)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def describe(self) -> str:
        """Short summary of the parameter values for error messages"""
        parts = []
        for name, tensor in self.tensors.items():
            values = tensor.data.reshape(-1)
            parts.append(f"{name}[min={values.min():.4g}, max={values.max():.4g}]")
        return f"{self.family.value}(" + ", ".join(parts) + ")"


def init_params(
    family: FilterFamily,
    S: int,
    seed: int,
    grid: Tuple[int, ...] = (),
    init: Optional[KernelInit] = None,
) -> KernelParams:
    """Draw fresh parameters for a kernel family

    Args:
        family: Kernel family
        S: Time length of the filtered signal (scales the gauss and gabor mu spread)
        seed: Seed of the numpy Generator
        grid: Shape of the parameter grid
        init: Initialization distributions (defaults to KernelInit())

    Returns:
        KernelParams: Parameters with requires_grad set
    """
    family = FilterFamily(family)
    init = init or KernelInit()
    rng = np.random.default_rng(seed)
    spreads = {
        FilterFamily.AFFINE: {"s": (init.affine_s.mean, init.affine_s.std), "t": (init.affine_t.mean, init.affine_t.std)},
        FilterFamily.GAUSS: {
            "mu": (0.0, init.gauss_mu_scale * S / 2.0),
            "sigma": (init.gauss_sigma.mean, init.gauss_sigma.std),
        },
        FilterFamily.LOGNORMAL: {
            "s": (init.lognormal_s.mean, init.lognormal_s.std),
            "t": (init.lognormal_t.mean, init.lognormal_t.std),
        },
        FilterFamily.GABOR: {"s": (init.gabor_s.mean, init.gabor_s.std), "mu": (0.0, init.gabor_mu_scale / S)},
    }.get(family, {})
    tensors = {name: parameter(rng.normal(mean, std, size=grid)) for name, (mean, std) in spreads.items()}
    return KernelParams(family, tensors, grid)


def odd_at_most(k: int, limit: int) -> int:
    """Largest odd integer <= min(k, limit)"""
    k = max(1, min(k, limit))
    return k if k % 2 == 1 else k - 1


def gabor_sigma_factor(bw: float = GABOR_BANDWIDTH_OCTAVES) -> float:
    return math.sqrt(math.log(2.0) / math.pi) * (2.0**bw + 1.0) / (2.0**bw - 1.0)


def gabor_support(S: int, bw: float = GABOR_BANDWIDTH_OCTAVES) -> int:
    """Support covering the widest possible envelope (omega < 0.5) with margin"""
    sigma_max = 0.5 * gabor_sigma_factor(bw)
    return odd_at_most(2 * math.ceil(4.0 * sigma_max + GABOR_SUPPORT_MARGIN) + 1, S)


def kernel_support(family: FilterFamily, S: int, params: Optional[KernelParams] = None, bw: float = GABOR_BANDWIDTH_OCTAVES) -> int:
    """Default odd kernel length for per-feature convolution

    Args:
        family: Kernel family
        S: Signal length
        params: Initialized parameters (gauss support follows the widest sigma)
        bw: Gabor bandwidth in octaves

    Returns:
        int: Odd support length no larger than S
    """
    family = FilterFamily(family)
    if family == FilterFamily.GAUSS:
        sigma_max = (float(params["sigma"].data.max()) if params is not None else 0.0) + SIGMA_SUPPORT_MARGIN
        return odd_at_most(2 * math.ceil(4.0 * math.exp(sigma_max)) + 1, S)
    if family == FilterFamily.LOGNORMAL:
        return odd_at_most(2 * LOGNORMAL_HALF_SUPPORT + 1, S)
    if family == FilterFamily.GABOR:
        return gabor_support(S, bw)
    raise ConfigurationError(f"{family.value} does not synthesize a convolution kernel")


def centered_offsets(support: int) -> np.ndarray:
    if support < 1 or support % 2 == 0:
        raise ConfigurationError(f"Kernel support must be a positive odd integer, got {support}")
    half = (support - 1) // 2
    return np.arange(-half, half + 1, dtype=np.float64)


def _expand(param: Tensor, shape: Tuple[int, ...]) -> Tensor:
    """Broadcast a grid-shaped parameter along a trailing offsets axis"""
    return param.reshape(param.shape + (1,)).broadcast_to(shape)


def _offsets_tensor(offsets: np.ndarray, grid: Tuple[int, ...]) -> Tuple[Tensor, Tuple[int, ...]]:
    shape = tuple(grid) + (offsets.shape[-1],)
    return Tensor(np.broadcast_to(offsets, shape)), shape


def _check_family(p: KernelParams, family: FilterFamily) -> None:
    if p.family != family:
        raise ConfigurationError(f"Expected {family.value} parameters, got {p.family.value}")


def gauss_at(p: KernelParams, offsets: np.ndarray) -> Tensor:
    """exp(-((x - mu) / e^sigma)^2) at the given offsets

    Args:
        p: Gauss parameters with grid G
        offsets: Offsets broadcastable to G + (M,)

    Returns:
        Tensor: Kernel values of shape G + (M,)
    """
    _check_family(p, FilterFamily.GAUSS)
    x, shape = _offsets_tensor(offsets, p.grid)
    z = (x - _expand(p["mu"], shape)) / _expand(p["sigma"], shape).exp()
    return (-z.square()).exp()


def gauss_kernel(p: KernelParams, support: int) -> Tensor:
    """Unnormalized Gaussian sampled at integer offsets centered on zero"""
    return gauss_at(p, centered_offsets(support))


def lognormal_base(x: np.ndarray) -> np.ndarray:
    """(1/x) exp(-(log x)^2 / 2) for x > 0, zero elsewhere"""
    x = np.asarray(x, dtype=np.float64)
    positive = x > 0.0
    safe = np.where(positive, x, 1.0)
    return np.where(positive, np.exp(-0.5 * np.log(safe) ** 2) / safe, 0.0)


def lognormal_at(p: KernelParams, offsets: np.ndarray) -> Tensor:
    """Warped log-normal kernel at the given offsets

    The base kernel is sampled on integer offsets with its mode (x = e^-1)
    moved to offset 0, then read by linear interpolation at a*o + a*t with
    a = e^s + 3.
    """
    _check_family(p, FilterFamily.LOGNORMAL)
    x, shape = _offsets_tensor(offsets, p.grid)
    half = int(np.ceil(np.abs(offsets).max()))
    base = lognormal_base(np.arange(-half, half + 1, dtype=np.float64) + math.exp(-1.0))
    cells = int(np.prod(p.grid, dtype=np.int64))
    a = _expand(p["s"], shape).exp() + 3.0
    coords = a * x + a * _expand(p["t"], shape) + float(half)
    values = Tensor(np.broadcast_to(base, (1, cells, base.size)))
    out = interp1d(values, coords.reshape(cells, shape[-1]))
    return out.reshape(shape)


def lognormal_kernel(p: KernelParams, support: int) -> Tensor:
    return lognormal_at(p, centered_offsets(support))


def gabor_frequency(p: KernelParams, S: int) -> Tensor:
    """omega = sigmoid(s) * (0.5 - 2/S) + 2/S"""
    if S < 5:
        raise ConfigurationError(f"Gabor filters need S >= 5, got {S}")
    return elementwise("sigmoid", p["s"]) * (0.5 - 2.0 / S) + 2.0 / S


def gabor_at(p: KernelParams, offsets: np.ndarray, S: int, bw: float = GABOR_BANDWIDTH_OCTAVES) -> Tuple[Tensor, Tensor]:
    """Real and imaginary Gabor parts at the given offsets"""
    _check_family(p, FilterFamily.GABOR)
    omega = gabor_frequency(p, S)
    x, shape = _offsets_tensor(offsets, p.grid)
    w = _expand(omega, shape)
    sigma = w * gabor_sigma_factor(bw)
    d = x - _expand(p["mu"], shape)
    envelope = ((d / sigma).square() * -0.5).exp()
    phase = w * d * (2.0 * math.pi)
    return envelope * elementwise("cos", phase), envelope * elementwise("sin", phase)


def gabor_kernel(
    p: KernelParams,
    S: int,
    bw: float = GABOR_BANDWIDTH_OCTAVES,
    support: Optional[int] = None,
) -> Tuple[Tensor, Tensor]:
    """Gabor filter pair

    Args:
        p: Gabor parameters
        S: Signal length (bounds the frequency band to (2/S, 0.5))
        bw: Bandwidth in octaves
        support: Odd kernel length, defaults to gabor_support(S, bw)

    Returns:
        Tuple[Tensor, Tensor]: (re, im) of shape grid + (K,)
    """
    support = support or gabor_support(S, bw)
    return gabor_at(p, centered_offsets(support), S, bw)


def gabor_magnitude(o_re: Tensor, o_im: Tensor, eps: float = GABOR_EPS) -> Tuple[Tensor, Tensor]:
    """Guarded magnitude and angle of a complex response"""
    mag = (o_re.square() + o_im.square() + eps).sqrt()
    ang = elementwise("atan2", o_im, o_re)
    return mag, ang


def gabor_response(
    x: Tensor,
    re: Tensor,
    im: Tensor,
    eps: float = GABOR_EPS,
    params: Optional[KernelParams] = None,
) -> Tuple[Tensor, Tensor]:
    """Convolve with a Gabor pair and return magnitude and angle

    Args:
        x: Signal [B, Ch, S]
        re: Real kernels [Ch, K]
        im: Imaginary kernels [Ch, K]
        eps: Guard inside the magnitude square root
        params: Parameters the kernels came from, quoted in errors

    Returns:
        Tuple[Tensor, Tensor]: (mag, ang), each [B, Ch, S]

    Raises:
        NumericError: If the response is not finite
    """
    if eps <= 0:
        raise ConfigurationError(f"Gabor eps must be positive, got {eps}")
    o_re = conv1d_depthwise(x, re, Padding.SAME_ZERO)
    o_im = conv1d_depthwise(x, im, Padding.SAME_ZERO)
    mag, ang = gabor_magnitude(o_re, o_im, eps)
    if not (np.isfinite(mag.data).all() and np.isfinite(ang.data).all()):
        where = params.describe() if params is not None else "unknown parameters"
        raise NumericError(f"Non-finite Gabor response for {where}", op_kind="gabor_response")
    return mag, ang


def affine_source(p: KernelParams, positions: np.ndarray, center: float, per_cell: bool = False) -> Tensor:
    """Source coordinate a*(u - c) + a*t + c with a = e^(5s)

    Args:
        p: Affine parameters with grid G
        positions: Output positions; broadcastable to G when per_cell, else [M] expanded to G + (M,)
        center: Scaling anchor c
        per_cell: One output position per grid cell

    Returns:
        Tensor: Source coordinates
    """
    _check_family(p, FilterFamily.AFFINE)
    positions = np.asarray(positions, dtype=np.float64)
    if per_cell:
        a = (p["s"] * 5.0).exp()
        return a * (Tensor(np.broadcast_to(positions, p.grid)) - center) + a * p["t"] + center
    u, shape = _offsets_tensor(positions, p.grid)
    a = (_expand(p["s"], shape) * 5.0).exp()
    return a * (u - center) + a * _expand(p["t"], shape) + center


def affine_warp(x: Tensor, p: KernelParams) -> Tensor:
    """Resample each channel through its own affine time map

    Args:
        x: Signal [B, Ch, S]
        p: Affine parameters with grid [Ch]

    Returns:
        Tensor: [B, Ch, S]; coordinates outside [0, S-1] read zero
    """
    S = x.shape[2]
    if p.grid != (x.shape[1],):
        raise ConfigurationError(f"affine_warp needs one (s, t) per channel: grid {p.grid} vs {x.shape[1]} channels")
    coords = affine_source(p, np.arange(S, dtype=np.float64), (S - 1) / 2.0)
    return interp1d(x, coords)
