"""Residual CNN prior steps.

Each unrolled iteration owns (or shares) one small convolutional network whose
output is the residual branch: the correction that the surrounding algorithm
adds to the current iterate. The network itself never adds its input; that
summation happens inside the unrolled update.

Architecture: `depth` conv layers mapping 1 -> channels -> ... -> channels -> 1
with "same" padding and a pointwise nonlinearity after every layer except the
last. Weights are Xavier/Glorot uniform draws from a caller-supplied Rng so
initialization is reproducible; biases start at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, DomainError
from .images import ImageTensor
from .rng import Rng

_NONLINEARITIES = {
    "relu": torch.relu,
    "leaky_relu": lambda t: torch.nn.functional.leaky_relu(t, 0.1),
}


@dataclass
class PriorNetConfig:
    depth: int = 5
    channels: int = 64
    kernel_size: int = 3
    share_across_iterations: bool = False
    nonlinearity: str = "relu"
    padding: str = "zeros"  # or "circular", matching the periodic image formation

    def __post_init__(self):
        if self.depth < 2:
            raise ConfigError("prior depth must be >= 2 (1 <-> channels <-> 1)")
        if self.channels < 1:
            raise ConfigError("prior channels must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd")
        if self.nonlinearity not in _NONLINEARITIES:
            raise ConfigError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.padding not in ("zeros", "circular"):
            raise ConfigError(f"unknown padding mode {self.padding!r}")


class PriorNet(nn.Module):
    """The residual branch of one prior step; output shape equals input shape."""

    def __init__(self, config: PriorNetConfig, rng: Rng | None = None):
        super().__init__()
        self.config = config
        k = config.kernel_size
        widths = [1] + [config.channels] * (config.depth - 1) + [1]
        self.convs = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], k, padding=k // 2, padding_mode=config.padding)
            for i in range(config.depth)
        )
        self._act = _NONLINEARITIES[config.nonlinearity]
        if rng is not None:
            init_prior_(self, rng)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.convs[:-1]:
            x = self._act(conv(x))
        return self.convs[-1](x)


def init_prior_(net: PriorNet, rng: Rng) -> PriorNet:
    """Xavier-uniform weights drawn from rng (layer by layer), zero biases.

    Per-layer scale a = sqrt(6/(fan_in+fan_out)) gives the Glorot variance
    2/(fan_in+fan_out); draws come from the numpy stream so the same seed
    reproduces parameters bit-identically.
    """
    with torch.no_grad():
        for conv in net.convs:
            fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
            fan_out = conv.out_channels * conv.kernel_size[0] * conv.kernel_size[1]
            a = float(np.sqrt(6.0 / (fan_in + fan_out)))
            draw = rng.np.uniform(-a, a, size=tuple(conv.weight.shape))
            conv.weight.copy_(torch.from_numpy(draw))
            conv.bias.zero_()
    return net


def init_prior(config: PriorNetConfig, rng: Rng) -> PriorNet:
    """Build a prior network with reproducible Xavier initialization."""
    return PriorNet(config, rng)


def prior_step(x: ImageTensor, net: PriorNet) -> ImageTensor:
    """Run one prior step on a spatial image; returns the residual branch only."""
    if not x.is_spatial() or x.data.is_complex():
        raise DomainError("prior step expects a real spatial image")
    return ImageTensor(net(x.data), x.domain)


def prior_step_gradients(net: PriorNet, x: ImageTensor, grad_out: torch.Tensor):
    """Backpropagate an upstream gradient through one prior step.

    Returns ({param_name: grad}, input_grad). Runs its own recorded forward
    pass; `grad_out` must match the output shape.
    """
    data = x.data.detach().requires_grad_(True)
    out = net(data)
    params = dict(net.named_parameters())
    grads = torch.autograd.grad(out, [data] + list(params.values()), grad_outputs=grad_out)
    return dict(zip(params.keys(), grads[1:])), grads[0]


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())
