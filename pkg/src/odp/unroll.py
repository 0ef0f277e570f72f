"""Unrolled optimization network templates.

Five variants share the same skeleton (backprojection init, N alternations of
a CNN prior step with a data step), differing in how the data step enforces
measurement consistency:

  prox_gradient     x_{k+1} = argmin_x a_k f(Ax,y) + 1/2||x - (x_k + CNN(x_k))||^2,
                    solved in closed form per operator kind (hard projection
                    for masked Fourier, which has no a_k).
  admm              scaled-form ADMM on the x=z splitting; the prior acts as a
                    residual prox in the x-update, the z-update reuses the
                    closed-form solvers with weight a_k/rho_k, and the output
                    is the data-consistent iterate z_N.
  ladmm             like admm but the z-subproblem is replaced by one gradient
                    step on the augmented objective, so only A and A^H are
                    applied (never a regularized inverse); for masked Fourier
                    the projection itself is an A/A^H expression and is used
                    directly.
  gradient_descent  x_{k+1} = x_k + CNN(x_k) - a_k grad f; undefined for the
                    constrained MRI problem.
  prior_only        x_{k+1} = x_k + CNN(x_k): the pure residual network of the
                    data-step ablation.

Algorithm scalars (a_k, and rho_k plus the LADMM step for the splitting
methods) follow the schedule a_k = C0 * C^-k at initialization and are stored
as logarithms, so enabling learn_alpha trains them with positivity built in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import torch
from torch import nn

from .errors import ConfigError, UnsupportedAlgorithmError
from .images import ImageTensor
from .linops import (
    CIRCULAR_CONV,
    IDENTITY,
    MASKED_FOURIER,
    DataStepParams,
    ForwardModel,
    apply_adjoint,
    grad_data,
    kernel_fft,
    project_mri,
    prox_deblur,
    prox_denoise,
)
from .priornet import PriorNet, PriorNetConfig
from .rng import Rng

PROX_GRADIENT = "prox_gradient"
ADMM = "admm"
LADMM = "ladmm"
GRADIENT_DESCENT = "gradient_descent"
PRIOR_ONLY = "prior_only"
ALGORITHMS = (PROX_GRADIENT, ADMM, LADMM, GRADIENT_DESCENT, PRIOR_ONLY)

_SPLITTING = (ADMM, LADMM)


@dataclass
class UnrollConfig:
    algorithm: str = PROX_GRADIENT
    iterations: int = 4
    alpha_init: tuple = (1.0, 2.0)  # (C0, C)
    learn_alpha: bool = False
    prior: PriorNetConfig = field(default_factory=PriorNetConfig)
    rho_init: float = 1.0
    ladmm_step_init: float = 1.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        c0, c = self.alpha_init
        if c0 <= 0 or c <= 0:
            raise ConfigError("alpha schedule constants C0, C must be > 0")
        if self.rho_init <= 0 or self.ladmm_step_init <= 0:
            raise ConfigError("rho and the LADMM step must be > 0")


@dataclass
class UnrollState:
    """Algorithm state: primal iterate x, splitting variable z, scaled dual u."""

    x: ImageTensor
    z: Optional[ImageTensor] = None
    u: Optional[ImageTensor] = None


def alpha_schedule(c0: float, c: float, iterations: int) -> torch.Tensor:
    """a_k = C0 * C^-k for k = 0..N-1."""
    return torch.tensor([c0 * c ** (-k) for k in range(iterations)], dtype=torch.float64)


def init_state(model: ForwardModel, y: ImageTensor, with_splitting: bool = False) -> UnrollState:
    """Backprojection start: x0 = A^H y; z0 = x0 and u0 = 0 when requested."""
    x0 = apply_adjoint(model, y)
    if not with_splitting:
        return UnrollState(x=x0)
    z0 = ImageTensor(x0.data.clone(), x0.domain)
    u0 = ImageTensor(torch.zeros_like(x0.data), x0.domain)
    return UnrollState(x=x0, z=z0, u=u0)


class OdpNetwork(nn.Module):
    """An unrolled reconstruction network for one algorithm choice.

    forward(y, model) maps measurements to the estimate of the latent image.
    The forward model is an argument (not a parameter), so one network can
    train across many kernels or masks.
    """

    def __init__(self, config: UnrollConfig, rng: Rng):
        super().__init__()
        self.config = config
        n_priors = 1 if config.prior.share_across_iterations else config.iterations
        self.priors = nn.ModuleList(PriorNet(config.prior, rng.child(i)) for i in range(n_priors))

        c0, c = config.alpha_init
        log_alpha = torch.tensor(
            [math.log(c0) - k * math.log(c) for k in range(config.iterations)], dtype=torch.float32
        )
        log_rho = torch.full((config.iterations,), math.log(config.rho_init), dtype=torch.float32)
        log_step = torch.full((config.iterations,), math.log(config.ladmm_step_init), dtype=torch.float32)
        if config.learn_alpha:
            self.log_alpha = nn.Parameter(log_alpha)
        else:
            self.register_buffer("log_alpha", log_alpha)
        if config.algorithm in _SPLITTING:
            if config.learn_alpha:
                self.log_rho = nn.Parameter(log_rho)
            else:
                self.register_buffer("log_rho", log_rho)
        if config.algorithm == LADMM:
            if config.learn_alpha:
                self.log_step = nn.Parameter(log_step)
            else:
                self.register_buffer("log_step", log_step)

    # -- parameter views -------------------------------------------------

    def alphas(self) -> torch.Tensor:
        return torch.exp(self.log_alpha)

    def rhos(self) -> torch.Tensor:
        return torch.exp(self.log_rho)

    def prior_at(self, k: int) -> PriorNet:
        return self.priors[0] if self.config.prior.share_across_iterations else self.priors[k]

    def prior_parameter_count(self) -> int:
        return sum(p.numel() for p in self.priors.parameters())

    def scalar_parameters(self):
        """Trainable algorithm scalars (log alpha / rho / step), if any."""
        return [p for name, p in self.named_parameters() if name.startswith("log_")]

    # -- data steps ------------------------------------------------------

    def _sigma(self, model: ForwardModel) -> float:
        return model.noise_sigma

    def _data_prox(self, y: ImageTensor, v: ImageTensor, model: ForwardModel, alpha) -> ImageTensor:
        if model.kind == IDENTITY:
            return prox_denoise(y, v, DataStepParams(alpha, self._sigma(model)))
        if model.kind == CIRCULAR_CONV:
            return prox_deblur(y, v, model, DataStepParams(alpha, self._sigma(model)))
        return project_mri(y, v, model)  # hard constraint: no alpha

    # -- algorithm bodies --------------------------------------------------

    def forward(self, y: ImageTensor, model: ForwardModel, return_trace: bool = False):
        alg = self.config.algorithm
        if alg == PROX_GRADIENT:
            out = self._run_prox_gradient(y, model, return_trace)
        elif alg == ADMM:
            out = self._run_splitting(y, model, return_trace, linearized=False)
        elif alg == LADMM:
            out = self._run_splitting(y, model, return_trace, linearized=True)
        elif alg == GRADIENT_DESCENT:
            out = self._run_gradient_descent(y, model, return_trace)
        else:
            out = self._run_prior_only(y, model, return_trace)
        return out

    def _run_prox_gradient(self, y, model, return_trace):
        alphas = self.alphas()
        x = apply_adjoint(model, y)
        trace = [UnrollState(x=x)]
        for k in range(self.config.iterations):
            residual = self.prior_at(k)(x.data)
            v = ImageTensor(x.data + residual, x.domain)
            x = self._data_prox(y, v, model, alphas[k])
            if return_trace:
                trace.append(UnrollState(x=x))
        return (x, trace) if return_trace else x

    def _run_splitting(self, y, model, return_trace, linearized):
        alphas = self.alphas()
        rhos = self.rhos()
        state = init_state(model, y, with_splitting=True)
        x, z, u = state.x, state.z, state.u
        trace = [UnrollState(x=x, z=z, u=u)]
        sigma = self._sigma(model)
        lip = None
        if linearized and model.kind != MASKED_FOURIER:
            lip = self._forward_sq_norm(model, y.shape[-2:], _real_dtype(y.data.dtype))
        for k in range(self.config.iterations):
            w = ImageTensor(z.data - u.data, z.domain)
            x = ImageTensor(w.data + self.prior_at(k)(w.data), w.domain)
            v = ImageTensor(x.data + u.data, x.domain)
            if model.kind == MASKED_FOURIER:
                z = project_mri(y, v, model)
            elif not linearized:
                z = self._data_prox(y, v, model, alphas[k] / rhos[k])
            else:
                # one gradient step on a_k f(Az,y) + (rho/2)||z - v||^2 from z_k,
                # step normalized so the identity-model update lands on the
                # exact ADMM minimizer at unit step
                p = DataStepParams(alphas[k], sigma, rhos[k])
                g = alphas[k] * grad_data(y, z, model, p).data + rhos[k] * (z.data - v.data)
                eta = torch.exp(self.log_step[k]) / (alphas[k] / (sigma * sigma) * lip + rhos[k])
                z = ImageTensor(z.data - eta * g, z.domain)
            u = ImageTensor(u.data + x.data - z.data, u.domain)
            if return_trace:
                trace.append(UnrollState(x=x, z=z, u=u))
        return (z, trace) if return_trace else z

    def _run_gradient_descent(self, y, model, return_trace):
        if model.kind == MASKED_FOURIER:
            raise UnsupportedAlgorithmError("gradient descent cannot solve the constrained MRI formulation")
        alphas = self.alphas()
        sigma = self._sigma(model)
        x = apply_adjoint(model, y)
        trace = [UnrollState(x=x)]
        for k in range(self.config.iterations):
            p = DataStepParams(alphas[k], sigma)
            g = grad_data(y, x, model, p)
            x = ImageTensor(x.data + self.prior_at(k)(x.data) - alphas[k] * g.data, x.domain)
            if return_trace:
                trace.append(UnrollState(x=x))
        return (x, trace) if return_trace else x

    def _run_prior_only(self, y, model, return_trace):
        x = apply_adjoint(model, y)
        trace = [UnrollState(x=x)]
        for k in range(self.config.iterations):
            x = ImageTensor(x.data + self.prior_at(k)(x.data), x.domain)
            if return_trace:
                trace.append(UnrollState(x=x))
        return (x, trace) if return_trace else x

    @staticmethod
    def _forward_sq_norm(model: ForwardModel, shape, dtype) -> float:
        """max |K|^2, the squared operator norm of A (1 for identity)."""
        if model.kind != CIRCULAR_CONV:
            return 1.0
        with torch.no_grad():
            K = kernel_fft(model.kernel, shape, dtype=dtype)
            return float((K.real**2 + K.imag**2).max().item())


def _real_dtype(dtype: torch.dtype) -> torch.dtype:
    if dtype == torch.complex128:
        return torch.float64
    if dtype == torch.complex64:
        return torch.float32
    return dtype


def _checked(network: OdpNetwork, algorithm: str) -> OdpNetwork:
    if network.config.algorithm != algorithm:
        raise ConfigError(f"network is configured for {network.config.algorithm!r}, not {algorithm!r}")
    return network


def run_prox_gradient(model: ForwardModel, y: ImageTensor, network: OdpNetwork) -> ImageTensor:
    return _checked(network, PROX_GRADIENT)(y, model)


def run_admm(model: ForwardModel, y: ImageTensor, network: OdpNetwork) -> ImageTensor:
    return _checked(network, ADMM)(y, model)


def run_ladmm(model: ForwardModel, y: ImageTensor, network: OdpNetwork) -> ImageTensor:
    return _checked(network, LADMM)(y, model)


def run_gradient_descent(model: ForwardModel, y: ImageTensor, network: OdpNetwork) -> ImageTensor:
    return _checked(network, GRADIENT_DESCENT)(y, model)


def run_prior_only(y: ImageTensor, network: OdpNetwork, model: Optional[ForwardModel] = None) -> ImageTensor:
    if model is None:
        model = ForwardModel(IDENTITY)
    return _checked(network, PRIOR_ONLY)(y, model)
