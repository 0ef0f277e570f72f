"""Image-formation operators and their closed-form data steps.

Three operator kinds cover the problem families:

  identity        denoising, y = x + noise
  circular_conv   deblurring, y = k (*) x + noise with periodic boundaries
  masked_fourier  compressed-sensing MRI, y = P F x (noise free)

Each kind has a forward, an adjoint, and the data-step solver used inside the
unrolled networks: a weighted proximal map for identity / circular_conv and a
hard Euclidean projection onto {x : P F x = y} for masked_fourier. All closed
forms are exact under the package DFT convention (forward unnormalized,
circular boundaries), so conv kernels are embedded at the origin pixel before
the FFT.

prox_denoise / prox_deblur bump a module-level counter so structural tests
can assert that algorithms advertised as applying only A and A^H (LADMM,
gradient descent) never touch a regularized inverse.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .errors import ConfigError, DomainError, InputError, ShapeError, UnsupportedAlgorithmError
from .images import FOURIER, SPATIAL, ImageTensor

IDENTITY = "identity"
CIRCULAR_CONV = "circular_conv"
MASKED_FOURIER = "masked_fourier"

# diagnostic: number of regularized-inverse data-step solves (prox_denoise /
# prox_deblur) since import; read-compare around a run to audit operator usage
INVERSE_SOLVE_CALLS = 0


@dataclass
class ForwardModel:
    """Immutable description of the linear operator A plus its noise level.

    kernel: [b,1,kh,kw] real tensor, odd support, stored centered (b is 1 or
    the batch size for per-sample kernels). mask: [b,1,H,W] 0/1 tensor, the
    diagonal of the Fourier sampling matrix. noise_sigma is on the [0,1]
    intensity scale.
    """

    kind: str
    kernel: Optional[torch.Tensor] = None
    mask: Optional[torch.Tensor] = None
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in (IDENTITY, CIRCULAR_CONV, MASKED_FOURIER):
            raise ConfigError(f"unknown forward model kind {self.kind!r}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.kind == CIRCULAR_CONV:
            if self.kernel is None or self.kernel.ndim != 4:
                raise ConfigError("circular_conv needs a [b,1,kh,kw] kernel")
            kh, kw = self.kernel.shape[-2:]
            if kh % 2 == 0 or kw % 2 == 0:
                raise ConfigError(f"kernel support must be odd, got {kh}x{kw}")
            if not torch.isfinite(self.kernel).all():
                raise ConfigError("kernel has non-finite entries")
        if self.kind == MASKED_FOURIER:
            if self.mask is None or self.mask.ndim != 4:
                raise ConfigError("masked_fourier needs a [b,1,H,W] mask")
            vals = torch.unique(self.mask)
            if not torch.all((vals == 0) | (vals == 1)):
                raise ConfigError("mask must be 0/1 valued")


@dataclass
class DataStepParams:
    """Per-iteration algorithm scalars for the data step."""

    alpha: float
    sigma: float
    rho: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError("alpha must be > 0")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.rho <= 0:
            raise ConfigError("rho must be > 0")


def kernel_fft(kernel: torch.Tensor, shape, dtype=None) -> torch.Tensor:
    """DFT of a centered odd-support kernel zero-padded to [b,1,H,W].

    The kernel center lands on the origin pixel (circular shift by its
    radius), which fixes the phase so that multiplication in the Fourier
    domain equals centered circular convolution.
    """
    h, w = shape
    kh, kw = kernel.shape[-2:]
    if kh > h or kw > w:
        raise ConfigError(f"kernel {kh}x{kw} larger than image {h}x{w}")
    k = kernel.to(dtype) if dtype is not None else kernel
    pad = torch.zeros(k.shape[0], 1, h, w, dtype=k.dtype, device=k.device)
    pad[..., :kh, :kw] = k
    pad = torch.roll(pad, shifts=(-(kh // 2), -(kw // 2)), dims=(-2, -1))
    return torch.fft.fft2(pad, norm="backward")


def apply_forward(model: ForwardModel, x: ImageTensor) -> ImageTensor:
    """Apply A. identity/circular_conv map spatial->spatial, masked_fourier
    maps spatial->fourier (complex, zeros off-mask)."""
    if not x.is_spatial() or x.data.is_complex():
        raise DomainError("apply_forward expects a real spatial image")
    if model.kind == IDENTITY:
        return ImageTensor(x.data, SPATIAL)
    if model.kind == CIRCULAR_CONV:
        K = kernel_fft(model.kernel, x.shape[-2:], dtype=x.data.dtype)
        out = torch.fft.ifft2(K * torch.fft.fft2(x.data), norm="backward").real
        return ImageTensor(out, SPATIAL)
    _check_hw(model.mask, x.data)
    spec = torch.fft.fft2(x.data)
    return ImageTensor(model.mask.to(spec.real.dtype) * spec, FOURIER)


def apply_adjoint(model: ForwardModel, y: ImageTensor, check_real: bool = True) -> ImageTensor:
    """Apply A^H (backprojection direction).

    For masked_fourier the result is the real part of F^-1(P y); when y stems
    from a real image under a 180-degree-symmetric mask the imaginary residue
    is numerical noise and is asserted below 1e-6 unless check_real=False.
    """
    if model.kind == IDENTITY:
        return ImageTensor(y.data, SPATIAL)
    if model.kind == CIRCULAR_CONV:
        if not y.is_spatial() or y.data.is_complex():
            raise DomainError("circular_conv adjoint expects a real spatial image")
        K = kernel_fft(model.kernel, y.shape[-2:], dtype=y.data.dtype)
        out = torch.fft.ifft2(K.conj() * torch.fft.fft2(y.data), norm="backward").real
        return ImageTensor(out, SPATIAL)
    if y.is_spatial():
        raise DomainError("masked_fourier adjoint expects fourier-domain measurements")
    _check_hw(model.mask, y.data)
    full = torch.fft.ifft2(model.mask.to(y.data.real.dtype) * y.data, norm="backward")
    if check_real:
        with torch.no_grad():
            resid = full.imag.abs().max().item()
        if resid >= 1e-6:
            raise DomainError(f"adjoint imaginary residue {resid:.2e}; pass check_real=False for complex sources")
    return ImageTensor(full.real, SPATIAL)


def _check_hw(grid: torch.Tensor, data: torch.Tensor):
    if grid.shape[-2:] != data.shape[-2:]:
        raise ShapeError(f"mask/kernel grid {tuple(grid.shape[-2:])} vs image {tuple(data.shape[-2:])}")


def _count_inverse_solve():
    global INVERSE_SOLVE_CALLS
    INVERSE_SOLVE_CALLS += 1


def prox_denoise(y: ImageTensor, v: ImageTensor, p: DataStepParams) -> ImageTensor:
    """Minimizer of (alpha/2 sigma^2)||x - y||^2 + 1/2 ||x - v||^2.

    Elementwise ((alpha/sigma^2) y + v) / (1 + alpha/sigma^2). The degenerate
    sigma=0 limit returns y exactly (infinitely trusted data).
    """
    if y.shape != v.shape:
        raise ShapeError(f"shape mismatch {y.shape} vs {v.shape}")
    _count_inverse_solve()
    if p.sigma == 0:
        return ImageTensor(y.data, SPATIAL)
    w = p.alpha / (p.sigma * p.sigma)
    return ImageTensor((w * y.data + v.data) / (1.0 + w), SPATIAL)


def prox_deblur(y: ImageTensor, v: ImageTensor, model: ForwardModel, p: DataStepParams) -> ImageTensor:
    """Exact minimizer of (alpha/2 sigma^2)||k(*)x - y||^2 + 1/2 ||x - v||^2.

    Solved in the Fourier domain: X = (w conj(K) Y + V) / (w |K|^2 + 1) with
    w = alpha/sigma^2; equivalently the regularized pseudoinverse form
    (A^H A + gamma I)^-1 (A^H y + gamma v) at gamma = sigma^2/alpha. Exact for
    circular boundaries; the denominator never vanishes.
    """
    if model.kind != CIRCULAR_CONV:
        raise ConfigError("prox_deblur needs a circular_conv model")
    if p.sigma <= 0:
        raise ConfigError("prox_deblur requires sigma > 0")
    if y.shape != v.shape:
        raise ShapeError(f"shape mismatch {y.shape} vs {v.shape}")
    _count_inverse_solve()
    w = p.alpha / (p.sigma * p.sigma)
    K = kernel_fft(model.kernel, y.shape[-2:], dtype=y.data.dtype)
    num = w * K.conj() * torch.fft.fft2(y.data) + torch.fft.fft2(v.data)
    den = w * (K.real**2 + K.imag**2) + 1.0
    return ImageTensor(torch.fft.ifft2(num / den, norm="backward").real, SPATIAL)


def project_mri(y: ImageTensor, v: ImageTensor, model: ForwardModel) -> ImageTensor:
    """Euclidean projection of v onto {x : P F x = y} (noise-free CS-MRI).

    F^-1[ P y + (1-P) F v ]: measured bins are overwritten with the data,
    unmeasured bins keep v's spectrum. y must be fourier-tagged with exact
    zeros off-mask.
    """
    if model.kind != MASKED_FOURIER:
        raise ConfigError("project_mri needs a masked_fourier model")
    if y.is_spatial():
        raise DomainError("project_mri expects fourier-domain measurements")
    _check_hw(model.mask, y.data)
    _check_hw(model.mask, v.data)
    mask = model.mask.to(v.data.real.dtype if v.data.is_complex() else v.data.dtype)
    with torch.no_grad():
        off = ((1.0 - mask) * y.data).abs().max().item()
    if off != 0.0:
        raise InputError(f"measurements nonzero off-mask (max {off:.2e})")
    spec = mask * y.data + (1.0 - mask) * torch.fft.fft2(v.data)
    return ImageTensor(torch.fft.ifft2(spec, norm="backward").real, SPATIAL)


def grad_data(y: ImageTensor, x: ImageTensor, model: ForwardModel, p: DataStepParams) -> ImageTensor:
    """Gradient (1/sigma^2) A^H (A x - y) of the Gaussian data term.

    Undefined for masked_fourier: the CS-MRI formulation is a hard constraint,
    not a smooth objective.
    """
    if model.kind == MASKED_FOURIER:
        raise UnsupportedAlgorithmError("gradient data step undefined for the constrained MRI formulation")
    if p.sigma <= 0:
        raise ConfigError("grad_data requires sigma > 0")
    ax = apply_forward(model, x)
    resid = ImageTensor(ax.data - y.data, SPATIAL)
    return ImageTensor(apply_adjoint(model, resid).data / (p.sigma * p.sigma), SPATIAL)


def load_kernel_txt(path) -> torch.Tensor:
    """Read a plain-text 2-D float grid as a [1,1,kh,kw] kernel tensor."""
    arr = np.loadtxt(path, dtype=np.float64, ndmin=2)
    return torch.from_numpy(arr)[None, None]


def save_kernel_txt(kernel: torch.Tensor, path) -> None:
    arr = kernel.detach().cpu().numpy()
    np.savetxt(path, arr.reshape(arr.shape[-2:]), fmt="%.12g")


def load_mask_png(path) -> torch.Tensor:
    """Read a sampling mask from PNG: nonzero pixel = sampled bin."""
    from PIL import Image

    arr = np.asarray(Image.open(path).convert("L"))
    return torch.from_numpy((arr != 0).astype(np.float64))[None, None]
