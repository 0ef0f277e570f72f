"""Image tensor model, PNG I/O, PSNR, and the 2-D DFT pair.

Images are rank-4 torch tensors [batch, channel, height, width] carrying a
domain tag. Training/evaluation images in the spatial domain are real with
intensities stored in [0,1]; fourier-tagged tensors are complex. The DFT
convention is fixed package-wide: forward unnormalized, inverse scaled by
1/(H*W), so the convolution theorem holds without extra factors and Parseval
reads ||x||^2 = ||fft2(x)||^2 / (H*W).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from .errors import DomainError, FormatError, ShapeError

SPATIAL = "spatial"
FOURIER = "fourier"

# ITU-R BT.601 luma weights for RGB -> grayscale
_LUMA = (0.299, 0.587, 0.114)


@dataclass
class ImageTensor:
    """Batched 2-D image data with a spatial/fourier domain tag.

    The container allows complex spatial data transiently (an inverse DFT
    returns it); operations that consume spatial *images* (psnr, save_image,
    network inputs) enforce realness at their boundary.
    """

    data: torch.Tensor
    domain: str = SPATIAL

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ShapeError(f"expected [batch, channel, height, width], got shape {tuple(self.data.shape)}")
        b, c, h, w = self.data.shape
        if b < 1 or h < 1 or w < 1:
            raise ShapeError(f"degenerate image shape {tuple(self.data.shape)}")
        if self.domain not in (SPATIAL, FOURIER):
            raise DomainError(f"unknown domain tag {self.domain!r}")

    @property
    def shape(self):
        return tuple(self.data.shape)

    def is_spatial(self) -> bool:
        return self.domain == SPATIAL

    def real_spatial(self) -> "ImageTensor":
        """Assert this is a spatial image and drop it to a real dtype."""
        if self.domain != SPATIAL:
            raise DomainError("expected a spatial image")
        if self.data.is_complex():
            return ImageTensor(self.data.real, SPATIAL)
        return self


def load_image(path) -> ImageTensor:
    """Load an 8/16-bit grayscale or RGB raster image as a [1,1,H,W] tensor in [0,1].

    RGB converts to luma with BT.601 weights. Unreadable files raise OSError;
    unsupported modes/bit depths raise FormatError.
    """
    img = Image.open(path)  # raises OSError family if unreadable
    if img.mode == "P":
        img = img.convert("RGB")
    if img.mode == "L":
        arr = np.asarray(img, dtype=np.float64) / 255.0
    elif img.mode in ("I;16", "I;16B", "I;16L"):
        arr = np.asarray(img, dtype=np.float64) / 65535.0
    elif img.mode == "I":
        arr = np.asarray(img, dtype=np.float64)
        if arr.max() > 65535 or arr.min() < 0:
            raise FormatError(f"integer image {path} is not 16-bit")
        arr = arr / 65535.0
    elif img.mode == "RGB":
        rgb = np.asarray(img, dtype=np.float64) / 255.0
        arr = _LUMA[0] * rgb[..., 0] + _LUMA[1] * rgb[..., 1] + _LUMA[2] * rgb[..., 2]
    else:
        raise FormatError(f"unsupported image mode {img.mode!r} in {path}")
    t = torch.from_numpy(np.ascontiguousarray(arr)).float()[None, None]
    return ImageTensor(t, SPATIAL)


def save_image(x: ImageTensor, path) -> None:
    """Write a single spatial image as 8-bit PNG (clip to [0,1], round half up)."""
    if not x.is_spatial() or x.data.is_complex():
        raise DomainError("save_image needs a real spatial image")
    if x.shape[0] != 1 or x.shape[1] != 1:
        raise ShapeError(f"save_image expects batch=1, channel=1, got {x.shape}")
    arr = x.data[0, 0].detach().cpu().numpy().astype(np.float64)
    arr = np.clip(arr, 0.0, 1.0)
    # floor(v + 0.5) is round-half-up for non-negative values
    q = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(q, mode="L").save(path, format="PNG")


def psnr(x: ImageTensor, ref: ImageTensor, clip: bool = False) -> torch.Tensor:
    """PSNR in dB per batch element, on the 0-255 scale.

    10*log10(255^2 / MSE) with MSE computed after multiplying intensities by
    255. No clipping unless clip=True (then both inputs clip to [0,1] first).
    MSE == 0 reports +inf.
    """
    if x.shape != ref.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {ref.shape}")
    if not (x.is_spatial() and ref.is_spatial()) or x.data.is_complex() or ref.data.is_complex():
        raise DomainError("psnr is defined on real spatial images")
    a = x.data.double()
    b = ref.data.double()
    if clip:
        a = a.clamp(0.0, 1.0)
        b = b.clamp(0.0, 1.0)
    mse = ((a - b) * 255.0).pow(2).mean(dim=(1, 2, 3))
    safe = torch.where(mse > 0, mse, torch.ones_like(mse))
    return torch.where(mse > 0, 10.0 * torch.log10(255.0**2 / safe), torch.full_like(mse, math.inf))


def fft2(x: ImageTensor) -> ImageTensor:
    """Unnormalized forward 2-D DFT over the spatial axes; flips the domain tag."""
    return ImageTensor(torch.fft.fft2(x.data, norm="backward"), FOURIER if x.domain == SPATIAL else SPATIAL)


def ifft2(x: ImageTensor) -> ImageTensor:
    """Inverse 2-D DFT (1/(H*W) scaling); flips the domain tag.

    Output data is complex; use .real_spatial() where the math guarantees a
    real result.
    """
    return ImageTensor(torch.fft.ifft2(x.data, norm="backward"), SPATIAL if x.domain == FOURIER else FOURIER)


def format_psnr(value: float) -> str:
    """Fixed CSV float formatting; +inf serializes as 'inf'."""
    if math.isinf(value):
        return "inf"
    return f"{value:.6f}"


def write_metrics_csv(rows, path) -> None:
    """Write metric rows [(image_id, method, psnr_db), ...] as CSV."""
    lines = ["image_id,method,psnr_db"]
    for image_id, method, value in rows:
        lines.append(f"{image_id},{method},{format_psnr(value)}")
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")
