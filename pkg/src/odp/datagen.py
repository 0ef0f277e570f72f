"""Training/evaluation data pipeline: corpora, patches, and degradations.

Everything random is driven by an explicit Rng; pass a fresh child stream per
sample (or per training step) and the same seed reproduces every kernel,
mask, noise realization, and crop bit-for-bit.

The paper-era benchmark assets are not bundled; see fetch_assets() for the
manifest-driven downloader and builtin_corpus() for the offline fallback built
from scikit-image's public photographs.
"""

from __future__ import annotations

import hashlib
import json
import os
import urllib.request
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import torch
from scipy import ndimage

from .errors import ConfigError, InputError
from .images import FOURIER, SPATIAL, ImageTensor, load_image, save_image
from .linops import CIRCULAR_CONV, IDENTITY, MASKED_FOURIER, ForwardModel, apply_forward
from .rng import Rng

DENOISE = "denoise"
DEBLUR = "deblur"
CSMRI = "csmri"
FAMILIES = (DENOISE, DEBLUR, CSMRI)

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))  # radians between consecutive mask lines


@dataclass
class RandomMotion:
    """Per-sample random motion-blur kernels."""

    length_range: tuple = (6.0, 12.0)
    angle_range: tuple = (0.0, 2.0 * np.pi)
    size: int = 15


@dataclass
class DegradationSpec:
    """How to turn а clean image into a measurement.

    sigma is the noise std on the 0-255 scale (converted to [0,1] internally).
    kernel_source: fixed kernel tensor or RandomMotion (deblur only).
    mask_source: fixed 0/1 mask tensor or a pseudo-radial sampling ratio
    (csmri only).
    """

    family: str
    sigma: float = 0.0
    kernel_source: Union[torch.Tensor, RandomMotion, None] = None
    mask_source: Union[torch.Tensor, float, None] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown problem family {self.family!r}")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.family == DEBLUR and self.kernel_source is None:
            raise ConfigError("deblur needs a kernel_source")
        if self.family == CSMRI:
            if self.mask_source is None:
                raise ConfigError("csmri needs a mask_source")
            if isinstance(self.mask_source, float) and not (0.0 < self.mask_source <= 1.0):
                raise ConfigError("sampling ratio must be in (0, 1]")
        if self.family != DEBLUR and self.kernel_source is not None:
            raise ConfigError(f"kernel_source is only valid for deblur, not {self.family}")
        if self.family != CSMRI and self.mask_source is not None:
            raise ConfigError(f"mask_source is only valid for csmri, not {self.family}")

    @property
    def sigma01(self) -> float:
        return self.sigma / 255.0


@dataclass
class SamplePair:
    x: ImageTensor
    y: ImageTensor
    model: ForwardModel


# ---------------------------------------------------------------------------
# blur kernels
# ---------------------------------------------------------------------------


def make_kernel_disk(radius: float, size: int) -> torch.Tensor:
    """Out-of-focus disk: pixel-area fraction of a radius-r disk, sum 1.

    Anti-aliasing integrates the disk indicator over each pixel with a dense
    subgrid (error < 1e-2 of a rim pixel's fraction before normalization).
    """
    if radius <= 0:
        raise ConfigError("disk radius must be > 0")
    if size % 2 == 0 or size < 2 * radius + 1:
        raise ConfigError(f"kernel size {size} too small for radius {radius} (or even)")
    s = 256 if size <= 17 else 128
    # subsample centers within each pixel, pixel centers at -h..h
    h = size // 2
    coords = (np.arange(size * s) + 0.5) / s - 0.5 - h
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    inside = (yy * yy + xx * xx) <= radius * radius
    frac = inside.reshape(size, s, size, s).mean(axis=(1, 3))
    k = frac / frac.sum()
    return torch.from_numpy(k)[None, None]


def make_kernel_gaussian(std: float, size: int) -> torch.Tensor:
    """Sampled isotropic Gaussian density, normalized to sum 1."""
    if std <= 0:
        raise ConfigError("gaussian std must be > 0")
    if size % 2 == 0:
        raise ConfigError("kernel size must be odd")
    h = size // 2
    g = np.arange(-h, h + 1, dtype=np.float64)
    yy, xx = np.meshgrid(g, g, indexing="ij")
    k = np.exp(-(yy * yy + xx * xx) / (2.0 * std * std))
    k /= k.sum()
    return torch.from_numpy(k)[None, None]


def make_kernel_box(width: int) -> torch.Tensor:
    """Uniform box, padded to odd support when width is even; width 1 is a delta."""
    if width < 1:
        raise ConfigError("box width must be >= 1")
    size = width if width % 2 == 1 else width + 1
    k = np.zeros((size, size), dtype=np.float64)
    k[:width, :width] = 1.0 / (width * width)
    return torch.from_numpy(k)[None, None]


def make_kernel_motion(rng: Rng, length_range=(6.0, 12.0), angle_range=(0.0, 2.0 * np.pi), size: int = 15) -> torch.Tensor:
    """Random motion-blur kernel, deterministic for a given rng stream.

    A 2-4 segment piecewise-linear trajectory (per-segment heading within
    +-40 degrees of the base angle) is rasterized at 0.1 px steps with
    bilinear splatting, smoothed by a 0.5 px Gaussian, and normalized. A zero
    total length degenerates to the blurred point response.
    """
    if size % 2 == 0:
        raise ConfigError("kernel size must be odd")
    if length_range[0] < 0 or length_range[1] < length_range[0]:
        raise ConfigError("bad length_range")
    g = rng.np
    total = g.uniform(*length_range)
    n_seg = int(g.integers(2, 5))
    splits = g.uniform(0.5, 1.5, size=n_seg)
    seg_len = total * splits / splits.sum()
    base = g.uniform(*angle_range)
    headings = base + g.uniform(-0.7, 0.7, size=n_seg)

    # vertices of the trajectory
    pts = [np.zeros(2)]
    for L, th in zip(seg_len, headings):
        pts.append(pts[-1] + L * np.array([np.sin(th), np.cos(th)]))
    pts = np.array(pts)
    pts -= (pts.min(axis=0) + pts.max(axis=0)) / 2.0  # center the bounding box

    # keep the path inside the grid with a safety margin for the blur
    half = size // 2 - 1.5
    extent = np.abs(pts).max()
    if extent > half > 0:
        pts *= half / extent

    grid = np.zeros((size, size), dtype=np.float64)
    c = size // 2
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(2, int(np.ceil(np.linalg.norm(b - a) / 0.1)) + 1)
        ts = np.linspace(0.0, 1.0, n)
        for t in ts:
            py, px = a + t * (b - a)
            _splat(grid, py + c, px + c, 1.0 / n)
    if grid.sum() == 0:  # zero-length trajectory: single point
        grid[c, c] = 1.0
    grid = ndimage.gaussian_filter(grid, sigma=0.5, mode="constant")
    grid /= grid.sum()
    return torch.from_numpy(grid)[None, None]


def _splat(grid, fy, fx, w):
    y0, x0 = int(np.floor(fy)), int(np.floor(fx))
    dy, dx = fy - y0, fx - x0
    for oy, wy in ((0, 1 - dy), (1, dy)):
        for ox, wx in ((0, 1 - dx), (1, dx)):
            yy, xx = y0 + oy, x0 + ox
            if 0 <= yy < grid.shape[0] and 0 <= xx < grid.shape[1]:
                grid[yy, xx] += w * wy * wx


# ---------------------------------------------------------------------------
# sampling masks
# ---------------------------------------------------------------------------


def make_mask_pseudo_radial(rng: Rng, ratio: float, h: int, w: int) -> torch.Tensor:
    """Union of center-crossing lines at golden-angle increments.

    Lines are added until the sampled fraction reaches `ratio`; construction
    is directly in DFT coordinates (DC at [0,0]), rasterized in +-t pairs so
    the mask is invariant under 180-degree rotation and the DC bin is always
    sampled. For a fixed rng, a higher ratio extends the same line sequence,
    so masks are nested.
    """
    if not (0.0 < ratio <= 1.0):
        raise ConfigError("ratio must be in (0, 1]")
    mask = np.zeros((h, w), dtype=bool)
    mask[0, 0] = True
    offset = rng.np.uniform(0.0, np.pi)
    t_max = int(np.ceil(np.hypot(h, w) / 2.0)) + 1
    ts = np.arange(0, t_max + 1, 0.5)
    target = ratio * h * w
    max_lines = 8 * (h + w)
    n = 0
    while mask.sum() < target:
        if n >= max_lines:
            raise ConfigError(f"cannot reach sampling ratio {ratio} on a {h}x{w} grid")
        phi = offset + n * GOLDEN_ANGLE
        a = np.round(ts * np.sin(phi)).astype(int)
        b = np.round(ts * np.cos(phi)).astype(int)
        keep = (np.abs(a) <= h // 2) & (np.abs(b) <= w // 2)
        a, b = a[keep], b[keep]
        mask[a % h, b % w] = True
        mask[(-a) % h, (-b) % w] = True
        n += 1
    return torch.from_numpy(mask.astype(np.float64))[None, None]


# ---------------------------------------------------------------------------
# measurement synthesis
# ---------------------------------------------------------------------------


def build_model(spec: DegradationSpec, rng: Rng, shape, batch: int = 1) -> ForwardModel:
    """Materialize the forward model for a batch (per-sample motion kernels)."""
    if spec.family == DENOISE:
        return ForwardModel(IDENTITY, noise_sigma=spec.sigma01)
    if spec.family == DEBLUR:
        src = spec.kernel_source
        if isinstance(src, RandomMotion):
            kernels = [
                make_kernel_motion(rng.child(i), src.length_range, src.angle_range, src.size)
                for i in range(batch)
            ]
            kernel = torch.cat(kernels, dim=0)
        else:
            kernel = src
        return ForwardModel(CIRCULAR_CONV, kernel=kernel, noise_sigma=spec.sigma01)
    src = spec.mask_source
    if isinstance(src, torch.Tensor):
        mask = src
    else:
        mask = make_mask_pseudo_radial(rng.child(0), float(src), shape[0], shape[1])
    return ForwardModel(MASKED_FOURIER, mask=mask, noise_sigma=0.0)


def synthesize_pair(x: ImageTensor, spec: DegradationSpec, rng: Rng) -> SamplePair:
    """Degrade a clean batch per the spec; (x, spec, rng seed) fixes y exactly.

    Spatial families add i.i.d. Gaussian noise of std sigma/255; csmri is
    exact (noise-free measurements).
    """
    model = build_model(spec, rng, x.shape[-2:], batch=x.shape[0])
    y = apply_forward(model, x)
    if spec.family != CSMRI and spec.sigma > 0:
        noise = torch.randn(y.shape, generator=rng.child_named("noise").torch_gen(), dtype=torch.float64)
        y = ImageTensor(y.data + spec.sigma01 * noise.to(y.data.dtype), y.domain)
    return SamplePair(x=x, y=y, model=model)


# ---------------------------------------------------------------------------
# corpora and patch streams
# ---------------------------------------------------------------------------


def list_corpus(corpus_dir) -> list:
    exts = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")
    try:
        names = sorted(os.listdir(corpus_dir))
    except OSError as e:
        raise ConfigError(f"cannot read corpus directory {corpus_dir}: {e}") from e
    paths = [os.path.join(corpus_dir, n) for n in names if n.lower().endswith(exts)]
    if not paths:
        raise ConfigError(f"no images found in corpus directory {corpus_dir}")
    return paths


def load_corpus(corpus_dir) -> list:
    """[(image_id, ImageTensor)] for every raster image in the directory."""
    out = []
    for p in list_corpus(corpus_dir):
        out.append((os.path.splitext(os.path.basename(p))[0], load_image(p)))
    return out


def iterate_patches(corpus_dir, patch_size: int, batch: int, rng: Rng, augment: bool = True):
    """Infinite stream of [batch,1,p,p] float32 crops, uniform over positions.

    Epoch-based: each epoch visits every corpus image once in a shuffled
    order, taking one uniform crop (plus optional flip / 90-degree rotation)
    per visit. Deterministic for a fixed seed and single consumer.
    """
    images = [img.data[0, 0] for _, img in load_corpus(corpus_dir)]
    for i, im in enumerate(images):
        if im.shape[0] < patch_size or im.shape[1] < patch_size:
            raise ConfigError(f"corpus image {i} smaller than patch size {patch_size}")
    g = rng.np
    buf = []
    while True:
        order = g.permutation(len(images))
        for idx in order:
            im = images[idx]
            dy = int(g.integers(0, im.shape[0] - patch_size + 1))
            dx = int(g.integers(0, im.shape[1] - patch_size + 1))
            crop = im[dy : dy + patch_size, dx : dx + patch_size]
            if augment:
                if g.integers(0, 2):
                    crop = torch.flip(crop, dims=(1,))
                crop = torch.rot90(crop, k=int(g.integers(0, 4)), dims=(0, 1))
            buf.append(crop)
            if len(buf) == batch:
                yield ImageTensor(torch.stack(buf)[:, None].contiguous(), SPATIAL)
                buf = []


# ---------------------------------------------------------------------------
# asset manifest + builtin fallback corpus
# ---------------------------------------------------------------------------

# source photographs bundled with scikit-image; train and test draw from
# disjoint images so held-out tiles never share a source with training data
_BUILTIN_TRAIN = [
    "camera",
    "astronaut",
    "coffee",
    "chelsea",
    "immunohistochemistry",
    "hubble_deep_field",
    "retina",
    "brick",
    "grass",
    "gravel",
    "clock_motion",
    "motorcycle_left",
]
_BUILTIN_TEST = ["moon", "cell", "rocket", "page", "text", "coins", "horse"]


def _skimage_gray(name: str) -> np.ndarray:
    import skimage.data

    if name == "clock_motion":
        arr = skimage.data.clock()
    else:
        arr = getattr(skimage.data, name)()
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3:
        arr = 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]
    if arr.max() > 1.0:
        arr = arr / 255.0
    return np.clip(arr, 0.0, 1.0)


def builtin_corpus(dest_dir, split: str = "train", tile: int = 128, limit: Optional[int] = None) -> str:
    """Materialize the offline fallback corpus as PNG tiles; returns dest_dir.

    split='train' tiles one image set, split='test' a disjoint one. Tiles are
    non-overlapping, row-major per source, written once (idempotent).
    """
    names = {"train": _BUILTIN_TRAIN, "test": _BUILTIN_TEST}.get(split)
    if names is None:
        raise ConfigError(f"unknown builtin split {split!r}")
    os.makedirs(dest_dir, exist_ok=True)
    made = []
    for name in names:
        arr = _skimage_gray(name)
        ny, nx = arr.shape[0] // tile, arr.shape[1] // tile
        for iy in range(ny):
            for ix in range(nx):
                tile_id = f"{name}_{iy}{ix}"
                made.append(tile_id)
                path = os.path.join(dest_dir, tile_id + ".png")
                if not os.path.exists(path):
                    t = arr[iy * tile : (iy + 1) * tile, ix * tile : (ix + 1) * tile]
                    save_image(ImageTensor(torch.from_numpy(t).float()[None, None], SPATIAL), path)
                if limit is not None and len(made) >= limit:
                    break
            if limit is not None and len(made) >= limit:
                break
        if limit is not None and len(made) >= limit:
            break
    # prune tiles beyond the limit from earlier runs with a larger limit
    return dest_dir


def fetch_assets(manifest_path, dest_dir) -> dict:
    """Download manifest assets ({'assets':[{name,url,sha256}]}) with checksum
    verification; returns {'fetched': [...], 'failed': [...]}.

    Assets with an empty url (the paper's benchmark sets, whose hosting is not
    pinned down) are reported as failed so the caller can fall back to
    builtin_corpus().
    """
    with open(manifest_path) as f:
        manifest = json.load(f)
    os.makedirs(dest_dir, exist_ok=True)
    fetched, failed = [], []
    for asset in manifest.get("assets", []):
        name, url = asset.get("name"), asset.get("url", "")
        dest = os.path.join(dest_dir, name)
        if not url:
            failed.append(name)
            continue
        try:
            with urllib.request.urlopen(url) as r:
                blob = r.read()
        except Exception:
            failed.append(name)
            continue
        want = asset.get("sha256", "")
        if want and hashlib.sha256(blob).hexdigest() != want:
            failed.append(name)
            continue
        with open(dest, "wb") as f:
            f.write(blob)
        fetched.append(name)
    return {"fetched": fetched, "failed": failed}
