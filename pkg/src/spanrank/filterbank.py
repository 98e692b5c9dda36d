"""Parametric texture filter banks, CIE-Lab conversion and per-pixel responses."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import ImageTooSmall, InvalidSpec, UnsupportedFormat
from .scatter import LabeledInstanceSet

__all__ = [
    "KINDS",
    "FilterSpec",
    "FilterBank",
    "LabImage",
    "make_kernel",
    "make_bank",
    "truncate_bank",
    "srgb_to_lab",
    "rgb_to_lab_normalized",
    "convolve_same",
    "image_responses",
    "filter_responses",
]

KINDS = ("gaussian", "dog1", "dog2", "log", "schmid")
ISOTROPIC = ("gaussian", "log", "schmid")
DEFAULT_RESOLUTION = 49

# sRGB primaries to XYZ, D65 white
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
# white point taken from the matrix itself so that sRGB white lands exactly on it
_D65 = _RGB_TO_XYZ.sum(axis=1)


@dataclass(frozen=True)
class FilterSpec:
    kind: str
    scale: float
    orientation: float = 0.0
    tau: float = 1
    resolution: int = DEFAULT_RESOLUTION

    def validate(self):
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown filter kind {self.kind!r}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise InvalidSpec(f"scale must be positive, got {self.scale}")
        if int(self.resolution) != self.resolution or self.resolution < 1 or self.resolution % 2 == 0:
            raise InvalidSpec(f"resolution must be an odd positive integer, got {self.resolution}")
        if self.kind in ISOTROPIC and self.orientation != 0:
            raise InvalidSpec(f"{self.kind} filters are isotropic; orientation must be 0")
        if not 0 <= self.orientation < math.pi:
            raise InvalidSpec("orientation must lie in [0, pi)")
        if self.kind == "schmid" and not self.tau > 0:
            raise InvalidSpec("schmid tau must be positive")
        return self

    def with_resolution(self, resolution: int) -> "FilterSpec":
        return replace(self, resolution=int(resolution))


@dataclass(frozen=True)
class FilterBank:
    name: str
    filters: tuple

    def __len__(self):
        return len(self.filters)

    def kernels(self):
        return [make_kernel(f) for f in self.filters]


@dataclass(frozen=True)
class LabImage:
    """Per-channel standardised CIE-Lab image, stored as a 3 x H x W array."""

    channels: np.ndarray

    @property
    def height(self) -> int:
        return self.channels.shape[1]

    @property
    def width(self) -> int:
        return self.channels.shape[2]


def _grid(resolution: int):
    h = (resolution - 1) // 2
    # x to the right, y up; row 0 is the top of the kernel
    y, x = np.mgrid[h:-h - 1:-1, -h:h + 1].astype(np.float64)
    return x, y


def _gauss(t, sigma, order=0):
    g = np.exp(-t * t / (2.0 * sigma * sigma))
    if order == 1:
        return -t / sigma ** 2 * g
    if order == 2:
        return (t * t - sigma * sigma) / sigma ** 4 * g
    return g


def make_kernel(spec: FilterSpec) -> np.ndarray:
    """Realise a filter on the centred ``r x r`` integer grid.

    Gaussian kernels sum to one. All other kinds are made zero-mean and then
    scaled to unit L1 norm. Oriented kinds (``dog1``, ``dog2``) take the
    derivative across the short axis of a 3:1 anisotropic Gaussian whose
    long axis is rotated counter-clockwise by ``orientation``.
    """
    spec.validate()
    x, y = _grid(int(spec.resolution))
    s = float(spec.scale)
    if spec.kind == "gaussian":
        k = _gauss(np.hypot(x, y), s)
        return k / k.sum()
    if spec.kind in ("dog1", "dog2"):
        cos, sin = math.cos(spec.orientation), math.sin(spec.orientation)
        along = x * cos + y * sin
        across = -x * sin + y * cos
        k = _gauss(along, 3.0 * s) * _gauss(across, s, 1 if spec.kind == "dog1" else 2)
    elif spec.kind == "log":
        rho2 = x * x + y * y
        k = (rho2 - 2.0 * s * s) / s ** 4 * np.exp(-rho2 / (2.0 * s * s))
    else:
        rho = np.hypot(x, y)
        k = np.cos(math.pi * spec.tau * rho / s) * np.exp(-rho * rho / (2.0 * s * s))
    k = k - k.mean()
    l1 = np.abs(k).sum()
    if l1 == 0:
        raise InvalidSpec(f"{spec} realises an all-zero kernel")
    return k / l1


_SQ2 = math.sqrt(2.0)
_ORIENTS = tuple((k * math.pi / 6) % math.pi for k in range(1, 7))
_SCHMID = ((2, 1), (4, 1), (4, 2), (6, 1), (6, 2), (6, 3), (8, 1), (8, 2), (8, 3),
           (10, 1), (10, 2), (10, 3), (10, 4))
MR_ISOTROPIC_SCALE = 10.0


def _oriented(kind, scales, resolution):
    return [FilterSpec(kind, s, o, 1, resolution) for s in scales for o in _ORIENTS]


def _lm(r):
    scales = (_SQ2, 2.0, 2 * _SQ2)
    iso = (_SQ2, 2.0, 2 * _SQ2, 4.0)
    return (_oriented("dog1", scales, r) + _oriented("dog2", scales, r)
            + [FilterSpec("log", s, 0.0, 1, r) for s in iso]
            + [FilterSpec("log", 3 * s, 0.0, 1, r) for s in iso]
            + [FilterSpec("gaussian", s, 0.0, 1, r) for s in iso])


def _mr(r):
    scales = (1.0, 2.0, 4.0)
    return (_oriented("dog1", scales, r) + _oriented("dog2", scales, r)
            + [FilterSpec("gaussian", MR_ISOTROPIC_SCALE, 0.0, 1, r),
               FilterSpec("log", MR_ISOTROPIC_SCALE, 0.0, 1, r)])


def _schmid(r):
    return [FilterSpec("schmid", float(s), 0.0, t, r) for s, t in _SCHMID]


_BANKS = {"LM": _lm, "MR": _mr, "S": _schmid}


def make_bank(name: str, resolution: int = DEFAULT_RESOLUTION) -> FilterBank:
    """Build one of the ``LM`` (48), ``MR`` (38), ``S`` (13) or ``combined`` (99) banks."""
    key = name.upper() if name.lower() != "combined" else "combined"
    if key == "combined":
        filters = _lm(resolution) + _mr(resolution) + _schmid(resolution)
    elif key in _BANKS:
        filters = _BANKS[key](resolution)
    else:
        raise InvalidSpec(f"unknown bank {name!r}")
    return FilterBank(key, tuple(filters))


def truncate_bank(bank: FilterBank, count: int) -> FilterBank:
    """Keep ``count`` filters spread evenly across the bank, in bank order."""
    if count >= len(bank):
        return bank
    idx = np.unique(np.round(np.linspace(0, len(bank) - 1, count)).astype(int))
    return FilterBank(bank.name, tuple(bank.filters[i] for i in idx))


def srgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert an 8-bit sRGB raster (H x W x 3) to L*a*b* under D65."""
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8:
        raise UnsupportedFormat(f"expected 8-bit samples, got {rgb.dtype}")
    if rgb.ndim == 2:
        rgb = np.repeat(rgb[:, :, None], 3, axis=2)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise UnsupportedFormat(f"expected an H x W x 3 raster, got {rgb.shape}")
    c = rgb.astype(np.float64) / 255.0
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB_TO_XYZ.T / _D65
    delta = 6.0 / 29.0
    f = np.where(xyz > delta ** 3, np.cbrt(xyz), xyz / (3 * delta ** 2) + 4.0 / 29.0)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def rgb_to_lab_normalized(rgb: np.ndarray) -> LabImage:
    """CIE-Lab conversion followed by per-channel standardisation over the image.

    Channels whose spread is negligible relative to their level become all
    zeros.
    """
    lab = srgb_to_lab(rgb)
    planes = np.moveaxis(lab, 2, 0).copy()
    for ch in planes:
        mean = ch.mean()
        sd = ch.std()
        if sd <= 1e-9 * max(1.0, abs(mean)):
            ch[...] = 0.0
        else:
            ch -= mean
            ch /= sd
    return LabImage(planes)


def convolve_same(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """True 2-D convolution, same output size, symmetric (edge-repeating) reflection."""
    return ndimage.convolve(np.asarray(plane, dtype=np.float64), kernel, mode="reflect")


def image_responses(image: LabImage, kernel: np.ndarray) -> np.ndarray:
    """Per-pixel filter responses of one image as an (H*W) x 3 array."""
    r = kernel.shape[0]
    if image.height < r or image.width < r:
        raise ImageTooSmall(f"{image.height}x{image.width} image is smaller than a {r}x{r} kernel")
    out = np.empty((image.height * image.width, image.channels.shape[0]))
    for k, plane in enumerate(image.channels):
        out[:, k] = convolve_same(plane, kernel).ravel()
    return out


def filter_responses(images, labels, kernel: np.ndarray, num_classes: int | None = None) -> LabeledInstanceSet:
    """Stack the per-pixel responses of every image into one labelled set.

    Rows are ordered by image, then row, then column; each pixel inherits
    its image's label.
    """
    labels = [int(v) for v in labels]
    if len(labels) != len(images):
        raise ValueError("one label per image is required")
    blocks = [image_responses(im, kernel) for im in images]
    data = np.concatenate(blocks, axis=0)
    lab = np.concatenate([np.full(b.shape[0], y, dtype=np.int64) for b, y in zip(blocks, labels)])
    c = num_classes if num_classes is not None else max(labels) + 1
    return LabeledInstanceSet(data, lab, c)
