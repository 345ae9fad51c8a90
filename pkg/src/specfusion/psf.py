"""Wavelength-dependent PSF stacks and their transfer functions.

Transfer convention: with the unitary DFT ``F`` (``numpy.fft.fft2`` with
``norm="ortho"``), cyclic convolution satisfies

    F(x * k) = sqrt(p) * F(k) . F(x)

so the stored transfer is ``sqrt(p) * F(k_padded)``, i.e. the plain
(unnormalized) FFT of the zero-padded, circularly centered kernel. Its DC bin
equals the kernel sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .datacube import (
    GridShape,
    WavelengthAxis,
    iter_container_bands,
    read_container,
    write_container,
)
from .errors import ArgumentError, FormatError

PSF_MAGIC = b"PSFSTACK"
FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))
CLIP_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class PsfStack:
    kernels: np.ndarray  # (l, k, k)
    axis: WavelengthAxis
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        k = np.asarray(self.kernels, dtype=np.float64)
        if k.ndim != 3 or k.shape[1] != k.shape[2]:
            raise ArgumentError(f"kernels must be (l, k, k), got {k.shape}")
        if k.shape[1] % 2 == 0:
            raise ArgumentError(f"kernel size must be odd, got {k.shape[1]}")
        if len(self.axis) != k.shape[0]:
            raise ArgumentError(f"axis length {len(self.axis)} != kernel count {k.shape[0]}")
        if np.any(k < 0):
            raise ArgumentError("PSF kernels must be nonnegative")
        k = np.array(k, order="C")
        k.setflags(write=False)
        object.__setattr__(self, "kernels", k)

    @property
    def size(self) -> int:
        return self.kernels.shape[1]

    def __len__(self):
        return self.kernels.shape[0]


@dataclass(frozen=True, eq=False)
class TransferStack:
    transfer: np.ndarray  # (l, p) complex
    shape: GridShape

    def __len__(self):
        return self.transfer.shape[0]

    @property
    def images(self) -> np.ndarray:
        return self.transfer.reshape(-1, self.shape.rows, self.shape.cols)


def gaussian_kernel(size: int, fwhm_major: float, fwhm_minor: float, angle: float) -> np.ndarray:
    """Unnormalized elliptical Gaussian sampled on a ``size x size`` window."""
    c = size // 2
    y, x = np.mgrid[-c : c + 1, -c : c + 1].astype(np.float64)
    u = x * np.cos(angle) + y * np.sin(angle)
    v = -x * np.sin(angle) + y * np.cos(angle)
    s_maj = fwhm_major * FWHM_TO_SIGMA
    s_min = fwhm_minor * FWHM_TO_SIGMA
    return np.exp(-0.5 * ((u / s_maj) ** 2 + (v / s_min) ** 2))


def synthesize_psf_stack(
    axis: WavelengthAxis,
    fwhm_at_min: float,
    anisotropy: float = 1.0,
    angle: float = 0.0,
    size: int = 15,
) -> PsfStack:
    """Elliptical Gaussian PSFs whose major-axis FWHM grows linearly with wavelength.

    Band ``b`` gets a major FWHM of ``fwhm_at_min * lambda_b / lambda_min`` and
    a minor FWHM ``anisotropy`` times smaller. Each kernel has unit sum. When a
    kernel loses more than 1e-6 of its mass outside the window, the offending
    bands are listed under ``meta["clipped_bands"]``.
    """
    if size < 1 or size % 2 == 0:
        raise ArgumentError(f"PSF size must be a positive odd integer, got {size}")
    if fwhm_at_min < 0.5:
        raise ArgumentError(f"fwhm_at_min must be >= 0.5 pixel, got {fwhm_at_min}")
    if anisotropy <= 0:
        raise ArgumentError("anisotropy must be > 0")
    lam = axis.values
    fwhm = fwhm_at_min * lam / lam[0]
    kernels = np.empty((lam.size, size, size))
    clipped = []
    for b, f in enumerate(fwhm):
        g = gaussian_kernel(size, f, f / anisotropy, angle)
        s_max = max(f, f / anisotropy) * FWHM_TO_SIGMA
        half = max(size // 2, int(np.ceil(8 * s_max)))
        if half > size // 2:
            big = gaussian_kernel(2 * half + 1, f, f / anisotropy, angle)
            lost = 1.0 - g.sum() / big.sum()
            if lost > CLIP_TOLERANCE:
                clipped.append(b)
        kernels[b] = g / g.sum()
    meta = {"fwhm": fwhm, "anisotropy": anisotropy, "angle": angle}
    if clipped:
        meta["clipped_bands"] = clipped
        meta["warnings"] = [f"{len(clipped)} kernels clip more than {CLIP_TOLERANCE:g} of their mass"]
    return PsfStack(kernels, axis, meta)


def delta_psf_stack(axis: WavelengthAxis) -> PsfStack:
    return PsfStack(np.ones((len(axis), 1, 1)), axis)


def pad_kernel(kernel: np.ndarray, shape: GridShape) -> np.ndarray:
    """Zero-pad ``kernel`` to the grid with its center moved to pixel (0, 0)."""
    k = kernel.shape[0]
    if k > min(shape.rows, shape.cols):
        raise ArgumentError(f"kernel size {k} exceeds grid {shape.rows}x{shape.cols}")
    c = k // 2
    out = np.zeros((shape.rows, shape.cols))
    out[:k, :k] = kernel
    return np.roll(out, (-c, -c), axis=(0, 1))


def kernel_transfer(kernel: np.ndarray, shape: GridShape) -> np.ndarray:
    """Flattened transfer function of one kernel (length ``p``)."""
    return np.fft.fft2(pad_kernel(kernel, shape)).reshape(-1)


def iter_transfers(kernels, shape: GridShape, chunk: int = 64) -> Iterator[tuple[slice, np.ndarray]]:
    """Yield ``(band slice, transfers)`` chunks without materializing the full stack."""
    kernels = np.asarray(kernels)
    if kernels.shape[1] > min(shape.rows, shape.cols):
        raise ArgumentError(f"kernel size {kernels.shape[1]} exceeds grid {shape.rows}x{shape.cols}")
    k = kernels.shape[1]
    c = k // 2
    for start in range(0, kernels.shape[0], chunk):
        sl = slice(start, min(start + chunk, kernels.shape[0]))
        pad = np.zeros((sl.stop - sl.start, shape.rows, shape.cols))
        pad[:, :k, :k] = kernels[sl]
        pad = np.roll(pad, (-c, -c), axis=(1, 2))
        yield sl, np.fft.fft2(pad).reshape(pad.shape[0], -1)


def to_transfer(stack: PsfStack, shape: GridShape) -> TransferStack:
    out = np.empty((len(stack), shape.pixels), dtype=np.complex128)
    for sl, t in iter_transfers(stack.kernels, shape):
        out[sl] = t
    out.setflags(write=False)
    return TransferStack(out, shape)


def save_psf_stack(stack: PsfStack, path) -> None:
    write_container(path, PSF_MAGIC, stack.kernels, stack.axis.values, stack.size, stack.size)


def _check_psf_header(hdr, path):
    if hdr.rows != hdr.cols or hdr.rows % 2 == 0:
        raise FormatError(f"{path}: PSF kernels must be square with odd size, got {hdr.rows}x{hdr.cols}")


def load_psf_stack(path) -> PsfStack:
    hdr, axis, payload = read_container(path, PSF_MAGIC)
    _check_psf_header(hdr, path)
    try:
        wl = WavelengthAxis(axis)
        return PsfStack(payload.reshape(hdr.bands, hdr.rows, hdr.cols), wl)
    except ArgumentError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def iter_psf_file(path) -> Iterator[tuple[float, np.ndarray]]:
    """Stream ``(wavelength, kernel)`` pairs from a PSF stack file."""
    yield from iter_container_bands(path, PSF_MAGIC)
