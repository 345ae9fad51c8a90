"""Spatial and spectral degradation operators, in both domains, with adjoints.

All spatial operators assume periodic boundaries. Frequency-domain cubes hold
unitary 2D-DFTs of their bands (``norm="ortho"``), so Parseval holds exactly
and subsampling by ``d`` becomes a block sum scaled by ``1/d``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .datacube import FREQUENCY, SPATIAL, GridShape, SpectralCube, WavelengthAxis
from .errors import ArgumentError
from .psf import PsfStack, TransferStack, to_transfer

MS_FILTERS = "ms_filters"
HS_TRANSMISSION = "hs_transmission"


# --------------------------------------------------------------------------
# domain changes


def dft(cube: SpectralCube) -> SpectralCube:
    """Unitary 2D-DFT of every band."""
    if cube.domain != SPATIAL:
        raise ArgumentError("dft expects a spatial cube")
    f = np.fft.fft2(cube.images, norm="ortho")
    return SpectralCube(f.reshape(cube.bands, -1), cube.shape, cube.axis, FREQUENCY)


def idft(cubeF: SpectralCube) -> SpectralCube:
    """Inverse unitary 2D-DFT; the (round-off) imaginary part is dropped."""
    if cubeF.domain != FREQUENCY:
        raise ArgumentError("idft expects a frequency cube")
    x = np.fft.ifft2(cubeF.images, norm="ortho").real
    return SpectralCube(x.reshape(cubeF.bands, -1), cubeF.shape, cubeF.axis, SPATIAL)


# --------------------------------------------------------------------------
# types


@dataclass(frozen=True, eq=False)
class SpectralResponse:
    matrix: np.ndarray  # (l_out, l_in)
    kind: str = MS_FILTERS
    axis_out: WavelengthAxis | None = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64, order="C")
        if m.ndim != 2:
            raise ArgumentError("spectral response must be a 2D matrix")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ArgumentError("spectral response must be finite and nonnegative")
        if self.kind == MS_FILTERS:
            if np.any(m.max(axis=1) <= 0):
                raise ArgumentError("every MS filter row needs a positive entry")
        elif self.kind == HS_TRANSMISSION:
            if m.shape[0] != m.shape[1]:
                raise ArgumentError("HS transmission must be square")
            if np.any(m[~np.eye(m.shape[0], dtype=bool)] != 0):
                raise ArgumentError("HS transmission must be diagonal")
            if np.any(np.diag(m) <= 0):
                raise ArgumentError("HS transmission diagonal must be > 0")
        else:
            raise ArgumentError(f"unknown response kind {self.kind!r}")
        if self.axis_out is not None and len(self.axis_out) != m.shape[0]:
            raise ArgumentError("output axis length does not match response rows")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def transmission(cls, diagonal) -> "SpectralResponse":
        return cls(np.diag(np.asarray(diagonal, dtype=np.float64)), HS_TRANSMISSION)

    @property
    def l_out(self) -> int:
        return self.matrix.shape[0]

    @property
    def l_in(self) -> int:
        return self.matrix.shape[1]

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.matrix)


@dataclass(frozen=True)
class DecimationSpec:
    d: int

    def __post_init__(self):
        if int(self.d) < 1:
            raise ArgumentError(f"decimation factor must be >= 1, got {self.d}")
        object.__setattr__(self, "d", int(self.d))

    def coarse(self, shape: GridShape) -> GridShape:
        if shape.rows % self.d or shape.cols % self.d:
            raise ArgumentError(f"d={self.d} does not divide grid {shape.rows}x{shape.cols}")
        return GridShape(shape.rows // self.d, shape.cols // self.d)


@dataclass(frozen=True, eq=False)
class DiffTransfer:
    horizontal: np.ndarray  # (p,) complex
    vertical: np.ndarray
    energy: np.ndarray  # (p,) real, |Dh|^2 + |Dv|^2
    shape: GridShape


# --------------------------------------------------------------------------
# spectral


def apply_spectral(response: SpectralResponse, cube: SpectralCube) -> SpectralCube:
    if response.l_in != cube.bands:
        raise ArgumentError(f"response expects {response.l_in} bands, cube has {cube.bands}")
    if response.kind == HS_TRANSMISSION:
        data = response.diagonal[:, None] * cube.data
        axis = cube.axis
    else:
        data = response.matrix @ cube.data
        axis = response.axis_out
    return SpectralCube(data, cube.shape, axis, cube.domain)


# --------------------------------------------------------------------------
# convolution


def convolve_spatial(cube: SpectralCube, stack: PsfStack) -> SpectralCube:
    """Direct cyclic convolution of band b with kernel b, O(p k^2) per band."""
    if cube.domain != SPATIAL:
        raise ArgumentError("convolve_spatial expects a spatial cube")
    if len(stack) != cube.bands:
        raise ArgumentError(f"{len(stack)} kernels for {cube.bands} bands")
    k = stack.size
    if k > min(cube.shape.rows, cube.shape.cols):
        raise ArgumentError("kernel larger than grid")
    c = k // 2
    x = cube.images
    out = np.zeros(x.shape)
    for a in range(k):
        for b in range(k):
            w = stack.kernels[:, a, b]
            if np.any(w):
                out += w[:, None, None] * np.roll(x, (a - c, b - c), axis=(1, 2))
    return SpectralCube(out.reshape(cube.bands, -1), cube.shape, cube.axis, SPATIAL)


def convolve_frequency(cubeF: SpectralCube, transfer: TransferStack) -> SpectralCube:
    if cubeF.domain != FREQUENCY:
        raise ArgumentError("convolve_frequency expects a frequency cube")
    if transfer.shape != cubeF.shape or len(transfer) != cubeF.bands:
        raise ArgumentError("transfer stack does not match cube")
    return SpectralCube(cubeF.data * transfer.transfer, cubeF.shape, cubeF.axis, FREQUENCY)


# --------------------------------------------------------------------------
# decimation / aliasing


def subsample(cube: SpectralCube, spec: DecimationSpec) -> SpectralCube:
    """Keep pixel (d*i, d*j) of every d x d cell."""
    if cube.domain != SPATIAL:
        raise ArgumentError("subsample expects a spatial cube")
    coarse = spec.coarse(cube.shape)
    x = cube.images[:, :: spec.d, :: spec.d]
    return SpectralCube(x.reshape(cube.bands, -1), coarse, cube.axis, SPATIAL)


def upsample_zero(cube: SpectralCube, spec: DecimationSpec) -> SpectralCube:
    """Adjoint of ``subsample``: zero insertion."""
    if cube.domain != SPATIAL:
        raise ArgumentError("upsample_zero expects a spatial cube")
    fine = GridShape(cube.shape.rows * spec.d, cube.shape.cols * spec.d)
    out = np.zeros((cube.bands, fine.rows, fine.cols))
    out[:, :: spec.d, :: spec.d] = cube.images
    return SpectralCube(out.reshape(cube.bands, -1), fine, cube.axis, SPATIAL)


def to_blocks(images: np.ndarray, d: int) -> np.ndarray:
    """``(..., R, C)`` -> ``(..., d*d, (R/d)*(C/d))``.

    Block ``q = a*d + b`` gathers fine frequencies ``(u + a*R/d, v + b*C/d)``,
    the set folded onto coarse frequency ``(u, v)`` by aliasing.
    """
    *lead, R, C = images.shape
    r, c = R // d, C // d
    x = images.reshape(*lead, d, r, d, c)
    x = np.moveaxis(x, -3, -2)  # (..., d, d, r, c)
    return x.reshape(*lead, d * d, r * c)


def from_blocks(blocks: np.ndarray, d: int, shape: GridShape) -> np.ndarray:
    """Inverse of ``to_blocks``: ``(..., d*d, p_h)`` -> ``(..., R, C)``."""
    *lead, _, _ = blocks.shape
    r, c = shape.rows // d, shape.cols // d
    x = blocks.reshape(*lead, d, d, r, c)
    x = np.moveaxis(x, -2, -3)
    return x.reshape(*lead, shape.rows, shape.cols)


def alias(cubeF: SpectralCube, spec: DecimationSpec) -> SpectralCube:
    """Fourier-domain counterpart of ``subsample``: (1/d) x sum of the d^2 blocks."""
    if cubeF.domain != FREQUENCY:
        raise ArgumentError("alias expects a frequency cube")
    coarse = spec.coarse(cubeF.shape)
    out = to_blocks(cubeF.images, spec.d).sum(axis=-2) / spec.d
    return SpectralCube(out, coarse, cubeF.axis, FREQUENCY)


def alias_adjoint(cubeF: SpectralCube, spec: DecimationSpec) -> SpectralCube:
    """Replicate each coarse spectrum into the d^2 congruent blocks, scaled 1/d."""
    if cubeF.domain != FREQUENCY:
        raise ArgumentError("alias_adjoint expects a frequency cube")
    fine = GridShape(cubeF.shape.rows * spec.d, cubeF.shape.cols * spec.d)
    rep = np.broadcast_to(cubeF.data[:, None, :] / spec.d, (cubeF.bands, spec.d**2, cubeF.shape.pixels))
    out = from_blocks(rep, spec.d, fine)
    return SpectralCube(out.reshape(cubeF.bands, -1), fine, cubeF.axis, FREQUENCY)


# --------------------------------------------------------------------------
# finite differences


def diff_energy_transfer(shape: GridShape) -> DiffTransfer:
    """Transfers of the periodic first differences with kernels (1 -1) and (1 -1)^T."""
    kh = np.zeros((shape.rows, shape.cols))
    kv = np.zeros((shape.rows, shape.cols))
    # (Dx)[i, j] = x[i, j] - x[i, j-1] and (Dx)[i, j] = x[i, j] - x[i-1, j]
    kh[0, 0] += 1.0
    kh[0, 1 % shape.cols] -= 1.0
    kv[0, 0] += 1.0
    kv[1 % shape.rows, 0] -= 1.0
    th = np.fft.fft2(kh).reshape(-1)
    tv = np.fft.fft2(kv).reshape(-1)
    energy = (np.abs(th) ** 2 + np.abs(tv) ** 2).real
    energy[0] = 0.0
    return DiffTransfer(th, tv, energy, shape)


def finite_diff_apply(coeffsF: SpectralCube, diff: DiffTransfer | None = None) -> SpectralCube:
    """Horizontal then vertical differences; output has ``2 * bands`` bands."""
    if coeffsF.domain != FREQUENCY:
        raise ArgumentError("finite_diff_apply expects a frequency cube")
    diff = diff or diff_energy_transfer(coeffsF.shape)
    out = np.concatenate([coeffsF.data * diff.horizontal, coeffsF.data * diff.vertical])
    return SpectralCube(out, coeffsF.shape, None, FREQUENCY)


def gradient_energy_spatial(cube: SpectralCube) -> float:
    """Sum of squared periodic first differences of every band."""
    x = cube.images
    dh = x - np.roll(x, 1, axis=2)
    dv = x - np.roll(x, 1, axis=1)
    return float(np.sum(np.abs(dh) ** 2) + np.sum(np.abs(dv) ** 2))


# --------------------------------------------------------------------------
# instrument models


@dataclass(eq=False)
class InstrumentModels:
    """Everything that defines the two forward models."""

    lm: SpectralResponse
    lh: SpectralResponse
    psf_m: PsfStack
    psf_h: PsfStack
    decimation: DecimationSpec
    _transfer_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        l_h = self.lm.l_in
        if self.lh.kind != HS_TRANSMISSION:
            raise ArgumentError("lh must be an HS transmission response")
        if self.lh.l_in != l_h:
            raise ArgumentError(f"lm expects {l_h} bands, lh has {self.lh.l_in}")
        if len(self.psf_m) != l_h or len(self.psf_h) != l_h:
            raise ArgumentError("PSF stacks must have one kernel per HS band")

    @property
    def l_h(self) -> int:
        return self.lm.l_in

    @property
    def l_m(self) -> int:
        return self.lm.l_out

    @property
    def d(self) -> int:
        return self.decimation.d

    def transfers(self, shape: GridShape) -> tuple[TransferStack, TransferStack]:
        if shape not in self._transfer_cache:
            self._transfer_cache[shape] = (to_transfer(self.psf_m, shape), to_transfer(self.psf_h, shape))
        return self._transfer_cache[shape]

    def fingerprint(self) -> str:
        h = hashlib.sha1()
        for arr in (self.lm.matrix, self.lh.matrix, self.psf_m.kernels, self.psf_h.kernels):
            h.update(np.ascontiguousarray(arr).tobytes())
            h.update(str(arr.shape).encode())
        h.update(str(self.d).encode())
        return h.hexdigest()


def _check_scene(X: SpectralCube, models: InstrumentModels):
    if X.domain != SPATIAL:
        raise ArgumentError("scene must be a spatial cube")
    if X.bands != models.l_h:
        raise ArgumentError(f"scene has {X.bands} bands, models expect {models.l_h}")
    models.decimation.coarse(X.shape)


def _fft_convolve(X: SpectralCube, transfer: TransferStack, conj: bool = False) -> SpectralCube:
    t = np.conj(transfer.transfer) if conj else transfer.transfer
    f = np.fft.fft2(X.images) * t.reshape(-1, X.shape.rows, X.shape.cols)
    y = np.fft.ifft2(f).real
    return SpectralCube(y.reshape(X.bands, -1), X.shape, X.axis, SPATIAL)


def forward_ms(X: SpectralCube, models: InstrumentModels, method: str = "fft") -> SpectralCube:
    """Noise-free MS observation ``L_m M(X)`` on the fine grid."""
    _check_scene(X, models)
    if method == "direct":
        blurred = convolve_spatial(X, models.psf_m)
    else:
        blurred = _fft_convolve(X, models.transfers(X.shape)[0])
    return apply_spectral(models.lm, blurred)


def forward_hs(X: SpectralCube, models: InstrumentModels, method: str = "fft") -> SpectralCube:
    """Noise-free HS observation ``L_h H(X) S`` on the coarse grid."""
    _check_scene(X, models)
    if method == "direct":
        blurred = convolve_spatial(X, models.psf_h)
    else:
        blurred = _fft_convolve(X, models.transfers(X.shape)[1])
    return subsample(apply_spectral(models.lh, blurred), models.decimation)


def forward_ms_frequency(XF: SpectralCube, models: InstrumentModels) -> SpectralCube:
    tm, _ = models.transfers(XF.shape)
    return apply_spectral(models.lm, convolve_frequency(XF, tm))


def forward_hs_frequency(XF: SpectralCube, models: InstrumentModels) -> SpectralCube:
    _, th = models.transfers(XF.shape)
    return alias(apply_spectral(models.lh, convolve_frequency(XF, th)), models.decimation)


def adjoint_forward_ms(residual: SpectralCube, models: InstrumentModels) -> SpectralCube:
    if residual.domain != SPATIAL or residual.bands != models.l_m:
        raise ArgumentError(f"MS residual must be spatial with {models.l_m} bands")
    back = SpectralCube(models.lm.matrix.T @ residual.data, residual.shape, None, SPATIAL)
    return _fft_convolve(back, models.transfers(residual.shape)[0], conj=True)


def adjoint_forward_hs(residual: SpectralCube, models: InstrumentModels) -> SpectralCube:
    if residual.domain != SPATIAL or residual.bands != models.l_h:
        raise ArgumentError(f"HS residual must be spatial with {models.l_h} bands")
    up = upsample_zero(residual, models.decimation)
    back = SpectralCube(models.lh.diagonal[:, None] * up.data, up.shape, residual.axis, SPATIAL)
    return _fft_convolve(back, models.transfers(up.shape)[1], conj=True)
