"""Spectral cube containers and the portable binary cube format.

A cube holds ``l`` bands of a ``rows x cols`` image, stored band-major as an
``(l, p)`` matrix whose rows are the band images flattened in row-major
(lexicographic) pixel order.

Binary layout (all little-endian)::

    offset  size       field
    0       8          magic (ASCII, e.g. b"SPECCUBE")
    8       4          version (u32)
    12      4          dtype code (u32): 1=f32, 2=f64, 3=c64, 4=c128
    16      24         bands, rows, cols (3 x u64)
    40      8*bands    wavelength block (f64)
    ...     payload    bands*rows*cols scalars, band-major, row-major
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ArgumentError, FormatError

CUBE_MAGIC = b"SPECCUBE"
FORMAT_VERSION = 1
HEADER = struct.Struct("<8sII3Q")
HEADER_SIZE = HEADER.size  # 40

DTYPE_CODES = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("<c8"),
    4: np.dtype("<c16"),
}
_CODE_OF = {dt: code for code, dt in DTYPE_CODES.items()}

# refuse headers whose payload exceeds this before touching the disk
_MAX_PAYLOAD = 1 << 42

SPATIAL = "spatial"
FREQUENCY = "frequency"


@dataclass(frozen=True)
class GridShape:
    rows: int
    cols: int

    def __post_init__(self):
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise ArgumentError(f"grid dimensions must be >= 1, got {self.rows}x{self.cols}")
        object.__setattr__(self, "rows", int(self.rows))
        object.__setattr__(self, "cols", int(self.cols))

    @property
    def pixels(self) -> int:
        return self.rows * self.cols

    def __iter__(self):
        return iter((self.rows, self.cols))


@dataclass(frozen=True, eq=False)
class WavelengthAxis:
    """Strictly increasing, positive wavelengths in micrometers."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).ravel()
        if v.size == 0:
            raise ArgumentError("wavelength axis is empty")
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise ArgumentError("wavelengths must be finite and > 0")
        if v.size > 1 and np.any(np.diff(v) <= 0):
            raise ArgumentError("wavelengths must be strictly increasing")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def linear(cls, start: float, stop: float, n: int) -> "WavelengthAxis":
        return cls(np.linspace(start, stop, n))

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        return isinstance(other, WavelengthAxis) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())


@dataclass(frozen=True, eq=False)
class SpectralCube:
    """Immutable band-major image stack.

    ``data`` has shape ``(bands, shape.pixels)``. Spatial cubes are real;
    frequency cubes hold unitary 2D-DFTs of their bands and are complex.
    """

    data: np.ndarray
    shape: GridShape
    axis: WavelengthAxis | None = None
    domain: str = SPATIAL
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 3:
            data = data.reshape(data.shape[0], -1)
        if data.ndim != 2:
            raise ArgumentError(f"cube data must be 2D (bands, pixels), got ndim={data.ndim}")
        if data.shape[0] < 1:
            raise ArgumentError("cube must have at least one band")
        if data.shape[1] != self.shape.pixels:
            raise ArgumentError(
                f"row length {data.shape[1]} does not match grid {self.shape.rows}x{self.shape.cols}"
            )
        if self.domain not in (SPATIAL, FREQUENCY):
            raise ArgumentError(f"unknown domain tag {self.domain!r}")
        if self.domain == SPATIAL and np.iscomplexobj(data):
            raise ArgumentError("spatial cubes must be real-valued")
        if self.axis is not None and len(self.axis) != data.shape[0]:
            raise ArgumentError(f"axis length {len(self.axis)} != bands {data.shape[0]}")
        if data.flags.writeable or not data.flags.c_contiguous:
            data = np.array(data, order="C", copy=True)
            data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def images(self) -> np.ndarray:
        """Read-only ``(bands, rows, cols)`` view."""
        return self.data.reshape(self.bands, self.shape.rows, self.shape.cols)

    def replace(self, data=None, shape=None, axis="keep", domain=None) -> "SpectralCube":
        return SpectralCube(
            data=self.data if data is None else data,
            shape=self.shape if shape is None else shape,
            axis=self.axis if axis == "keep" else axis,
            domain=self.domain if domain is None else domain,
        )

    def __eq__(self, other):
        return (
            isinstance(other, SpectralCube)
            and self.shape == other.shape
            and self.domain == other.domain
            and self.axis == other.axis
            and self.data.dtype == other.data.dtype
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


def vectorize(cube: SpectralCube) -> np.ndarray:
    """Concatenate band rows in band order into one flat vector."""
    return cube.data.reshape(-1).copy()


def devectorize(vec, bands: int, shape: GridShape, domain: str | None = None, axis=None) -> SpectralCube:
    vec = np.asarray(vec)
    if vec.size != bands * shape.pixels:
        raise ArgumentError(f"vector length {vec.size} != {bands}*{shape.pixels}")
    if domain is None:
        domain = FREQUENCY if np.iscomplexobj(vec) else SPATIAL
    return SpectralCube(vec.reshape(bands, shape.pixels), shape, axis=axis, domain=domain)


# --------------------------------------------------------------------------
# binary container


def _dtype_code(dtype) -> int:
    dt = np.dtype(dtype).newbyteorder("<")
    try:
        return _CODE_OF[dt]
    except KeyError:
        raise ArgumentError(f"unsupported payload dtype {dtype}") from None


def write_container(path, magic: bytes, payload: np.ndarray, axis_block, rows: int, cols: int) -> None:
    """Write ``payload`` (any shape with ``bands*rows*cols`` elements)."""
    if len(magic) != 8:
        raise ArgumentError("magic tag must be 8 bytes")
    payload = np.asarray(payload)
    code = _dtype_code(payload.dtype)
    axis_block = np.asarray(axis_block, dtype="<f8").ravel()
    bands = axis_block.size
    if bands < 1:
        raise ArgumentError("container needs at least one band")
    if payload.size != bands * rows * cols:
        raise ArgumentError(f"payload has {payload.size} values, expected {bands}*{rows}*{cols}")
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(HEADER.pack(magic, FORMAT_VERSION, code, bands, rows, cols))
            fh.write(axis_block.tobytes())
            fh.write(np.ascontiguousarray(payload, dtype=DTYPE_CODES[code]).tobytes())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


@dataclass(frozen=True)
class ContainerHeader:
    magic: bytes
    version: int
    dtype: np.dtype
    bands: int
    rows: int
    cols: int

    @property
    def payload_offset(self) -> int:
        return HEADER_SIZE + 8 * self.bands

    @property
    def band_bytes(self) -> int:
        return self.rows * self.cols * self.dtype.itemsize


def read_header(fh, expected_magic: bytes | None, path="<stream>") -> ContainerHeader:
    raw = fh.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: header truncated ({len(raw)} < {HEADER_SIZE} bytes)")
    magic, version, code, bands, rows, cols = HEADER.unpack(raw)
    if expected_magic is not None and magic != expected_magic:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {expected_magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if code not in DTYPE_CODES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    dt = DTYPE_CODES[code]
    for name, val in (("bands", bands), ("rows", rows), ("cols", cols)):
        if val < 1:
            raise FormatError(f"{path}: {name} must be >= 1, got {val}")
    if bands * rows * cols * dt.itemsize > _MAX_PAYLOAD or bands * rows * cols > _MAX_PAYLOAD:
        raise FormatError(f"{path}: dimension overflow in bands/rows/cols ({bands}x{rows}x{cols})")
    return ContainerHeader(magic, version, dt, bands, rows, cols)


def read_container(path, expected_magic: bytes | None):
    """Return ``(header, axis_block, payload)`` with payload shaped ``(bands, rows*cols)``."""
    path = Path(path)
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        hdr = read_header(fh, expected_magic, path)
        axis_raw = fh.read(8 * hdr.bands)
        if len(axis_raw) != 8 * hdr.bands:
            raise FormatError(f"{path}: wavelength block truncated")
        n = hdr.bands * hdr.rows * hdr.cols
        expected = hdr.payload_offset + n * hdr.dtype.itemsize
        if size < expected:
            raise FormatError(f"{path}: payload truncated ({size} < {expected} bytes)")
        if size > expected:
            raise FormatError(f"{path}: payload length mismatch ({size - expected} trailing bytes)")
        payload = np.frombuffer(fh.read(n * hdr.dtype.itemsize), dtype=hdr.dtype)
    axis = np.frombuffer(axis_raw, dtype="<f8").astype(np.float64)
    payload = payload.reshape(hdr.bands, hdr.rows * hdr.cols)
    return hdr, axis, payload.astype(payload.dtype.newbyteorder("="), copy=True)


def iter_container_bands(path, expected_magic: bytes | None) -> Iterator[tuple[float, np.ndarray]]:
    """Yield ``(axis value, band image)`` one band at a time."""
    path = Path(path)
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        hdr = read_header(fh, expected_magic, path)
        expected = hdr.payload_offset + hdr.bands * hdr.band_bytes
        if size != expected:
            raise FormatError(f"{path}: payload length mismatch ({size} != {expected} bytes)")
        axis = np.frombuffer(fh.read(8 * hdr.bands), dtype="<f8")
        for b in range(hdr.bands):
            raw = fh.read(hdr.band_bytes)
            band = np.frombuffer(raw, dtype=hdr.dtype).reshape(hdr.rows, hdr.cols)
            yield float(axis[b]), band.astype(band.dtype.newbyteorder("="))


def write_cube(cube: SpectralCube, path) -> None:
    axis = np.zeros(cube.bands) if cube.axis is None else cube.axis.values
    write_container(path, CUBE_MAGIC, cube.data, axis, cube.shape.rows, cube.shape.cols)


def read_cube(path) -> SpectralCube:
    hdr, axis, payload = read_container(path, CUBE_MAGIC)
    domain = FREQUENCY if hdr.dtype.kind == "c" else SPATIAL
    wl = None if not np.any(axis) else _axis_or_error(axis, path)
    return SpectralCube(payload, GridShape(hdr.rows, hdr.cols), axis=wl, domain=domain)


def _axis_or_error(values, path):
    try:
        return WavelengthAxis(values)
    except ArgumentError as exc:
        raise FormatError(f"{path}: invalid wavelength block: {exc}") from exc
