import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specfusion.datacube import (
    CUBE_MAGIC,
    FREQUENCY,
    HEADER_SIZE,
    SPATIAL,
    GridShape,
    SpectralCube,
    WavelengthAxis,
    devectorize,
    read_cube,
    read_header,
    vectorize,
    write_cube,
)
from specfusion.errors import ArgumentError, FormatError
from specfusion.operators import dft


def test_grid_shape_rejects_nonpositive():
    with pytest.raises(ArgumentError):
        GridShape(0, 3)
    assert GridShape(3, 5).pixels == 15


def test_wavelength_axis_must_increase():
    with pytest.raises(ArgumentError):
        WavelengthAxis([1.0, 1.0, 2.0])
    with pytest.raises(ArgumentError):
        WavelengthAxis([-1.0, 2.0])
    assert len(WavelengthAxis.linear(1.0, 2.35, 4974)) == 4974


def test_cube_is_immutable_copy():
    src = np.arange(8.0).reshape(2, 4)
    cube = SpectralCube(src, GridShape(2, 2))
    src[0, 0] = 99
    assert cube.data[0, 0] == 0
    with pytest.raises(ValueError):
        cube.data[0, 0] = 1


def test_spatial_cube_rejects_complex():
    with pytest.raises(ArgumentError):
        SpectralCube(np.ones((1, 4), dtype=complex), GridShape(2, 2))


def test_zero_band_cube_rejected():
    with pytest.raises(ArgumentError):
        SpectralCube(np.zeros((0, 4)), GridShape(2, 2))


def test_vectorize_definition():
    cube = SpectralCube(np.array([[1.0, 2.0], [3.0, 4.0]]), GridShape(1, 2))
    assert vectorize(cube).tolist() == [1, 2, 3, 4]
    assert devectorize(vectorize(cube), 2, GridShape(1, 2)) == cube


def test_layout_readback(tmp_path):
    # hand-built file: bands=1, rows=2, cols=2, payload [1,2,3,4]
    path = tmp_path / "hand.cube"
    with open(path, "wb") as fh:
        fh.write(struct.pack("<8sII3Q", b"SPECCUBE", 1, 2, 1, 2, 2))
        fh.write(np.array([1.5], "<f8").tobytes())
        fh.write(np.array([1, 2, 3, 4], "<f8").tobytes())
    cube = read_cube(path)
    assert cube.data.tolist() == [[1, 2, 3, 4]]
    assert cube.axis.values.tolist() == [1.5]
    assert cube.domain == SPATIAL


def test_smallest_cube_payload(tmp_path):
    path = tmp_path / "one.cube"
    write_cube(SpectralCube(np.array([[7.5]]), GridShape(1, 1)), path)
    raw = path.read_bytes()
    assert len(raw) == HEADER_SIZE + 8 + 8
    assert np.frombuffer(raw[-8:], "<f8")[0] == 7.5


@pytest.mark.parametrize("dtype", [np.float32, np.float64, np.complex64, np.complex128])
def test_round_trip_all_dtypes(tmp_path, dtype):
    rng = np.random.default_rng(1)
    data = rng.standard_normal((8, 16)).astype(dtype)
    if np.iscomplexobj(data):
        data = data + 1j * rng.standard_normal((8, 16)).astype(dtype)
    domain = FREQUENCY if np.iscomplexobj(data) else SPATIAL
    cube = SpectralCube(data, GridShape(4, 4), WavelengthAxis.linear(1, 2, 8), domain)
    write_cube(cube, tmp_path / "c.cube")
    back = read_cube(tmp_path / "c.cube")
    assert back == cube
    assert back.data.tobytes() == cube.data.tobytes()


@settings(max_examples=30, deadline=None)
@given(bands=st.integers(1, 5), rows=st.integers(1, 6), cols=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_round_trip_property(tmp_path_factory, bands, rows, cols, seed):
    rng = np.random.default_rng(seed)
    cube = SpectralCube(rng.standard_normal((bands, rows * cols)), GridShape(rows, cols))
    path = tmp_path_factory.mktemp("rt") / "x.cube"
    write_cube(cube, path)
    assert read_cube(path) == cube
    assert devectorize(vectorize(cube), bands, cube.shape) == cube


def _valid_file(tmp_path):
    path = tmp_path / "ok.cube"
    write_cube(SpectralCube(np.ones((2, 4)), GridShape(2, 2)), path)
    return path


def test_bad_magic_names_field(tmp_path):
    path = _valid_file(tmp_path)
    raw = bytearray(path.read_bytes())
    raw[:8] = b"NOTACUBE"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        read_cube(path)


def test_truncated_payload(tmp_path):
    path = _valid_file(tmp_path)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(FormatError, match="truncated"):
        read_cube(path)


def test_trailing_bytes(tmp_path):
    path = _valid_file(tmp_path)
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(FormatError, match="length mismatch"):
        read_cube(path)


def test_dimension_overflow(tmp_path):
    path = tmp_path / "huge.cube"
    path.write_bytes(struct.pack("<8sII3Q", CUBE_MAGIC, 1, 2, 2**40, 2**20, 2**20))
    with pytest.raises(FormatError, match="overflow"):
        read_cube(path)


def test_zero_dimension_in_header(tmp_path):
    path = tmp_path / "zero.cube"
    path.write_bytes(struct.pack("<8sII3Q", CUBE_MAGIC, 1, 2, 1, 0, 2))
    with pytest.raises(FormatError, match="rows"):
        with open(path, "rb") as fh:
            read_header(fh, CUBE_MAGIC, path)


def test_full_size_grid_pixels():
    # 30 x 300 coarse grid with 4974 bands: only the header arithmetic is exercised
    assert GridShape(30, 300).pixels == 9000


def test_frequency_cube_conjugate_symmetry():
    rng = np.random.default_rng(4)
    cube = SpectralCube(rng.standard_normal((3, 35)), GridShape(5, 7))
    spec = dft(cube).images
    flipped = np.roll(spec[:, ::-1, ::-1], (1, 1), axis=(1, 2))
    assert np.max(np.abs(spec - np.conj(flipped))) <= 1e-10 * np.max(np.abs(spec))
