import tracemalloc

import numpy as np
import pytest

from specfusion.datacube import GridShape, SpectralCube, WavelengthAxis, write_container
from specfusion.errors import ArgumentError, FormatError
from specfusion.operators import convolve_spatial
from specfusion.psf import (
    PSF_MAGIC,
    PsfStack,
    delta_psf_stack,
    iter_psf_file,
    iter_transfers,
    load_psf_stack,
    pad_kernel,
    save_psf_stack,
    synthesize_psf_stack,
    to_transfer,
)


def brute_cyclic_convolution(img, kernel):
    """Direct periodic convolution with a centred kernel, by explicit index loops."""
    R, C = img.shape
    k = kernel.shape[0]
    c = k // 2
    out = np.zeros_like(img)
    for i in range(R):
        for j in range(C):
            acc = 0.0
            for a in range(k):
                for b in range(k):
                    acc += kernel[a, b] * img[(i - (a - c)) % R, (j - (b - c)) % C]
            out[i, j] = acc
    return out


def measured_fwhm(profile):
    """Width at half maximum of a 1D peak, with linear interpolation of both crossings."""
    peak = profile.argmax()
    half = profile[peak] / 2
    right = peak
    while profile[right + 1] > half:
        right += 1
    xr = right + (profile[right] - half) / (profile[right] - profile[right + 1])
    left = peak
    while profile[left - 1] > half:
        left -= 1
    xl = left - (profile[left] - half) / (profile[left] - profile[left - 1])
    return xr - xl


def test_fwhm_ratio_across_axis():
    axis = WavelengthAxis.linear(1.0, 2.35, 6)
    stack = synthesize_psf_stack(axis, 1.0, 2.0, 0.3, 15)
    assert stack.meta["fwhm"][-1] / stack.meta["fwhm"][0] == pytest.approx(2.35, rel=1e-12)


def test_fwhm_linear_in_wavelength_measured():
    axis = WavelengthAxis.linear(1.0, 2.35, 5)
    stack = synthesize_psf_stack(axis, 3.0, 1.0, 0.0, 61)
    c = stack.size // 2
    widths = np.array([measured_fwhm(k[c]) for k in stack.kernels])
    ratio = widths / axis.values
    assert np.all(np.abs(ratio / ratio[0] - 1) < 0.05)
    assert widths[0] == pytest.approx(3.0, rel=0.05)


def test_unit_sum_and_nonnegative():
    stack = synthesize_psf_stack(WavelengthAxis.linear(1, 2, 4), 1.5, 1.7, 0.4, 11)
    assert np.allclose(stack.kernels.sum(axis=(1, 2)), 1.0, atol=1e-12)
    assert np.all(stack.kernels >= 0)


def test_isotropic_kernel_symmetric():
    stack = synthesize_psf_stack(WavelengthAxis.linear(1, 2, 3), 2.0, 1.0, 0.77, 13)
    for k in stack.kernels:
        assert np.max(np.abs(k - k.T)) <= 1e-12


def test_size_one_is_delta():
    stack = synthesize_psf_stack(WavelengthAxis([1.0]), 0.5, 1.0, 0.0, 1)
    assert stack.kernels.tolist() == [[[1.0]]]


def test_even_size_rejected():
    with pytest.raises(ArgumentError):
        synthesize_psf_stack(WavelengthAxis([1.0]), 1.0, 1.0, 0.0, 4)
    with pytest.raises(ArgumentError):
        synthesize_psf_stack(WavelengthAxis([1.0]), 0.4, 1.0, 0.0, 5)


def test_clipping_recorded_in_meta():
    stack = synthesize_psf_stack(WavelengthAxis.linear(1, 2.35, 4), 3.0, 1.0, 0.0, 7)
    assert stack.meta["clipped_bands"] == [0, 1, 2, 3]
    assert stack.meta["warnings"]
    roomy = synthesize_psf_stack(WavelengthAxis.linear(1, 2.35, 4), 1.0, 1.0, 0.0, 41)
    assert "clipped_bands" not in roomy.meta


def test_delta_transfer_constant():
    t = to_transfer(delta_psf_stack(WavelengthAxis.linear(1, 2, 3)), GridShape(6, 5))
    assert np.allclose(t.transfer, 1.0, atol=1e-15)


def test_box_kernel_dc_equals_sum():
    box = np.ones((1, 3, 3)) / 9
    t = to_transfer(PsfStack(box, WavelengthAxis([1.0])), GridShape(8, 8))
    # DC bin of the unnormalised DFT of the padded kernel is the kernel sum
    assert t.transfer[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_transfer_matches_brute_force_convolution(rng):
    shape = GridShape(16, 16)
    kernel = rng.random((5, 5))
    img = rng.standard_normal((16, 16))
    T = to_transfer(PsfStack(kernel[None], WavelengthAxis([1.0])), shape).images[0]
    fast = np.fft.ifft2(np.fft.fft2(img) * T).real
    ref = brute_cyclic_convolution(img, kernel)
    assert np.max(np.abs(fast - ref)) <= 1e-10 * np.max(np.abs(ref))
    # the roll-based spatial operator agrees as well
    spatial = convolve_spatial(SpectralCube(img[None], shape), PsfStack(kernel[None], WavelengthAxis([1.0])))
    assert np.max(np.abs(spatial.images[0] - ref)) <= 1e-10 * np.max(np.abs(ref))


def test_transfer_conjugate_symmetric(rng):
    t = to_transfer(PsfStack(rng.random((2, 5, 5)), WavelengthAxis([1.0, 2.0])), GridShape(9, 8)).images
    flipped = np.roll(t[:, ::-1, ::-1], (1, 1), axis=(1, 2))
    assert np.max(np.abs(t - np.conj(flipped))) <= 1e-12


def test_kernel_larger_than_grid():
    with pytest.raises(ArgumentError):
        pad_kernel(np.ones((7, 7)), GridShape(5, 9))


def test_save_load_round_trip(tmp_path, rng):
    stack = PsfStack(rng.random((4, 5, 5)), WavelengthAxis.linear(1, 2, 4))
    save_psf_stack(stack, tmp_path / "s.psf")
    back = load_psf_stack(tmp_path / "s.psf")
    assert back.kernels.tobytes() == stack.kernels.tobytes()
    assert back.axis == stack.axis


def test_load_rejects_even_or_truncated(tmp_path):
    write_container(tmp_path / "even.psf", PSF_MAGIC, np.ones((2, 4, 4)), [1.0, 2.0], 4, 4)
    with pytest.raises(FormatError):
        load_psf_stack(tmp_path / "even.psf")
    write_container(tmp_path / "ok.psf", PSF_MAGIC, np.ones((2, 3, 3)), [1.0, 2.0], 3, 3)
    raw = (tmp_path / "ok.psf").read_bytes()
    (tmp_path / "cut.psf").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        load_psf_stack(tmp_path / "cut.psf")


def test_streaming_memory_is_per_kernel(tmp_path, rng):
    # many kernels streamed one at a time: peak memory stays near a single kernel
    n, k = 400, 45
    stack = PsfStack(rng.random((n, k, k)), WavelengthAxis.linear(1, 2, n))
    save_psf_stack(stack, tmp_path / "big.psf")
    del stack
    tracemalloc.start()
    total = 0.0
    for _, kern in iter_psf_file(tmp_path / "big.psf"):
        total += kern.sum()
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert peak < 20 * k * k * 8
    assert total > 0


def test_iter_transfers_chunks(rng):
    kernels = rng.random((10, 3, 3))
    shape = GridShape(6, 6)
    chunks = list(iter_transfers(kernels, shape, chunk=4))
    assert [c[0] for c in chunks] == [slice(0, 4), slice(4, 8), slice(8, 10)]
    full = to_transfer(PsfStack(kernels, WavelengthAxis.linear(1, 2, 10)), shape).transfer
    assert np.array_equal(np.vstack([c[1] for c in chunks]), full)
