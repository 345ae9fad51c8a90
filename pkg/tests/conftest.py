from __future__ import annotations

import numpy as np
import pytest

from specfusion.datacube import GridShape, SpectralCube, WavelengthAxis
from specfusion.operators import DecimationSpec, InstrumentModels, SpectralResponse
from specfusion.psf import PsfStack
from specfusion.subspace import SubspaceBasis


def random_models(rng, l_h=8, l_m=3, d=2, k=5, positive_transfer=False):
    axis = WavelengthAxis.linear(1.0, 2.0, l_h)
    if positive_transfer:
        # symmetric, strongly peaked kernels keep transfers well away from zero
        base = rng.random((l_h, k, k)) * 0.05
        base[:, k // 2, k // 2] += 1.0
        base = 0.5 * (base + base[:, ::-1, ::-1])
        km, kh = base, base.copy()
    else:
        km, kh = rng.random((l_h, k, k)), rng.random((l_h, k, k))
    return InstrumentModels(
        SpectralResponse(rng.random((l_m, l_h)) + 0.05),
        SpectralResponse.transmission(rng.random(l_h) + 0.5),
        PsfStack(km / km.sum(axis=(1, 2), keepdims=True), axis),
        PsfStack(kh / kh.sum(axis=(1, 2), keepdims=True), axis),
        DecimationSpec(d),
    )


def random_basis(rng, l_h, l_sub):
    V = np.linalg.qr(rng.standard_normal((l_h, l_sub)))[0]
    return SubspaceBasis(V, np.arange(l_sub, 0, -1, dtype=float), 0.9)


def random_cube(rng, bands, shape, axis=None):
    return SpectralCube(rng.standard_normal((bands, shape.pixels)), shape, axis)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_problem(rng):
    """12x12 grid, l_h=16, l_m=5, l_sub=3, d=3 with random observations."""
    shape = GridShape(12, 12)
    models = random_models(rng, l_h=16, l_m=5, d=3)
    basis = random_basis(rng, 16, 3)
    ym = random_cube(rng, 5, shape)
    yh = random_cube(rng, 16, GridShape(4, 4))
    return models, basis, ym, yh, shape


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
