"""Spectral subspace identification and projection.

The basis is taken from a truncated, *uncentered* SVD of the HS data matrix
so that the scene factorizes exactly as ``X = V Z`` with no mean term. A
centered variant is available for study via ``centered=True``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .datacube import SPATIAL, SpectralCube, read_container, write_container
from .errors import ArgumentError, DegenerateInputError, FormatError

BASIS_MAGIC = b"SUBBASIS"


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    V: np.ndarray  # (l_h, l_sub), orthonormal columns
    singular_values: np.ndarray
    energy_fraction: float

    def __post_init__(self):
        V = np.array(self.V, dtype=np.float64, order="C")
        s = np.array(self.singular_values, dtype=np.float64).ravel()
        if V.ndim != 2 or V.shape[1] != s.size:
            raise ArgumentError("V must be (l_h, l_sub) with one singular value per column")
        if np.any(s < 0) or np.any(np.diff(s) > 0):
            raise ArgumentError("singular values must be nonnegative and nonincreasing")
        V.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "singular_values", s)

    @property
    def l_h(self) -> int:
        return self.V.shape[0]

    @property
    def l_sub(self) -> int:
        return self.V.shape[1]

    def fingerprint(self) -> str:
        return hashlib.sha1(self.V.tobytes() + str(self.V.shape).encode()).hexdigest()


def _fix_signs(U: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def fit_basis(
    hs: SpectralCube,
    rank: int | None = None,
    energy_threshold: float | None = None,
    centered: bool = False,
    transmission=None,
) -> SubspaceBasis:
    """Leading left singular vectors of the ``l_h x p_h`` HS data matrix.

    Exactly one of ``rank`` or ``energy_threshold`` must be given. With a
    threshold, the smallest rank whose cumulative squared singular values
    reach that fraction of the total is kept. Each column is sign-fixed so its
    largest-magnitude entry is positive. ``transmission`` (length ``l_h``)
    divides each band first, so the basis spans the scene spectra rather
    than their throughput-weighted version.
    """
    if (rank is None) == (energy_threshold is None):
        raise ArgumentError("give exactly one of rank or energy_threshold")
    if hs.domain != SPATIAL:
        raise ArgumentError("fit_basis expects a spatial cube")
    Y = np.asarray(hs.data, dtype=np.float64)
    if transmission is not None:
        t = np.asarray(transmission, dtype=np.float64).ravel()
        if t.size != Y.shape[0] or np.any(t <= 0):
            raise ArgumentError(f"transmission must hold {Y.shape[0]} positive values")
        Y = Y / t[:, None]
    if centered:
        Y = Y - Y.mean(axis=1, keepdims=True)
    if not np.any(Y):
        raise DegenerateInputError("HS data matrix is identically zero")
    U, s, _ = np.linalg.svd(Y, full_matrices=False)
    energy = np.cumsum(s**2) / np.sum(s**2)
    if rank is not None:
        if not 1 <= rank <= min(Y.shape):
            raise ArgumentError(f"rank {rank} outside [1, {min(Y.shape)}]")
        k = int(rank)
    else:
        if not 0 < energy_threshold <= 1:
            raise ArgumentError("energy_threshold must lie in (0, 1]")
        k = int(np.searchsorted(energy, energy_threshold - 1e-15) + 1)
        k = min(k, s.size)
    return SubspaceBasis(_fix_signs(U[:, :k]), s[:k], float(energy[k - 1]))


def project(basis: SubspaceBasis, cube: SpectralCube) -> SpectralCube:
    """Coefficients ``V^T x``; valid in either domain."""
    if cube.bands != basis.l_h:
        raise ArgumentError(f"cube has {cube.bands} bands, basis expects {basis.l_h}")
    return SpectralCube(basis.V.T @ cube.data, cube.shape, None, cube.domain)


def reconstruct(basis: SubspaceBasis, coeffs: SpectralCube, axis=None) -> SpectralCube:
    if coeffs.bands != basis.l_sub:
        raise ArgumentError(f"coefficients have {coeffs.bands} bands, basis rank is {basis.l_sub}")
    return SpectralCube(basis.V @ coeffs.data, coeffs.shape, axis, coeffs.domain)


# Layout: bands = l_sub, rows = l_h + 1, cols = 1. Band j holds column j of V
# followed by the retained energy fraction; the axis block carries the
# singular values.


def save_basis(basis: SubspaceBasis, path) -> None:
    payload = np.vstack([basis.V, np.full((1, basis.l_sub), basis.energy_fraction)]).T
    write_container(path, BASIS_MAGIC, payload, basis.singular_values, basis.l_h + 1, 1)


def load_basis(path) -> SubspaceBasis:
    hdr, axis, payload = read_container(path, BASIS_MAGIC)
    if hdr.cols != 1 or hdr.rows < 2 or hdr.dtype != np.dtype("<f8"):
        raise FormatError(f"{path}: subspace basis must be f64 with cols=1, rows=l_h+1")
    V = payload[:, :-1].T
    try:
        return SubspaceBasis(V, axis, float(payload[0, -1]))
    except ArgumentError as exc:
        raise FormatError(f"{path}: {exc}") from exc
