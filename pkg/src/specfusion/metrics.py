"""Reconstruction quality metrics: spectral angle, SSIM and PSNR.

``psnr`` follows the overall-peak definition ``10 log10(max(X) / ||X - X_hat||_F^2)``
rather than the textbook per-element one; ``psnr_conventional`` is the usual
``max^2 / MSE`` form for sanity checks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .datacube import SPATIAL, SpectralCube
from .errors import ArgumentError


def _pair(est, ref) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(est, SpectralCube) or isinstance(ref, SpectralCube):
        if not (isinstance(est, SpectralCube) and isinstance(ref, SpectralCube)):
            raise ArgumentError("compare cubes with cubes")
        if est.domain != SPATIAL or ref.domain != SPATIAL:
            raise ArgumentError("metrics need spatial-domain cubes")
        if est.shape != ref.shape or est.bands != ref.bands:
            raise ArgumentError(f"shape mismatch: {est.bands}x{est.shape} vs {ref.bands}x{ref.shape}")
        return np.asarray(est.data, dtype=np.float64), np.asarray(ref.data, dtype=np.float64)
    a = np.asarray(est, dtype=np.float64)
    b = np.asarray(ref, dtype=np.float64)
    if a.shape != b.shape:
        raise ArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


# --------------------------------------------------------------------------
# spectral angle


def sam_map(est, ref) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel spectral angle in radians and the validity mask.

    Pixels where either spectrum has zero norm are marked invalid and hold NaN.
    """
    a, b = _pair(est, ref)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    valid = (na > 0) & (nb > 0)
    out = np.full(a.shape[1], np.nan)
    # half-angle form: exact zero for parallel spectra, no arccos round-off near 1
    ua = a[:, valid] / na[valid]
    ub = b[:, valid] / nb[valid]
    out[valid] = 2.0 * np.arctan2(np.linalg.norm(ua - ub, axis=0), np.linalg.norm(ua + ub, axis=0))
    return out, valid


def asam(est, ref) -> float:
    angles, valid = sam_map(est, ref)
    if not np.any(valid):
        return float("nan")
    return float(np.mean(angles[valid]))


# --------------------------------------------------------------------------
# SSIM


def ssim_band(est, ref, data_range: float | None = None) -> float:
    """SSIM of one band using whole-band statistics.

    ``C1 = (0.01 L)^2`` and ``C2 = (0.03 L)^2`` with ``L`` the reference's
    dynamic range (1 for a constant reference).
    """
    x, y = _pair(est, ref)
    x, y = x.ravel(), y.ravel()
    if data_range is None:
        data_range = float(y.max() - y.min())
        if data_range == 0:
            data_range = 1.0
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mx, my = x.mean(), y.mean()
    ddof = 1 if x.size > 1 else 0
    vx, vy = x.var(ddof=ddof), y.var(ddof=ddof)
    cov = np.sum((x - mx) * (y - my)) / max(x.size - ddof, 1)
    return float((2 * mx * my + c1) * (2 * cov + c2) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))


def ssim_windowed(est, ref, window: int = 7, data_range: float | None = None) -> float:
    """Mean SSIM over periodic square windows of one 2D band (optional variant)."""
    from scipy.ndimage import uniform_filter

    x, y = _pair(est, ref)
    if x.ndim != 2:
        raise ArgumentError("windowed SSIM expects a 2D image")
    if data_range is None:
        data_range = float(y.max() - y.min()) or 1.0
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2

    def f(z):
        return uniform_filter(z, window, mode="wrap")

    mx, my = f(x), f(y)
    vx = f(x * x) - mx**2
    vy = f(y * y) - my**2
    cov = f(x * y) - mx * my
    s = (2 * mx * my + c1) * (2 * cov + c2) / ((mx**2 + my**2 + c1) * (vx + vy + c2))
    return float(s.mean())


def cssim_per_band(est, ref) -> np.ndarray:
    a, b = _pair(est, ref)
    return np.array([1.0 - ssim_band(a[k], b[k]) for k in range(a.shape[0])])


def acssim(est, ref) -> float:
    return float(np.mean(cssim_per_band(est, ref)))


# --------------------------------------------------------------------------
# PSNR


@dataclass(frozen=True)
class PsnrResult:
    value: float
    identical: bool = False

    def __float__(self):
        return self.value


def psnr(est, ref) -> PsnrResult:
    """``10 log10(max(ref) / ||ref - est||_F^2)``; +inf with ``identical`` set when equal."""
    a, b = _pair(est, ref)
    err = float(np.sum((b - a) ** 2))
    if err == 0:
        return PsnrResult(float("inf"), True)
    return PsnrResult(float(10 * np.log10(b.max() / err)))


def psnr_conventional(est, ref) -> float:
    a, b = _pair(est, ref)
    mse = float(np.mean((b - a) ** 2))
    if mse == 0:
        return float("inf")
    return float(10 * np.log10(b.max() ** 2 / mse))


# --------------------------------------------------------------------------
# histograms and reports


def cumulative_histogram(values, n_bins: int = 50, log_scale: bool = False):
    """``(bin upper edges, cumulative counts)``; counts at edge e are ``#(v <= e)``."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    if not np.all(np.isfinite(v)):
        raise ArgumentError("histogram values must be finite")
    if n_bins < 1:
        raise ArgumentError("n_bins must be >= 1")
    lo, hi = v.min(), v.max()
    if log_scale:
        if lo <= 0:
            raise ArgumentError("log-scale histogram needs positive values")
        edges = np.logspace(np.log10(lo), np.log10(hi), n_bins + 1)[1:] if hi > lo else np.full(n_bins, hi)
    else:
        edges = np.linspace(lo, hi, n_bins + 1)[1:] if hi > lo else np.full(n_bins, hi)
    edges[-1] = hi
    counts = np.searchsorted(np.sort(v), edges, side="right").astype(np.int64)
    return edges, counts


@dataclass
class MetricReport:
    asam: float
    acssim: float
    psnr: float
    sam_map: np.ndarray
    cssim_per_band: np.ndarray
    excluded_pixels: int = 0
    psnr_identical: bool = False
    sam_histogram: tuple = field(default=(), repr=False)
    cssim_histogram: tuple = field(default=(), repr=False)

    def row(self) -> dict:
        return {"aSAM": self.asam, "acSSIM": self.acssim, "PSNR": self.psnr}

    def write_csv(self, path, label: str = "estimate", seconds: float | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "aSAM", "acSSIM", "PSNR", "Time", "excluded_pixels"])
            w.writerow([label, repr(self.asam), repr(self.acssim), repr(self.psnr),
                        "" if seconds is None else repr(seconds), self.excluded_pixels])

    def write_histograms(self, path, n_bins: int = 50) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "upper_edge", "cumulative_count"])
            for name, (edges, counts) in (("sam", self.sam_histogram), ("cssim", self.cssim_histogram)):
                for e, c in zip(edges, counts):
                    w.writerow([name, repr(float(e)), int(c)])


def evaluate(est, ref, n_bins: int = 50) -> MetricReport:
    angles, valid = sam_map(est, ref)
    cs = cssim_per_band(est, ref)
    p = psnr(est, ref)
    valid_angles = angles[valid]
    return MetricReport(
        asam=float(valid_angles.mean()) if valid_angles.size else float("nan"),
        acssim=float(cs.mean()),
        psnr=p.value,
        sam_map=angles,
        cssim_per_band=cs,
        excluded_pixels=int(np.count_nonzero(~valid)),
        psnr_identical=p.identical,
        sam_histogram=cumulative_histogram(valid_angles, n_bins),
        cssim_histogram=cumulative_histogram(cs, n_bins),
    )
