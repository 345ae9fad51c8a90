"""Synthetic low-rank scenes, instrument models and mixed noise.

A scene is a linear mixture of a few endmember spectra (smooth continua plus
Gaussian emission lines) spread over the grid by nonnegative abundance maps.
Abundances combine smooth random fields with a hard-edged bright filament,
so sharp spatial structure is present at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datacube import GridShape, SpectralCube, WavelengthAxis
from .errors import ArgumentError
from .operators import DecimationSpec, InstrumentModels, SpectralResponse, forward_hs, forward_ms
from .psf import synthesize_psf_stack

# child seed streams spawned from one root seed
_STREAMS = ("endmembers", "abundances", "ms_noise", "hs_noise")


@dataclass
class LineSpec:
    center: float  # micrometers
    width: float  # Gaussian sigma, micrometers
    amplitude: float


@dataclass
class SceneSpec:
    shape: GridShape
    axis: WavelengthAxis
    n_endmembers: int = 4
    rng_seed: int = 0
    endmembers: np.ndarray | None = None  # (n, l_h); generated when None
    abundances: np.ndarray | None = None  # (n, p); generated when None
    lines: list = field(default_factory=list)  # per endmember list of LineSpec, optional
    correlation_length: float = 6.0  # pixels, for the smooth fields
    flux_scale: float = 1.0

    def __post_init__(self):
        if int(self.n_endmembers) < 1:
            raise ArgumentError("n_endmembers must be >= 1")
        self.n_endmembers = int(self.n_endmembers)
        l_h, p = len(self.axis), self.shape.pixels
        if self.endmembers is not None:
            e = np.asarray(self.endmembers, dtype=np.float64)
            if e.shape != (self.n_endmembers, l_h):
                raise ArgumentError(f"endmembers must be ({self.n_endmembers}, {l_h}), got {e.shape}")
            if np.any(e < 0) or not np.all(np.isfinite(e)):
                raise ArgumentError("endmember spectra must be finite and nonnegative")
            self.endmembers = e
        if self.abundances is not None:
            a = np.asarray(self.abundances, dtype=np.float64)
            if a.shape != (self.n_endmembers, p):
                raise ArgumentError(f"abundances must be ({self.n_endmembers}, {p}), got {a.shape}")
            if np.any(a < 0) or np.any(a.sum(axis=0) > 1 + 1e-12):
                raise ArgumentError("abundances must be nonnegative and sum to <= 1 per pixel")
            self.abundances = a
        if self.flux_scale <= 0:
            raise ArgumentError("flux_scale must be > 0")


@dataclass
class NoiseSpec:
    gain: float = np.inf  # photons per flux unit; inf disables the photon term
    readout_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.gain > 0:
            raise ArgumentError("gain must be > 0")
        if self.readout_sigma < 0:
            raise ArgumentError("readout_sigma must be >= 0")


@dataclass
class Observation:
    ym: SpectralCube
    yh: SpectralCube
    sigma_m: float
    sigma_h: float
    clipped: dict = field(default_factory=dict)  # negative model samples clipped to 0


def seed_streams(seed: int) -> dict:
    children = np.random.SeedSequence(seed).spawn(len(_STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(_STREAMS, children)}


# --------------------------------------------------------------------------
# scene


def default_lines(axis: WavelengthAxis, n: int, rng) -> list:
    """A few narrow emission lines per endmember at random positions."""
    lo, hi = axis.values[0], axis.values[-1]
    span = hi - lo
    out = []
    for _ in range(n):
        k = int(rng.integers(2, 5))
        centers = rng.uniform(lo + 0.05 * span, hi - 0.05 * span, k)
        widths = rng.uniform(0.004, 0.012, k) * span
        amps = rng.uniform(0.3, 1.5, k)
        out.append([LineSpec(float(c), float(w), float(a)) for c, w, a in zip(centers, widths, amps)])
    return out


def endmember_spectra(axis: WavelengthAxis, n: int, rng, lines=None) -> np.ndarray:
    """Smooth positive continua (low-order trends) plus Gaussian lines."""
    lam = axis.values
    t = (lam - lam[0]) / max(lam[-1] - lam[0], 1e-12)
    if not lines:
        lines = default_lines(axis, n, rng)
    E = np.empty((n, lam.size))
    for i in range(n):
        c0 = rng.uniform(0.3, 1.0)
        slope = rng.uniform(-0.6, 0.6)
        bump_c, bump_w = rng.uniform(0.2, 0.8), rng.uniform(0.15, 0.4)
        cont = c0 * (1 + slope * (t - 0.5)) + 0.4 * rng.uniform() * np.exp(-0.5 * ((t - bump_c) / bump_w) ** 2)
        spec = np.clip(cont, 0.05, None)
        for ln in lines[i]:
            spec = spec + ln.amplitude * np.exp(-0.5 * ((lam - ln.center) / ln.width) ** 2)
        E[i] = spec
    return E


def smooth_field(shape: GridShape, length: float, rng) -> np.ndarray:
    """Periodic Gaussian-filtered white noise, scaled to zero mean / unit std."""
    w = rng.standard_normal((shape.rows, shape.cols))
    fy = np.fft.fftfreq(shape.rows)[:, None]
    fx = np.fft.fftfreq(shape.cols)[None, :]
    filt = np.exp(-2 * (np.pi * length) ** 2 * (fx**2 + fy**2))
    f = np.fft.ifft2(np.fft.fft2(w) * filt).real
    return (f - f.mean()) / (f.std() + 1e-300)


def filament_mask(shape: GridShape, rng) -> np.ndarray:
    """Hard-edged diagonal bar a few pixels wide."""
    r, c = np.mgrid[0 : shape.rows, 0 : shape.cols].astype(np.float64)
    angle = rng.uniform(0.15, 0.45) * np.pi
    offset = rng.uniform(0.3, 0.7)
    width = max(2.0, 0.08 * min(shape.rows, shape.cols))
    dist = (c - offset * shape.cols) * np.sin(angle) - (r - 0.5 * shape.rows) * np.cos(angle)
    return (np.abs(dist) < width / 2).astype(np.float64)


def abundance_maps(shape: GridShape, n: int, rng, length: float = 6.0) -> np.ndarray:
    fields = np.empty((n, shape.pixels))
    for i in range(n):
        fields[i] = np.exp(0.8 * smooth_field(shape, length, rng)).reshape(-1)
    fil = filament_mask(shape, rng).reshape(-1)
    fields[0] = fields[0] + 4.0 * fil * fields[0].mean()
    return fields / fields.sum(axis=0).max()


def generate_scene(spec: SceneSpec) -> SpectralCube:
    """Ground-truth cube ``X = E^T A`` of rank at most ``n_endmembers``."""
    rng = seed_streams(spec.rng_seed)
    E = spec.endmembers
    if E is None:
        E = endmember_spectra(spec.axis, spec.n_endmembers, rng["endmembers"], spec.lines)
    A = spec.abundances
    if A is None:
        A = abundance_maps(spec.shape, spec.n_endmembers, rng["abundances"], spec.correlation_length)
    X = spec.flux_scale * (E.T @ A)
    meta = {"rng_seed": spec.rng_seed, "n_endmembers": spec.n_endmembers}
    return SpectralCube(X, spec.shape, spec.axis, meta=meta)


# --------------------------------------------------------------------------
# instruments


def broadband_filters(axis: WavelengthAxis, l_m: int, peak: float = 0.9) -> np.ndarray:
    """``l_m`` overlapping smooth-edged filters tiling the axis (unnormalized)."""
    lam = axis.values
    edges = np.linspace(lam[0], lam[-1], l_m + 1)
    width = edges[1] - edges[0]
    soft = 0.15 * width
    rows = []
    for a, b in zip(edges[:-1], edges[1:]):
        lo = 1 / (1 + np.exp(-(lam - (a - 0.25 * width)) / soft))
        hi = 1 / (1 + np.exp((lam - (b + 0.25 * width)) / soft))
        rows.append(peak * lo * hi)
    return np.array(rows)


def hs_transmission(axis: WavelengthAxis) -> np.ndarray:
    t = (axis.values - axis.values[0]) / max(axis.values[-1] - axis.values[0], 1e-12)
    return 0.6 + 0.25 * np.sin(np.pi * t) + 0.05 * np.cos(3 * np.pi * t)


def default_models(
    axis: WavelengthAxis,
    l_m: int = 6,
    d: int = 3,
    fwhm_m: float = 1.2,
    fwhm_h: float = 1.6,
    anisotropy: float = 1.3,
    psf_size: int = 9,
) -> InstrumentModels:
    """MS/HS instrument pair with wavelength-dependent elliptical Gaussian PSFs."""
    lm = SpectralResponse(broadband_filters(axis, l_m))
    lh = SpectralResponse.transmission(hs_transmission(axis))
    psf_m = synthesize_psf_stack(axis, fwhm_m, anisotropy, np.pi / 6, psf_size)
    psf_h = synthesize_psf_stack(axis, fwhm_h, anisotropy, -np.pi / 5, psf_size)
    return InstrumentModels(lm, lh, psf_m, psf_h, DecimationSpec(d))


# --------------------------------------------------------------------------
# noise


def _add_noise(clean: np.ndarray, gain: float, readout: float, rng):
    """Gaussian moment-match of Poisson plus readout; returns (noisy, clipped count, variance)."""
    neg = clean < 0
    signal = np.where(neg, 0.0, clean)
    var = np.full(clean.shape, readout**2)
    if np.isfinite(gain):
        var = var + signal / gain
    noise = rng.standard_normal(clean.shape) * np.sqrt(var)
    return clean + noise, int(np.count_nonzero(neg)), var


def observe(scene: SpectralCube, models: InstrumentModels, noise: NoiseSpec,
            noise_h: NoiseSpec | None = None) -> Observation:
    """Noise-free forward models followed by per-pixel Gaussian noise.

    Variance per sample is ``signal / gain + readout_sigma**2``. ``noise_h``
    gives the HS instrument its own parameters (defaults to ``noise``). The
    returned sigmas are root-mean per-sample variances. Negative model
    samples are treated as zero signal for the photon term and counted.
    """
    noise_h = noise if noise_h is None else noise_h
    rng = seed_streams(noise.rng_seed)
    rng_h = rng if noise_h is noise else seed_streams(noise_h.rng_seed)
    ym_clean = forward_ms(scene, models)
    yh_clean = forward_hs(scene, models)
    ym, cm, vm = _add_noise(ym_clean.data, noise.gain, noise.readout_sigma, rng["ms_noise"])
    yh, ch, vh = _add_noise(yh_clean.data, noise_h.gain, noise_h.readout_sigma, rng_h["hs_noise"])
    sigma_m = float(np.sqrt(vm.mean()))
    sigma_h = float(np.sqrt(vh.mean()))
    return Observation(
        ym_clean.replace(data=ym, axis=None),
        yh_clean.replace(data=yh),
        sigma_m,
        sigma_h,
        {"ms": cm, "hs": ch},
    )


# --------------------------------------------------------------------------
# desk-scale presets


@dataclass
class DeskScenario:
    scene: SpectralCube
    models: InstrumentModels
    obs: Observation
    scene_spec: SceneSpec
    noise_m: NoiseSpec
    noise_h: NoiseSpec


def desk_scenario(
    seed: int = 0,
    rows: int = 36,
    cols: int = 120,
    l_h: int = 200,
    l_m: int = 6,
    d: int = 3,
    n_endmembers: int = 4,
    gain_m: float = 1.0e3,
    gain_h: float = 50.0,
    readout_m: float = 25.0,
    readout_h: float = 2.0,
    noise_seed: int | None = None,
    flux_scale: float = 100.0,
) -> DeskScenario:
    """Scene, models and noisy observations with the desk-scale defaults."""
    axis = WavelengthAxis.linear(1.0, 2.35, l_h)
    spec = SceneSpec(GridShape(rows, cols), axis, n_endmembers, rng_seed=seed, flux_scale=flux_scale)
    scene = generate_scene(spec)
    models = default_models(axis, l_m, d)
    ns = seed + 1000 if noise_seed is None else noise_seed
    nm = NoiseSpec(gain_m, readout_m, ns)
    nh = NoiseSpec(gain_h, readout_h, ns)
    return DeskScenario(scene, models, observe(scene, models, nm, nh), spec, nm, nh)
