"""Orchestration: regularization search, benchmarks, run configuration and files."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import platform
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .datacube import GridShape, SpectralCube, WavelengthAxis, read_cube, write_cube
from .errors import ArgumentError, FormatError, SearchFailure
from .operators import DecimationSpec, InstrumentModels, SpectralResponse, forward_hs, forward_ms
from .psf import load_psf_stack, save_psf_stack
from .simulate import default_models, generate_scene, observe, NoiseSpec, SceneSpec
from .solver import (
    SolveConfig,
    SystemCache,
    fuse,
    fuse_frequency,
    fuse_naive,
)
from .subspace import SubspaceBasis, fit_basis

# --------------------------------------------------------------------------
# discrepancy-based choice of mu


def whitened_residual(X, ym, yh, models, sigma_m, sigma_h):
    """``(combined, ms, hs)`` residual energies per observation in units of the noise variance.

    ``combined`` is the count-weighted mean of the two; a term whose sigma is
    infinite (or whose observation is missing) is left out.
    """
    total, count = 0.0, 0
    r_m = r_h = float("nan")
    if ym is not None and np.isfinite(sigma_m):
        e = float(np.sum((forward_ms(X, models).data - ym.data) ** 2)) / sigma_m**2
        r_m = e / ym.data.size
        total += e
        count += ym.data.size
    if yh is not None and np.isfinite(sigma_h):
        e = float(np.sum((forward_hs(X, models).data - yh.data) ** 2)) / sigma_h**2
        r_h = e / yh.data.size
        total += e
        count += yh.data.size
    if count == 0:
        raise ArgumentError("no data term to evaluate")
    return total / count, r_m, r_h


@dataclass
class SearchStep:
    mu: float
    residual: float
    residual_ms: float
    residual_hs: float
    lo: float
    hi: float


@dataclass
class SearchTrace:
    steps: list = field(default_factory=list)
    converged: bool = False
    within_range: bool = False
    target: float = 1.0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "mu", "residual", "residual_ms", "residual_hs", "bracket_lo", "bracket_hi"])
            for k, s in enumerate(self.steps):
                w.writerow([k, repr(s.mu), repr(s.residual), repr(s.residual_ms), repr(s.residual_hs),
                            repr(s.lo), repr(s.hi)])


def search_mu(
    ym,
    yh,
    models: InstrumentModels,
    basis: SubspaceBasis,
    sigma_m: float,
    sigma_h: float,
    bounds=(1e-8, 1e-1),
    max_steps: int = 40,
    target: float = 1.0,
    width: float = 0.05,
    tol: float = 1e-8,
    cache: SystemCache | None = None,
):
    """Bisection on ``log10(mu)`` until the whitened residual brackets ``target`` within ``width`` decades.

    The residual grows with ``mu``: above target the upper end moves down,
    below target the lower end moves up. Returns ``(mu, trace)`` where ``mu``
    is the evaluated value whose residual is closest to ``target``.
    """
    lo, hi = float(bounds[0]), float(bounds[1])
    if not 0 < lo < hi:
        raise ArgumentError(f"bounds must satisfy 0 < lo < hi, got {bounds}")
    cache = cache if cache is not None else SystemCache()
    trace = SearchTrace(target=target)

    def evaluate(mu):
        X, _ = fuse(ym, yh, models, basis, SolveConfig(mu=mu, sigma_m=sigma_m, sigma_h=sigma_h, tol=tol), cache)
        return whitened_residual(X, ym, yh, models, sigma_m, sigma_h)

    r_lo = evaluate(lo)
    trace.steps.append(SearchStep(lo, *r_lo, lo, hi))
    r_hi = evaluate(hi)
    trace.steps.append(SearchStep(hi, *r_hi, lo, hi))
    if not r_lo[0] <= target <= r_hi[0]:
        raise SearchFailure(
            f"target {target} not bracketed: residual {r_lo[0]:.4g} at mu={lo:g}, {r_hi[0]:.4g} at mu={hi:g}",
            diagnostics={"bounds": (lo, hi), "residuals": (r_lo[0], r_hi[0]), "trace": trace},
        )
    steps = 0
    while np.log10(hi / lo) > width and steps < max_steps:
        mid = float(np.sqrt(lo * hi))
        r = evaluate(mid)
        if r[0] > target:
            hi = mid
        else:
            lo = mid
        trace.steps.append(SearchStep(mid, *r, lo, hi))
        steps += 1
    trace.converged = np.log10(hi / lo) <= width
    best = min(trace.steps, key=lambda s: abs(np.log(s.residual / target)))
    trace.within_range = 0.5 * target <= best.residual <= 2.0 * target
    return best.mu, trace


# --------------------------------------------------------------------------
# benchmarks


@dataclass
class BenchRecord:
    method: str
    p_m: int
    l_h: int
    l_m: int
    l_sub: int
    d: int
    preprocessing_seconds: float
    iteration_seconds: float  # median
    iterations: int
    step_setup_seconds: float = 0.0
    iterations_to_tol: int | None = None
    threads: int = 1
    skipped: str = ""


BENCH_FIELDS = [f.name for f in dataclasses.fields(BenchRecord)]


@dataclass(frozen=True)
class BenchSize:
    rows: int
    cols: int
    l_h: int
    l_m: int
    l_sub: int
    d: int

    @classmethod
    def parse(cls, text: str) -> "BenchSize":
        try:
            vals = [int(v) for v in text.lower().split("x")]
        except ValueError:
            raise ArgumentError(f"bench size {text!r} must look like ROWSxCOLSxLHxLMxLSUBxD") from None
        if len(vals) != 6:
            raise ArgumentError(f"bench size {text!r} must have 6 fields")
        return cls(*vals)

    def estimated_bytes(self) -> int:
        p = self.rows * self.cols
        return 16 * p * (2 * self.l_h + self.l_sub**2 * (1 + self.d**2) + 4 * self.l_sub)


def bench_instance(size: BenchSize, seed: int = 0):
    """Random low-rank scene with default instruments at the requested size."""
    axis = WavelengthAxis.linear(1.0, 2.35, size.l_h)
    shape = GridShape(size.rows, size.cols)
    psf = min(9, 2 * (min(size.rows, size.cols) // 4) + 1)
    models = default_models(axis, size.l_m, size.d, psf_size=psf)
    scene = generate_scene(SceneSpec(shape, axis, size.l_sub, rng_seed=seed, flux_scale=100.0))
    obs = observe(scene, models, NoiseSpec(1e3, 1.0, seed + 1))
    basis = fit_basis(obs.yh, rank=size.l_sub, transmission=models.lh.diagonal)
    return models, obs, basis


def bench(sizes, iterations: int = 25, methods=("proposed", "frequency", "naive"), seed: int = 0,
          mu: float = 1e-3, threads: int = 1, memory_limit: float = 4e9) -> list:
    """Preprocessing and median per-iteration time of each implementation.

    Iterations are run at a vanishing tolerance so every method performs
    exactly ``iterations`` steps. The gradient-descent step size is estimated
    once per size and timed separately as ``step_setup_seconds``.
    """
    if iterations < 20:
        raise ArgumentError("bench needs at least 20 iterations for a stable median")
    records = []
    for size in sizes:
        if isinstance(size, str):
            size = BenchSize.parse(size)
        dims = (size.rows * size.cols, size.l_h, size.l_m, size.l_sub, size.d)
        if size.estimated_bytes() > memory_limit:
            for m in methods:
                records.append(BenchRecord(m, *dims, 0.0, 0.0, 0, threads=threads,
                                           skipped=f"estimated {size.estimated_bytes():.3g} bytes over limit"))
            continue
        models, obs, basis = bench_instance(size, seed)
        cfg = SolveConfig(mu=mu, sigma_m=obs.sigma_m, sigma_h=obs.sigma_h, tol=1e-300, max_iter=iterations)
        step = None
        step_setup = 0.0
        if "frequency" in methods or "naive" in methods:
            t = time.perf_counter()
            _, rep = fuse_frequency(obs.ym, obs.yh, _fresh(models), basis, cfg, max_iter=0)
            step = rep.info["step"]
            step_setup = time.perf_counter() - t
        for m in methods:
            fresh = _fresh(models)
            if m == "proposed":
                _, rep = fuse(obs.ym, obs.yh, fresh, basis, cfg, SystemCache())
                pre = rep.preprocessing_seconds
                setup = 0.0
            elif m == "frequency":
                _, rep = fuse_frequency(obs.ym, obs.yh, fresh, basis, cfg, step=step)
                pre = rep.timings["transfers"] + rep.timings["fft"]
                setup = step_setup
            elif m == "naive":
                _, rep = fuse_naive(obs.ym, obs.yh, fresh, basis, cfg, step=step)
                pre = 0.0
                setup = step_setup
            else:
                raise ArgumentError(f"unknown bench method {m!r}")
            times = rep.trace.iter_times
            records.append(BenchRecord(m, *dims, pre, float(statistics.median(times)) if times else 0.0,
                                       len(times), setup, None, threads))
    return records


def _fresh(models: InstrumentModels) -> InstrumentModels:
    """Same models with an empty transfer cache, so preprocessing is measured from scratch."""
    return InstrumentModels(models.lm, models.lh, models.psf_m, models.psf_h, models.decimation)


def write_bench_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_FIELDS)
        for r in records:
            w.writerow([getattr(r, f) if getattr(r, f) is not None else "" for f in BENCH_FIELDS])


# --------------------------------------------------------------------------
# model files


def save_models(models: InstrumentModels, directory) -> dict:
    """Write the instrument pair as four container files plus a key=value file."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    l_h = models.l_h
    write_cube(SpectralCube(models.lm.matrix, GridShape(1, l_h)), d / "lm.cube")
    write_cube(SpectralCube(models.lh.diagonal[None, :], GridShape(1, l_h)), d / "lh.cube")
    save_psf_stack(models.psf_m, d / "psf_m.psf")
    save_psf_stack(models.psf_h, d / "psf_h.psf")
    (d / "models.cfg").write_text(f"decimation = {models.d}\n")
    return {name: d / name for name in ("lm.cube", "lh.cube", "psf_m.psf", "psf_h.psf", "models.cfg")}


def load_models(directory) -> InstrumentModels:
    d = Path(directory)
    if not d.is_dir():
        raise ArgumentError(f"models directory {d} does not exist")
    cfg = read_kv(d / "models.cfg")
    try:
        dec = int(cfg["decimation"])
    except (KeyError, ValueError):
        raise FormatError(f"{d / 'models.cfg'}: missing or invalid 'decimation'") from None
    lm = read_cube(d / "lm.cube")
    lh = read_cube(d / "lh.cube")
    if lm.shape.rows != 1 or lh.shape.rows != 1 or lh.bands != 1:
        raise FormatError(f"{d}: spectral responses must be stored as single-row cubes")
    try:
        return InstrumentModels(
            SpectralResponse(lm.data),
            SpectralResponse.transmission(lh.data[0]),
            load_psf_stack(d / "psf_m.psf"),
            load_psf_stack(d / "psf_h.psf"),
            DecimationSpec(dec),
        )
    except ArgumentError as exc:
        raise FormatError(f"{d}: inconsistent models: {exc}") from exc


# --------------------------------------------------------------------------
# run configuration

METHODS = ("proposed", "naive", "frequency", "ms_only", "hs_only", "baseline")


@dataclass
class RunConfig:
    # simulation
    seed: int = 0
    noise_seed: int | None = None
    rows: int = 36
    cols: int = 120
    l_h: int = 200
    l_m: int = 6
    d: int = 3
    n_endmembers: int = 4
    rank: int = 4
    flux_scale: float = 100.0
    gain_m: float = 1.0e3
    gain_h: float = 50.0
    readout_m: float = 25.0
    readout_h: float = 2.0
    # files
    scene: str | None = None
    ym: str | None = None
    yh: str | None = None
    models: str | None = None
    basis: str | None = None
    ref: str | None = None
    est: str | None = None
    output: str = "."
    # solving
    method: str = "proposed"
    mu: float = 3e-3
    sigma_m: float = 1.0
    sigma_h: float = 1.0
    tol: float = 1e-8
    max_iter: int | None = None
    preconditioner: bool = False
    # search and bench
    mu_lo: float = 1e-8
    mu_hi: float = 1e-1
    max_steps: int = 40
    bench_sizes: str = "64x64x256x8x4x2"
    bench_iterations: int = 25
    threads: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ArgumentError(f"method must be one of {', '.join(METHODS)}, got {self.method!r}")
        if self.threads < 1:
            raise ArgumentError("threads must be >= 1")

    def solve_config(self) -> SolveConfig:
        return SolveConfig(mu=self.mu, sigma_m=self.sigma_m, sigma_h=self.sigma_h, tol=self.tol,
                           max_iter=self.max_iter, preconditioner=self.preconditioner)

    def require(self, *names) -> None:
        """Check that the named path fields are set and exist."""
        for n in names:
            v = getattr(self, n)
            if v is None:
                raise ArgumentError(f"missing required setting {n!r}")
            if not Path(v).exists():
                raise ArgumentError(f"{n} path {v} does not exist")


def _convert(name: str, raw, ftype):
    if raw is None:
        return None
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    base = ftype.replace(" | None", "")
    if "None" in ftype and text.lower() in ("", "none"):
        return None
    try:
        if base == "int":
            return int(text)
        if base == "float":
            return float(text)
        if base == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
    except ValueError:
        raise ArgumentError(f"setting {name!r}: cannot parse {raw!r} as {base}") from None
    return text


def read_kv(path) -> dict:
    """Flat ``key = value`` file (``#`` comments) as a dict of strings."""
    p = Path(path)
    if not p.exists():
        raise ArgumentError(f"config file {p} does not exist")
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + p.read_text())
    except configparser.Error as exc:
        raise FormatError(f"{p}: {exc}") from exc
    return dict(parser["run"])


def write_kv(values: dict, path) -> None:
    lines = [f"{k} = {'' if v is None else v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def make_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional file plus flag overrides (overrides win)."""
    values = read_kv(path) if path is not None else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(values) - set(fields))
    if unknown:
        raise ArgumentError(f"unknown settings: {', '.join(unknown)}")
    kwargs = {k: _convert(k, v, str(fields[k].type)) for k, v in values.items()}
    return RunConfig(**kwargs)


# --------------------------------------------------------------------------
# manifests


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    import scipy

    return {"specfusion": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(path, command: str, argv, config: RunConfig, inputs: dict, outputs: dict, extra=None) -> dict:
    def files(d):
        return {k: {"path": str(v), "sha256": sha256_file(v)} for k, v in d.items() if v is not None and Path(v).is_file()}

    manifest = {
        "command": command,
        "argv": list(argv),
        "config": dataclasses.asdict(config),
        "inputs": files(inputs),
        "outputs": files(outputs),
        "seeds": {"seed": config.seed, "noise_seed": config.noise_seed},
        "versions": versions(),
        "threads": config.threads,
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return manifest
