"""Fusion solvers.

``fuse`` is the vectorized method: assemble the block-sparse system once,
then run conjugate gradient on it. ``fuse_naive`` and ``fuse_frequency`` run
plain fixed-step gradient descent on the same quadratic, in the image and
Fourier domain respectively, and serve as cross-checks and benchmarks.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import assembly
from .assembly import FusionSystem
from .datacube import FREQUENCY, SPATIAL, GridShape, SpectralCube
from .errors import ArgumentError, NumericalError
from .operators import (
    InstrumentModels,
    adjoint_forward_hs,
    adjoint_forward_ms,
    alias,
    alias_adjoint,
    dft,
    diff_energy_transfer,
    forward_hs,
    forward_ms,
    idft,
    subsample,
    upsample_zero,
)
from .psf import iter_transfers
from .subspace import SubspaceBasis, project, reconstruct


@dataclass
class SolveConfig:
    mu: float = 0.0
    sigma_m: float = 1.0
    sigma_h: float = 1.0
    tol: float = 1e-8
    max_iter: int | None = None
    preconditioner: bool = False

    def __post_init__(self):
        if self.tol <= 0:
            raise ArgumentError("tol must be > 0")
        if self.mu < 0:
            raise ArgumentError("mu must be >= 0")
        if self.sigma_m <= 0 or self.sigma_h <= 0:
            raise ArgumentError("noise levels must be > 0")

    def iteration_cap(self, l_sub: int, p_m: int) -> int:
        if self.max_iter is not None:
            return int(self.max_iter)
        return int(min(5000, np.ceil(10 * l_sub * np.sqrt(p_m))))


@dataclass
class ConvergenceTrace:
    residuals: list = field(default_factory=list)
    iter_times: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    converged: bool = False
    final_objective: float = float("nan")

    @property
    def iterations(self) -> int:
        return len(self.iter_times)


@dataclass
class FusionReport:
    method: str
    trace: ConvergenceTrace
    timings: dict = field(default_factory=dict)
    assembled: bool = False
    metrics: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def preprocessing_seconds(self) -> float:
        return sum(v for k, v in self.timings.items() if k in PREPROCESSING_PHASES)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "relative_residual", "iteration_seconds", "objective"])
            t = self.trace
            for k in range(t.iterations):
                obj = t.objectives[k] if k < len(t.objectives) else ""
                res = t.residuals[k] if k < len(t.residuals) else ""
                w.writerow([k + 1, res, t.iter_times[k], obj])


PREPROCESSING_PHASES = ("fft", "transfers", "assembly", "rhs")


# --------------------------------------------------------------------------
# conjugate gradient


def _block_jacobi(system: FusionSystem):
    blocks = system.diagonal_blocks()
    inv = np.linalg.pinv(blocks, hermitian=True)
    n, p = system.l_sub, system.shape.pixels

    def apply(r):
        return np.einsum("kij,jk->ik", inv, r.reshape(n, p)).reshape(-1)

    return apply


def solve_cg(system: FusionSystem, config: SolveConfig, x0=None):
    """Conjugate gradient on the Hermitian PSD system, from zero by default.

    Stops once ``||A z - b|| / ||b|| <= tol``. If the cap is reached first the
    iterate with the smallest residual is returned and ``trace.converged`` is
    False. The objective trace uses ``J = -Re(z^H (b + r)) / 2 + c``.
    """
    b = system.b
    n = b.size
    cap = config.iteration_cap(system.l_sub, system.shape.pixels)
    trace = ConvergenceTrace()
    bnorm = np.linalg.norm(b)
    x = np.zeros(n, dtype=np.complex128) if x0 is None else np.array(x0, dtype=np.complex128)
    if bnorm == 0:
        trace.converged = True
        trace.final_objective = system.const
        return np.zeros(n, dtype=np.complex128), trace
    r = b - system.matvec(x) if x0 is not None else b.copy()
    precond = _block_jacobi(system) if config.preconditioner else None
    zr = precond(r) if precond else r
    p = zr.copy()
    rz = np.vdot(r, zr).real
    best_x, best_res = x.copy(), np.linalg.norm(r) / bnorm
    for k in range(cap):
        t0 = time.perf_counter()
        Ap = system.matvec(p)
        pAp = np.vdot(p, Ap).real
        alpha = rz / pAp if pAp > 0 else np.nan
        if not np.isfinite(alpha):
            if pAp == 0 and np.linalg.norm(p) == 0:
                break
            raise NumericalError(f"CG breakdown (p^H A p = {pAp})", iteration=k + 1)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        if not np.isfinite(res):
            raise NumericalError("non-finite residual in CG", iteration=k + 1)
        trace.iter_times.append(time.perf_counter() - t0)
        trace.residuals.append(float(res))
        trace.objectives.append(float(-0.5 * (np.vdot(x, b).real + np.vdot(x, r).real) + system.const))
        if res < best_res:
            best_res = res
            if res > config.tol:
                best_x = x.copy()
        if res <= config.tol:
            trace.converged = True
            best_x = x
            break
        zr = precond(r) if precond else r
        rz_new = np.vdot(r, zr).real
        p = zr + (rz_new / rz) * p
        rz = rz_new
    trace.final_objective = system.objective(best_x)
    return best_x, trace


# --------------------------------------------------------------------------
# vectorized fusion with reusable A


class SystemCache:
    """Keeps the observation-independent parts of ``A`` between fusions.

    Keys are fingerprints of the models, the subspace basis and the grid;
    noise levels and ``mu`` only weight the parts, so they are not part of
    the key.
    """

    def __init__(self):
        self._parts = {}
        self.hits = 0
        self.misses = 0

    def get(self, models: InstrumentModels, basis: SubspaceBasis, shape: GridShape):
        key = (models.fingerprint(), basis.fingerprint(), shape)
        if key in self._parts:
            self.hits += 1
            return self._parts[key], False
        self.misses += 1
        M, H = models.transfers(shape)
        parts = assembly.assemble(models.lm, models.lh, basis, M, H, models.decimation, shape)
        self._parts[key] = parts
        return parts, True

    def clear(self):
        self._parts.clear()


def _check_obs(ym, yh, models: InstrumentModels, basis: SubspaceBasis):
    if basis.l_h != models.l_h:
        raise ArgumentError(f"basis has {basis.l_h} bands, models expect {models.l_h}")
    if ym is not None:
        if ym.domain != SPATIAL or ym.bands != models.l_m:
            raise ArgumentError(f"MS image must be spatial with {models.l_m} bands")
    if yh is not None:
        if yh.domain != SPATIAL or yh.bands != models.l_h:
            raise ArgumentError(f"HS image must be spatial with {models.l_h} bands")
    if ym is not None and yh is not None:
        if models.decimation.coarse(ym.shape) != yh.shape:
            raise ArgumentError(f"HS grid {yh.shape} is not MS grid {ym.shape} decimated by {models.d}")


def _fine_shape(ym, yh, models) -> GridShape:
    if ym is not None:
        return ym.shape
    return GridShape(yh.shape.rows * models.d, yh.shape.cols * models.d)


def _coeffs_to_image(z, basis, shape, axis):
    zF = SpectralCube(z.reshape(basis.l_sub, -1), shape, None, FREQUENCY)
    Z = idft(zF)
    return reconstruct(basis, Z, axis=axis)


def build_system(ym, yh, models, basis, config: SolveConfig, cache: SystemCache | None = None):
    """Return ``(system, timings, assembled)`` for the given observations."""
    _check_obs(ym, yh, models, basis)
    shape = _fine_shape(ym, yh, models)
    timings = {}
    t = time.perf_counter()
    ymF = dft(ym) if ym is not None and not np.isinf(config.sigma_m) else None
    yhF = dft(yh) if yh is not None and not np.isinf(config.sigma_h) else None
    timings["fft"] = time.perf_counter() - t
    t = time.perf_counter()
    M, H = models.transfers(shape)
    timings["transfers"] = time.perf_counter() - t
    t = time.perf_counter()
    cache = cache if cache is not None else SystemCache()
    parts, assembled = cache.get(models, basis, shape)
    timings["assembly"] = time.perf_counter() - t if assembled else 0.0
    t = time.perf_counter()
    system = assembly.make_system(
        parts, ymF, yhF, models.lm, models.lh, basis, M, H, models.decimation,
        config.sigma_m, config.sigma_h, config.mu,
    )
    timings["rhs"] = time.perf_counter() - t
    return system, timings, assembled


def fuse(ym, yh, models: InstrumentModels, basis: SubspaceBasis, config: SolveConfig,
         cache: SystemCache | None = None, method: str = "proposed"):
    """Vectorized fusion: returns ``(X_hat, FusionReport)``."""
    system, timings, assembled = build_system(ym, yh, models, basis, config, cache)
    t = time.perf_counter()
    z, trace = solve_cg(system, config)
    timings["solve"] = time.perf_counter() - t
    t = time.perf_counter()
    axis = yh.axis if yh is not None else None
    X = _coeffs_to_image(z, basis, system.shape, axis)
    timings["reconstruct"] = time.perf_counter() - t
    report = FusionReport(method, trace, timings, assembled)
    report.info["coefficients"] = z
    return X, report


def fuse_ms_only(ym, models, basis, mu_m: float, sigma_m: float = 1.0, **kw):
    """MS data term plus regularization only."""
    config = SolveConfig(mu=mu_m, sigma_m=sigma_m, sigma_h=np.inf, **kw)
    return fuse(ym, None, models, basis, config, method="ms_only")


def fuse_hs_only(yh, models, basis, mu_h: float, sigma_h: float = 1.0, **kw):
    """HS data term plus regularization only."""
    config = SolveConfig(mu=mu_h, sigma_m=np.inf, sigma_h=sigma_h, **kw)
    return fuse(None, yh, models, basis, config, method="hs_only")


# --------------------------------------------------------------------------
# gradient-descent references


def _weights(config):
    w_m = 0.0 if np.isinf(config.sigma_m) else 1.0 / config.sigma_m**2
    w_h = 0.0 if np.isinf(config.sigma_h) else 1.0 / config.sigma_h**2
    return w_m, w_h


def _periodic_dtd(Z: np.ndarray) -> np.ndarray:
    """``D^T D`` applied to ``(n, R, C)`` maps (periodic first differences)."""
    dh = Z - np.roll(Z, 1, axis=2)
    dv = Z - np.roll(Z, 1, axis=1)
    return (dh - np.roll(dh, -1, axis=2)) + (dv - np.roll(dv, -1, axis=1))


class SpatialObjective:
    """Image-domain objective over real coefficient maps ``Z`` (``(l_sub, p_m)``).

    ``J(Z) = w_m/2 ||Y_m - L_m M(VZ)||^2 + w_h/2 ||Y_h - L_h H(VZ) S||^2 + mu/2 ||Z D||^2``.

    With ``naive=True`` convolutions run through FFTs of PSFs recomputed on the
    fly, band chunk by band chunk, as a no-preprocessing implementation would.
    """

    def __init__(self, ym, yh, models, basis, config, naive=True, chunk=64):
        self.ym, self.yh = ym, yh
        self.models, self.basis = models, basis
        self.w_m, self.w_h = _weights(config)
        self.mu = config.mu
        self.shape = _fine_shape(ym, yh, models)
        self.naive = naive
        self.chunk = chunk

    def _maps(self, Z):
        return np.asarray(Z, dtype=np.float64).reshape(self.basis.l_sub, self.shape.rows, self.shape.cols)

    def _transfers(self, kernels):
        yield from iter_transfers(kernels, self.shape, self.chunk)

    def _passes(self, Z, want_grad):
        """One sweep over band chunks: residual energies and (optionally) the gradient."""
        m, shape, d = self.models, self.shape, self.models.d
        V = self.basis.V
        Zi = self._maps(Z)
        R, C = shape.rows, shape.cols
        Zf = np.fft.fft2(Zi)  # (n, R, C), plain FFT of the coefficient maps
        grad = np.zeros_like(Zi) if want_grad else None
        energy = 0.0
        if self.w_h and self.yh is not None:
            yh = self.yh.images
            for sl, T in self._transfers(m.psf_h.kernels):
                Xf = np.tensordot(V[sl], Zf, axes=1)
                blur = np.fft.ifft2(Xf * T.reshape(-1, R, C)).real
                pred = m.lh.diagonal[sl, None, None] * blur[:, ::d, ::d]
                res = pred - yh[sl]
                energy += self.w_h * 0.5 * float(np.sum(res**2))
                if want_grad:
                    up = np.zeros((res.shape[0], R, C))
                    up[:, ::d, ::d] = m.lh.diagonal[sl, None, None] * res
                    back = np.fft.ifft2(np.fft.fft2(up) * np.conj(T).reshape(-1, R, C)).real
                    grad += self.w_h * np.tensordot(V[sl].T, back, axes=1)
        if self.w_m and self.ym is not None:
            pred = np.zeros((m.l_m, R, C))
            for sl, T in self._transfers(m.psf_m.kernels):
                Xf = np.tensordot(V[sl], Zf, axes=1)
                blur = np.fft.ifft2(Xf * T.reshape(-1, R, C)).real
                pred += np.tensordot(m.lm.matrix[:, sl], blur, axes=1)
            res = pred - self.ym.images
            energy += self.w_m * 0.5 * float(np.sum(res**2))
            if want_grad:
                for sl, T in self._transfers(m.psf_m.kernels):
                    back = np.tensordot(m.lm.matrix[:, sl].T, res, axes=1)
                    back = np.fft.ifft2(np.fft.fft2(back) * np.conj(T).reshape(-1, R, C)).real
                    grad += self.w_m * np.tensordot(V[sl].T, back, axes=1)
        dh = Zi - np.roll(Zi, 1, axis=2)
        dv = Zi - np.roll(Zi, 1, axis=1)
        energy += 0.5 * self.mu * float(np.sum(dh**2) + np.sum(dv**2))
        if want_grad:
            grad += self.mu * _periodic_dtd(Zi)
            grad = grad.reshape(self.basis.l_sub, -1)
        return energy, grad

    def value(self, Z) -> float:
        if not self.naive:
            return self._value_reference(Z)
        return self._passes(Z, False)[0]

    def gradient(self, Z) -> np.ndarray:
        if not self.naive:
            return self._gradient_reference(Z)
        return self._passes(Z, True)[1]

    def value_and_gradient(self, Z):
        return self._passes(Z, True)

    # reference path through the operators module (used by tests)
    def _value_reference(self, Z):
        X = reconstruct(self.basis, SpectralCube(self._maps(Z).reshape(self.basis.l_sub, -1), self.shape))
        J = 0.0
        if self.w_m:
            J += 0.5 * self.w_m * float(np.sum((forward_ms(X, self.models).data - self.ym.data) ** 2))
        if self.w_h:
            J += 0.5 * self.w_h * float(np.sum((forward_hs(X, self.models).data - self.yh.data) ** 2))
        Zi = self._maps(Z)
        dh = Zi - np.roll(Zi, 1, axis=2)
        dv = Zi - np.roll(Zi, 1, axis=1)
        return J + 0.5 * self.mu * float(np.sum(dh**2) + np.sum(dv**2))

    def _gradient_reference(self, Z):
        Zc = SpectralCube(self._maps(Z).reshape(self.basis.l_sub, -1), self.shape)
        X = reconstruct(self.basis, Zc)
        g = np.zeros((self.models.l_h, self.shape.pixels))
        if self.w_m:
            r = X.replace(data=forward_ms(X, self.models).data - self.ym.data, axis=None)
            g += self.w_m * adjoint_forward_ms(r, self.models).data
        if self.w_h:
            fh = forward_hs(X, self.models)
            r = fh.replace(data=fh.data - self.yh.data, axis=None)
            g += self.w_h * adjoint_forward_hs(r, self.models).data
        out = self.basis.V.T @ g
        return out + self.mu * _periodic_dtd(self._maps(Z)).reshape(self.basis.l_sub, -1)


class FrequencyObjective:
    """Fourier-domain objective over complex coefficient spectra ``Z_dot``.

    Uses precomputed transfers and frequency-domain observations; the
    gradient returned is ``2 dJ/d conj(Z_dot)``, which equals the DFT of the
    image-domain gradient.
    """

    def __init__(self, ym, yh, models, basis, config):
        self.models, self.basis = models, basis
        self.w_m, self.w_h = _weights(config)
        self.mu = config.mu
        self.shape = _fine_shape(ym, yh, models)
        self.ymF = dft(ym).data if ym is not None and self.w_m else None
        self.yhF = dft(yh).data if yh is not None and self.w_h else None
        self.M, self.H = models.transfers(self.shape)
        self.energy = diff_energy_transfer(self.shape).energy
        self.coarse = models.decimation.coarse(self.shape)

    def value_and_gradient(self, Zd):
        m, V, d = self.models, self.basis.V, self.models.d
        Zd = Zd.reshape(self.basis.l_sub, -1)
        XF = V @ Zd
        J = 0.0
        g = np.zeros((m.l_h, self.shape.pixels), dtype=np.complex128)
        if self.ymF is not None:
            res = m.lm.matrix @ (XF * self.M.transfer) - self.ymF
            J += 0.5 * self.w_m * float(np.vdot(res, res).real)
            g += self.w_m * np.conj(self.M.transfer) * (m.lm.matrix.T @ res)
        if self.yhF is not None:
            pred = alias(SpectralCube(m.lh.diagonal[:, None] * XF * self.H.transfer, self.shape, None, FREQUENCY),
                         m.decimation)
            res = pred.data - self.yhF
            J += 0.5 * self.w_h * float(np.vdot(res, res).real)
            back = alias_adjoint(SpectralCube(res, self.coarse, None, FREQUENCY), m.decimation).data
            g += self.w_h * np.conj(self.H.transfer) * (m.lh.diagonal[:, None] * back)
        J += 0.5 * self.mu * float(np.sum(self.energy * np.abs(Zd) ** 2))
        grad = V.T @ g + self.mu * self.energy * Zd
        return J, grad


def _power_iteration(hess, shape, dtype, iters=60, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(shape)
    if dtype == np.complex128:
        v = v + 1j * rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = hess(v)
        lam = float(np.vdot(v, w).real)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
    return lam


def _gradient_descent(value_and_grad, x0, step, tol, max_iter, trace):
    x = x0.copy()
    J, g = value_and_grad(x)
    g0 = np.linalg.norm(g)
    if g0 == 0 or max_iter == 0:
        trace.converged = g0 == 0
        trace.final_objective = J
        return x
    increases = 0
    for k in range(max_iter):
        t0 = time.perf_counter()
        x = x - step * g
        J_new, g = value_and_grad(x)
        trace.iter_times.append(time.perf_counter() - t0)
        if not np.isfinite(J_new):
            raise NumericalError("non-finite objective in gradient descent", iteration=k + 1)
        increases = increases + 1 if J_new > J else 0
        if increases >= 10:
            raise NumericalError("objective increased over 10 consecutive iterations", iteration=k + 1)
        J = J_new
        rel = np.linalg.norm(g) / g0
        trace.residuals.append(float(rel))
        trace.objectives.append(float(J))
        if rel <= tol:
            trace.converged = True
            break
    trace.final_objective = float(J)
    return x


def fuse_naive(ym, yh, models, basis, config: SolveConfig, max_iter: int | None = None, step=None):
    """Gradient descent on the image-domain objective, FFT round-trips every iteration."""
    _check_obs(ym, yh, models, basis)
    obj = SpatialObjective(ym, yh, models, basis, config, naive=True)
    n, shape = basis.l_sub, obj.shape
    cap = config.iteration_cap(n, shape.pixels) if max_iter is None else max_iter
    timings = {}
    t = time.perf_counter()
    if step is None:
        zero_grad = obj.gradient(np.zeros((n, shape.pixels)))
        L = _power_iteration(lambda v: obj.gradient(v) - zero_grad, (n, shape.pixels), np.float64)
        step = 1.0 / (1.01 * L)
    timings["step_setup"] = time.perf_counter() - t
    trace = ConvergenceTrace()
    t = time.perf_counter()
    Z = _gradient_descent(obj.value_and_gradient, np.zeros((n, shape.pixels)), step, config.tol, cap, trace)
    timings["solve"] = time.perf_counter() - t
    X = reconstruct(basis, SpectralCube(Z, shape), axis=yh.axis if yh is not None else None)
    report = FusionReport("naive", trace, timings, False, info={"step": step})
    return X, report


def fuse_frequency(ym, yh, models, basis, config: SolveConfig, max_iter: int | None = None, step=None):
    """Gradient descent entirely in the Fourier domain via adjoint operators."""
    _check_obs(ym, yh, models, basis)
    shape = _fine_shape(ym, yh, models)
    timings = {}
    t = time.perf_counter()
    models.transfers(shape)
    timings["transfers"] = time.perf_counter() - t
    t = time.perf_counter()
    obj = FrequencyObjective(ym, yh, models, basis, config)
    timings["fft"] = time.perf_counter() - t
    n = basis.l_sub
    cap = config.iteration_cap(n, shape.pixels) if max_iter is None else max_iter
    t = time.perf_counter()
    if step is None:
        zero_grad = obj.value_and_gradient(np.zeros((n, shape.pixels), dtype=np.complex128))[1]
        L = _power_iteration(lambda v: obj.value_and_gradient(v)[1] - zero_grad, (n, shape.pixels), np.complex128)
        step = 1.0 / (1.01 * L)
    timings["step_setup"] = time.perf_counter() - t
    trace = ConvergenceTrace()
    t = time.perf_counter()
    Zd = _gradient_descent(obj.value_and_gradient, np.zeros((n, shape.pixels), dtype=np.complex128),
                           step, config.tol, cap, trace)
    timings["solve"] = time.perf_counter() - t
    X = _coeffs_to_image(Zd, basis, shape, yh.axis if yh is not None else None)
    report = FusionReport("frequency", trace, timings, False, info={"step": step})
    return X, report


# --------------------------------------------------------------------------
# bicubic baseline


def keys_kernel(x, a: float = -0.5):
    x = np.abs(np.asarray(x, dtype=np.float64))
    out = np.zeros_like(x)
    m1 = x <= 1
    m2 = (x > 1) & (x < 2)
    out[m1] = (a + 2) * x[m1] ** 3 - (a + 3) * x[m1] ** 2 + 1
    out[m2] = a * x[m2] ** 3 - 5 * a * x[m2] ** 2 + 8 * a * x[m2] - 4 * a
    return out


def cubic_upsample_matrix(n_coarse: int, d: int, a: float = -0.5) -> np.ndarray:
    """``(n_coarse*d, n_coarse)`` periodic Keys interpolation; fine pixel ``I`` sits at ``I/d``."""
    U = np.zeros((n_coarse * d, n_coarse))
    for I in range(n_coarse * d):
        t = I / d
        base = int(np.floor(t))
        for m in range(base - 1, base + 3):
            U[I, m % n_coarse] += keys_kernel(t - m, a)
    return U


def baseline_upsample(yh: SpectralCube, basis: SubspaceBasis, fine_shape: GridShape, transmission=None):
    """Project the HS image on the subspace and upsample each coefficient map bicubically.

    ``transmission`` (the HS throughput per band) is divided out before
    projecting when given.
    """
    if yh.domain != SPATIAL:
        raise ArgumentError("baseline expects a spatial HS cube")
    if fine_shape.rows % yh.shape.rows or fine_shape.cols % yh.shape.cols:
        raise ArgumentError(f"fine grid {fine_shape} is not a multiple of {yh.shape}")
    d_r = fine_shape.rows // yh.shape.rows
    d_c = fine_shape.cols // yh.shape.cols
    if d_r != d_c:
        raise ArgumentError("baseline requires an isotropic decimation factor")
    t = time.perf_counter()
    if transmission is not None:
        tr = np.asarray(transmission, dtype=np.float64).ravel()
        if tr.size != yh.bands or np.any(tr <= 0):
            raise ArgumentError(f"transmission must hold {yh.bands} positive values")
        yh = yh.replace(data=yh.data / tr[:, None])
    Z = project(basis, yh).images
    Ur = cubic_upsample_matrix(yh.shape.rows, d_r)
    Uc = cubic_upsample_matrix(yh.shape.cols, d_c)
    Zf = np.einsum("Rr,nrc,Cc->nRC", Ur, Z, Uc)
    X = reconstruct(basis, SpectralCube(Zf.reshape(basis.l_sub, -1), fine_shape), axis=yh.axis)
    trace = ConvergenceTrace(converged=True)
    return X, FusionReport("baseline", trace, {"solve": time.perf_counter() - t})
