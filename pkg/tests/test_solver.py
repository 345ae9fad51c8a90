import numpy as np
import pytest

from specfusion import assembly
from specfusion.datacube import GridShape, SpectralCube, WavelengthAxis
from specfusion.errors import ArgumentError, NumericalError
from specfusion.operators import (
    DecimationSpec,
    InstrumentModels,
    SpectralResponse,
    dft,
    forward_hs,
    forward_ms,
)
from specfusion.psf import delta_psf_stack
from specfusion.solver import (
    FrequencyObjective,
    SolveConfig,
    SpatialObjective,
    SystemCache,
    baseline_upsample,
    build_system,
    cubic_upsample_matrix,
    fuse,
    fuse_frequency,
    fuse_hs_only,
    fuse_ms_only,
    fuse_naive,
    keys_kernel,
    solve_cg,
)
from specfusion.subspace import SubspaceBasis, project, reconstruct

from conftest import random_basis, random_cube, random_models


def rel(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b)


def planted(rng, shape=GridShape(8, 8), l_h=10, l_m=4, l_sub=3, d=2):
    """Noiseless observations of a scene lying exactly in span(V)."""
    models = random_models(rng, l_h=l_h, l_m=l_m, d=d, k=3, positive_transfer=True)
    basis = random_basis(rng, l_h, l_sub)
    Z = random_cube(rng, l_sub, shape)
    X = reconstruct(basis, Z, axis=models.psf_m.axis)
    return models, basis, Z, X, forward_ms(X, models), forward_hs(X, models)


def test_config_validation():
    with pytest.raises(ArgumentError):
        SolveConfig(tol=0)
    with pytest.raises(ArgumentError):
        SolveConfig(mu=-1)
    with pytest.raises(ArgumentError):
        SolveConfig(sigma_m=0)
    assert SolveConfig().iteration_cap(4, 100) == 400
    assert SolveConfig().iteration_cap(100, 10**6) == 5000
    assert SolveConfig(max_iter=7).iteration_cap(4, 100) == 7


def identity_system(n=2, shape=GridShape(3, 3), rng=None):
    l_h = n
    axis = WavelengthAxis.linear(1, 2, l_h)
    models = InstrumentModels(SpectralResponse(np.eye(l_h)), SpectralResponse.transmission(np.ones(l_h)),
                              delta_psf_stack(axis), delta_psf_stack(axis), DecimationSpec(1))
    basis = SubspaceBasis(np.eye(l_h), np.ones(l_h), 1.0)
    M, H = models.transfers(shape)
    parts = assembly.assemble(models.lm, models.lh, basis, M, H, models.decimation, shape)
    system = assembly.make_system(parts, None, None, models.lm, models.lh, basis, M, H, models.decimation,
                                  1.0, np.inf, 0.0)
    return system.with_b(rng.standard_normal(system.size) + 1j * rng.standard_normal(system.size))


def test_identity_system_one_iteration(rng):
    system = identity_system(rng=rng)
    z, trace = solve_cg(system, SolveConfig())
    assert trace.iterations == 1 and trace.converged
    assert np.max(np.abs(z - system.b)) <= 1e-14


def test_cg_matches_dense_solve(small_problem):
    models, basis, ym, yh, shape = small_problem
    cfg = SolveConfig(mu=0.05, sigma_m=0.9, sigma_h=1.1, tol=1e-12)
    system, _, _ = build_system(ym, yh, models, basis, cfg)
    z, trace = solve_cg(system, cfg)
    assert trace.converged
    A = system.to_dense()
    ref = np.linalg.solve(A, system.b)
    assert rel(z, ref) <= 1e-6


def test_cg_objective_descends_and_is_consistent(small_problem):
    models, basis, ym, yh, shape = small_problem
    cfg = SolveConfig(mu=0.01, tol=1e-10)
    system, _, _ = build_system(ym, yh, models, basis, cfg)
    z, trace = solve_cg(system, cfg)
    obj = np.array(trace.objectives)
    assert np.all(np.diff(obj) <= 1e-8 * np.abs(obj[:-1]))
    assert trace.final_objective == pytest.approx(obj[-1], rel=1e-8)
    assert trace.final_objective == pytest.approx(system.objective(z), rel=1e-12)
    assert np.all(np.isfinite(trace.residuals))


def test_cg_preconditioner_same_solution(small_problem):
    models, basis, ym, yh, shape = small_problem
    plain = SolveConfig(mu=0.05, tol=1e-12)
    pre = SolveConfig(mu=0.05, tol=1e-12, preconditioner=True)
    system, _, _ = build_system(ym, yh, models, basis, plain)
    z1, _ = solve_cg(system, plain)
    z2, t2 = solve_cg(system, pre)
    assert t2.converged and rel(z2, z1) <= 1e-8


def test_cg_nonconvergence_flag(small_problem):
    models, basis, ym, yh, shape = small_problem
    cfg = SolveConfig(mu=0.0, tol=1e-14, max_iter=3)
    system, _, _ = build_system(ym, yh, models, basis, cfg)
    z, trace = solve_cg(system, cfg)
    assert not trace.converged and trace.iterations == 3
    assert np.linalg.norm(system.matvec(z) - system.b) / np.linalg.norm(system.b) == pytest.approx(
        min(trace.residuals), rel=1e-6)


def test_zero_rhs_returns_zero(rng):
    system = identity_system(rng=rng).with_b(np.zeros(18, dtype=complex))
    z, trace = solve_cg(system, SolveConfig())
    assert not np.any(z) and trace.converged


def test_nan_raises_numerical_error(small_problem):
    models, basis, ym, yh, shape = small_problem
    data = ym.data.copy()
    data[0, 0] = np.nan
    with pytest.raises(NumericalError) as info:
        fuse(ym.replace(data=data), yh, models, basis, SolveConfig(mu=0.1))
    assert info.value.iteration == 1


def test_plant_and_recover(rng):
    models, basis, Z, X, ym, yh = planted(rng)
    est, report = fuse(ym, yh, models, basis, SolveConfig(mu=0.0, tol=1e-13))
    assert report.trace.converged
    assert rel(project(basis, est).data, Z.data) <= 1e-6
    assert rel(est.data, X.data) <= 1e-6


def test_identity_degradations_give_projection(rng):
    l_h, shape = 6, GridShape(4, 4)
    axis = WavelengthAxis.linear(1, 2, l_h)
    models = InstrumentModels(SpectralResponse(np.eye(l_h)), SpectralResponse.transmission(np.ones(l_h)),
                              delta_psf_stack(axis), delta_psf_stack(axis), DecimationSpec(1))
    basis = random_basis(rng, l_h, 2)
    X = random_cube(rng, l_h, shape, axis)
    est, _ = fuse(forward_ms(X, models), forward_hs(X, models), models, basis, SolveConfig(tol=1e-12))
    expected = basis.V @ basis.V.T @ X.data
    assert np.max(np.abs(est.data - expected)) <= 1e-8


def test_three_implementations_agree(rng):
    models = random_models(rng, l_h=8, l_m=3, d=2, k=3, positive_transfer=True)
    basis = random_basis(rng, 8, 2)
    shape = GridShape(8, 8)
    ym = random_cube(rng, 3, shape)
    yh = random_cube(rng, 8, models.decimation.coarse(shape))
    cfg = SolveConfig(mu=0.5, sigma_m=1.0, sigma_h=1.0, tol=1e-11, max_iter=20000)
    Xv, _ = fuse(ym, yh, models, basis, cfg)
    Xf, rf = fuse_frequency(ym, yh, models, basis, cfg)
    Xn, rn = fuse_naive(ym, yh, models, basis, cfg)
    assert rf.trace.converged and rn.trace.converged
    assert rel(Xf.data, Xv.data) <= 1e-5
    assert rel(Xn.data, Xv.data) <= 1e-5


def test_spatial_objective_matches_frequency_and_reference(rng):
    models = random_models(rng, l_h=6, l_m=3, d=2, k=3)
    basis = random_basis(rng, 6, 2)
    shape = GridShape(6, 6)
    ym = random_cube(rng, 3, shape)
    yh = random_cube(rng, 6, models.decimation.coarse(shape))
    cfg = SolveConfig(mu=0.3, sigma_m=0.7, sigma_h=1.4)
    sp = SpatialObjective(ym, yh, models, basis, cfg)
    fr = FrequencyObjective(ym, yh, models, basis, cfg)
    for _ in range(3):
        Z = random_cube(rng, 2, shape)
        Js = sp.value(Z.data)
        assert Js == pytest.approx(sp._value_reference(Z.data), rel=1e-10)
        assert fr.value_and_gradient(dft(Z).data)[0] == pytest.approx(Js, rel=1e-10)
        g = sp.gradient(Z.data)
        assert rel(g, sp._gradient_reference(Z.data)) <= 1e-10


def test_spatial_gradient_finite_differences(rng):
    models = random_models(rng, l_h=6, l_m=3, d=2, k=3)
    basis = random_basis(rng, 6, 2)
    shape = GridShape(6, 6)
    ym = random_cube(rng, 3, shape)
    yh = random_cube(rng, 6, models.decimation.coarse(shape))
    obj = SpatialObjective(ym, yh, models, basis, SolveConfig(mu=0.2))
    Z = rng.standard_normal((2, 36))
    g = obj.gradient(Z)
    h = 1e-6
    for idx in [(0, 0), (1, 17), (0, 35)]:
        E = np.zeros_like(Z)
        E[idx] = 1.0
        fd = (obj.value(Z + h * E) - obj.value(Z - h * E)) / (2 * h)
        assert fd == pytest.approx(g[idx], rel=1e-5, abs=1e-9)


def test_zero_iterations_return_zero(small_problem):
    models, basis, ym, yh, shape = small_problem
    for f in (fuse_frequency, fuse_naive):
        X, report = f(ym, yh, models, basis, SolveConfig(mu=0.1), max_iter=0)
        assert not np.any(X.data)
        assert report.trace.iterations == 0


def test_divergence_detected(small_problem):
    models, basis, ym, yh, shape = small_problem
    cfg = SolveConfig(mu=0.1)
    _, report = fuse_frequency(ym, yh, models, basis, cfg, max_iter=0)
    with pytest.raises(NumericalError, match="10 consecutive"):
        fuse_frequency(ym, yh, models, basis, cfg, max_iter=200, step=5 * report.info["step"])


def test_sigma_h_infinite_equals_ms_only(small_problem):
    models, basis, ym, yh, shape = small_problem
    X1, _ = fuse(ym, yh, models, basis, SolveConfig(mu=0.1, sigma_m=0.8, sigma_h=np.inf))
    X2, r2 = fuse_ms_only(ym, models, basis, 0.1, sigma_m=0.8)
    assert np.array_equal(X1.data, X2.data)
    assert r2.method == "ms_only"
    X3, _ = fuse(ym, yh, models, basis, SolveConfig(mu=0.1, sigma_m=np.inf, sigma_h=0.6))
    X4, _ = fuse_hs_only(yh, models, basis, 0.1, sigma_h=0.6)
    assert np.array_equal(X3.data, X4.data)


def test_hs_only_singular_without_regularization(rng):
    # decimation leaves the HS-only system rank deficient at mu=0; b stays in
    # the range of A (normal equations), so CG still reaches a least-squares solution
    models = random_models(rng, l_h=6, l_m=2, d=3, k=3)
    basis = random_basis(rng, 6, 2)
    yh = random_cube(rng, 6, GridShape(3, 3))
    cfg = SolveConfig(mu=0.0, sigma_m=np.inf, sigma_h=1.0, tol=1e-10)
    system, _, _ = build_system(None, yh, models, basis, cfg)
    eig = np.linalg.eigvalsh(system.to_dense())
    assert eig[0] <= 1e-10 * eig[-1]
    X, report = fuse_hs_only(yh, models, basis, 0.0, tol=1e-10)
    lstsq = np.linalg.lstsq(system.to_dense(), system.b, rcond=None)[0]
    z = report.info["coefficients"]
    assert system.objective(z) == pytest.approx(system.objective(lstsq), rel=1e-8, abs=1e-8)


def test_cache_reuses_assembly(small_problem, rng):
    models, basis, ym, yh, shape = small_problem
    cache = SystemCache()
    cfg = SolveConfig(mu=0.1)
    before = dict(assembly.CALLS)
    _, r1 = fuse(ym, yh, models, basis, cfg, cache=cache)
    ym2 = ym.replace(data=ym.data + 0.01 * rng.standard_normal(ym.data.shape))
    _, r2 = fuse(ym2, yh, models, basis, cfg, cache=cache)
    assert r1.assembled and not r2.assembled
    assert r2.timings["assembly"] == 0.0
    assert assembly.CALLS["Am"] == before.get("Am", 0) + 1
    assert cache.hits == 1 and cache.misses == 1
    _, r3 = fuse(ym, yh, models, basis, SolveConfig(mu=0.7, sigma_m=3.0), cache=cache)
    assert not r3.assembled


def test_keys_kernel_values():
    assert keys_kernel(0.0) == 1.0
    assert keys_kernel(1.0) == pytest.approx(0.0, abs=1e-15)
    assert keys_kernel(2.0) == 0.0
    assert keys_kernel(0.5) == pytest.approx(0.5625)
    assert keys_kernel(1.5) == pytest.approx(-0.0625)


def test_cubic_partition_of_unity():
    U = cubic_upsample_matrix(7, 3)
    assert np.allclose(U.sum(axis=1), 1.0, atol=1e-14)
    assert np.allclose(U[::3], np.eye(7), atol=1e-14)


def test_baseline_d1_is_projection(rng):
    basis = random_basis(rng, 6, 2)
    yh = random_cube(rng, 6, GridShape(4, 5))
    X, report = baseline_upsample(yh, basis, GridShape(4, 5))
    assert np.max(np.abs(X.data - basis.V @ basis.V.T @ yh.data)) <= 1e-12
    assert report.method == "baseline"


def test_baseline_constant_bands(rng):
    basis = random_basis(rng, 5, 5)
    yh = SpectralCube(np.repeat(rng.random((5, 1)), 12, axis=1), GridShape(3, 4))
    X, _ = baseline_upsample(yh, basis, GridShape(9, 12))
    assert np.max(np.abs(X.data - yh.data[:, :1])) <= 1e-12


def test_baseline_errors(rng):
    basis = random_basis(rng, 5, 2)
    yh = random_cube(rng, 5, GridShape(3, 4))
    with pytest.raises(ArgumentError):
        baseline_upsample(yh, basis, GridShape(7, 8))
    with pytest.raises(ArgumentError):
        baseline_upsample(yh, basis, GridShape(6, 12))


def test_report_csv(tmp_path, small_problem):
    models, basis, ym, yh, shape = small_problem
    _, report = fuse(ym, yh, models, basis, SolveConfig(mu=0.1))
    report.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "iteration,relative_residual,iteration_seconds,objective"
    assert len(lines) == report.trace.iterations + 1
    assert report.preprocessing_seconds >= 0
