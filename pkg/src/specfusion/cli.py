"""Command-line entry point.

Every subcommand reads a flat ``key = value`` config file (``--config``) and
lets flags override individual settings. Exit codes: 0 success, 2 bad
arguments or missing files, 3 malformed files, 4 numerical failure,
5 regularization search failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .datacube import GridShape, WavelengthAxis, read_cube, write_cube
from .errors import ArgumentError, FormatError, NumericalError, SearchFailure
from .metrics import evaluate
from .pipeline import (
    METHODS,
    BenchSize,
    bench,
    load_models,
    make_config,
    save_models,
    search_mu,
    write_bench_csv,
    write_kv,
    write_manifest,
)
from .simulate import NoiseSpec, SceneSpec, default_models, generate_scene, observe
from .solver import (
    SolveConfig,
    baseline_upsample,
    fuse,
    fuse_frequency,
    fuse_naive,
)
from .subspace import fit_basis, load_basis, save_basis

EXIT_OK, EXIT_ARGS, EXIT_FORMAT, EXIT_NUMERICAL, EXIT_SEARCH = 0, 2, 3, 4, 5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentError(f"{self.prog}: {message}")


def _add_common(p):
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--output", help="output directory")
    p.add_argument("--threads", type=int, help="BLAS/FFT thread limit (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="specfusion", description="Hyperspectral + multispectral fusion")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a scene, models, observations and a basis")
    _add_common(p)
    for name, typ in [("seed", int), ("noise-seed", int), ("rows", int), ("cols", int), ("l-h", int),
                      ("l-m", int), ("d", int), ("n-endmembers", int), ("rank", int), ("flux-scale", float),
                      ("gain-m", float), ("gain-h", float), ("readout-m", float), ("readout-h", float)]:
        p.add_argument(f"--{name}", type=typ)

    p = sub.add_parser("fuse", help="fuse observations with one of the methods")
    _add_common(p)
    for name in ("ym", "yh", "models", "basis"):
        p.add_argument(f"--{name}")
    p.add_argument("--method", choices=METHODS)
    for name, typ in [("mu", float), ("sigma-m", float), ("sigma-h", float), ("tol", float), ("max-iter", int)]:
        p.add_argument(f"--{name}", type=typ)
    p.add_argument("--preconditioner", action="store_const", const="true")

    p = sub.add_parser("evaluate", help="quality metrics of an estimate against a reference")
    _add_common(p)
    p.add_argument("--ref")
    p.add_argument("--est")

    p = sub.add_parser("bench", help="time the three implementations")
    _add_common(p)
    p.add_argument("--bench-sizes", help="comma-separated ROWSxCOLSxLHxLMxLSUBxD")
    p.add_argument("--bench-iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mu", type=float)

    p = sub.add_parser("search-mu", help="discrepancy search for the regularization weight")
    _add_common(p)
    for name in ("ym", "yh", "models", "basis"):
        p.add_argument(f"--{name}")
    for name, typ in [("sigma-m", float), ("sigma-h", float), ("mu-lo", float), ("mu-hi", float),
                      ("max-steps", int), ("tol", float)]:
        p.add_argument(f"--{name}", type=typ)
    return parser


def _overrides(ns) -> dict:
    skip = {"command", "config"}
    return {k: v for k, v in vars(ns).items() if k not in skip and v is not None}


def _outdir(cfg) -> Path:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(cfg, argv):
    out = _outdir(cfg)
    axis = WavelengthAxis.linear(1.0, 2.35, cfg.l_h)
    spec = SceneSpec(GridShape(cfg.rows, cfg.cols), axis, cfg.n_endmembers, rng_seed=cfg.seed,
                     flux_scale=cfg.flux_scale)
    scene = generate_scene(spec)
    models = default_models(axis, cfg.l_m, cfg.d)
    noise_seed = cfg.seed + 1000 if cfg.noise_seed is None else cfg.noise_seed
    obs = observe(scene, models, NoiseSpec(cfg.gain_m, cfg.readout_m, noise_seed),
                  NoiseSpec(cfg.gain_h, cfg.readout_h, noise_seed))
    basis = fit_basis(obs.yh, rank=cfg.rank, transmission=models.lh.diagonal)
    paths = {"scene": out / "scene.cube", "ym": out / "ym.cube", "yh": out / "yh.cube",
             "basis": out / "basis.sub"}
    write_cube(scene, paths["scene"])
    write_cube(obs.ym, paths["ym"])
    write_cube(obs.yh, paths["yh"])
    save_basis(basis, paths["basis"])
    model_files = save_models(models, out / "models")
    fuse_cfg = out / "fuse.cfg"
    root = out.resolve()
    write_kv({"ym": root / "ym.cube", "yh": root / "yh.cube", "models": root / "models",
              "basis": root / "basis.sub", "sigma_m": repr(obs.sigma_m), "sigma_h": repr(obs.sigma_h),
              "mu": cfg.mu, "output": root / "fused"}, fuse_cfg)
    outputs = {**paths, **{f"models/{k}": v for k, v in model_files.items()}, "fuse.cfg": fuse_cfg}
    write_manifest(out / "manifest.json", "simulate", argv, cfg, {}, outputs,
                   {"sigma_m": obs.sigma_m, "sigma_h": obs.sigma_h, "clipped": obs.clipped,
                    "basis_energy_fraction": basis.energy_fraction})
    print(f"wrote {out} (sigma_m={obs.sigma_m:.6g}, sigma_h={obs.sigma_h:.6g})")


def cmd_fuse(cfg, argv):
    needs = {"baseline": ("yh", "models", "basis"), "hs_only": ("yh", "models", "basis"),
             "ms_only": ("ym", "models", "basis")}.get(cfg.method, ("ym", "yh", "models", "basis"))
    cfg.require(*needs)
    out = _outdir(cfg)
    ym = read_cube(cfg.ym) if "ym" in needs else None
    yh = read_cube(cfg.yh) if "yh" in needs else None
    models = load_models(cfg.models)
    basis = load_basis(cfg.basis)
    sc = cfg.solve_config()
    if cfg.method == "proposed":
        X, report = fuse(ym, yh, models, basis, sc)
    elif cfg.method == "naive":
        X, report = fuse_naive(ym, yh, models, basis, sc)
    elif cfg.method == "frequency":
        X, report = fuse_frequency(ym, yh, models, basis, sc)
    elif cfg.method == "ms_only":
        X, report = fuse(ym, None, models, basis, SolveConfig(cfg.mu, sc.sigma_m, np.inf, sc.tol, sc.max_iter,
                                                              sc.preconditioner), method="ms_only")
    elif cfg.method == "hs_only":
        X, report = fuse(None, yh, models, basis, SolveConfig(cfg.mu, np.inf, sc.sigma_h, sc.tol, sc.max_iter,
                                                              sc.preconditioner), method="hs_only")
    else:
        fine = GridShape(yh.shape.rows * models.d, yh.shape.cols * models.d)
        X, report = baseline_upsample(yh, basis, fine, models.lh.diagonal)
    est = out / f"{cfg.method}.cube"
    rep = out / f"{cfg.method}_report.csv"
    write_cube(X, est)
    report.write_csv(rep)
    inputs = {"ym": cfg.ym if ym is not None else None, "yh": cfg.yh if yh is not None else None,
              "basis": cfg.basis}
    write_manifest(out / f"{cfg.method}_manifest.json", "fuse", argv, cfg, inputs, {"estimate": est, "report": rep},
                   {"timings": report.timings, "converged": report.trace.converged,
                    "iterations": report.trace.iterations})
    status = "converged" if report.trace.converged else "NOT converged"
    print(f"{cfg.method}: {report.trace.iterations} iterations, {status}; wrote {est}")


def cmd_evaluate(cfg, argv):
    cfg.require("ref", "est")
    out = _outdir(cfg)
    ref, est = read_cube(cfg.ref), read_cube(cfg.est)
    rep = evaluate(est, ref)
    metrics_csv = out / "metrics.csv"
    hist_csv = out / "histograms.csv"
    rep.write_csv(metrics_csv, label=Path(cfg.est).stem)
    rep.write_histograms(hist_csv)
    write_manifest(out / "evaluate_manifest.json", "evaluate", argv, cfg, {"ref": cfg.ref, "est": cfg.est},
                   {"metrics": metrics_csv, "histograms": hist_csv}, {"metrics": rep.row()})
    print(json.dumps(rep.row()))


def cmd_bench(cfg, argv):
    out = _outdir(cfg)
    sizes = [BenchSize.parse(s.strip()) for s in cfg.bench_sizes.split(",") if s.strip()]
    records = bench(sizes, cfg.bench_iterations, seed=cfg.seed, mu=cfg.mu, threads=cfg.threads)
    path = out / "bench.csv"
    write_bench_csv(records, path)
    write_manifest(out / "bench_manifest.json", "bench", argv, cfg, {}, {"bench": path})
    for r in records:
        print(f"{r.method:10s} p_m={r.p_m} pre={r.preprocessing_seconds:.4f}s iter={r.iteration_seconds:.5f}s")


def cmd_search_mu(cfg, argv):
    cfg.require("ym", "yh", "models", "basis")
    out = _outdir(cfg)
    ym, yh = read_cube(cfg.ym), read_cube(cfg.yh)
    models, basis = load_models(cfg.models), load_basis(cfg.basis)
    mu, trace = search_mu(ym, yh, models, basis, cfg.sigma_m, cfg.sigma_h, (cfg.mu_lo, cfg.mu_hi),
                          cfg.max_steps, tol=cfg.tol)
    path = out / "search_mu.csv"
    trace.write_csv(path)
    write_manifest(out / "search_mu_manifest.json", "search-mu", argv, cfg,
                   {"ym": cfg.ym, "yh": cfg.yh, "basis": cfg.basis}, {"trace": path},
                   {"mu": mu, "converged": trace.converged, "within_range": trace.within_range})
    print(f"mu = {mu:.6g} (converged={trace.converged}, within_range={trace.within_range})")


COMMANDS = {"simulate": cmd_simulate, "fuse": cmd_fuse, "evaluate": cmd_evaluate, "bench": cmd_bench,
            "search-mu": cmd_search_mu}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = build_parser().parse_args(argv)
        cfg = make_config(ns.config, _overrides(ns))
        with threadpool_limits(limits=cfg.threads):
            COMMANDS[ns.command](cfg, argv)
        return EXIT_OK
    except SearchFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SEARCH
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ArgumentError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except SystemExit as exc:  # --help
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
