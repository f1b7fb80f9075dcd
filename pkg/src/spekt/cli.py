"""Unified command-line entry point.

Subcommands: gen-fiber, gen-array, gen-dataset, train, recon, bench,
stream, import-matrix.  Every run writes a manifest with the effective
configuration into its output directory, and every randomized command
either receives --seed or generates one and prints it — silent
nondeterminism is forbidden.

Exit codes: 0 ok, 2 usage (argparse), 3 configuration, 4 data/IO,
5 runtime/numerical.
"""

from __future__ import annotations

import argparse
import os
import secrets
import sys
import time
from typing import List, Optional, Tuple

import numpy as np

from . import __version__
from .bench import (
    DlBudget,
    compare_methods,
    rgb_scenario,
    robustness_noise,
    robustness_shift,
    sweep_sampling,
    write_rows_csv,
)
from .cs import CompressiveSensingReconstructor
from .errors import ConfigError, DataError, NumericalError, SpektError
from .iofmt import read_manifest, read_matrix, write_manifest, write_matrix
from .linear import TikhonovReconstructor
from .nn import CnnReconstructor, MultiFiberCnnReconstructor
from .pipeline import parse_script, run_stream, simulate_wavelength_switch
from .rng import Rng
from .specklegen import FiberArrayModel, FiberModel, generate_array, generate_fiber
from .synth import (
    DenseSampler,
    Perturbation,
    SparseSampler,
    build_dataset,
    default_split,
    load_dataset,
    save_dataset,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_RUNTIME = 5


def _parse_hw(text: str) -> Tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return (int(h), int(w))
    except ValueError as exc:
        raise ConfigError(f"expected HxW, got {text!r}") from exc


def _parse_window(text: str) -> Tuple[Tuple[int, int], Tuple[int, int]]:
    """Parse an ROI window 'row,col+HxW'."""
    try:
        origin, shape = text.split("+")
        r, c = origin.split(",")
        return ((int(r), int(c)), _parse_hw(shape))
    except ValueError as exc:
        raise ConfigError(f"expected row,col+HxW, got {text!r}") from exc


def _resolve_seed(args) -> int:
    if args.seed is None:
        seed = secrets.randbits(48)
        print(f"generated seed: {seed}")
        return seed
    return args.seed


def _out_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _run_manifest(out_dir: str, args, extra=None) -> None:
    """Write (or merge into) the run manifest with the effective configuration."""
    path = os.path.join(out_dir, "manifest.txt")
    entries = {}
    if os.path.exists(path):
        entries.update(read_manifest(path))
    entries.update({f"arg.{k}": v for k, v in sorted(vars(args).items()) if k != "func"})
    entries["tool_version"] = __version__
    if extra:
        entries.update(extra)
    write_manifest(path, entries)


def _load_array_dir(path: str) -> FiberArrayModel:
    manifest = read_manifest(os.path.join(path, "manifest.txt"))
    n_fibers = int(manifest["n_fibers"])
    rows, cols = (int(x) for x in manifest["grid"].split("x"))
    spacing = int(manifest.get("spacing_px", 1))
    fibers = [
        read_matrix(os.path.join(path, f"fiber{i:04d}.spkt")) for i in range(n_fibers)
    ]
    return FiberArrayModel(tuple(fibers), (rows, cols), spacing)


def _save_array_dir(array: FiberArrayModel, path: str, seed) -> None:
    _out_dir(path)
    for i, fiber in enumerate(array.fibers):
        write_matrix(os.path.join(path, f"fiber{i:04d}.spkt"), fiber)
    h, w = array.roi_shape
    write_manifest(os.path.join(path, "manifest.txt"), {
        "n_fibers": array.n_fibers,
        "grid": f"{array.grid_layout[0]}x{array.grid_layout[1]}",
        "spacing_px": array.spacing_px,
        "roi_shape": f"{h}x{w}",
        "n_channels": array.n_channels,
        "seed": seed,
    })


def _sampler_from_args(args):
    if args.dense is not None:
        return DenseSampler(args.dense)
    spec = args.sparse if args.sparse is not None else "10"
    if ".." in spec:
        lo, hi = spec.split("..")
        return SparseSampler((int(lo), int(hi)))
    return SparseSampler(int(spec))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_fiber(args) -> int:
    seed = _resolve_seed(args)
    model = FiberModel(n_modes=args.modes, decorrelation_length=args.decorr, seed=seed)
    fiber = generate_fiber(model, _parse_hw(args.roi), args.channels)
    out = _out_dir(args.out)
    write_matrix(os.path.join(out, "fiber0000.spkt"), fiber)
    _run_manifest(out, args, {"seed": seed, "n_fibers": 1})
    print(f"wrote 1 fiber matrix ({fiber.n_pixels}x{fiber.n_channels}) to {out}")
    return EXIT_OK


def cmd_gen_array(args) -> int:
    seed = _resolve_seed(args)
    model = FiberModel(n_modes=args.modes, decorrelation_length=args.decorr)
    array = generate_array(
        Rng(seed), args.fibers, model, _parse_hw(args.roi), args.channels
    )
    _save_array_dir(array, args.out, seed)
    _run_manifest(args.out, args, {"seed": seed})
    print(f"wrote {array.n_fibers} fiber matrices to {args.out}")
    return EXIT_OK


def cmd_gen_dataset(args) -> int:
    seed = _resolve_seed(args)
    A = read_matrix(args.matrix)
    sampler = _sampler_from_args(args)
    split = tuple(int(x) for x in args.split.split(",")) if args.split else default_split(args.n)
    perturbation = Perturbation(noise_level=args.noise, shift_one_pixel=args.shift)
    roi = _parse_window(args.roi) if args.roi else None
    dataset = build_dataset(A, sampler, args.n, split=split, perturbation=perturbation,
                            rng=Rng(seed), roi=roi)
    save_dataset(dataset, args.out)
    _run_manifest(args.out, args, {"seed": seed})
    print(f"wrote dataset n={dataset.n_samples} split={dataset.split} to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    seed = _resolve_seed(args)
    dataset = load_dataset(args.dataset)
    common = dict(epochs=args.epochs, batch_size=args.batch, learning_rate=args.lr,
                  seed=seed, precision=args.precision, verbose=args.verbose)
    if args.arch.startswith("multi:"):
        n_fibers = int(args.arch.split(":", 1)[1])
        if dataset.images.ndim != 4 or dataset.images.shape[3] != n_fibers:
            raise ConfigError(
                f"dataset images {dataset.images.shape} do not hold {n_fibers} fibers per sample"
            )
        n_channels = dataset.n_channels // n_fibers
        est = MultiFiberCnnReconstructor(n_fibers, n_channels=n_channels, **common)
    else:
        est = CnnReconstructor(n_channels=dataset.n_channels, arch=args.arch, **common)
    t0 = time.perf_counter()
    est.fit(*dataset.train, validation_data=dataset.val)
    elapsed = time.perf_counter() - t0
    out = _out_dir(os.path.dirname(os.path.abspath(args.out)) or ".")
    est.save(args.out)
    _run_manifest(out, args, {
        "seed": seed,
        "best_epoch": est.trained_.best_epoch,
        "final_val_loss": float(est.trained_.history["val_loss"][-1]),
        "train_seconds": round(elapsed, 3),
    })
    print(
        f"trained {args.arch} for {args.epochs} epochs in {elapsed:.1f}s, "
        f"best epoch {est.trained_.best_epoch}, checkpoint: {args.out}"
    )
    return EXIT_OK


def cmd_recon(args) -> int:
    A = read_matrix(args.matrix)
    dataset = load_dataset(args.dataset)
    images, spectra = dataset.test
    if args.method == "tr":
        alpha = "auto" if args.reg_lambda == "auto" else (
            None if args.reg_lambda is None else float(args.reg_lambda))
        est = TikhonovReconstructor(A, alpha=alpha)
        if alpha == "auto":
            est.fit(*dataset.val)
        else:
            est.fit()
    elif args.method == "cs":
        gamma = "auto" if args.gamma == "auto" else (
            None if args.gamma is None else float(args.gamma))
        est = CompressiveSensingReconstructor(A, gamma=gamma, max_iters=args.max_iters,
                                              rel_tol=args.tol)
        if gamma == "auto":
            est.fit(*dataset.val)
        else:
            est.fit()
    elif args.method == "dl":
        if not args.model:
            raise ConfigError("--method dl requires --model CHECKPOINT")
        est = CnnReconstructor.from_checkpoint(args.model)
    else:
        raise ConfigError(f"unknown method {args.method!r}")

    out = _out_dir(args.out)
    t0 = time.perf_counter()
    pred = est.predict(images)
    elapsed = time.perf_counter() - t0

    from .bench import EvalReport

    report = EvalReport.from_predictions(pred, spectra, {"method": args.method})
    np.savetxt(os.path.join(out, "reconstructed.csv"), pred, delimiter=",")
    extra = {
        "mean_correlation": report.mean,
        "std_correlation": report.std,
        "failure_fraction": report.failure_fraction,
        "n_spectra": report.n,
        "seconds": round(elapsed, 4),
    }
    if args.method == "cs":
        iters = [info.n_iters for info in est.last_infos_]
        extra["mean_iterations"] = float(np.mean(iters))
        extra["max_iterations"] = int(np.max(iters))
    if args.method == "tr" and args.cache:
        est.save_cache(args.cache)
    _run_manifest(out, args, extra)
    with open(os.path.join(out, "summary.txt"), "w", encoding="utf-8") as fh:
        for k, v in sorted(extra.items()):
            fh.write(f"{k}={v}\n")
    print(f"{args.method}: mean correlation {report.mean:.4f} +- {report.std:.4f} "
          f"({report.n} spectra, {elapsed:.2f}s)")
    return EXIT_OK


def _budget_from_args(args) -> DlBudget:
    return DlBudget(n_samples=args.train_samples, epochs=args.epochs,
                    verbose=args.verbose)


def cmd_bench(args) -> int:
    seed = _resolve_seed(args)
    rng = Rng(seed)
    array = _load_array_dir(args.matrix_dir)
    fibers = list(array.fibers[: args.fibers]) if args.fibers else list(array.fibers)
    methods = args.methods.split(",")
    out = _out_dir(args.out)
    budget = _budget_from_args(args)

    if args.scenario == "sampling":
        rois = [int(x) for x in args.rois.split(",")]
        nlams = [int(x) for x in args.nlambdas.split(",")]
        rows = []
        for method in methods:
            rows += sweep_sampling(fibers, method, rois, nlams, args.n_spectra, rng, budget)
        write_rows_csv(os.path.join(out, "sampling.csv"), rows)
    elif args.scenario == "compare":
        A = fibers[0]
        roi = _parse_window(args.roi) if args.roi else None
        rows = compare_methods(A, methods, args.n_spectra, rng, budget, roi=roi)
        write_rows_csv(os.path.join(out, "compare.csv"), rows)
    elif args.scenario == "robustness":
        A = fibers[0]
        roi = _parse_window(args.roi) if args.roi else None
        noises = [float(x) for x in args.noises.split(",")]
        samplers = {"dense": DenseSampler(), "sparse20": SparseSampler(20)}
        rows = robustness_noise(A, noises, samplers, args.n_spectra, rng, budget,
                                train_noise=args.train_noise, roi=roi)
        if args.shift_test:
            if not args.roi:
                raise ConfigError("--shift-test requires --roi with a 1-pixel margin")
            rows += [dict(r, noise="shift") for r in robustness_shift(
                A, roi, DenseSampler(), args.n_spectra, rng, budget)]
        write_rows_csv(os.path.join(out, "robustness.csv"), rows)
    elif args.scenario == "rgb":
        rows_, cols_ = array.grid_layout
        gen = rng.spawn().generator
        images = [gen.random((rows_, cols_, 3)) for _ in range(args.n_images)]
        results = rgb_scenario(array, methods, images, rng, budget)
        rows = [{
            "method": r.method,
            "source_correlation": r.source_correlation,
            "crosstalk": r.crosstalk,
            "n_images": len(images),
        } for r in results]
        write_rows_csv(os.path.join(out, "rgb.csv"), rows)
        from .iofmt import write_pgm

        for r in results:
            for k in range(r.rasters.shape[0]):
                for c, cname in enumerate("rgb"):
                    write_pgm(
                        os.path.join(out, f"{r.method.replace('+', 'p')}_img{k:02d}_{cname}.pgm"),
                        r.rasters[k, :, :, c],
                    )
    else:
        raise ConfigError(f"unknown bench scenario {args.scenario!r}")

    _run_manifest(out, args, {"seed": seed})
    print(f"bench {args.scenario}: wrote results to {out}")
    return EXIT_OK


def cmd_stream(args) -> int:
    seed = _resolve_seed(args)
    array = _load_array_dir(args.matrix_dir)
    if args.script:
        with open(args.script, "r", encoding="utf-8") as fh:
            script = parse_script(fh.read())
    else:
        # Default: sweep the dominant channel across the stream.
        per = max(1, args.frames // array.n_channels)
        lines = []
        start = 0
        ch = 0
        while start < args.frames:
            end = min(start + per, args.frames)
            lines.append(f"{start} {end} {ch % array.n_channels}")
            start = end
            ch += 1
        script = parse_script("\n".join(lines))

    if args.models_dir:
        recons = []
        manifest = read_manifest(os.path.join(args.models_dir, "manifest.txt"))
        for i in range(array.n_fibers):
            recons.append(CnnReconstructor.from_checkpoint(
                os.path.join(args.models_dir, f"fiber{i:04d}.spkn")))
        backend = "dl"
    elif args.method == "tr":
        recons = [TikhonovReconstructor(f).fit() for f in array.fibers]
        backend = "tr"
    elif args.method == "cs":
        recons = [CompressiveSensingReconstructor(f).fit() for f in array.fibers]
        backend = "cs"
    else:
        raise ConfigError("stream needs --models-dir or --method tr|cs")

    frames, truth = simulate_wavelength_switch(array, script, args.frames)
    result = run_stream(array, recons, frames, workers=args.workers)
    out = _out_dir(os.path.dirname(os.path.abspath(args.timing_out)) or ".")
    write_rows_csv(args.timing_out, result.timing.stage_rows())
    _run_manifest(out, args, {
        "seed": seed,
        "backend": backend,
        "per_fiber_inference_ms": result.timing.per_fiber_inference_s * 1e3,
        "frames_per_second": result.timing.frames_per_second,
    })
    t = result.timing
    print(
        f"{backend}: {t.n_frames} frames x {t.n_fibers} fibers, "
        f"{t.per_fiber_inference_s * 1e6:.0f} us/fiber inference, "
        f"{t.frames_per_second:.2f} frames/s (workers={t.workers})"
    )
    return EXIT_OK


def cmd_import_matrix(args) -> int:
    A = read_matrix(args.file)
    out = _out_dir(args.out)
    dest = os.path.join(out, os.path.basename(args.file))
    write_matrix(dest, A)
    _run_manifest(out, args, {
        "pixels": A.n_pixels,
        "channels": A.n_channels,
        "roi_shape": f"{A.roi_shape[0]}x{A.roi_shape[1]}",
        "sampling_ratio": round(A.sampling_ratio.value, 4),
        "content_hash": A.content_hash(),
    })
    print(
        f"imported matrix {A.n_pixels}x{A.n_channels} "
        f"(roi {A.roi_shape[0]}x{A.roi_shape[1]}, ratio {A.sampling_ratio.value:.2f})"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spekt",
        description="Synthetic multi-core fiber speckle spectrometry toolkit",
    )
    parser.add_argument("--version", action="version", version=f"spekt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, seed=True):
        if seed:
            p.add_argument("--seed", type=int, default=None,
                           help="random seed (generated and printed if omitted)")

    p = sub.add_parser("gen-fiber", help="generate one synthetic fiber matrix")
    add_common(p)
    p.add_argument("--channels", type=int, default=43)
    p.add_argument("--roi", default="20x20", help="ROI as HxW")
    p.add_argument("--modes", type=int, default=64)
    p.add_argument("--decorr", type=float, default=1.0,
                   help="wavelength decorrelation length in channels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_fiber)

    p = sub.add_parser("gen-array", help="generate a fiber array (one matrix per core)")
    add_common(p)
    p.add_argument("--fibers", type=int, default=16)
    p.add_argument("--channels", type=int, default=43)
    p.add_argument("--roi", default="22x22")
    p.add_argument("--modes", type=int, default=64)
    p.add_argument("--decorr", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_array)

    p = sub.add_parser("gen-dataset", help="synthesize a labeled speckle dataset")
    add_common(p)
    p.add_argument("--matrix", required=True, help="SPKT transmission matrix file")
    p.add_argument("--n", type=int, default=11000)
    p.add_argument("--split", default=None, help="train,val,test counts")
    p.add_argument("--sparse", default=None, help="N or A..B non-zero channels")
    p.add_argument("--dense", type=float, default=None, help="random-walk step size")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--shift", action="store_true", help="one-pixel random ROI shift")
    p.add_argument("--roi", default=None, help="crop window row,col+HxW")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train", help="train a reconstruction network")
    add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--arch", default="auto", help="auto|small|large|multi:N")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--precision", choices=("f32", "f64"), default="f32")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--out", required=True, help="checkpoint path (.spkn)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("recon", help="reconstruct a dataset's test split")
    add_common(p, seed=False)
    p.add_argument("--method", required=True, choices=("tr", "cs", "dl"))
    p.add_argument("--matrix", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--lambda", dest="reg_lambda", default=None,
                   help="Tikhonov weight or 'auto'")
    p.add_argument("--gamma", default=None, help="L1 weight or 'auto'")
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--model", default=None, help="network checkpoint for --method dl")
    p.add_argument("--cache", default=None, help="write TR reconstructor cache (.spkr)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("bench", help="run a benchmark scenario")
    add_common(p)
    p.add_argument("scenario", choices=("sampling", "compare", "robustness", "rgb"))
    p.add_argument("--matrix-dir", required=True)
    p.add_argument("--methods", default="tr,cs,dl")
    p.add_argument("--fibers", type=int, default=None, help="use first N fibers")
    p.add_argument("--n-spectra", type=int, default=100)
    p.add_argument("--train-samples", type=int, default=4400)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--rois", default="3,5,7,20", help="square ROI sizes (sampling)")
    p.add_argument("--nlambdas", default="1,10,43")
    p.add_argument("--noises", default="0.0,0.25")
    p.add_argument("--train-noise", type=float, default=0.25)
    p.add_argument("--shift-test", action="store_true")
    p.add_argument("--roi", default=None, help="crop window row,col+HxW")
    p.add_argument("--n-images", type=int, default=14)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("stream", help="real-time style streaming reconstruction")
    add_common(p)
    p.add_argument("--matrix-dir", required=True)
    p.add_argument("--models-dir", default=None, help="directory of per-fiber checkpoints")
    p.add_argument("--method", default=None, choices=("tr", "cs"),
                   help="analytic backend when no models are given")
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--script", default=None, help="wavelength script file")
    p.add_argument("--timing-out", required=True, help="per-stage timing CSV")
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("import-matrix", help="validate and import an SPKT matrix")
    add_common(p, seed=False)
    p.add_argument("file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import_matrix)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, SpektError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
