"""Command-line surface for the pipeline.

Exit codes: 0 ok, 2 usage, 3 I/O, 4 numerical failure, 5 selftest failure.
Every run prints its resolved config digest; machine-readable output goes to
stdout as JSON when --json is set.  IHI_THREADS caps the worker pool,
IHI_LOG sets the log level.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import calibrate as cal
from . import evaluate as ev
from . import reconstruct as rec
from . import synthesize as syn
from .cube import Cube, resample_wavenumber_to_hsi
from .degrade import DegradationParams, degrade, demo_params, load_params, save_params
from .ihic_io import FormatError, read_cube, write_cube
from .profiles import profile_by_name
from .rng import RngHandle
from .transform import RankDeficiencyError, export_operators

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4
EXIT_SELFTEST = 5

log = logging.getLogger("ihikit")


def _digest_path(h, path: Path):
    if path.is_file():
        h.update(path.read_bytes())
    elif path.is_dir():
        for child in sorted(path.rglob("*")):
            if child.is_file():
                h.update(child.name.encode())
                h.update(child.read_bytes())


def resolved_digest(args: argparse.Namespace, input_keys=()) -> str:
    payload = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    h = hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode())
    for key in input_keys:
        value = getattr(args, key, None)
        if value and not str(value).startswith("demo:"):
            _digest_path(h, Path(value))
    return h.hexdigest()[:16]


def _emit(args, payload: dict, human: str):
    if args.json:
        print(json.dumps(payload))
    else:
        print(human)


def _load_params_arg(value: str) -> DegradationParams:
    if value.startswith("demo:"):
        _, _, spec = value.partition(":")
        name, _, seed = spec.partition("@")
        return demo_params(profile_by_name(name), seed=int(seed) if seed else 0)
    return load_params(value)


def cmd_simulate(args) -> int:
    params = _load_params_arg(args.params)
    hsi = read_cube(args.input)
    scaled, factor = syn.photometric_scale(hsi, args.target_rate)
    b0 = syn.resample_hsi_to_wavenumber(scaled)
    out = degrade(b0, params, RngHandle(args.seed), deterministic=args.deterministic)
    write_cube(out.astype(np.float32), args.output)
    _emit(args, {"output": args.output, "scale": factor, "digest": args.digest},
          f"wrote {args.output} (scale {factor:.6g})")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    calset = cal.load_calibration_set(args.captures)
    params, report = cal.calibrate_all(calset, e=args.e)
    save_params(params, args.output)
    report_path = args.report or str(Path(args.output) / "calibration_report.json")
    with open(report_path, "w") as f:
        json.dump({"stages": report, "digest": args.digest}, f, indent=1)
    _emit(args, {"params_dir": args.output, "report": report_path, "digest": args.digest},
          f"calibrated parameters -> {args.output}; report -> {report_path}")
    return EXIT_OK


def cmd_make_dataset(args) -> int:
    params = _load_params_arg(args.params)
    manifest = syn.make_dataset(
        args.sources, params, args.output, patch=args.patch, stride=args.stride,
        per_image_cap=args.cap, test_hold_out=args.hold_out,
        master_seed=args.seed, target_rate=args.target_rate)
    if args.export_operators:
        export_operators(params, Path(args.output) / "params")
    n_train = sum(1 for s in manifest.samples if s.split == "train")
    n_test = len(manifest.samples) - n_train
    _emit(args, {"output": args.output, "train": n_train, "test": n_test,
                 "digest": args.digest},
          f"dataset -> {args.output}: {n_train} train patches, {n_test} test scenes")
    return EXIT_OK


def _build_reconstructor(args, params):
    ops = rec.Operators.build(params)
    if args.method == "fprime":
        return lambda y: rec.reconstruct_direct(y, params, ops)
    if args.method == "traditional":
        return lambda y: rec.reconstruct_traditional(y, params, ops.basis)
    if args.method == "unfold":
        prior_params = {}
        if args.prior == "soft_threshold":
            prior_params["tau"] = args.tau
        elif args.prior == "tv":
            prior_params = {"lam": args.lam, "iters": args.tv_iters}
        elif args.prior == "external":
            if args.bridge and args.bridge.startswith("tcp:"):
                prior_params["endpoint"] = args.bridge[4:]
            elif args.bridge:
                prior_params["command"] = args.bridge.split()
            else:
                raise ValueError("--bridge required for the external prior")
        config = rec.UnfoldConfig(stages=args.stages, alpha=args.alpha,
                                  prior=args.prior, prior_params=prior_params,
                                  background=args.background, momentum=args.momentum)
        return lambda y: rec.unfold(y, params, config, ops=ops)
    raise ValueError(f"unknown method {args.method}")


def cmd_reconstruct(args) -> int:
    params = _load_params_arg(args.params)
    y = read_cube(args.input)
    reconstructor = _build_reconstructor(args, params)
    result = reconstructor(y)
    trace = None
    if isinstance(result, rec.UnfoldResult):
        trace = result.trace
        hsi = result.hsi
    else:
        hsi = result
    write_cube(hsi, args.output)
    payload = {"output": args.output, "digest": args.digest}
    lines = [f"wrote {args.output}"]
    if trace is not None and args.trace:
        with open(args.trace, "w") as f:
            json.dump(trace, f)
        payload["trace"] = args.trace
    if args.gt:
        gt = read_cube(args.gt)
        value = ev.psnr(hsi.data, gt.data)
        payload["psnr_db"] = None if value == float("inf") else value
        lines.append(f"PSNR vs ground truth: {value:.2f} dB")
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    params = load_params(Path(args.dataset) / "params")
    if args.method == "gt":
        def reconstructor(y, recd):
            return read_cube(Path(args.dataset) / "test" / f"{recd.sample_id}.gt_hsi.ihic")
    else:
        inner = _build_reconstructor(args, params)

        def reconstructor(y, recd):
            out = inner(y)
            return out.hsi if isinstance(out, rec.UnfoldResult) else out

    report = ev.evaluate_run(args.dataset, args.method, reconstructor,
                             extra_config={"digest": args.digest},
                             error_cubes_dir=args.error_cubes)
    with open(args.report, "w") as f:
        json.dump(report.to_json(), f, indent=1)
    _emit(args, report.to_json(), report.table() + f"\nreport -> {args.report}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .degrade import demo_instrument

    t0 = time.time()
    failures = []

    def check(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}: {name}" + (f" ({detail})" if detail else "")
        print(line)
        if not ok:
            failures.append(name)

    profile = profile_by_name("desk")
    params = demo_params(profile, seed=0, e=0.0)
    gen = np.random.default_rng(0)

    w, n, l = profile.w, profile.num_nu, profile.num_opd
    unit = DegradationParams(a=np.ones((w, n), dtype=complex), beta=np.zeros((w, l)),
                             m=np.ones((w, l)), k=np.ones((w, l)), d=np.zeros((w, l)),
                             sigma_read=np.zeros((w, l)), e=0.0, profile=profile)
    x = Cube(gen.random((2, w, n)), "wavenumber", profile)
    unit_ops = rec.Operators.build(unit)
    y = unit_ops.forward(x)
    err = float(np.linalg.norm(unit_ops.inverse(y).data - x.data) / np.linalg.norm(x.data))
    check("operator round trip (rel L2 <= 1e-5)", err <= 1e-5, f"err {err:.2e}")
    ops = rec.Operators.build(params)

    params_cal, extras = demo_instrument(profile, seed=0, e=0.0)
    calset = cal.synthesize_calibration_set(params_cal, h=512, rng=RngHandle(1),
                                            m_r=extras["m_r"])
    est, _ = cal.calibrate_all(calset)
    rel = lambda a, b: np.abs(a - b) / np.maximum(np.abs(b), 1e-30)
    worst = max(
        float(np.median(rel(est.d, params_cal.d))),
        float(np.median(rel(est.sigma_read, params_cal.sigma_read))),
        float(np.median(rel(est.k, params_cal.k))),
        float(np.median(rel(est.m, params_cal.m))),
        float(np.median(rel(est.a[:, profile.in_band], params_cal.a[:, profile.in_band]))),
        float(np.median(rel(est.beta, params_cal.beta))),
    )
    check("closed-loop calibration (median rel err <= 7% at H=512)", worst <= 0.07,
          f"worst median {worst:.3f}")

    scene = syn.toy_scene(profile, profile.h, profile.w, seed=3)
    i_d, b0, scaled, _ = syn.synthesize_pair(scene, params, seed=11)
    # the recoverable reference is B0 rendered to the wavelength grid; the raw
    # patch additionally carries resampling loss common to every method
    ref = resample_wavenumber_to_hsi(b0)
    direct = rec.reconstruct_direct(i_d, params, ops)
    value = ev.psnr(direct.data, ref.data)
    check("noisy direct reconstruction is finite", np.isfinite(value), f"{value:.2f} dB")

    i_d2 = degrade(b0, params, RngHandle(11), deterministic=True)
    clean = rec.reconstruct_direct(i_d2, params, ops)
    value2 = ev.psnr(clean.data, ref.data)
    check("noiseless direct reconstruction >= 60 dB", value2 >= 60.0, f"{value2:.2f} dB")

    elapsed = time.time() - t0
    check("selftest runtime <= 120 s", elapsed <= 120.0, f"{elapsed:.1f} s")
    if failures:
        print(f"selftest: {len(failures)} failure(s)")
        return EXIT_SELFTEST
    print(f"selftest: all checks passed in {elapsed:.1f} s")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ihikit", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--json", action="store_true", help="machine-readable stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="HSI cube -> degraded interferogram")
    p.add_argument("--input", required=True)
    p.add_argument("--params", required=True, help="params dir or demo:<profile>[@seed]")
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-rate", type=float, default=syn.DEFAULT_TARGET_RATE)
    p.add_argument("--deterministic", action="store_true", help="noise bypass (tests only)")
    p.set_defaults(func=cmd_simulate, inputs=("input", "params"))

    p = sub.add_parser("calibrate", help="calibration captures -> params dir + report")
    p.add_argument("--captures", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--e", type=float, default=0.0, help="electronic gain log-std (passed through)")
    p.set_defaults(func=cmd_calibrate, inputs=("captures",))

    p = sub.add_parser("make-dataset", help="source cubes + params -> paired dataset")
    p.add_argument("--sources", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--patch", type=int, default=32)
    p.add_argument("--stride", type=int, default=32)
    p.add_argument("--cap", type=int, default=64, help="max patches per source image")
    p.add_argument("--hold-out", type=int, default=1, help="test scenes held out from the end")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-rate", type=float, default=syn.DEFAULT_TARGET_RATE)
    p.add_argument("--export-operators", action="store_true",
                   help="also write dense forward/inverse operator files")
    p.set_defaults(func=cmd_make_dataset, inputs=("sources", "params"))

    def add_method_flags(p):
        p.add_argument("--method", required=True,
                       choices=("fprime", "traditional", "unfold", "gt"))
        p.add_argument("--stages", type=int, default=5)
        p.add_argument("--alpha", type=float, default=1.0)
        p.add_argument("--prior", default="identity",
                       choices=("identity", "soft_threshold", "tv", "external"))
        p.add_argument("--tau", type=float, default=0.0)
        p.add_argument("--lam", type=float, default=0.0)
        p.add_argument("--tv-iters", type=int, default=30)
        p.add_argument("--background", default="dark-only", choices=rec.PRECORRECT_MODES)
        p.add_argument("--momentum", action="store_true")
        p.add_argument("--bridge", default=None,
                       help="external prior: 'tcp:host:port' or a subprocess command line")

    p = sub.add_parser("reconstruct", help="interferogram + params -> HSI")
    p.add_argument("--input", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--gt", default=None, help="optional ground truth; prints PSNR")
    p.add_argument("--trace", default=None, help="write unfold fidelity trace JSON here")
    add_method_flags(p)
    p.set_defaults(func=cmd_reconstruct, inputs=("input", "params"))

    p = sub.add_parser("evaluate", help="dataset + method -> metrics report")
    p.add_argument("--dataset", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--error-cubes", default=None)
    add_method_flags(p)
    p.set_defaults(func=cmd_evaluate, inputs=("dataset",))

    p = sub.add_parser("selftest", help="closed-loop and round-trip checks")
    p.set_defaults(func=cmd_selftest, inputs=())
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("IHI_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    if "gt" == getattr(args, "method", None) and args.command != "evaluate":
        parser.error("method 'gt' is only valid for evaluate")
    args.digest = resolved_digest(args, getattr(args, "inputs", ()))
    print(f"config digest: {args.digest}", file=sys.stderr)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        log.error("missing input: %s", exc)
        print(f"error: missing input: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OSError, FormatError) as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except (RankDeficiencyError, cal.CalibrationError, rec.PriorError,
            np.linalg.LinAlgError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
