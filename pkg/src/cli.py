"""Command-line entry point: ``python -m src.cli <command> ...``.

Exit codes: 0 success, 2 usage or input error, 3 stream quality abort,
4 unreadable artifact.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd

from src.analysis import bench as bench_mod
from src.analysis.spectral import (
    GridWindow,
    eigenfunction_on_grid,
    limit_cycle_overlap,
    predict,
    spectrum,
    stability_report,
)
from src.analysis.tuning import select_lambda
from src.model.lifting import DictionarySpec, build_dictionary
from src.model.observers import CheckpointWriter, SpectrumLogger
from src.simulation.dynamics import (
    RingConfig,
    VdpConfig,
    add_measurement_noise,
    pairs_from_trajectory,
    reference_limit_cycle,
    simulate_linear,
    simulate_ring,
    simulate_vdp,
)
from src.stream_runner import StreamConfig, run_stream
from src.utils.checkpoint import load_checkpoint, save_checkpoint
from src.utils.config import RunManifest, jsonable, load_config
from src.utils.data_loader import (
    CsvStreamConfig,
    add_noise_snr,
    open_csv_stream,
    pairs_from_stream,
    read_trajectory,
    write_csv,
    write_field_csv,
    write_frame,
    write_operator_csv,
    write_spectrum_csv,
)
from src.utils.errors import ConfigurationError, ItemError, KoopmanError

log = logging.getLogger(__name__)

INTERNAL_KEYS = {"handler", "subparser", "config", "verbose", "command", "bench_command"}


def _saved(path: Path) -> None:
    print(f"✅ Saved {path}")


def _manifest(args: argparse.Namespace, inputs: dict, outputs: dict, seed=None) -> RunManifest:
    config = {k: v for k, v in vars(args).items() if k not in INTERNAL_KEYS}
    name = args.command if args.command != "bench" else f"bench {args.bench_command}"
    return RunManifest(subcommand=name, config=jsonable(config), inputs=inputs, outputs=outputs, seed=seed)


def _dictionary_spec(args: argparse.Namespace) -> DictionarySpec:
    return DictionarySpec.from_mapping(
        {
            "rbf": args.rbf,
            "bandwidth": args.bandwidth,
            "include_identity": not args.no_identity,
            "include_constant": not args.no_constant,
            "seed": args.dict_seed,
            "warmup": args.warmup,
        }
    )


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [f"--{name.replace('_', '-')}" for name in names if getattr(args, name) is None]
    if missing:
        raise ConfigurationError(f"missing required option(s): {', '.join(missing)}")


def _check_positive_int(value, name: str) -> int:
    if value is None or int(value) != value or value < 1:
        raise ConfigurationError(f"--{name} must be a positive integer, got {value}")
    return int(value)


# --- simulate ---
def _linear_system(args: argparse.Namespace) -> np.ndarray:
    if args.a_sys is not None:
        return pd.read_csv(args.a_sys, header=None).to_numpy(dtype=np.float64)
    c, s = np.cos(args.theta), np.sin(args.theta)
    return args.radius * np.array([[c, -s], [s, c]])


def cmd_simulate(args: argparse.Namespace) -> int:
    _require(args, "out")
    n = _check_positive_int(args.samples, "samples")
    if args.system == "vdp":
        cfg = VdpConfig(
            mu=args.mu, sigma=args.sigma, dt_sample=args.dt, substeps=args.substeps, seed=args.seed,
            x0=tuple(args.x0) if args.x0 else (2.0, 0.0), form=args.form,
        )
        traj = simulate_vdp(cfg, n)
        columns = ["x", "v"]
    elif args.system == "ring":
        cfg = RingConfig(
            n_osc=args.n_osc, mu=args.mu, sigma=args.sigma, dt_sample=args.dt, substeps=args.substeps,
            seed=args.seed, coupling=args.coupling, x0=tuple(args.x0) if args.x0 else None, form=args.form,
        )
        traj = simulate_ring(cfg, n)
        columns = [f"{name}{i + 1}" for i in range(cfg.n_osc) for name in ("x", "v")]
    else:
        A_sys = _linear_system(args)
        x0 = args.x0 if args.x0 else np.ones(A_sys.shape[0])
        traj = simulate_linear(A_sys, x0, n, noise_sigma=args.noise_sigma, seed=args.seed)
        columns = [f"x{i + 1}" for i in range(traj.shape[1])]

    if args.measurement_sigma:
        traj = add_measurement_noise(traj, args.measurement_sigma, seed=args.seed + 1)
    if args.snr_db is not None:
        traj = np.vstack(list(add_noise_snr(iter(traj), args.snr_db, seed=args.seed + 2)))

    out = write_csv(traj, args.out, columns=columns, dt=args.dt)
    _saved(out)
    _saved(_manifest(args, {}, {"trajectory": out}, seed=args.seed).finish().write(out))
    return 0


# --- learn ---
def cmd_learn(args: argparse.Namespace) -> int:
    _require(args, "input", "out")
    ckpt = load_checkpoint(args.resume) if args.resume else None
    lam = args.lam
    if ckpt is not None:
        # lambda is part of the accumulated state
        if lam is not None and lam != ckpt.model.lam:
            raise ConfigurationError(f"--lambda {lam:g} differs from the checkpoint's {ckpt.model.lam:g}")
        lam = ckpt.model.lam
    if lam is None or not lam > 0:
        raise ConfigurationError(f"--lambda must be > 0, got {lam}")
    source = CsvStreamConfig(
        path=args.input,
        columns=tuple(args.columns or ()),
        sample_rate_hz=args.sample_rate,
        snr_db=args.snr_db,
        seed=args.seed,
        realtime=args.realtime,
    )
    items = open_csv_stream(source)
    manifest = _manifest(args, {"input": Path(args.input)}, {}, seed=args.seed)

    model = None
    if ckpt is not None:
        dictionary, model = ckpt.dictionary, ckpt.model
        pairs = pairs_from_stream(items)
        consumed = 0
        while consumed < ckpt.position:
            item = next(pairs, None)
            if item is None:
                break
            if not isinstance(item, ItemError):
                consumed += 1
        log.info("Resuming at M=%d from %s", model.M, args.resume)
        manifest.inputs["resume"] = Path(args.resume)
    else:
        spec = _dictionary_spec(args)
        buffered, warmup = [], []
        for item in items:
            buffered.append(item)
            if not isinstance(item, ItemError):
                warmup.append(item)
                if len(warmup) == spec.warmup:
                    break
        dictionary = build_dictionary(spec, np.vstack(warmup) if warmup else np.empty((0, 0)))
        # warmup states are learned from too
        pairs = pairs_from_stream(itertools.chain(buffered, items))

    cfg = StreamConfig(
        dictionary=dictionary,
        lam=lam,
        refresh_period=args.refresh_period,
        cadence=args.spectrum_every or args.checkpoint_every or 0,
        init_mode="batch" if args.init_batch else "identity",
        init_batch=args.init_batch or 0,
        max_skip_fraction=args.max_skip_fraction,
    )
    if args.spectrum_every and args.checkpoint_every and args.spectrum_every != args.checkpoint_every:
        raise ConfigurationError("--spectrum-every and --checkpoint-every must match when both are given")

    sinks = []
    logger = None
    if args.spectrum_every:
        prefix = args.spectrum_prefix or Path(args.out).with_suffix("").as_posix() + "_spectrum"
        logger = SpectrumLogger(prefix=prefix)
        sinks.append(logger)
    if args.checkpoint_every:
        sinks.append(CheckpointWriter(args.out, dictionary))

    model = run_stream(pairs, cfg, sinks, model=model)

    out = save_checkpoint(args.out, model, dictionary)
    _saved(out)
    manifest.outputs["checkpoint"] = out
    manifest.outputs["dictionary"] = dictionary.describe()
    if logger is not None:
        for path in logger.written:
            _saved(path)
        manifest.outputs["spectra"] = logger.written
        if args.plot and logger.records:
            from src.analysis.plots import plot_stability, save_figure

            manifest.outputs["plot"] = save_figure(plot_stability(logger.stability_frame()), args.plot)
            _saved(manifest.outputs["plot"])
    if args.operator_csv:
        _saved(write_operator_csv(model.operator(), args.operator_csv))
        manifest.outputs["operator_csv"] = Path(args.operator_csv)
    _saved(manifest.finish().write(out))
    print(f"   M={model.M}, K={model.k_dim}, lambda={model.lam:g}")
    return 0


# --- spectrum ---
def cmd_spectrum(args: argparse.Namespace) -> int:
    _require(args, "checkpoint", "out")
    ckpt = load_checkpoint(args.checkpoint)
    s = spectrum(ckpt.model.operator())
    report = stability_report(s, args.tolerance)
    out = write_spectrum_csv(s, args.out)
    _saved(out)
    outputs = {"spectrum": out}
    print(
        f"   stable={report.stable}, max |mu|={report.max_modulus:.6f}, "
        f"{report.count_outside} outside the unit circle"
    )

    if args.field_out:
        if not args.grid:
            raise ConfigurationError("--field-out needs --grid X1MIN X1MAX X2MIN X2MAX")
        window = GridWindow(
            x1_bounds=(args.grid[0], args.grid[1]),
            x2_bounds=(args.grid[2], args.grid[3]),
            resolution=tuple(args.resolution),
            coords=tuple(args.coords),
            base_state=tuple(args.base_state) if args.base_state else None,
        )
        which = args.index if args.index is not None else complex(args.which)
        field = eigenfunction_on_grid(ckpt.dictionary, s, which, window)
        path = write_field_csv(field, args.field_out)
        _saved(path)
        outputs["field"] = path

        reference = None
        if args.reference_mu is not None:
            reference = reference_limit_cycle(mu=args.reference_mu)
            score = limit_cycle_overlap(field, reference)
            print(
                f"   limit-cycle overlap={score.score:.3f} "
                f"(coverage={score.coverage:.3f}, concentration={score.concentration:.3f})"
            )
        if args.plot:
            from src.analysis.plots import plot_eigenfunction, save_figure

            path = save_figure(plot_eigenfunction(field, reference), Path(args.plot).with_suffix(".field.png"))
            _saved(path)
            outputs["field_plot"] = path

    if args.plot:
        from src.analysis.plots import plot_eigenvalues, save_figure

        path = save_figure(plot_eigenvalues(s), args.plot)
        _saved(path)
        outputs["plot"] = path
    _saved(_manifest(args, {"checkpoint": Path(args.checkpoint)}, outputs).finish().write(out))
    return 0


# --- predict ---
def cmd_predict(args: argparse.Namespace) -> int:
    _require(args, "checkpoint", "x0", "out")
    if args.steps is None or int(args.steps) != args.steps or args.steps < 0:
        raise ConfigurationError(f"--steps must be a non-negative integer, got {args.steps}")
    ckpt = load_checkpoint(args.checkpoint)
    traj = predict(ckpt.model.operator(), ckpt.dictionary, args.x0, int(args.steps), mode=args.mode)
    out = write_csv(traj, args.out, dt=args.dt)
    _saved(out)
    _saved(_manifest(args, {"checkpoint": Path(args.checkpoint)}, {"prediction": out}).finish().write(out))
    return 0


# --- bench ---
def _bench_config(args: argparse.Namespace) -> bench_mod.BenchConfig:
    return bench_mod.BenchConfig(
        repetitions=args.repetitions,
        pin_threads=not args.no_pin,
        memory_cap_bytes=int(args.memory_cap_gib * 1024 ** 3),
    )


def cmd_bench_compare(args: argparse.Namespace) -> int:
    _require(args, "out")
    M = _check_positive_int(args.samples, "samples")
    cfg = _bench_config(args)
    traj = simulate_vdp(VdpConfig(mu=args.mu, sigma=args.sigma, dt_sample=args.dt, seed=args.seed), M + 1)
    spec = _dictionary_spec(args)
    dictionary = build_dictionary(spec, traj[: spec.warmup])
    comparison = bench_mod.bench_streaming_vs_batch(pairs_from_trajectory(traj), dictionary, args.lam, M, cfg)

    out = bench_mod.write_bench_csv([comparison.rr, comparison.edmd, comparison.extraction], args.out)
    _saved(out)
    summary = bench_mod.comparison_summary(comparison, cfg)
    summary_path = bench_mod.write_summary_json(summary, args.summary or Path(args.out).with_suffix(".json"))
    _saved(summary_path)
    for method, entry in summary["methods"].items():
        exponent = entry["fit_exponent"]
        shown = f"{exponent:.3f}" if exponent is not None else "n/a"
        print(f"   {method:18s} cumulative {entry['cumulative_nanos'] / 1e9:8.3f} s, exponent {shown}")
    print(f"   cumulative ratio {summary['cumulative_ratio']:.1f}x, max discrepancy {summary['max_discrepancy']:.2e}")
    outputs = {"timings": out, "summary": summary_path}
    if args.plot:
        from src.analysis.plots import plot_timing, save_figure

        outputs["plot"] = save_figure(plot_timing(comparison), args.plot)
        _saved(outputs["plot"])
    _saved(_manifest(args, {}, outputs, seed=args.seed).finish().write(out))
    return 0


def cmd_bench_scaling(args: argparse.Namespace) -> int:
    _require(args, "out")
    cfg = _bench_config(args)
    base = RingConfig(mu=args.mu, sigma=args.sigma, dt_sample=args.dt, seed=args.seed, coupling=args.coupling)
    reports = bench_mod.bench_scaling(
        args.sizes, rbf_per_osc=args.rbf_per_osc, samples_per_size=args.samples, base=base, lam=args.lam, cfg=cfg
    )
    out = bench_mod.write_bench_csv(reports, args.out)
    _saved(out)
    summary_path = bench_mod.write_summary_json(
        bench_mod.scaling_summary(reports, cfg), args.summary or Path(args.out).with_suffix(".json")
    )
    _saved(summary_path)
    table = bench_mod.scaling_table(reports, cfg.warmup_steps)
    print(table.to_string(index=False))
    outputs = {"timings": out, "summary": summary_path}
    if args.plot and reports:
        from src.analysis.plots import plot_scaling, save_figure

        outputs["plot"] = save_figure(plot_scaling(table), args.plot)
        _saved(outputs["plot"])
    _saved(_manifest(args, {}, outputs, seed=args.seed).finish().write(out))
    return 0


# --- select-lambda ---
def cmd_select_lambda(args: argparse.Namespace) -> int:
    _require(args, "input", "out")
    grid = list(args.grid or [])
    if not grid or min(grid) <= 0:
        raise ConfigurationError(f"--grid needs values > 0, got {grid}")
    traj = read_trajectory(CsvStreamConfig(path=args.input, columns=tuple(args.columns or ())))
    spec = _dictionary_spec(args)
    dictionary = build_dictionary(spec, traj[: spec.warmup])
    selection = select_lambda(dictionary, pairs_from_trajectory(traj), grid, split=args.split,
                              refresh_period=args.refresh_period)
    out = write_frame(selection.table, args.out)
    _saved(out)
    print(selection.table.to_string(index=False))
    print(f"   best lambda = {selection.best_lam:g}")
    _saved(_manifest(args, {"input": Path(args.input)}, {"table": out}).finish().write(out))
    return 0


# --- parser ---
def _add_dictionary_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("dictionary")
    g.add_argument("--rbf", type=int, default=40, help="number of Gaussian RBF observables")
    g.add_argument("--bandwidth", type=float, default=None, help="RBF width (default: median center distance)")
    g.add_argument("--no-identity", action="store_true", help="drop the state coordinates from the dictionary")
    g.add_argument("--no-constant", action="store_true", help="drop the constant observable")
    g.add_argument("--warmup", type=int, default=100, help="states used to place the RBF centers")
    g.add_argument("--dict-seed", type=int, default=0, help="k-means seed")


def _add_vdp_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mu", type=float, default=0.8)
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--dt", type=float, default=0.01, help="sampling interval in seconds")
    p.add_argument("--seed", type=int, default=0)


def _add_bench_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--no-pin", action="store_true", help="leave BLAS threading alone")
    p.add_argument("--memory-cap-gib", type=float, default=2.0)
    p.add_argument("--out", default=None, help="timing CSV (step,method,K,nanos)")
    p.add_argument("--summary", default=None, help="JSON summary (default: next to --out)")
    p.add_argument("--plot", default=None, help="PNG figure")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rr-edmd", description="Streaming robust Koopman operator learning")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    parser.add_argument("--config", default=None, help="JSON config or run manifest")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a trajectory CSV")
    p.add_argument("--system", choices=["vdp", "ring", "linear"], default="vdp")
    _add_vdp_flags(p)
    p.add_argument("--substeps", type=int, default=10)
    p.add_argument("--samples", type=int, default=2001)
    p.add_argument("--x0", type=float, nargs="+", default=None)
    p.add_argument("--form", choices=["standard", "literal"], default="standard")
    p.add_argument("--n-osc", type=int, default=10)
    p.add_argument("--coupling", type=float, default=1.0)
    p.add_argument("--a-sys", default=None, help="CSV matrix (no header) for --system linear")
    p.add_argument("--theta", type=float, default=0.1, help="rotation angle of the default linear system")
    p.add_argument("--radius", type=float, default=1.0, help="scale of the default linear system")
    p.add_argument("--noise-sigma", type=float, default=0.0, help="process noise of the linear system")
    p.add_argument("--measurement-sigma", type=float, default=0.0)
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_simulate, subparser=p)

    p = sub.add_parser("learn", help="learn an operator from a trajectory CSV")
    p.add_argument("--input", default=None)
    p.add_argument("--columns", nargs="*", default=None)
    _add_dictionary_flags(p)
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="ridge weight (taken from the checkpoint on --resume)")
    p.add_argument("--refresh-period", type=int, default=1000)
    p.add_argument("--init-batch", type=int, default=0, help="seed the model from the first q pairs")
    p.add_argument("--spectrum-every", type=int, default=0)
    p.add_argument("--spectrum-prefix", default=None)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--realtime", action="store_true")
    p.add_argument("--sample-rate", type=float, default=None)
    p.add_argument("--max-skip-fraction", type=float, default=0.10)
    p.add_argument("--operator-csv", default=None)
    p.add_argument("--plot", default=None, help="stability monitor PNG (needs --spectrum-every)")
    p.add_argument("--out", default=None, help="checkpoint file")
    p.set_defaults(handler=cmd_learn, subparser=p)

    p = sub.add_parser("spectrum", help="eigenvalues and eigenfunctions of a learned operator")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--tolerance", type=float, default=0.0)
    p.add_argument("--which", default="1+0j", help="eigenvalue target for the eigenfunction")
    p.add_argument("--index", type=int, default=None, help="eigenvalue index (overrides --which)")
    p.add_argument("--grid", type=float, nargs=4, default=None, metavar=("X1MIN", "X1MAX", "X2MIN", "X2MAX"))
    p.add_argument("--resolution", type=int, nargs=2, default=[121, 141])
    p.add_argument("--coords", type=int, nargs=2, default=[0, 1])
    p.add_argument("--base-state", type=float, nargs="+", default=None)
    p.add_argument("--field-out", default=None)
    p.add_argument("--reference-mu", type=float, default=None, help="overlay the Van der Pol limit cycle")
    p.add_argument("--plot", default=None)
    p.set_defaults(handler=cmd_spectrum, subparser=p)

    p = sub.add_parser("predict", help="roll a learned operator forward")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--x0", type=float, nargs="+", default=None)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--mode", choices=["lifted_rollout", "relift_each_step"], default="lifted_rollout")
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_predict, subparser=p)

    p = sub.add_parser("bench", help="timing benchmarks")
    bench_sub = p.add_subparsers(dest="bench_command", required=True)
    q = bench_sub.add_parser("compare", help="recursive update vs full recomputation")
    q.add_argument("--samples", type=int, default=2000)
    _add_dictionary_flags(q)
    _add_vdp_flags(q)
    q.add_argument("--lambda", dest="lam", type=float, default=0.1)
    _add_bench_flags(q)
    q.set_defaults(handler=cmd_bench_compare, subparser=q)
    q = bench_sub.add_parser("scaling", help="update cost against dictionary size")
    q.add_argument("--sizes", type=int, nargs="*", default=[10, 20, 40])
    q.add_argument("--rbf-per-osc", type=int, default=15)
    q.add_argument("--samples", type=int, default=1000)
    _add_vdp_flags(q)
    q.add_argument("--coupling", type=float, default=1.0)
    q.add_argument("--lambda", dest="lam", type=float, default=1.0)
    _add_bench_flags(q)
    q.set_defaults(handler=cmd_bench_scaling, subparser=q)

    p = sub.add_parser("select-lambda", help="pick lambda by validation error")
    p.add_argument("--input", default=None)
    p.add_argument("--columns", nargs="*", default=None)
    _add_dictionary_flags(p)
    p.add_argument("--grid", type=float, nargs="+", default=None)
    p.add_argument("--split", type=float, default=0.7)
    p.add_argument("--refresh-period", type=int, default=1000)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_select_lambda, subparser=p)
    return parser


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse flags; values from ``--config`` sit between defaults and flags."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = load_config(args.config)
        if "lambda" in values:
            values.setdefault("lam", values.pop("lambda"))
        known = {action.dest for action in args.subparser._actions}
        accepted = {key: value for key, value in values.items() if key in known and key not in INTERNAL_KEYS}
        ignored = sorted(set(values) - set(accepted))
        if ignored:
            log.debug("Config keys ignored for %s: %s", args.command, ignored)
        args.subparser.set_defaults(**accepted)
        args = parser.parse_args(argv)
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except KoopmanError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return exc.exit_code
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except KoopmanError as exc:
        log.debug("Failed", exc_info=True)
        print(f"❌ {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
