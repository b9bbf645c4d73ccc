"""Command line interface for dynamic principal components."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from .core import SeriesPanel, SolverConfig, explained_variance, panel_mse, select_structure, total_variance
from .errors import ConfigError, DegenerateFitError, DpcError, InputError
from .persistence import ModelFile, file_digest, load_model, read_panel, save_model, write_panel, write_plot_data, write_results
from .robust import MScaleSpec, RobustOptions, fit_s, srs_of_residuals
from .simulation import McConfig, contaminate, generate_factor_panel, generate_panel, render_table, run_study
from .solver import fit, reconstruct

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_NOT_CONVERGED = 4
THREADS_ENV = "DPCA_THREADS"


def _configure_logging(args: argparse.Namespace) -> None:
    level = args.log_level or ("DEBUG" if args.verbose else "WARNING")
    logging.basicConfig(
        level=getattr(logging, level),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        stream=sys.stderr,
    )


def resolve_threads(flag: int | None) -> int:
    """Thread count from --threads, else DPCA_THREADS, else 1."""
    if flag is not None:
        value = flag
    else:
        raw = os.environ.get(THREADS_ENV)
        if raw is None or raw.strip() == "":
            return 1
        try:
            value = int(raw)
        except ValueError as e:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got '{raw}'") from e
    if value < 1:
        raise ConfigError(f"thread count must be at least 1, got {value}")
    return value


def _summary(payload: dict) -> None:
    """Emit the machine-readable summary as the last stdout line."""
    print(json.dumps(payload, sort_keys=True))


def _created(args: argparse.Namespace) -> str | None:
    return datetime.now(timezone.utc).isoformat() if args.timestamp else None


def _solver_config(args: argparse.Namespace) -> SolverConfig:
    return SolverConfig(k=args.k, p=args.p, epsilon=args.epsilon, max_iter=args.max_iter, init=args.init, seed=args.seed)


def _component_report(panel: SeriesPanel, model) -> tuple[list[float], list[float]]:
    """Per-component EV on its input panel and cumulative EV on the original panel."""
    total = total_variance(panel)
    if total == 0:
        raise DegenerateFitError("panel is constant: total variance is zero")
    inputs = (panel,) + model.residual_panels[:-1]
    ev = [explained_variance(source, component) for source, component in zip(inputs, model.components)]
    cumulative = [100.0 * (1.0 - panel_mse(residual.values) / total) for residual in model.residual_panels]
    return ev, cumulative


def _convergence_exit(model, strict: bool) -> int:
    stalled = [i + 1 for i, c in enumerate(model.components) if not c.convergence.converged]
    if stalled:
        logger.warning(f"Components {stalled} stopped at the iteration cap before converging")
        if strict:
            print(f"Error: components {stalled} did not converge", file=sys.stderr)
            return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_fit(args: argparse.Namespace) -> int:
    panel = read_panel(args.input)
    config = _solver_config(args)
    model = fit(panel, config)
    ev, cumulative = _component_report(panel, model)
    final_mse = panel_mse(model.residual_panels[-1].values)

    if args.out:
        save_model(ModelFile.from_model(model, config, file_digest(args.input), _created(args)), args.out)
    for i, component in enumerate(model.components):
        status = "converged" if component.convergence.converged else "not converged"
        print(
            f"Component {i + 1}: k={component.k} EV={ev[i]:.4f}% cumulative EV={cumulative[i]:.4f}% "
            f"({component.convergence.iterations} iterations, {status})"
        )
    print(f"MSE after {model.p} component(s): {final_mse:.10g}")
    _summary(
        {
            "command": "fit",
            "T": panel.T,
            "m": panel.m,
            "k": config.k,
            "p": config.p,
            "mse": final_mse,
            "ev": ev,
            "cumulative_ev": cumulative,
            "iterations": [c.convergence.iterations for c in model.components],
            "converged": [c.convergence.converged for c in model.components],
            "out": str(args.out) if args.out else None,
        }
    )
    return _convergence_exit(model, args.strict)


def _cmd_robust_fit(args: argparse.Namespace) -> int:
    panel = read_panel(args.input)
    config = _solver_config(args)
    spec = MScaleSpec(family=args.family, c=args.tukey_c, b=args.b)
    options = RobustOptions(weight_window=args.weight_window, init_rounds=args.init_rounds)
    model = fit_s(panel, config, spec, options)
    ev, cumulative = _component_report(panel, model)
    residual = model.residual_panels[-1].values
    final_mse = panel_mse(residual)
    final_srs = srs_of_residuals(residual, spec)

    if args.out:
        save_model(ModelFile.from_model(model, config, file_digest(args.input), _created(args)), args.out)
    for i, component in enumerate(model.components):
        print(
            f"Component {i + 1}: k={component.k} SRS={component.convergence.criterion:.10g} "
            f"EV={ev[i]:.4f}% ({component.convergence.iterations} iterations)"
        )
    print(f"SRS after {model.p} component(s): {final_srs:.10g}  MSE: {final_mse:.10g}")
    _summary(
        {
            "command": "robust-fit",
            "T": panel.T,
            "m": panel.m,
            "k": config.k,
            "p": config.p,
            "srs": final_srs,
            "mse": final_mse,
            "ev": ev,
            "cumulative_ev": cumulative,
            "mscale": spec.to_dict(),
            "iterations": [c.convergence.iterations for c in model.components],
            "converged": [c.convergence.converged for c in model.components],
            "out": str(args.out) if args.out else None,
        }
    )
    return _convergence_exit(model, args.strict)


def _cmd_reconstruct(args: argparse.Namespace) -> int:
    model_file = load_model(args.model)
    panel = read_panel(args.input)
    model = model_file.to_model(panel)
    upto_p = args.upto_p if args.upto_p is not None else model.p
    if not 1 <= upto_p <= model.p:
        raise InputError(f"--upto-p must lie in 1..{model.p}, got {upto_p}")

    fitted = reconstruct(model, upto_p)
    residual = model.residual_panels[upto_p - 1]
    mse_value = panel_mse(residual.values)
    total = total_variance(panel)
    ev = 100.0 * (1.0 - mse_value / total) if total > 0 else float("nan")

    if args.out:
        write_panel(fitted, args.out)
    if args.residuals:
        write_panel(residual, args.residuals)
    if args.plotdata:
        write_plot_data(panel, fitted, args.plotdata)
    print(f"Reconstruction with {upto_p} component(s): MSE={mse_value:.10g} EV={ev:.4f}%")
    payload = {"command": "reconstruct", "upto_p": upto_p, "mse": mse_value, "ev": ev}
    if model.robust:
        payload["srs"] = srs_of_residuals(residual.values, model.mscale)
    _summary(payload)
    return EXIT_OK


def _cmd_simulate(args: argparse.Namespace) -> int:
    if args.model == "s4":
        panel = generate_panel(args.T, args.seed)
    elif args.model == "factor":
        panel = generate_factor_panel(args.T, args.m, args.lags, args.noise, args.seed)
    else:
        raise ConfigError(f"unknown model '{args.model}', expected 's4' or 'factor'")

    contaminated = 0
    if args.contaminate:
        prob, shift = args.contaminate
        panel, mask = contaminate(panel, prob, shift, args.seed)
        contaminated = int(mask.sum())
        if args.mask:
            Path(args.mask).parent.mkdir(parents=True, exist_ok=True)
            pd.DataFrame(mask.astype(int), columns=list(panel.labels)).to_csv(args.mask, index=False, lineterminator="\n")

    write_panel(panel, args.out)
    print(f"Simulated {panel.T}x{panel.m} panel ({args.model}, seed {args.seed}) written to {args.out}")
    _summary(
        {
            "command": "simulate",
            "model": args.model,
            "T": panel.T,
            "m": panel.m,
            "seed": args.seed,
            "contaminated": contaminated,
            "out": str(args.out),
        }
    )
    return EXIT_OK


def _cmd_benchmark(args: argparse.Namespace) -> int:
    data = {}
    if args.config:
        try:
            with open(args.config) as f:
                data = json.load(f)
        except FileNotFoundError as e:
            raise InputError(f"study config '{args.config}' not found") from e
        except json.JSONDecodeError as e:
            raise InputError(f"{args.config}: not valid JSON: {e}") from e
    config = McConfig.from_dict(data)
    result = run_study(config, threads=resolve_threads(args.threads))
    paths = write_results(result, args.out)
    print(render_table(result.table))
    _summary(
        {
            "command": "benchmark",
            "T": config.T,
            "replications": config.replications,
            "failed": int(result.table["failed"].sum()),
            "results": {key: str(path) for key, path in paths.items()},
        }
    )
    return EXIT_OK


def _cmd_select(args: argparse.Namespace) -> int:
    panel = read_panel(args.input)
    config = SolverConfig(epsilon=args.epsilon, max_iter=args.max_iter, init=args.init, seed=args.seed)
    spec = MScaleSpec(family=args.family, c=args.tukey_c, b=args.b)
    options = RobustOptions(weight_window=args.weight_window, init_rounds=args.init_rounds)
    selection = select_structure(
        panel,
        epsilon_lag=args.epsilon_lag,
        mse_target=args.target,
        caps=(args.k_max, args.p_max),
        config=config,
        criterion=args.criterion,
        spec=spec,
        options=options,
    )
    if args.out:
        chosen = SolverConfig(k=selection.k, p=selection.p, epsilon=args.epsilon, max_iter=args.max_iter, seed=args.seed)
        save_model(ModelFile.from_model(selection.model, chosen, file_digest(args.input), _created(args)), args.out)
    state = "reached" if selection.target_met else "not reached"
    print(
        f"Selected lags {list(selection.lags)} (k={selection.k}, p={selection.p}); "
        f"{selection.criterion}={selection.criterion_value:.10g}, target {args.target} {state}"
    )
    _summary(
        {
            "command": "select",
            "criterion": selection.criterion,
            "lags": list(selection.lags),
            "k": selection.k,
            "p": selection.p,
            "value": selection.criterion_value,
            "target_met": selection.target_met,
            "trace": [list(step) for step in selection.trace],
        }
    )
    return EXIT_OK


def _add_solver_args(parser: argparse.ArgumentParser, with_structure: bool = True) -> None:
    if with_structure:
        parser.add_argument("--k", type=int, default=0, help="Number of forward lags (default: 0)")
        parser.add_argument("--p", type=int, default=1, help="Number of components (default: 1)")
    parser.add_argument("--epsilon", type=float, default=1e-4, help="Relative improvement tolerance (default: 1e-4)")
    parser.add_argument("--max-iter", type=int, default=500, help="Iteration cap per component (default: 500)")
    parser.add_argument(
        "--init", choices=["classical-pc", "spherical-pc"], default="classical-pc", help="Starting factor"
    )
    parser.add_argument("--seed", type=int, default=0, help="Seed recorded in the model file")


def _add_robust_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--family", choices=["tukey-biweight", "square"], default="tukey-biweight")
    parser.add_argument("--tukey-c", type=float, default=5.13, help="Biweight cutoff (default: 5.13)")
    parser.add_argument("--b", type=float, default=0.1, help="M-scale target (default: 0.1)")
    parser.add_argument("--weight-window", choices=["full", "band"], default="full")
    parser.add_argument("--init-rounds", type=int, default=20, help="Reweighting rounds of the robust start")


def _add_output_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", type=Path, help="Model file to write")
    parser.add_argument("--timestamp", action="store_true", help="Record the creation time in the model file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpca",
        description="Dynamic principal components - fit, reconstruct and benchmark",
        epilog="Examples:\n"
        "  dpca simulate --model s4 --T 100 --seed 1 --out panel.csv\n"
        "  dpca fit panel.csv --k 5 --out model.json\n"
        "  dpca reconstruct model.json panel.csv --out recon.csv\n"
        "  dpca robust-fit panel.csv --k 1 --out robust.json\n"
        "  dpca benchmark --config study.json --out results/",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Log debug messages to stderr")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Override the log level")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="Fit MSE dynamic principal components")
    p_fit.add_argument("input", type=Path, help="Panel CSV with a header row")
    _add_solver_args(p_fit)
    _add_output_args(p_fit)
    p_fit.add_argument("--strict", action="store_true", help="Exit with status 4 if a component did not converge")
    p_fit.set_defaults(handler=_cmd_fit)

    p_robust = sub.add_parser("robust-fit", help="Fit S-estimator dynamic principal components")
    p_robust.add_argument("input", type=Path, help="Panel CSV with a header row")
    _add_solver_args(p_robust)
    _add_robust_args(p_robust)
    _add_output_args(p_robust)
    p_robust.add_argument("--strict", action="store_true", help="Exit with status 4 if a component did not converge")
    p_robust.set_defaults(handler=_cmd_robust_fit)

    p_recon = sub.add_parser("reconstruct", help="Reconstruct a panel from a model file")
    p_recon.add_argument("model", type=Path, help="Model JSON written by fit or robust-fit")
    p_recon.add_argument("input", type=Path, help="Panel CSV the model was fitted on")
    p_recon.add_argument("--upto-p", type=int, help="Use components 1..upto_p (default: all)")
    p_recon.add_argument("--out", type=Path, help="Reconstructed panel CSV")
    p_recon.add_argument("--residuals", type=Path, help="Residual panel CSV")
    p_recon.add_argument("--plotdata", type=Path, help="Directory for per-series plot data")
    p_recon.set_defaults(handler=_cmd_reconstruct)

    p_sim = sub.add_parser("simulate", help="Generate a simulated panel")
    p_sim.add_argument("--model", default="s4", help="'s4' (three shifted series) or 'factor'")
    p_sim.add_argument("--T", type=int, default=100, help="Number of observations (default: 100)")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--m", type=int, default=10, help="Series of the factor model")
    p_sim.add_argument("--lags", type=int, default=1, help="Factor leads of the factor model")
    p_sim.add_argument("--noise", type=float, default=0.5, help="Noise level of the factor model")
    p_sim.add_argument(
        "--contaminate", nargs=2, type=float, metavar=("PROB", "SHIFT"), help="Shift cells with probability PROB"
    )
    p_sim.add_argument("--mask", type=Path, help="CSV of contaminated cells (0/1)")
    p_sim.add_argument("--out", type=Path, required=True, help="Panel CSV to write")
    p_sim.set_defaults(handler=_cmd_simulate)

    p_bench = sub.add_parser("benchmark", help="Run a Monte Carlo comparison study")
    p_bench.add_argument("--config", type=Path, help="Study JSON (default: built-in study)")
    p_bench.add_argument("--out", type=Path, required=True, help="Directory for results")
    p_bench.add_argument("--threads", type=int, help=f"Worker threads (default: ${THREADS_ENV} or 1)")
    p_bench.set_defaults(handler=_cmd_benchmark)

    p_select = sub.add_parser("select", help="Choose lags and components greedily")
    p_select.add_argument("input", type=Path, help="Panel CSV with a header row")
    p_select.add_argument("--epsilon-lag", type=float, default=0.05, help="Minimum relative gain of one more lag")
    p_select.add_argument("--target", type=float, required=True, help="Criterion value regarded as satisfactory")
    p_select.add_argument("--k-max", type=int, default=10)
    p_select.add_argument("--p-max", type=int, default=5)
    p_select.add_argument("--criterion", choices=["mse", "srs"], default="mse")
    _add_solver_args(p_select, with_structure=False)
    _add_robust_args(p_select)
    _add_output_args(p_select)
    p_select.set_defaults(handler=_cmd_select)
    return parser


def app(argv: list[str] | None = None) -> None:
    """Main CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args)

    try:
        code = args.handler(args)
    except (InputError, ConfigError) as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_INPUT)
    except DpcError as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_NUMERIC)
    except np.linalg.LinAlgError as e:
        print(f"Error: numerical failure: {e}", file=sys.stderr)
        sys.exit(EXIT_NUMERIC)
    if code:
        sys.exit(code)


if __name__ == "__main__":  # pragma: no cover
    app()
