"""Command-line interface: ``bnmtf fit | predict | experiment <kind>``.

Settings come from flags, then an optional JSON config file (``--config``),
then built-in defaults. Exit codes: 0 success, 1 user error, 2 internal error.
Wall-clock times go to separate timing files so that every other output is
byte-identical across reruns and ``--threads`` values.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, dataio
from .experiments import (
    ENGINES,
    EXPERIMENTS,
    MODELS,
    Budget,
    ExperimentConfig,
    SyntheticSpec,
    convergence_experiment,
    fit_engine,
    model_selection_sweep,
    nested_cross_validation,
    noise_test,
    sparsity_test,
)
from .initialise import STRATEGIES
from .masked import mse
from .state import HyperParams, predict

OUTPUT_ENV = "BNMTF_OUTPUT_DIR"

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for internal errors here.
    def error(self, message):
        raise UserError(f"{self.prog}: {message}")


# Defaults for options that may also come from the config file.
DEFAULTS = {
    "model": "nmf",
    "engine": "vb",
    "ard": False,
    "k": None,
    "l": None,
    "lambda_": 0.1,
    "alpha_tau": 1.0,
    "beta_tau": 1.0,
    "alpha0": 1.0,
    "beta0": 1.0,
    "init": "random_draw",
    "iterations": None,
    "burn_in": None,
    "thin": 2,
    "seed": 0,
    "threads": 1,
    "missing_token": "",
    "header": False,
    "undo_log": False,
    "cap": None,
    "min_row_observed": None,
    "format": "csv",
    # experiment-only
    "engines": None,
    "ard_mode": None,
    "repeats": 20,
    "splits": 10,
    "folds": 10,
    "inner_folds": 10,
    "test_fraction": 0.1,
    "nsr_levels": "0,0.1,0.2,0.5,1.0",
    "fractions": "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
    "k_grid": "1..10",
    "k_values": "1..10",
    "size": "100,80",
    "true_k": None,
    "true_l": None,
    "np_iterations": 1000,
    "gibbs_iterations": 1000,
    "icm_iterations": 1000,
    "vb_iterations": 500,
}

ENGINE_ITERATIONS = {"np": 1000, "gibbs": 1000, "icm": 1000, "vb": 500}


def int_list(text: str) -> list[int]:
    """``"1..5"`` or ``"2,4,8"`` (or a mix, ``"1..3,8"``)."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise UserError(f"empty range {part!r}")
            out.extend(range(lo, hi + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise UserError(f"no integers in {text!r}")
    return out


def float_list(text: str) -> list[float]:
    try:
        return [float(p) for p in str(text).split(",") if p.strip()]
    except ValueError:
        raise UserError(f"cannot parse number list {text!r}") from None


# --------------------------------------------------------------------------- #
# Parser
# --------------------------------------------------------------------------- #

def _common(p):
    p.add_argument("--config", help="JSON file of option defaults (flags take precedence)")
    p.add_argument("--model", choices=MODELS, default=None, help="nmf (U V^T) or nmtf (F S G^T); default nmf")
    p.add_argument("--k", type=int, default=None, help="number of factors K")
    p.add_argument("--l", type=int, default=None, help="number of column factors L (nmtf only; default K)")
    p.add_argument("--lambda", dest="lambda_", type=float, default=None, help="exponential prior rate (default 0.1)")
    p.add_argument("--alpha-tau", type=float, default=None, help="noise precision prior shape (default 1)")
    p.add_argument("--beta-tau", type=float, default=None, help="noise precision prior rate (default 1)")
    p.add_argument("--alpha0", type=float, default=None, help="ARD prior shape (default 1)")
    p.add_argument("--beta0", type=float, default=None, help="ARD prior rate (default 1)")
    p.add_argument("--init", choices=STRATEGIES, default=None, help="initialisation (default random_draw)")
    p.add_argument("--burn-in", type=int, default=None, help="Gibbs/ICM burn-in (default half the iterations)")
    p.add_argument("--thin", type=int, default=None, help="Gibbs/ICM thinning (default 2)")
    p.add_argument("--seed", type=int, default=None, help="master random seed (default 0)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for independent runs (results do not depend on it; default 1)")
    p.add_argument("--output-dir", default=None, help=f"output directory (default ${OUTPUT_ENV} or .)")


def _input_opts(p, required):
    p.add_argument("--input", required=required, help="CSV matrix; cells equal to --missing-token are unobserved")
    p.add_argument("--missing-token", default=None, help='token for unobserved cells (default "")')
    p.add_argument("--header", action="store_true", default=None, help="skip the first CSV line")
    p.add_argument("--undo-log", action="store_true", default=None, help="exponentiate observed values")
    p.add_argument("--cap", type=float, default=None, help="cap observed values at this level")
    p.add_argument("--min-row-observed", type=int, default=None,
                   help="drop rows with fewer observed cells than this")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bnmtf", description="Bayesian nonnegative matrix (tri-)factorisation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fit = sub.add_parser("fit", help="fit one model to a CSV matrix")
    _common(fit)
    _input_opts(fit, required=True)
    fit.add_argument("--engine", choices=ENGINES, default=None, help="inference engine (default vb)")
    fit.add_argument("--ard", action="store_true", default=None, help="use ARD priors (not with --engine np)")
    fit.add_argument("--iterations", type=int, default=None,
                     help="iteration budget (default: np 1000, gibbs 1000, icm 1000, vb 500)")

    pred = sub.add_parser("predict", help="dense prediction from a saved state")
    pred.add_argument("--state", required=True, help="state JSON written by fit")
    pred.add_argument("--output", required=True, help="prediction CSV to write")
    pred.add_argument("--input", help="CSV whose shape the state must match")
    pred.add_argument("--truth", help="full CSV; test MSE is computed on cells unobserved in --input")
    pred.add_argument("--missing-token", default="", help='token for unobserved cells (default "")')
    pred.add_argument("--header", action="store_true", help="skip the first CSV line")
    pred.add_argument("--summary", help="summary JSON path (default: next to --output)")

    exp = sub.add_parser("experiment", help="run an experiment protocol")
    exp.add_argument("kind", choices=EXPERIMENTS)
    _common(exp)
    _input_opts(exp, required=False)
    exp.add_argument("--engines", default=None,
                     help="comma-separated engines (default all four; gibbs,vb,icm for model-select)")
    exp.add_argument("--ard", dest="ard_mode", choices=("off", "on", "both"), default=None,
                     help="ARD setting; 'both' only for model-select (default off, both for model-select)")
    exp.add_argument("--format", choices=("csv", "json"), default=None, help="results format (default csv)")
    exp.add_argument("--repeats", type=int, default=None, help="convergence repeats (default 20)")
    exp.add_argument("--splits", type=int, default=None, help="random splits for noise/sparsity (default 10)")
    exp.add_argument("--folds", type=int, default=None, help="cross-validation folds (default 10)")
    exp.add_argument("--inner-folds", type=int, default=None, help="inner folds of nested CV (default 10)")
    exp.add_argument("--test-fraction", type=float, default=None, help="held-out fraction in the noise test")
    exp.add_argument("--nsr-levels", default=None, help="noise-to-signal ratios (default 0,0.1,0.2,0.5,1.0)")
    exp.add_argument("--fractions", default=None, help="missing fractions (default 0.1,...,0.9)")
    exp.add_argument("--k-grid", default=None, help="nested CV grid for K, e.g. 1..10")
    exp.add_argument("--k-values", default=None, help="model-select K values, e.g. 1..10")
    exp.add_argument("--size", default=None, help="synthetic I,J (default 100,80)")
    exp.add_argument("--true-k", type=int, default=None, help="synthetic K (default 10 nmf, 5 nmtf)")
    exp.add_argument("--true-l", type=int, default=None, help="synthetic L (nmtf; default 5)")
    for e in ENGINES:
        exp.add_argument(f"--{e}-iterations", type=int, default=None,
                         help=f"{e} iteration budget (default {ENGINE_ITERATIONS[e]})")
    return parser


# --------------------------------------------------------------------------- #
# Option resolution
# --------------------------------------------------------------------------- #

def resolve(args: argparse.Namespace) -> dict:
    """Merge flags over the config file over DEFAULTS."""
    config = {}
    if getattr(args, "config", None):
        try:
            config = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise UserError(f"cannot read config file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UserError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(config, dict):
            raise UserError("config file must hold a JSON object")
        unknown = sorted(set(config) - set(DEFAULTS))
        if unknown:
            raise UserError(f"unknown config keys: {', '.join(unknown)}")
    out = {}
    for key, default in DEFAULTS.items():
        flag = getattr(args, key, None)
        out[key] = flag if flag is not None else config.get(key, default)
    for key in ("input", "output_dir", "kind"):
        out[key] = getattr(args, key, None)
    if out["output_dir"] is None:
        out["output_dir"] = os.environ.get(OUTPUT_ENV, ".")
    return out


def _hyper(o, K, L, ard) -> HyperParams:
    return HyperParams(K=K, L=L, lambda_=o["lambda_"], alpha_tau=o["alpha_tau"], beta_tau=o["beta_tau"],
                       alpha0=o["alpha0"], beta0=o["beta0"], ard=ard)


def _hyper_overrides(o) -> dict:
    return {k: o[k] for k in ("lambda_", "alpha_tau", "beta_tau", "alpha0", "beta0")}


def _load_input(o):
    data = dataio.load_csv(o["input"], o["missing_token"], bool(o["header"]))
    if o["undo_log"] or o["cap"] is not None or o["min_row_observed"] is not None:
        spec = dataio.PreprocessSpec(bool(o["undo_log"]), o["cap"], o["min_row_observed"])
        data = dataio.preprocess(data, spec)
    return data


def _out_dir(o) -> Path:
    path = Path(o["output_dir"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def _dump(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# --------------------------------------------------------------------------- #
# Commands
# --------------------------------------------------------------------------- #

def cmd_fit(o: dict) -> int:
    model, engine, ard = o["model"], o["engine"], bool(o["ard"])
    if engine == "np" and ard:
        raise UserError("--ard cannot be used with --engine np (ARD is a prior; NP has none)")
    if o["l"] is not None and model != "nmtf":
        raise UserError("--l only applies to --model nmtf")
    data = _load_input(o)
    K = o["k"] if o["k"] is not None else 10
    L = (o["l"] if o["l"] is not None else K) if model == "nmtf" else None
    iters = o["iterations"] if o["iterations"] is not None else ENGINE_ITERATIONS[engine]
    budget = Budget(np_iterations=iters, gibbs_iterations=iters, icm_iterations=iters,
                    vb_iterations=iters, burn_in=o["burn_in"], thin=o["thin"])
    fit = fit_engine(engine, model, data, _hyper(o, K, L, ard), budget, o["seed"], o["init"])
    out = _out_dir(o)
    state = fit.raw if engine == "vb" else fit.state
    dataio.save_state(out / "state.json", state)
    dataio.write_trace(out / "trace.csv", fit.trace)
    # For Gibbs this is the posterior mean of U V^T, not the product of the saved means.
    dataio.write_matrix(out / "prediction.csv", fit.prediction)
    _dump(out / "summary.json", {
        "model": model, "engine": engine, "ard": ard, "K": K, "L": L, "seed": o["seed"],
        "iterations": fit.iterations, "train_mse": mse(data, fit.prediction),
        "shape": list(data.shape), "observed": data.n_observed,
    })
    _dump(out / "timings.json", {"seconds": fit.seconds})
    print(f"{engine} {model}: train MSE {mse(data, fit.prediction):.6g} after {fit.iterations} iterations")
    return EXIT_OK


def cmd_predict(args) -> int:
    try:
        state = dataio.load_state(args.state)
    except FileNotFoundError:
        raise UserError(f"state file not found: {args.state}") from None
    prediction = predict(state)
    summary = {"shape": list(prediction.shape)}
    if args.input:
        data = dataio.load_csv(args.input, args.missing_token, args.header)
        if data.shape != prediction.shape:
            raise UserError(f"state predicts {prediction.shape} but input is {data.shape}")
        summary["train_mse"] = mse(data, prediction)
    if args.truth:
        truth = dataio.load_csv(args.truth, args.missing_token, args.header)
        if truth.shape != prediction.shape:
            raise UserError(f"state predicts {prediction.shape} but truth is {truth.shape}")
        held_out = truth.mask.copy()
        if args.input:
            held_out &= ~data.mask
        if not held_out.any():
            raise UserError("truth has no cells outside the observed input")
        summary["test_mse"] = mse(truth.with_mask(held_out), prediction)
        summary["test_cells"] = int(held_out.sum())
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    dataio.write_matrix(args.output, prediction)
    summary_path = args.summary or str(Path(args.output).with_suffix("")) + ".summary.json"
    _dump(summary_path, summary)
    return EXIT_OK


def _experiment_config(o) -> tuple[ExperimentConfig, tuple]:
    kind, model = o["kind"], o["model"]
    mode = o["ard_mode"] or ("both" if kind == "model-select" else "off")
    if mode == "both" and kind != "model-select":
        raise UserError("--ard both is only available for model-select")
    if o["engines"] is not None:
        engines = tuple(e.strip() for e in o["engines"].split(",") if e.strip())
    elif kind == "model-select":
        engines = ("gibbs", "vb", "icm")
    else:
        engines = ENGINES if mode == "off" else ("gibbs", "icm", "vb")
    ard_modes = {"off": (False,), "on": (True,), "both": (False, True)}[mode]
    if "np" in engines and any(ard_modes):
        raise UserError("the np engine cannot be combined with ARD")
    try:
        I, J = (int(x) for x in o["size"].split(","))
    except ValueError:
        raise UserError(f"--size must be I,J, got {o['size']!r}") from None
    spec_kw = {"I": I, "J": J, "seed": o["seed"]}
    if o["true_k"] is not None:
        spec_kw["K"] = o["true_k"]
    if o["true_l"] is not None:
        spec_kw["L"] = o["true_l"]
    budget = Budget(np_iterations=o["np_iterations"], gibbs_iterations=o["gibbs_iterations"],
                    icm_iterations=o["icm_iterations"], vb_iterations=o["vb_iterations"],
                    burn_in=o["burn_in"], thin=o["thin"])
    config = ExperimentConfig(
        model=model, engines=engines, ard=(mode == "on"), K=o["k"], L=o["l"],
        hyper=_hyper_overrides(o), init=o["init"], budget=budget, seed=o["seed"],
        threads=o["threads"], synthetic=SyntheticSpec.for_model(model, **spec_kw),
        data=_load_input(o) if o["input"] else None,
        repeats=o["repeats"], splits=o["splits"], test_fraction=o["test_fraction"],
        nsr_levels=tuple(float_list(o["nsr_levels"])), fractions=tuple(float_list(o["fractions"])),
        folds=o["folds"], inner_folds=o["inner_folds"],
    )
    return config, ard_modes


def cmd_experiment(o: dict) -> int:
    kind = o["kind"]
    if kind == "noise" and o["input"]:
        raise UserError("the noise test runs on synthetic data; --input is not accepted")
    config, ard_modes = _experiment_config(o)
    if kind == "convergence":
        result = convergence_experiment(config)
    elif kind == "noise":
        result = noise_test(config)
    elif kind == "sparsity":
        result = sparsity_test(config)
    elif kind == "cv":
        result = nested_cross_validation(config, int_list(o["k_grid"]))
    else:
        result = model_selection_sweep(replace(config, ard=False), int_list(o["k_values"]), ard_modes)
    out = _out_dir(o)
    fmt = o["format"]
    dataio.write_results(out / f"results.{fmt}", result, fmt)
    dataio.write_timings(out / "timings.csv", result)
    if result.traces:
        dataio.write_experiment_traces(out / "traces.csv", result)
        dataio.write_experiment_traces(out / "trace_timings.csv", result, seconds=True)
    print(f"{kind}: {len(result.rows)} rows written to {out / f'results.{fmt}'}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "predict":
            return cmd_predict(args)
        o = resolve(args)
        if args.command == "fit":
            return cmd_fit(o)
        return cmd_experiment(o)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # pragma: no cover - last-resort guard
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
