"""
Command-line entry point: ``pplasso {fit,simulate,cov-select}``.

Every option can also come from a flat ``key = value`` file passed with
``--config``; options given on the command line win.  Exit status is 0 on
success, 2 for invalid input and 3 when the numerics give no usable result.
"""

import argparse
import csv
import logging
import os
import sys

import numpy as np

from .covariance import (
    KINDS,
    EstimatorCandidate,
    cv_select,
    default_candidates,
    estimate,
    pooled_arm_centered,
    symmetric_roots,
)
from .fileio import (
    InputError,
    dump_json,
    read_config,
    read_matrix_csv,
    read_numeric_csv,
    read_trial_csv,
    standardize_columns,
    top_variance,
)
from .pipeline import PPLassoConfig, run_pplasso
from .simulation import EN_ALPHAS, METHODS, Scenario, run_scenario
from .solver import TrialData, adaptive_weights, build_design, cv_path

__all__ = ["main", "FIT_METHODS"]

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
FIT_METHODS = ("pplasso", "lasso", "elastic_net", "adaptive_lasso")

logger = logging.getLogger("pplasso")


class NumericalFailure(RuntimeError):
    pass


def _int(text):
    return int(str(text).strip())


def _float(text):
    return float(str(text).strip())


def _names(text):
    return [s.strip() for s in str(text).split(",") if s.strip()]


def _floats(text):
    return tuple(float(s) for s in _names(text))


# option name -> (converter, default); None default means required or unset
FIT_OPTIONS = {
    "response": (str, None),
    "treatment": (str, None),
    "top_variance": (_int, None),
    "seed": (_int, 0),
    "delta": (_float, 0.95),
    "lambda_grid": (_int, 100),
    "sigma": (str, "estimate"),
    "methods": (_names, ["pplasso"]),
    "folds": (_int, 5),
    "out": (str, None),
}

SIMULATE_OPTIONS = {
    "p": (_int, 200),
    "n1": (_int, 50),
    "n2": (_int, 50),
    "sigma": (str, "block_bm"),
    "a": (_floats, (0.3, 0.5, 0.7)),
    "rho": (_float, 0.5),
    "b1": (_float, 1.0),
    "b2": (_float, 2.0),
    "alpha1": (_float, 0.0),
    "alpha2": (_float, 1.0),
    "n_prognostic_only": (_int, 5),
    "n_prog_and_pred": (_int, 5),
    "replications": (_int, 100),
    "seed": (_int, 0),
    "methods": (_names, list(METHODS)),
    "tuning": (_names, ["bic", "optimal"]),
    "delta": (_float, 0.95),
    "lambda_grid": (_int, 100),
    "out": (str, None),
    "raw": (str, None),
}

COV_OPTIONS = {
    "candidates": (str, None),
    "exclude": (_names, []),
    "treatment": (str, None),
    "folds": (_int, 5),
    "seed": (_int, 0),
    "out": (str, None),
}

HELP = {
    "response": "response column name",
    "treatment": "treatment column name (values 1 and 2)",
    "top_variance": "keep only the N highest-variance biomarkers",
    "seed": "random seed",
    "delta": "threshold of the ratio rule choosing K and M",
    "lambda_grid": "number of lambda values on the path",
    "methods": "comma-separated method list",
    "folds": "cross-validation folds",
    "out": "output file",
    "raw": "also write per-replication metrics to this CSV",
    "tuning": "comma-separated tunings: bic, optimal",
    "candidates": "estimators as 'kind' or 'kind:key=value,...', separated by ';'",
    "exclude": "comma-separated columns to drop",
    "a": "block correlations a1,a2,a3",
}


def _add_options(parser, options, positional=None):
    if positional:
        parser.add_argument(positional, help="input CSV file")
    parser.add_argument("--config", help="flat key = value file with default options")
    for key, (_, default) in options.items():
        flag = "--" + key.replace("_", "-")
        help_text = HELP.get(key, "")
        if default is not None:
            help_text = f"{help_text} (default {default})".strip()
        parser.add_argument(flag, dest=key, default=None, help=help_text)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="pplasso",
        description="Prognostic and predictive biomarker selection with PPLasso.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fit = sub.add_parser("fit", help="fit PPLasso (and optional baselines) on a trial CSV")
    _add_options(fit, FIT_OPTIONS, "input")
    fit.set_defaults(handler=cmd_fit, options=FIT_OPTIONS)
    sim = sub.add_parser("simulate", help="run a simulation scenario and write a report CSV")
    _add_options(sim, SIMULATE_OPTIONS)
    sim.set_defaults(handler=cmd_simulate, options=SIMULATE_OPTIONS)
    cov = sub.add_parser("cov-select", help="rank correlation estimators by CV risk")
    _add_options(cov, COV_OPTIONS, "input")
    cov.set_defaults(handler=cmd_cov_select, options=COV_OPTIONS)
    # --sigma help differs by command
    for action in fit._actions:
        if action.dest == "sigma":
            action.help = "'estimate' or a CSV file holding the known correlation matrix"
    for action in sim._actions:
        if action.dest == "sigma":
            action.help = "correlation structure: block_bm, compound or identity"
    return parser


def resolve_options(args, options):
    """Merge defaults, the config file and command-line flags, then convert."""
    merged = {k: default for k, (_, default) in options.items()}
    raw = {}
    if args.config:
        raw.update(read_config(args.config, set(options)))
    raw.update({k: getattr(args, k) for k in options if getattr(args, k) is not None})
    for key, text in raw.items():
        convert = options[key][0]
        try:
            merged[key] = convert(text)
        except ValueError:
            raise InputError(f"invalid value {text!r} for {key}") from None
    return merged


def _require(opts, *keys):
    for key in keys:
        if opts[key] is None:
            raise InputError(f"missing required option --{key.replace('_', '-')}")


def _selected(names, values):
    return [names[j] for j in np.flatnonzero(values)]


def _named(names, values):
    return {names[j]: float(values[j]) for j in np.flatnonzero(values)}


def _fit_pplasso(data, opts):
    config = PPLassoConfig(delta=opts["delta"], lambda_grid_size=opts["lambda_grid"],
                           seed=opts["seed"], cv_folds=opts["folds"])
    names = data.biomarker_names
    risk_table = []
    if opts["sigma"] == "estimate":
        pooled = pooled_arm_centered(data.arm(1), data.arm(2))
        winner, table = cv_select(default_candidates(), pooled, folds=opts["folds"],
                                  seed=opts["seed"])
        cov = symmetric_roots(estimate(winner, pooled), config.floor_ratio, tag=winner.label)
        risk_table = [{"estimator": c.kind, "hyperparameters": dict(c.hyperparameters),
                       "risk": r} for c, r in table]
    else:
        _, sigma = read_matrix_csv(opts["sigma"], names)
        cov = symmetric_roots(sigma, config.floor_ratio, tag="supplied")
    result = run_pplasso(data, cov, config)
    if not any(row["converged"] for row in result.bic_table):
        raise NumericalFailure("no lambda on the path converged")
    st = result.stages
    return {
        "prognostic": [names[j] for j in result.prognostic],
        "predictive": [names[j] for j in result.predictive],
        "alpha": [float(a) for a in result.alpha_hat],
        "beta1": _named(names, result.beta1_hat),
        "beta2": _named(names, result.beta2_hat),
        "lambda": result.lambda_selected,
        "K1": st.K1, "K2": st.K2, "M1": st.M1, "M2": st.M2,
        "covariance": {"estimator": cov.estimator_tag, "risk_table": risk_table},
        "bic_table": result.bic_table,
    }


def _fit_baseline(method, data, opts):
    star = build_design(data, "star")
    y = data.response
    kwargs = {"grid_size": opts["lambda_grid"]}
    cv = {"groups": data.treatment, "folds": opts["folds"], "seed": opts["seed"]}
    extra = {}
    if method == "lasso":
        coef, lam, err = cv_path(star, y, **cv, **kwargs)
    elif method == "adaptive_lasso":
        coef, lam, err = cv_path(star, y, weights=adaptive_weights(star, y), **cv, **kwargs)
    else:
        best = None
        for alpha in EN_ALPHAS:
            c, lam_a, err_a = cv_path(star, y, alpha=float(alpha), **cv, **kwargs)
            if best is None or err_a.min() < best[2].min():
                best = (c, lam_a, err_a, float(alpha))
        coef, lam, err, extra["alpha_mix"] = best
    if not np.all(np.isfinite(coef)):
        raise NumericalFailure(f"{method} produced non-finite coefficients")
    p = data.p
    names = data.biomarker_names
    b1, diff = coef[2:p + 2], coef[p + 2:]
    return {
        "prognostic": _selected(names, b1),
        "predictive": _selected(names, diff),
        "alpha": [float(coef[0]), float(coef[1])],
        "beta1": _named(names, b1),
        "beta2": _named(names, b1 + diff),
        "lambda": lam,
        "cv_mse": float(err.min()),
        **extra,
    }


def cmd_fit(opts, args):
    _require(opts, "response", "treatment", "out")
    unknown = [m for m in opts["methods"] if m not in FIT_METHODS]
    if unknown:
        raise InputError(f"unknown method {unknown[0]!r}; expected one of {FIT_METHODS}")
    if not opts["methods"]:
        raise InputError("no method given")
    data = read_trial_csv(args.input, opts["response"], opts["treatment"])
    X, names = data.biomarkers, data.biomarker_names
    if opts["top_variance"] is not None:
        keep = top_variance(X, opts["top_variance"])
        X, names = X[:, keep], [names[j] for j in keep]
    data = TrialData(data.response, data.treatment, standardize_columns(X, names), names)
    try:
        PPLassoConfig(delta=opts["delta"], lambda_grid_size=opts["lambda_grid"])
    except ValueError as exc:
        raise InputError(str(exc)) from None
    results = {}
    for method in opts["methods"]:
        logger.info("fitting %s", method)
        if method == "pplasso":
            results[method] = _fit_pplasso(data, opts)
        else:
            results[method] = _fit_baseline(method, data, opts)
    doc = {
        "input": {"file": os.path.basename(args.input), "n": data.n, "n1": data.n1,
                  "n2": data.n2, "p": data.p, "top_variance": opts["top_variance"]},
        "settings": {k: opts[k] for k in ("seed", "delta", "lambda_grid", "sigma", "folds")},
        "methods": results,
    }
    dump_json(doc, opts["out"])
    return EXIT_OK


def cmd_simulate(opts, args):
    _require(opts, "out")
    try:
        scenario = Scenario(
            p=opts["p"], n1=opts["n1"], n2=opts["n2"], sigma_kind=opts["sigma"],
            a=opts["a"], rho=opts["rho"], b1=opts["b1"], b2=opts["b2"],
            alpha1=opts["alpha1"], alpha2=opts["alpha2"],
            n_prognostic_only=opts["n_prognostic_only"],
            n_prog_and_pred=opts["n_prog_and_pred"],
            replications=opts["replications"], seed=opts["seed"],
        )
        if len(scenario.a) != 3:
            raise ValueError("--a needs three values")
        scenario.sigma()
        config = PPLassoConfig(delta=opts["delta"], lambda_grid_size=opts["lambda_grid"],
                               seed=opts["seed"])
    except ValueError as exc:
        raise InputError(str(exc)) from None
    unknown = [m for m in opts["methods"] if m not in METHODS]
    if unknown:
        raise InputError(f"unknown method {unknown[0]!r}; expected one of {METHODS}")
    bad = [t for t in opts["tuning"] if t not in ("bic", "optimal")]
    if bad:
        raise InputError(f"unknown tuning {bad[0]!r}")
    report = run_scenario(scenario, opts["methods"], tuning=opts["tuning"], config=config,
                          grid_size=opts["lambda_grid"],
                          progress=lambda r: logger.info("replicate %d done", r))
    if report.failures == scenario.replications:
        raise NumericalFailure("every replication failed")
    report.to_csv(opts["out"])
    if opts["raw"]:
        report.raw_to_csv(opts["raw"])
    return EXIT_OK


def parse_candidates(text):
    """``"sample; poet:k=2,lambda=0.1"`` -> list of EstimatorCandidate."""
    out = []
    for item in str(text).split(";"):
        item = item.strip()
        if not item:
            continue
        kind, _, rest = item.partition(":")
        kind = kind.strip()
        if kind not in KINDS:
            raise InputError(f"unknown estimator {kind!r}; expected one of {KINDS}")
        hp = {}
        for pair in _names(rest):
            key, eq, value = pair.partition("=")
            if not eq:
                raise InputError(f"expected key=value in {pair!r}")
            try:
                number = float(value)
            except ValueError:
                raise InputError(f"non-numeric hyperparameter {pair!r}") from None
            hp[key.strip()] = int(number) if key.strip() == "k" else number
        try:
            out.append(EstimatorCandidate(kind, hp))
        except ValueError as exc:
            raise InputError(str(exc)) from None
    if not out:
        raise InputError("no candidate estimators given")
    return out


def cmd_cov_select(opts, args):
    _require(opts, "out")
    candidates = (parse_candidates(opts["candidates"]) if opts["candidates"]
                  else default_candidates())
    header, values, _ = read_numeric_csv(args.input)
    drop = set(opts["exclude"])
    for name in drop:
        if name not in header:
            raise InputError(f"no column named {name!r}")
    treatment = opts["treatment"]
    if treatment is not None and treatment not in header:
        raise InputError(f"no column named {treatment!r}")
    cols = [j for j, h in enumerate(header) if h not in drop and h != treatment]
    if not cols:
        raise InputError("no columns left to estimate from")
    X = values[:, cols]
    standardize_columns(X, [header[j] for j in cols])
    if treatment is not None:
        t = values[:, header.index(treatment)]
        if not np.isin(t, (1.0, 2.0)).all():
            raise InputError("treatment values must be 1 or 2")
        X = pooled_arm_centered(X[t == 1], X[t == 2])
    try:
        _, table = cv_select(candidates, X, folds=opts["folds"], seed=opts["seed"])
    except ValueError as exc:
        raise InputError(str(exc)) from None
    with open(opts["out"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "estimator", "hyperparameters", "risk"])
        for rank, (cand, risk) in enumerate(table, start=1):
            hp = ";".join(f"{k}={v}" for k, v in sorted(cand.hyperparameters.items()))
            w.writerow([rank, cand.kind, hp, repr(float(risk))])
    return EXIT_OK


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        opts = resolve_options(args, args.options)
        return args.handler(opts, args)
    except (NumericalFailure, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"pplasso {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"pplasso {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
