"""
Synthetic two-arm trials and the selection benchmark.

Scenarios follow the block correlation design: the active (prognostic)
biomarkers form one block with within-correlation a1, the remaining
biomarkers a second block with within-correlation a3, and a2 links the two.
"""

import csv
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .pipeline import PPLassoConfig, bic_select, pplasso_path
from .solver import TrialData, adaptive_weights, build_design, fit_path

__all__ = [
    "Scenario",
    "Metrics",
    "ScenarioReport",
    "gen_sigma",
    "gen_data",
    "check_ic",
    "compute_metrics",
    "METHODS",
    "method_selections",
    "run_scenario",
]

logger = logging.getLogger(__name__)

METHODS = ("pplasso_oracle", "pplasso_estimated", "lasso", "elastic_net", "adaptive_lasso")
EN_ALPHAS = tuple(np.round(np.arange(1, 10) / 10, 1))
METRIC_NAMES = ("tpr_prog", "fpr_prog", "tpr_pred", "fpr_pred", "tpr_all", "fpr_all")


@dataclass
class Scenario:
    p: int = 200
    n1: int = 50
    n2: int = 50
    sigma_kind: str = "block_bm"
    a: tuple = (0.3, 0.5, 0.7)
    rho: float = 0.5
    b1: float = 1.0
    b2: float = 2.0
    alpha1: float = 0.0
    alpha2: float = 1.0
    n_prognostic_only: int = 5
    n_prog_and_pred: int = 5
    replications: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.sigma_kind not in ("block_bm", "compound", "identity"):
            raise ValueError(f"unknown sigma_kind {self.sigma_kind!r}")
        if self.n_prognostic_only < 0 or self.n_prog_and_pred < 0:
            raise ValueError("active counts must be nonnegative")
        if self.n_active > self.p:
            raise ValueError(f"{self.n_active} active biomarkers but only p={self.p}")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.n1 < 2 or self.n2 < 2:
            raise ValueError("each arm needs at least 2 patients")
        self.a = tuple(float(v) for v in self.a)

    @property
    def n_active(self):
        return self.n_prognostic_only + self.n_prog_and_pred

    def sigma(self):
        return gen_sigma(self.sigma_kind, self.p, self.n_active, a=self.a, rho=self.rho)


@dataclass
class Metrics:
    tpr_prog: float
    fpr_prog: float
    tpr_pred: float
    fpr_pred: float
    tpr_all: float
    fpr_all: float

    def as_array(self):
        return np.array([getattr(self, k) for k in METRIC_NAMES])

    @property
    def score(self):
        """TPR_all - FPR_all, the quantity maximized by "optimal" tuning."""
        return self.tpr_all - self.fpr_all


def gen_sigma(kind, p, split=10, a=(0.3, 0.5, 0.7), rho=0.5):
    """Correlation matrix for a scenario; raises if it is not positive definite."""
    if kind == "identity":
        return np.eye(p)
    if kind == "compound":
        S = np.full((p, p), float(rho))
    elif kind == "block_bm":
        if not 0 <= split <= p:
            raise ValueError(f"split={split} outside 0..{p}")
        a1, a2, a3 = a
        S = np.full((p, p), float(a2))
        S[:split, :split] = a1
        S[split:, split:] = a3
    else:
        raise ValueError(f"unknown sigma kind {kind!r}")
    np.fill_diagonal(S, 1.0)
    if np.linalg.eigvalsh(S).min() <= 0:
        raise ValueError(f"{kind} correlation with these parameters is not positive definite")
    return S


def _truth(scenario):
    p = scenario.p
    beta1 = np.zeros(p)
    beta2 = np.zeros(p)
    k0, k1 = scenario.n_prognostic_only, scenario.n_active
    beta1[:k1] = scenario.b1
    beta2[:k0] = scenario.b1
    beta2[k0:k1] = scenario.b2
    return {"beta1": beta1, "beta2": beta2}


def _rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def gen_data(scenario, replicate_index, chol=None):
    """Draw one replicate; the stream depends only on (seed, replicate_index).

    Returns the trial data and the true coefficient vectors.
    """
    if chol is None:
        chol = np.linalg.cholesky(scenario.sigma())
    rng = _rng(scenario.seed, replicate_index)
    n1, n2, p = scenario.n1, scenario.n2, scenario.p
    X = rng.standard_normal((n1 + n2, p)) @ chol.T
    truth = _truth(scenario)
    eps = rng.standard_normal(n1 + n2)
    y = np.empty(n1 + n2)
    y[:n1] = scenario.alpha1 + X[:n1] @ truth["beta1"] + eps[:n1]
    y[n1:] = scenario.alpha2 + X[n1:] @ truth["beta2"] + eps[n1:]
    treatment = np.r_[np.ones(n1, dtype=int), np.full(n2, 2)]
    return TrialData(y, treatment, X), truth


def check_ic(sigma, support, signs=None):
    """Irrepresentable-condition quantity ||S_{cS} S_{SS}^{-1} sign(b_S)||_inf.

    Returns the quantity and whether it is below 1.
    """
    sigma = np.asarray(sigma, dtype=float)
    support = np.asarray(sorted(support), dtype=int)
    if signs is None:
        signs = np.ones(len(support))
    rest = np.setdiff1d(np.arange(sigma.shape[0]), support)
    S_ss = sigma[np.ix_(support, support)]
    if np.linalg.matrix_rank(S_ss) < len(support):
        raise np.linalg.LinAlgError("Sigma restricted to the support is singular")
    if rest.size == 0:
        return 0.0, True
    v = sigma[np.ix_(rest, support)] @ np.linalg.solve(S_ss, np.asarray(signs, dtype=float))
    q = float(np.max(np.abs(v)))
    return q, q < 1


def _rates(selected, true_set, p):
    selected = set(int(i) for i in selected)
    true_set = set(int(i) for i in true_set)
    n_inactive = p - len(true_set)
    tpr = len(selected & true_set) / len(true_set) if true_set else math.nan
    fpr = len(selected - true_set) / n_inactive if n_inactive else math.nan
    return tpr, fpr


def compute_metrics(selected_prog, selected_pred, truth):
    """TPR/FPR for prognostic, predictive and pooled selection (0-based indices).

    A rate whose denominator is empty is reported as NaN.
    """
    b1, b2 = truth["beta1"], truth["beta2"]
    p = len(b1)
    true_prog = np.flatnonzero(b1)
    true_pred = np.flatnonzero(b2 - b1)
    bad = [i for i in list(selected_prog) + list(selected_pred) if not 0 <= i < p]
    if bad:
        raise ValueError(f"selected index {bad[0]} outside 0..{p - 1}")
    tpr_prog, fpr_prog = _rates(selected_prog, true_prog, p)
    tpr_pred, fpr_pred = _rates(selected_pred, true_pred, p)
    tpr_all, fpr_all = _rates(set(selected_prog) | set(selected_pred),
                              set(true_prog) | set(true_pred), p)
    return Metrics(tpr_prog, fpr_prog, tpr_pred, fpr_pred, tpr_all, fpr_all)


def _star_selections(coefs, p):
    return [(np.flatnonzero(c[2:p + 2]), np.flatnonzero(c[p + 2:])) for c in coefs]


def method_selections(method, data, sigma=None, config=None, grid_size=100):
    """Candidate (prognostic, predictive) selections of one method.

    Returns a dict with ``"path"``, the list of selections along the tuning
    grid, and for the PPLasso methods ``"bic"``, the BIC-selected one.
    """
    p = data.p
    star = build_design(data, "star")
    y = data.response
    if method in ("pplasso_oracle", "pplasso_estimated"):
        config = config or PPLassoConfig(lambda_grid_size=grid_size)
        cov = sigma if method == "pplasso_oracle" else "estimate"
        if cov is None:
            raise ValueError("pplasso_oracle needs the true correlation matrix")
        stages, _ = pplasso_path(data, cov, config)
        lam, _ = bic_select(data, stages)
        path = [(st.prognostic, st.predictive) for st in stages]
        chosen = next(i for i, st in enumerate(stages) if st.lam == lam)
        return {"path": path, "bic": path[chosen]}
    if method == "lasso":
        fit = fit_path(star, y, grid_size=grid_size)
        return {"path": _star_selections(fit.coefficients, p)}
    if method == "elastic_net":
        path = []
        for alpha in EN_ALPHAS:
            fit = fit_path(star, y, grid_size=grid_size, alpha=alpha)
            path.extend(_star_selections(fit.coefficients, p))
        return {"path": path}
    if method == "adaptive_lasso":
        w = adaptive_weights(star, y)
        fit = fit_path(star, y, grid_size=grid_size, weights=w)
        return {"path": _star_selections(fit.coefficients, p)}
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def _optimal(path, truth):
    metrics = [compute_metrics(prog, pred, truth) for prog, pred in path]
    # with no active biomarkers TPR_all is undefined and only -FPR_all counts
    scores = np.array([np.nan_to_num(m.tpr_all) - m.fpr_all for m in metrics])
    return metrics[int(np.argmax(scores))]


@dataclass
class ScenarioReport:
    scenario: Scenario
    rows: list  # dicts: method, tuning, metric means and standard errors
    raw: list = field(default_factory=list)  # per-replication metric dicts
    failures: int = 0

    def row(self, method, tuning):
        for r in self.rows:
            if r["method"] == method and r["tuning"] == tuning:
                return r
        raise KeyError((method, tuning))

    def to_csv(self, path):
        params = _scenario_columns(self.scenario)
        header = ["method", "tuning", "n_ok"]
        header += [k for m in METRIC_NAMES for k in (m, m + "_se")]
        header += list(params)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in self.rows:
                w.writerow([r[h] if h in r else params[h] for h in header])

    def raw_to_csv(self, path):
        header = ["replicate", "method", "tuning", *METRIC_NAMES]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=header)
            w.writeheader()
            for r in self.raw:
                w.writerow(r)


def _scenario_columns(scenario):
    d = asdict(scenario)
    d["a"] = ";".join(str(v) for v in scenario.a)
    return d


def run_scenario(scenario, methods=METHODS, tuning=("bic", "optimal"), config=None,
                 grid_size=100, progress=None):
    """Run every replication of ``scenario`` for each method and average.

    Baselines are only tuned "optimal"; PPLasso methods get every tuning in
    ``tuning``.  Means are averages of per-replication rates, with standard
    errors.  A replication that raises is skipped and counted in
    ``failures``.
    """
    methods = list(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
    tuning = [t for t in tuning]
    for t in tuning:
        if t not in ("bic", "optimal"):
            raise ValueError(f"unknown tuning {t!r}")
    sigma = scenario.sigma()
    chol = np.linalg.cholesky(sigma)
    keys = [(m, t) for m in methods for t in tuning
            if t == "optimal" or m.startswith("pplasso")]
    per_key = {k: [] for k in keys}
    raw = []
    failures = 0
    for rep in range(scenario.replications):
        data, truth = gen_data(scenario, rep, chol)
        try:
            results = {}
            for m in methods:
                sel = method_selections(m, data, sigma, config, grid_size)
                for t in tuning:
                    if (m, t) not in per_key:
                        continue
                    if t == "optimal":
                        results[(m, t)] = _optimal(sel["path"], truth)
                    else:
                        results[(m, t)] = compute_metrics(*sel["bic"], truth)
        except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            failures += 1
            logger.warning("replicate %d failed: %s", rep, exc)
            continue
        for k, met in results.items():
            per_key[k].append(met.as_array())
            raw.append({"replicate": rep, "method": k[0], "tuning": k[1],
                        **dict(zip(METRIC_NAMES, met.as_array()))})
        if progress is not None:
            progress(rep)
    rows = []
    for (m, t), vals in per_key.items():
        row = {"method": m, "tuning": t, "n_ok": len(vals)}
        arr = np.array(vals) if vals else np.full((0, len(METRIC_NAMES)), np.nan)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            means = np.nanmean(arr, axis=0) if len(arr) else np.full(len(METRIC_NAMES), np.nan)
            counts = np.sum(~np.isnan(arr), axis=0)
            sds = np.nanstd(arr, axis=0, ddof=1) if len(arr) > 1 else np.full(len(METRIC_NAMES), np.nan)
        for i, name in enumerate(METRIC_NAMES):
            row[name] = float(means[i])
            row[name + "_se"] = float(sds[i] / np.sqrt(counts[i])) if counts[i] > 1 else math.nan
        rows.append(row)
    if failures:
        logger.warning("%d of %d replications failed", failures, scenario.replications)
    return ScenarioReport(scenario, rows, raw, failures)
