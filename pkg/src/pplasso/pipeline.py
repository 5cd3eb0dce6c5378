"""
The PPLasso pipeline.

For every lambda on the path:

1. whiten the biomarkers (X Sigma^{-1/2}) and fit the split-penalty Lasso
   on the whitened coefficients (l1 on b~1 and on b~2 - b~1);
2. Top-K correction of the whitened coefficients, K1/K2 chosen by the
   delta-ratio rule on each arm's whitened residual sum of squares;
3. map back with Sigma^{-1/2} and keep the Top-M entries, M1/M2 chosen by
   the same rule on the original design;

then pick lambda by BIC.  Prognostic biomarkers are the support of the
final beta1, predictive ones the support of beta2 - beta1.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .covariance import (
    CovarianceModel,
    cv_select,
    default_candidates,
    estimate,
    pooled_arm_centered,
    symmetric_roots,
)
from .solver import TrialData, build_design, fit_path

__all__ = [
    "PPLassoConfig",
    "WhitenedFit",
    "StageEstimates",
    "PPLassoResult",
    "resolve_covariance",
    "whiten_fit",
    "split_penalty_objective",
    "whitened_objective",
    "top_k_order",
    "threshold_whitened",
    "threshold_final",
    "ratio_rule",
    "select_K",
    "select_M",
    "select_pair",
    "arm_curves_K",
    "arm_curves_M",
    "mse_surface_K",
    "mse_surface_M",
    "map_back",
    "bic_select",
    "pplasso_path",
    "run_pplasso",
]

logger = logging.getLogger(__name__)

FILL_SIGNS = ("positive", "preserve")
RATIO_SCOPES = ("arm", "joint")
TIE_BREAKS = ("first_stage", "index")


@dataclass
class PPLassoConfig:
    """Tuning knobs of the pipeline.

    ``k_max`` caps the K and M scans; ``None`` means min(p, 2n).
    ``lambda_grid`` replaces the automatic log-spaced grid when given.
    ``penalty_ratio`` is lambda2/lambda1 and is forced to 1 when
    ``equal_lambdas`` is set.

    ``first_stage`` picks the space in which the first fit is penalized:
    ``"whitened"`` puts the split l1 penalty on Sigma^{1/2} beta, while
    ``"original"`` keeps it on beta (that criterion has the same minimizer
    as the unwhitened split-penalty Lasso).  ``fill_sign`` controls the
    Top-K correction: ``"positive"`` fills every non-top entry with the
    K-th largest magnitude, ``"preserve"`` multiplies it by the sign of
    the entry it replaces (so zeros stay zero).

    ``ratio_scope`` sets how the delta rule reads the residual curves.
    The residual surface over (K1, K2) is the sum of one curve per arm;
    ``"arm"`` applies the rule to each arm's own curve, ``"joint"`` runs
    it on the summed surface (K2 for every K1 first, then K1).

    ``tie_break`` orders Top-M entries of equal magnitude (the Top-K fill
    creates many): ``"first_stage"`` ranks them by the first-stage
    estimate before falling back to the index, ``"index"`` uses the lower
    index only.
    """

    delta: float = 0.95
    lambda_grid_size: int = 100
    equal_lambdas: bool = True
    penalty_ratio: float = 1.0
    k_max: int = None
    floor_ratio: float = 1e-8
    cv_folds: int = 5
    seed: int = 0
    tol: float = 1e-7
    max_iter: int = 100_000
    first_stage: str = "whitened"
    fill_sign: str = "positive"
    ratio_scope: str = "arm"
    tie_break: str = "first_stage"
    lambda_grid: tuple = None

    def __post_init__(self):
        if not 0.5 < self.delta < 1:
            raise ValueError(f"delta must lie in (0.5, 1), got {self.delta}")
        if self.lambda_grid is None and self.lambda_grid_size < 2:
            raise ValueError("lambda_grid_size must be at least 2")
        if self.lambda_grid is not None:
            grid = np.asarray(self.lambda_grid, dtype=float).ravel()
            if grid.size == 0 or np.any(grid < 0) or not np.all(np.isfinite(grid)):
                raise ValueError("lambda_grid must be a nonempty list of finite values >= 0")
            self.lambda_grid = tuple(float(v) for v in grid)
        if self.penalty_ratio <= 0:
            raise ValueError("penalty_ratio must be positive")
        if self.equal_lambdas:
            self.penalty_ratio = 1.0
        if self.first_stage not in ("whitened", "original"):
            raise ValueError(f"unknown first_stage {self.first_stage!r}")
        if self.fill_sign not in FILL_SIGNS:
            raise ValueError(f"unknown fill_sign {self.fill_sign!r}")
        if self.ratio_scope not in RATIO_SCOPES:
            raise ValueError(f"unknown ratio_scope {self.ratio_scope!r}")
        if self.tie_break not in TIE_BREAKS:
            raise ValueError(f"unknown tie_break {self.tie_break!r}")


@dataclass
class WhitenedFit:
    lambda_grid: np.ndarray
    gamma0: np.ndarray  # (L, 2p+2) in (alpha1, alpha2, beta1, beta2) coordinates
    gamma_tilde0: np.ndarray  # same, biomarker blocks multiplied by Sigma^{1/2}
    converged: np.ndarray


@dataclass
class StageEstimates:
    lam: float
    alpha_hat: np.ndarray
    gamma_tilde0: np.ndarray
    beta_tilde_thresh: tuple
    beta_mapped: tuple
    beta_final: tuple
    K1: int
    K2: int
    M1: int
    M2: int
    converged: bool = True

    @property
    def prognostic(self):
        return np.flatnonzero(self.beta_final[0])

    @property
    def predictive(self):
        return np.flatnonzero(self.beta_final[1] - self.beta_final[0])


@dataclass
class PPLassoResult:
    prognostic: np.ndarray
    predictive: np.ndarray
    alpha_hat: np.ndarray
    beta1_hat: np.ndarray
    beta2_hat: np.ndarray
    lambda_selected: float
    bic_table: list
    stages: StageEstimates = None
    path: list = field(default=None, repr=False)
    covariance: CovarianceModel = field(default=None, repr=False)


def _invertible_choice(table, data, floor_ratio):
    """Lowest-risk candidate whose full-data estimate is positive definite.

    Whitening divides by the square roots of the eigenvalues, so a singular
    or indefinite estimate (sample correlation with p >= n, thresholded
    matrices) would blow up the flooring directions.  Falls back to the
    risk winner when no candidate qualifies.
    """
    first = None
    for cand, _ in table:
        sigma = estimate(cand, data)
        vals = np.linalg.eigvalsh(sigma)
        if vals[0] > floor_ratio * vals[-1]:
            return cand, sigma
        if first is None:
            first = (cand, sigma)
    logger.warning("no candidate estimate is positive definite; flooring %s", first[0].label)
    return first


def resolve_covariance(data, cov, config=None):
    """Turn ``cov`` (a CovarianceModel, a p x p matrix or "estimate") into a
    CovarianceModel for ``data``."""
    config = config or PPLassoConfig()
    if isinstance(cov, CovarianceModel):
        model = cov
    elif isinstance(cov, str):
        if cov != "estimate":
            raise ValueError(f"unknown covariance option {cov!r}")
        pooled = pooled_arm_centered(data.arm(1), data.arm(2))
        _, table = cv_select(default_candidates(), pooled, folds=config.cv_folds,
                             seed=config.seed)
        winner, sigma = _invertible_choice(table, pooled, config.floor_ratio)
        model = symmetric_roots(sigma, config.floor_ratio, tag=winner.label)
    else:
        model = symmetric_roots(np.asarray(cov, dtype=float), config.floor_ratio)
    if model.p != data.p:
        raise ValueError(f"covariance is {model.p} x {model.p} but data has p={data.p}")
    return model


def whiten_fit(data, cov, config=None):
    """Per-lambda first estimates g~0 = (a1, a2, b~1, b~2) on the path.

    With ``first_stage="whitened"`` this minimizes

        1/2 ||y - X~ g~||^2 + lambda1 ||b~1||_1 + lambda2 ||b~2 - b~1||_1

    with X~ = X Sigma^{-1/2}, solved as a weighted Lasso on the star layout
    of the whitened biomarkers.  With ``first_stage="original"`` the penalty
    acts on Sigma^{-1/2} g~; substituting g = Sigma^{-1/2} g~ turns that into
    the split-penalty Lasso on X, which is solved on the star layout and
    mapped forward by Sigma^{1/2}.  Intercepts are never touched by Sigma.
    """
    config = config or PPLassoConfig()
    cov = resolve_covariance(data, cov, config)
    p = data.p
    if config.first_stage == "whitened":
        fit_data = TrialData(data.response, data.treatment, data.biomarkers @ cov.inv_sqrt,
                             data.biomarker_names)
    else:
        fit_data = data
    star = build_design(fit_data, "star")
    path = fit_path(star, data.response, penalty_ratio=config.penalty_ratio,
                    grid_size=config.lambda_grid_size, lambda_grid=config.lambda_grid,
                    tol=config.tol, max_iter=config.max_iter)
    if not path.converged.all():
        logger.warning("%d of %d path fits did not converge",
                       int((~path.converged).sum()), len(path.converged))
    fitted = _star_to_block(path.coefficients, p)
    other = fitted.copy()
    to_other = cov.inv_sqrt if config.first_stage == "whitened" else cov.sqrt
    other[:, 2:p + 2] = fitted[:, 2:p + 2] @ to_other.T
    other[:, p + 2:] = fitted[:, p + 2:] @ to_other.T
    if config.first_stage == "whitened":
        gamma0, gamma_tilde0 = other, fitted
    else:
        gamma0, gamma_tilde0 = fitted, other
    return WhitenedFit(path.lambda_grid, gamma0, gamma_tilde0, path.converged)


def _star_to_block(theta, p):
    """(a, b1, b2 - b1) -> (a, b1, b2), row-wise."""
    out = np.array(theta, dtype=float, copy=True)
    out[..., p + 2:] = out[..., 2:p + 2] + out[..., p + 2:]
    return out


def split_penalty_objective(data, gamma, lambda1, lambda2):
    """1/2||y - X g||^2 + lambda1 ||b1||_1 + lambda2 ||b2 - b1||_1 on the block design."""
    p = data.p
    r = _block_residual(data, gamma[:2], gamma[2:p + 2], gamma[p + 2:])
    b1, b2 = gamma[2:p + 2], gamma[p + 2:]
    return 0.5 * r @ r + lambda1 * np.abs(b1).sum() + lambda2 * np.abs(b2 - b1).sum()


def whitened_objective(data, cov, gamma_tilde, lambda1, lambda2):
    """The whitened criterion with the penalty on Sigma^{-1/2} g~.

    Evaluated literally: X~ = X Sigma^{-1/2} and the penalty matrix applied
    to Sigma^{-1/2} g~, with no algebraic shortcuts.
    """
    p = data.p
    A = build_design(data, "block").matrix
    S_inv = _embed(cov.inv_sqrt)
    Xt = A @ S_inv
    # D1 picks b1, D2 forms b2 - b1; intercept columns are zero
    D1 = np.zeros((p, 2 * p + 2))
    D1[:, 2:p + 2] = np.eye(p)
    D2 = np.zeros((p, 2 * p + 2))
    D2[:, 2:p + 2] = -np.eye(p)
    D2[:, p + 2:] = np.eye(p)
    g = S_inv @ gamma_tilde
    r = data.response - Xt @ gamma_tilde
    return 0.5 * r @ r + lambda1 * np.abs(D1 @ g).sum() + lambda2 * np.abs(D2 @ g).sum()


def _embed(block):
    """diag(1, 1, block, block)."""
    p = block.shape[0]
    out = np.zeros((2 * p + 2, 2 * p + 2))
    out[0, 0] = out[1, 1] = 1.0
    out[2:p + 2, 2:p + 2] = block
    out[p + 2:, p + 2:] = block
    return out


TIE_RTOL = 1e-10


def top_k_order(v, tiebreak=None):
    """Indices sorted by decreasing |v|.

    Magnitudes equal to within ``TIE_RTOL`` (relative to max |v|) count as
    ties; ties are ordered by decreasing |tiebreak| when given, then by
    lower index.
    """
    mag = np.abs(np.asarray(v, dtype=float))
    top = mag.max(initial=0.0)
    key = np.round(mag / top / TIE_RTOL) if top > 0 else mag
    if tiebreak is None:
        return np.lexsort((np.arange(len(mag)), -key))
    return np.lexsort((np.arange(len(mag)), -np.abs(tiebreak), -key))


def _fill_signs(v, fill_sign):
    if fill_sign == "positive":
        return np.ones_like(v)
    if fill_sign == "preserve":
        return np.sign(v)
    raise ValueError(f"unknown fill_sign {fill_sign!r}")


def _threshold_one(v, K, fill_sign="positive"):
    v = np.asarray(v, dtype=float)
    if not 1 <= K <= len(v):
        raise ValueError(f"K={K} outside 1..{len(v)}")
    return _top_k_family(v, np.array([K]), fill_sign)[0]


def _top_k_family(v, Ks, fill_sign):
    # row i holds v corrected at K = Ks[i]; entries tied with the K-th
    # magnitude count as top entries, which keeps the operator idempotent
    mag = np.abs(v)
    c = np.sort(mag)[::-1][np.asarray(Ks) - 1]
    keep = mag[None, :] >= c[:, None]
    return np.where(keep, v[None, :], c[:, None] * _fill_signs(v, fill_sign)[None, :])


def threshold_whitened(beta_tilde0, K1, K2, fill_sign="positive"):
    """Top-K correction of the whitened coefficient pair.

    Top-K entries (by magnitude, including any tied with the K-th) are
    kept; every other entry becomes the K-th largest magnitude of its
    vector.  ``fill_sign="preserve"`` gives the replacement the sign of
    the entry it replaces instead.
    """
    b1, b2 = beta_tilde0
    return _threshold_one(b1, K1, fill_sign), _threshold_one(b2, K2, fill_sign)


def _keep_top(v, M, tiebreak=None):
    v = np.asarray(v, dtype=float)
    if not 1 <= M <= len(v):
        raise ValueError(f"M={M} outside 1..{len(v)}")
    out = np.zeros_like(v)
    keep = top_k_order(v, tiebreak)[:M]
    out[keep] = v[keep]
    return out


def threshold_final(beta1_0, beta2_0, M1, M2, tiebreak=(None, None)):
    """Zero every entry outside the Top-M set of each vector.

    ``tiebreak`` optionally gives, per vector, secondary scores used to
    order entries of equal magnitude (see ``top_k_order``).
    """
    return _keep_top(beta1_0, M1, tiebreak[0]), _keep_top(beta2_0, M2, tiebreak[1])


def ratio_rule(values, delta):
    """Smallest K >= 1 with values[K+1] / values[K] >= delta (1-indexed).

    Returns len(values) when the ratio never reaches ``delta``.
    """
    values = np.asarray(values, dtype=float)
    for k in range(len(values) - 1):
        cur, nxt = values[k], values[k + 1]
        if cur <= 0:
            # an exact fit cannot be improved on
            return k + 1
        if nxt / cur >= delta:
            return k + 1
    return len(values)


def select_K(surface, delta):
    """Pick (K1, K2) from an MSE surface indexed [K1-1, K2-1].

    K2 is first chosen for every K1 by the ratio rule along its row; K1 is
    then chosen by the rule on MSE(K1, K2(K1)) -> MSE(K1+1, K2(K1)).
    """
    surface = np.asarray(surface, dtype=float)
    n1 = surface.shape[0]
    k2_hat = np.array([ratio_rule(row, delta) for row in surface])
    for k1 in range(n1 - 1):
        k2 = k2_hat[k1] - 1
        cur, nxt = surface[k1, k2], surface[k1 + 1, k2]
        if cur <= 0 or nxt / cur >= delta:
            return k1 + 1, int(k2_hat[k1])
    return n1, int(k2_hat[n1 - 1])


def _arm_rows(data):
    arm1 = data.treatment == 1
    return arm1, ~arm1


def _k_max(config, data):
    if config.k_max is not None:
        return int(min(config.k_max, data.p))
    return int(min(data.p, 2 * data.n))


def _fitted_top_k(Xt, v, kmax, fill_sign):
    """Column k-1 holds Xt @ (v corrected at K = k), for k = 1..kmax."""
    return Xt @ _top_k_family(v, np.arange(1, kmax + 1), fill_sign).T


def _fitted_keep_top(X, v, kmax, tiebreak=None):
    order = top_k_order(v, tiebreak)[:kmax]
    return np.cumsum(X[:, order] * v[order], axis=1)


def _sse_columns(resid, fitted):
    return np.sum((resid[:, None] - fitted) ** 2, axis=0)


def arm_curves_K(data, cov, alpha_hat, beta_tilde0, k_max, fill_sign="positive"):
    """Per-arm whitened residual sums of squares for K = 1..k_max."""
    arm1, arm2 = _arm_rows(data)
    y = data.response
    X1t = data.biomarkers[arm1] @ cov.inv_sqrt
    X2t = data.biomarkers[arm2] @ cov.inv_sqrt
    f1 = _sse_columns(y[arm1] - alpha_hat[0], _fitted_top_k(X1t, beta_tilde0[0], k_max, fill_sign))
    f2 = _sse_columns(y[arm2] - alpha_hat[1], _fitted_top_k(X2t, beta_tilde0[1], k_max, fill_sign))
    return f1, f2


def mse_surface_K(data, cov, alpha_hat, beta_tilde0, k_max, fill_sign="positive"):
    """Whitened residual sum of squares over K1, K2 = 1..k_max.

    In the block design arm-1 rows only see beta1 and arm-2 rows only see
    beta2, so the surface is the outer sum of two per-arm curves.
    """
    f1, f2 = arm_curves_K(data, cov, alpha_hat, beta_tilde0, k_max, fill_sign)
    return f1[:, None] + f2[None, :]


def arm_curves_M(data, alpha_hat, beta1_0, beta2_0, m_max, tiebreak=(None, None)):
    """Per-arm residual sums of squares on the original design, M = 1..m_max."""
    arm1, arm2 = _arm_rows(data)
    y = data.response
    g1 = _sse_columns(y[arm1] - alpha_hat[0],
                      _fitted_keep_top(data.biomarkers[arm1], beta1_0, m_max, tiebreak[0]))
    g2 = _sse_columns(y[arm2] - alpha_hat[1],
                      _fitted_keep_top(data.biomarkers[arm2], beta2_0, m_max, tiebreak[1]))
    return g1, g2


def mse_surface_M(data, alpha_hat, beta1_0, beta2_0, m_max, tiebreak=(None, None)):
    """Residual sum of squares on the original design over M1, M2 = 1..m_max."""
    g1, g2 = arm_curves_M(data, alpha_hat, beta1_0, beta2_0, m_max, tiebreak)
    return g1[:, None] + g2[None, :]


def select_pair(curves, delta, scope="arm"):
    """(K1, K2) from the two per-arm residual curves."""
    c1, c2 = curves
    if scope == "arm":
        return ratio_rule(c1, delta), ratio_rule(c2, delta)
    if scope == "joint":
        return select_K(c1[:, None] + c2[None, :], delta)
    raise ValueError(f"unknown ratio_scope {scope!r}")


def select_M(data, alpha_hat, beta1_0, beta2_0, delta, m_max=None, tiebreak=(None, None),
             scope="arm"):
    """(M1, M2) by the ratio rule on the original-design residual curves."""
    if m_max is None:
        m_max = min(data.p, 2 * data.n)
    curves = arm_curves_M(data, alpha_hat, beta1_0, beta2_0, m_max, tiebreak)
    return select_pair(curves, delta, scope)


def map_back(beta_tilde_thresh, cov):
    """Return (Sigma^{-1/2} b~1, Sigma^{-1/2} b~2)."""
    b1, b2 = beta_tilde_thresh
    return cov.inv_sqrt @ b1, cov.inv_sqrt @ b2


def _stages_for_lambda(data, cov, lam, gamma_tilde0, config, converged=True):
    p = data.p
    kmax = _k_max(config, data)
    alpha_hat = gamma_tilde0[:2].copy()
    bt = (gamma_tilde0[2:p + 2], gamma_tilde0[p + 2:])
    curves = arm_curves_K(data, cov, alpha_hat, bt, kmax, config.fill_sign)
    K1, K2 = select_pair(curves, config.delta, config.ratio_scope)
    bt_thresh = threshold_whitened(bt, K1, K2, config.fill_sign)
    mapped = map_back(bt_thresh, cov)
    # filled entries share one magnitude; rank them by the first-stage fit
    if config.tie_break == "index":
        tiebreak = (None, None)
    elif config.first_stage == "whitened":
        tiebreak = bt
    else:
        tiebreak = (cov.inv_sqrt @ bt[0], cov.inv_sqrt @ bt[1])
    M1, M2 = select_M(data, alpha_hat, mapped[0], mapped[1], config.delta, kmax, tiebreak,
                      config.ratio_scope)
    final = threshold_final(mapped[0], mapped[1], M1, M2, tiebreak)
    return StageEstimates(lam, alpha_hat, gamma_tilde0, bt_thresh, mapped, final,
                          K1, K2, M1, M2, bool(converged))


def _ols_refit_size(data, prognostic, predictive):
    star = build_design(data, "star").matrix
    p = data.p
    cols = np.concatenate([[0, 1], 2 + np.asarray(prognostic, dtype=int),
                           2 + p + np.asarray(predictive, dtype=int)])
    A = star[:, cols]
    y = data.response
    flagged = A.shape[1] > data.n
    if flagged:
        coef = np.linalg.solve(A.T @ A + 1e-6 * np.eye(A.shape[1]), A.T @ y)
    else:
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return int(np.count_nonzero(coef)), flagged


def _block_residual(data, alpha_hat, beta1, beta2):
    arm1, arm2 = _arm_rows(data)
    y = data.response
    r = np.empty_like(y)
    r[arm1] = y[arm1] - alpha_hat[0] - data.biomarkers[arm1] @ beta1
    r[arm2] = y[arm2] - alpha_hat[1] - data.biomarkers[arm2] @ beta2
    return r


def bic_select(data, stages):
    """Choose lambda minimizing n log(MSE/n) + k log n.

    MSE is the residual sum of squares of the final thresholded estimate;
    k counts the nonzero coefficients of an OLS refit on the intercepts and
    the selected prognostic / predictive columns of the star design (a
    ridge refit with penalty 1e-6 stands in when that refit has more
    columns than rows, and the row is flagged).
    """
    stages = list(stages)
    if not stages:
        raise ValueError("no lambda values to select from")
    n = data.n
    table = []
    for st in stages:
        r = _block_residual(data, st.alpha_hat, *st.beta_final)
        mse = float(r @ r)
        k, flagged = _ols_refit_size(data, st.prognostic, st.predictive)
        bic = n * np.log(max(mse, np.finfo(float).tiny) / n) + k * np.log(n)
        table.append({"lambda": float(st.lam), "mse": mse, "k": k, "bic": float(bic),
                      "ridge_refit": flagged, "converged": st.converged})
    usable = [i for i, row in enumerate(table) if row["converged"]] or list(range(len(table)))
    best = min(usable, key=lambda i: table[i]["bic"])
    return table[best]["lambda"], table


def pplasso_path(data, cov, config=None):
    """Stage estimates for every lambda on the grid, plus the covariance used."""
    config = config or PPLassoConfig()
    cov = resolve_covariance(data, cov, config)
    fit = whiten_fit(data, cov, config)
    stages = [
        _stages_for_lambda(data, cov, lam, gt, config, ok)
        for lam, gt, ok in zip(fit.lambda_grid, fit.gamma_tilde0, fit.converged)
    ]
    return stages, cov


def _result_from(stages, chosen, table, cov):
    st = stages[chosen]
    b1, b2 = st.beta_final
    return PPLassoResult(
        prognostic=st.prognostic,
        predictive=st.predictive,
        alpha_hat=st.alpha_hat,
        beta1_hat=b1,
        beta2_hat=b2,
        lambda_selected=float(st.lam),
        bic_table=table,
        stages=st,
        path=stages,
        covariance=cov,
    )


def run_pplasso(data, cov="estimate", config=None):
    """Fit PPLasso end to end and return the BIC-selected result.

    ``cov`` is a CovarianceModel, a known p x p correlation matrix, or
    ``"estimate"`` to pick an estimator by cross-validation on the pooled,
    per-arm centered biomarkers.
    """
    config = config or PPLassoConfig()
    stages, cov = pplasso_path(data, cov, config)
    lam, table = bic_select(data, stages)
    chosen = next(i for i, st in enumerate(stages) if st.lam == lam)
    return _result_from(stages, chosen, table, cov)
