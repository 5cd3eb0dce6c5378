"""
Weighted-l1 penalized least squares for two-arm trial designs.

Every fit here minimizes the raw (not 1/n-scaled) objective

    1/2 ||y - A g||^2 + sum_j l1_j |g_j| + 1/2 sum_j l2_j g_j^2

by cyclic coordinate descent with an active-set strategy.  The intercept
columns of a trial design carry zero penalty.
"""

from dataclasses import dataclass, field

import numpy as np
from numba import njit

__all__ = [
    "TrialData",
    "DesignMatrix",
    "PenaltySpec",
    "PenalizedFit",
    "build_design",
    "coordinate_descent",
    "fit_path",
    "lambda_max",
    "elastic_net",
    "adaptive_lasso",
    "ridge",
    "objective",
    "kkt_violation",
    "cv_path",
    "cv_fold_ids",
]

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 100_000
DEFAULT_GRID_SIZE = 100
GRID_FLOOR = 1e-3
WEIGHT_CAP = 1e6
_CHUNK = 10


@dataclass
class TrialData:
    """Response, arm labels and biomarker matrix of a two-arm trial.

    Rows are stored arm 1 first, then arm 2 (stable within each arm), so
    every design built from this object lines up with ``response``.
    """

    response: np.ndarray
    treatment: np.ndarray
    biomarkers: np.ndarray
    biomarker_names: list = None

    def __post_init__(self):
        y = np.asarray(self.response, dtype=float).ravel()
        t = np.asarray(self.treatment).ravel()
        X = np.asarray(self.biomarkers, dtype=float)
        if X.ndim != 2:
            raise ValueError("biomarkers must be a 2-d array")
        if not (len(y) == len(t) == X.shape[0]):
            raise ValueError(
                f"length mismatch: response {len(y)}, treatment {len(t)}, "
                f"biomarkers {X.shape[0]} rows"
            )
        bad = ~np.isin(t, (1, 2))
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise ValueError(f"treatment labels must be 1 or 2 (row {row}: {t[row]!r})")
        t = t.astype(int)
        if (t == 1).sum() < 1 or (t == 2).sum() < 1:
            raise ValueError("both arms need at least one patient")
        if not (np.isfinite(y).all() and np.isfinite(X).all()):
            raise ValueError("missing or non-finite values in trial data")
        order = np.argsort(t, kind="stable")
        self.response = y[order]
        self.treatment = t[order]
        self.biomarkers = X[order]
        if self.biomarker_names is None:
            self.biomarker_names = [f"X{j + 1}" for j in range(X.shape[1])]
        self.biomarker_names = [str(name) for name in self.biomarker_names]
        if len(self.biomarker_names) != X.shape[1]:
            raise ValueError(
                f"{len(self.biomarker_names)} names for {X.shape[1]} biomarker columns"
            )

    @property
    def n(self):
        return len(self.response)

    @property
    def p(self):
        return self.biomarkers.shape[1]

    @property
    def n1(self):
        return int((self.treatment == 1).sum())

    @property
    def n2(self):
        return int((self.treatment == 2).sum())

    def arm(self, i):
        """Biomarker rows of arm ``i`` (1 or 2)."""
        return self.biomarkers[self.treatment == i]


@dataclass
class DesignMatrix:
    matrix: np.ndarray
    layout: str
    n1: int

    @property
    def p(self):
        return (self.matrix.shape[1] - 2) // 2


@dataclass
class PenaltySpec:
    """Per-coordinate l1 weights: 0 on the intercepts, lambda1 on the first
    biomarker block and lambda2 on the second."""

    lambda1: float
    lambda2: float
    penalty_factor: np.ndarray = field(default=None)
    p: int = None

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("penalty levels must be nonnegative")
        if self.penalty_factor is None:
            if self.p is None:
                raise ValueError("give either penalty_factor or p")
            self.penalty_factor = np.concatenate(
                [np.zeros(2), np.full(self.p, float(self.lambda1)),
                 np.full(self.p, float(self.lambda2))]
            )
        self.penalty_factor = np.asarray(self.penalty_factor, dtype=float)
        if (self.penalty_factor < 0).any():
            raise ValueError("penalty_factor must be nonnegative")
        self.p = (len(self.penalty_factor) - 2) // 2


@dataclass
class PenalizedFit:
    lambda_grid: np.ndarray
    coefficients: np.ndarray  # (grid_size, d)
    converged: np.ndarray
    iterations: np.ndarray
    penalty_weights: np.ndarray = None


def build_design(data, layout="block"):
    """Two-arm design with intercept indicators in the first two columns.

    ``block`` puts arm-1 biomarkers in columns 2..p+1 and arm-2 biomarkers in
    the last p columns.  ``star`` keeps every biomarker in the first block and
    repeats arm-2 values in the last block, so its second block estimates
    the between-arm difference directly.
    """
    if layout not in ("block", "star"):
        raise ValueError(f"unknown layout {layout!r}")
    n, p = data.n, data.p
    arm2 = data.treatment == 2
    A = np.zeros((n, 2 * p + 2))
    A[~arm2, 0] = 1.0
    A[arm2, 1] = 1.0
    if layout == "block":
        A[~arm2, 2:p + 2] = data.biomarkers[~arm2]
        A[arm2, p + 2:] = data.biomarkers[arm2]
    else:
        A[:, 2:p + 2] = data.biomarkers
        A[arm2, p + 2:] = data.biomarkers[arm2]
    return DesignMatrix(A, layout, data.n1)


def objective(A, y, coef, l1, l2=None):
    r = y - A @ coef
    val = 0.5 * r @ r + np.sum(l1 * np.abs(coef))
    if l2 is not None:
        val += 0.5 * np.sum(l2 * coef**2)
    return val


@njit(cache=True)
def _cd_kernel(At, y, l1, l2, coef, tol, max_iter):
    # At is the transposed design (d x n), so each column is a contiguous row
    d, n = At.shape
    col_sq = np.zeros(d)
    for j in range(d):
        s = 0.0
        for i in range(n):
            s += At[j, i] * At[j, i]
        col_sq[j] = s
    resid = y.copy()
    for j in range(d):
        if coef[j] != 0.0:
            for i in range(n):
                resid[i] -= At[j, i] * coef[j]

    active = np.zeros(d, dtype=np.bool_)
    sweeps = 0
    full = True
    converged = False
    while sweeps < max_iter:
        sweeps += 1
        max_step = 0.0
        for j in range(d):
            if not full and not active[j]:
                continue
            denom = col_sq[j] + l2[j]
            if denom == 0.0:
                continue
            old = coef[j]
            rho = 0.0
            for i in range(n):
                rho += At[j, i] * resid[i]
            rho += col_sq[j] * old
            if rho > l1[j]:
                new = (rho - l1[j]) / denom
            elif rho < -l1[j]:
                new = (rho + l1[j]) / denom
            else:
                new = 0.0
            if new != old:
                delta = new - old
                for i in range(n):
                    resid[i] -= At[j, i] * delta
                coef[j] = new
                step = abs(delta) * max(1.0, denom)
                if step > max_step:
                    max_step = step
            if new != 0.0:
                active[j] = True
        if max_step < tol:
            if full:
                converged = True
                break
            full = True
        else:
            full = False
    return coef, sweeps, converged


def _as_penalty_vector(penalty, d):
    if isinstance(penalty, PenaltySpec):
        return penalty.penalty_factor
    pf = np.asarray(penalty, dtype=float)
    if pf.shape != (d,):
        raise ValueError(f"penalty vector of length {pf.shape} for {d} columns")
    return pf


def kkt_violation(A, y, coef, l1, l2=None):
    """Largest violation of the optimality conditions of the weighted problem."""
    grad = A.T @ (y - A @ coef)
    if l2 is not None:
        grad = grad - l2 * coef
    nz = coef != 0
    viol = np.where(nz, np.abs(grad - l1 * np.sign(coef)),
                    np.maximum(np.abs(grad) - l1, 0.0))
    return float(viol.max(initial=0.0))


def _active_set_solve(A, y, coef, l1, l2):
    """Exact minimizer on the current support and signs, or None.

    Solves the stationarity equations restricted to the nonzero coordinates
    and keeps the result only when every sign is unchanged.
    """
    act = np.flatnonzero(coef)
    # without a ridge term more than n columns make the system singular
    if act.size == 0 or np.count_nonzero(l2[act] == 0) > A.shape[0]:
        return None
    Aa = A[:, act]
    G = Aa.T @ Aa + np.diag(l2[act])
    rhs = Aa.T @ y - l1[act] * np.sign(coef[act])
    try:
        sol = np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    pen = l1[act] > 0
    if np.any(np.sign(sol[pen]) != np.sign(coef[act][pen])):
        return None
    out = np.zeros_like(coef)
    out[act] = sol
    return out


def coordinate_descent(design, response, penalty, start=None, tol=DEFAULT_TOL,
                       max_iter=DEFAULT_MAX_ITER, l2=None, return_info=False):
    """Minimize 1/2||y - A g||^2 + sum_j penalty_j |g_j| (+ optional ridge).

    Parameters
    ----------
    design : DesignMatrix or ndarray
    penalty : PenaltySpec or array of per-coordinate l1 weights
        Already scaled by lambda; zeros leave a coordinate unpenalized.
    start : array, optional
        Warm start.
    tol : float
        Stop when a full sweep moves no coordinate by more than ``tol``
        (each move is scaled by its curvature ``||a_j||^2`` when that
        exceeds 1, so the criterion also bounds the KKT residual).
    l2 : array, optional
        Per-coordinate ridge weights.
    return_info : bool
        Also return ``(converged, sweeps)``.

    When sweeps stall, the stationarity equations on the current support
    are solved directly; that point is accepted if it keeps the signs and
    satisfies the optimality conditions to ``tol``.  A fit that hits
    ``max_iter`` returns its last iterate with ``converged=False``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = design.matrix if isinstance(design, DesignMatrix) else design
    A = np.asarray(A, dtype=float)
    At = np.ascontiguousarray(A.T)
    y = np.ascontiguousarray(response, dtype=float)
    d = At.shape[0]
    l1 = _as_penalty_vector(penalty, d)
    l2 = np.zeros(d) if l2 is None else np.asarray(l2, dtype=float)
    coef = np.zeros(d) if start is None else np.array(start, dtype=float)
    sweeps = 0
    chunk = _CHUNK
    converged = False
    while sweeps < max_iter:
        budget = min(chunk, max_iter - sweeps)
        coef, used, converged = _cd_kernel(At, y, l1, l2, coef, float(tol), int(budget))
        sweeps += used
        if converged:
            break
        exact = _active_set_solve(A, y, coef, l1, l2)
        if exact is not None and kkt_violation(A, y, exact, l1, l2) < tol:
            coef = exact
            converged = True
            break
        chunk = min(2 * chunk, 1000)
    if return_info:
        return coef, bool(converged), int(sweeps)
    return coef


def _unpenalized_residual(A, y, weights):
    free = weights == 0
    if not free.any():
        return y.copy(), np.zeros(A.shape[1])
    coef = np.zeros(A.shape[1])
    sol, *_ = np.linalg.lstsq(A[:, free], y, rcond=None)
    coef[free] = sol
    return y - A[:, free] @ sol, coef


def lambda_max(design, response, weights, alpha=1.0):
    """Smallest lambda at which every weighted coordinate is zero.

    ``weights`` are relative penalty factors (0 = unpenalized, inf = always
    excluded); the unpenalized coordinates are fitted first.
    """
    A = design.matrix if isinstance(design, DesignMatrix) else design
    w = np.asarray(weights, dtype=float)
    r, _ = _unpenalized_residual(A, np.asarray(response, dtype=float), w)
    grad = np.abs(A.T @ r)
    pen = (w > 0) & np.isfinite(w)
    if not pen.any():
        return 0.0
    # the relative nudge keeps rounding from leaving a coordinate active
    return float(np.max(grad[pen] / w[pen])) / alpha * (1 + 1e-10)


def fit_path(design, response, penalty_ratio=1.0, grid_size=DEFAULT_GRID_SIZE,
             weights=None, alpha=1.0, lambda_grid=None, tol=DEFAULT_TOL,
             max_iter=DEFAULT_MAX_ITER):
    """Warm-started solutions over a decreasing log-spaced lambda grid.

    The l1 weight of coordinate j at grid value lam is ``lam * alpha * w_j``
    and the ridge weight ``lam * (1 - alpha) * w_j``.  By default ``w`` is 0
    on the intercepts, 1 on the first biomarker block and ``penalty_ratio``
    on the second.  The grid runs from lambda_max down to
    ``lambda_max * 1e-3``.
    """
    if grid_size < 2 and lambda_grid is None:
        raise ValueError("grid_size must be at least 2")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    A = design.matrix if isinstance(design, DesignMatrix) else design
    A = np.ascontiguousarray(A, dtype=float)
    y = np.asarray(response, dtype=float)
    d = A.shape[1]
    if weights is None:
        p = (d - 2) // 2
        weights = np.concatenate([np.zeros(2), np.ones(p), np.full(p, float(penalty_ratio))])
    w = np.asarray(weights, dtype=float)
    if lambda_grid is None:
        lmax = lambda_max(A, y, w, alpha)
        if lmax <= 0:
            lmax = 1.0
        lambda_grid = np.geomspace(lmax, lmax * GRID_FLOOR, grid_size)
    lambda_grid = np.asarray(lambda_grid, dtype=float)

    excluded = ~np.isfinite(w)
    w_fin = np.where(excluded, 0.0, w)
    _, coef = _unpenalized_residual(A, y, np.where(excluded, 1.0, w_fin))
    A_fit = A.copy()
    A_fit[:, excluded] = 0.0

    coefs = np.zeros((len(lambda_grid), d))
    converged = np.zeros(len(lambda_grid), dtype=bool)
    iterations = np.zeros(len(lambda_grid), dtype=int)
    for k, lam in enumerate(lambda_grid):
        l1 = lam * alpha * w_fin
        l2 = lam * (1 - alpha) * w_fin
        coef, ok, sweeps = coordinate_descent(A_fit, y, l1, start=coef, tol=tol,
                                              max_iter=max_iter, l2=l2, return_info=True)
        coefs[k] = coef
        converged[k] = ok
        iterations[k] = sweeps
    return PenalizedFit(lambda_grid, coefs, converged, iterations, w)


def elastic_net(design, response, lam, alpha, penalty_factor=None, start=None,
                tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Minimize 1/2||y - A g||^2 + lam * sum_j w_j [alpha |g_j| + (1-alpha)/2 g_j^2].

    ``penalty_factor`` holds the relative weights ``w`` (default: 0 on the two
    intercepts, 1 elsewhere).
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    A = design.matrix if isinstance(design, DesignMatrix) else design
    d = A.shape[1]
    if penalty_factor is None:
        penalty_factor = np.r_[0.0, 0.0, np.ones(d - 2)]
    w = np.asarray(penalty_factor, dtype=float)
    return coordinate_descent(A, response, lam * alpha * w, start=start, tol=tol,
                              max_iter=max_iter, l2=lam * (1 - alpha) * w)


def ridge(design, response, penalty, penalty_factor=None):
    """Closed-form minimizer of 1/2||y - A g||^2 + penalty/2 sum_j w_j g_j^2."""
    A = design.matrix if isinstance(design, DesignMatrix) else design
    d = A.shape[1]
    if penalty_factor is None:
        penalty_factor = np.r_[0.0, 0.0, np.ones(d - 2)]
    w = np.asarray(penalty_factor, dtype=float)
    G = A.T @ A + penalty * np.diag(w)
    return np.linalg.lstsq(G, A.T @ np.asarray(response, dtype=float), rcond=None)[0]


def adaptive_weights(design, response, gamma_w=1.0, penalty_factor=None):
    """Adaptive-Lasso weights 1/|g_init|^gamma_w from a light ridge fit.

    The ridge penalty is 1e-3 * lambda_max; weights are capped at 1e6 and
    unpenalized coordinates keep weight 0.
    """
    if gamma_w <= 0:
        raise ValueError("gamma_w must be positive")
    A = design.matrix if isinstance(design, DesignMatrix) else design
    d = A.shape[1]
    if penalty_factor is None:
        penalty_factor = np.r_[0.0, 0.0, np.ones(d - 2)]
    pf = np.asarray(penalty_factor, dtype=float)
    init = ridge(A, response, 1e-3 * lambda_max(A, response, pf), pf)
    with np.errstate(divide="ignore"):
        w = np.abs(init) ** (-gamma_w)
    w = np.minimum(w, WEIGHT_CAP)
    return np.where(pf > 0, w * pf, 0.0)


def adaptive_lasso(design, response, lam, gamma_w=1.0, penalty_factor=None,
                   tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Two-stage adaptive Lasso: ridge-initialized weights, then weighted Lasso."""
    w = adaptive_weights(design, response, gamma_w, penalty_factor)
    return coordinate_descent(design, response, lam * w, tol=tol, max_iter=max_iter)


def cv_fold_ids(groups, folds=5, seed=0):
    """Fold label per row, spreading every group evenly over the folds."""
    groups = np.asarray(groups)
    rng = np.random.default_rng(seed)
    ids = np.empty(len(groups), dtype=int)
    offset = 0
    for g in np.unique(groups):
        rows = rng.permutation(np.flatnonzero(groups == g))
        ids[rows] = (np.arange(len(rows)) + offset) % folds
        offset += len(rows)
    return ids


def cv_path(design, response, groups, folds=5, seed=0, **path_kwargs):
    """Pick lambda on the full-data grid by k-fold prediction error.

    ``groups`` (the arm labels) stratify the folds so every training split
    keeps both intercept columns identifiable.  Returns the refit on all
    rows at the chosen lambda, that lambda and the mean validation MSE per
    grid value.
    """
    A = design.matrix if isinstance(design, DesignMatrix) else np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if folds < 2:
        raise ValueError("need at least 2 folds")
    full = fit_path(A, y, **path_kwargs)
    grid = full.lambda_grid
    kwargs = {k: v for k, v in path_kwargs.items() if k not in ("lambda_grid", "grid_size")}
    ids = cv_fold_ids(groups, folds, seed)
    err = np.zeros(len(grid))
    for f in range(folds):
        val = ids == f
        fit = fit_path(A[~val], y[~val], lambda_grid=grid, **kwargs)
        resid = y[val][None, :] - fit.coefficients @ A[val].T
        err += np.sum(resid**2, axis=1)
    err /= len(y)
    best = int(np.argmin(err))
    return full.coefficients[best], float(grid[best]), err
