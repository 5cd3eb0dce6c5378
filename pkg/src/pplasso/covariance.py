"""
Correlation estimation for p >> n and symmetric matrix roots for whitening.

All estimators work on the correlation scale: columns are standardized
before estimation and every estimate has a unit diagonal.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CovarianceModel",
    "EstimatorCandidate",
    "sample_correlation",
    "estimate",
    "cv_select",
    "symmetric_roots",
    "pooled_arm_centered",
    "default_candidates",
    "whiten",
]

KINDS = ("sample", "linear-shrinkage-LW", "dense-linear-shrinkage", "hard-threshold", "poet")
DEFAULT_FLOOR = 1e-8


@dataclass
class CovarianceModel:
    sigma: np.ndarray
    sqrt: np.ndarray
    inv_sqrt: np.ndarray
    estimator_tag: str = "oracle"

    @property
    def p(self):
        return self.sigma.shape[0]


@dataclass(frozen=True)
class EstimatorCandidate:
    kind: str
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}; expected one of {KINDS}")
        hp = self.hyperparameters
        if self.kind == "hard-threshold":
            gamma = hp.get("gamma")
            if gamma is None or not 0 <= gamma <= 1:
                raise ValueError(f"hard-threshold needs gamma in [0, 1], got {gamma!r}")
        if self.kind == "poet":
            k, lam = hp.get("k"), hp.get("lambda", 0.0)
            if k is None or int(k) != k or k < 1:
                raise ValueError(f"poet needs an integer factor count k >= 1, got {k!r}")
            if lam < 0:
                raise ValueError(f"poet lambda must be >= 0, got {lam!r}")
        if "shrinkage" in hp and not 0 <= hp["shrinkage"] <= 1:
            raise ValueError(f"shrinkage must lie in [0, 1], got {hp['shrinkage']!r}")

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.hyperparameters.items()))))

    @property
    def label(self):
        if not self.hyperparameters:
            return self.kind
        args = ", ".join(f"{k}={v}" for k, v in sorted(self.hyperparameters.items()))
        return f"{self.kind}({args})"


def default_candidates():
    """The estimator grid compared by default, one entry per table row."""
    return [
        EstimatorCandidate("dense-linear-shrinkage"),
        EstimatorCandidate("sample"),
        EstimatorCandidate("linear-shrinkage-LW"),
        EstimatorCandidate("poet", {"lambda": 0.1, "k": 2}),
        EstimatorCandidate("poet", {"lambda": 0.2, "k": 2}),
        EstimatorCandidate("poet", {"lambda": 0.1, "k": 1}),
        EstimatorCandidate("poet", {"lambda": 0.2, "k": 1}),
        EstimatorCandidate("hard-threshold", {"gamma": 0.2}),
        EstimatorCandidate("hard-threshold", {"gamma": 0.4}),
    ]


def _standardize(data):
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError("need a 2-d array with at least two rows")
    centered = data - data.mean(axis=0)
    sd = np.sqrt((centered**2).mean(axis=0))
    zero = np.flatnonzero(sd <= 1e-12 * max(1.0, np.abs(data).max()))
    if zero.size:
        raise ValueError(f"column {int(zero[0])} has zero variance")
    return centered / sd


def sample_correlation(data):
    """Pearson correlation of the columns of an n x p array."""
    Z = _standardize(data)
    R = Z.T @ Z / Z.shape[0]
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    return np.clip(R, -1.0, 1.0)


def _shrinkage_intensity(Z, R, target):
    # Ledoit-Wolf ratio restricted to off-diagonal entries (the diagonal is fixed at 1)
    n = Z.shape[0]
    off = ~np.eye(R.shape[0], dtype=bool)
    d2 = np.sum((R - target)[off] ** 2)
    if d2 == 0:
        return 0.0
    # sum_k ||z_k z_k^T - R||^2 over off-diagonal entries, without forming n p x p arrays
    Z2 = Z**2
    total = np.sum((Z2.T @ Z2)[off]) - n * np.sum(R[off] ** 2)
    b2 = total / n**2
    return float(min(max(b2, 0.0), d2) / d2)


def _poet(R, k, lam):
    vals, vecs = np.linalg.eigh(R)
    top = np.argsort(vals)[::-1][:k]
    low_rank = (vecs[:, top] * vals[top]) @ vecs[:, top].T
    resid = R - low_rank
    scale = np.sqrt(np.clip(np.diag(resid), 1e-12, None))
    resid_corr = resid / np.outer(scale, scale)
    keep = np.abs(resid_corr) >= lam
    np.fill_diagonal(keep, True)
    out = low_rank + np.where(keep, resid, 0.0)
    return 0.5 * (out + out.T)


def estimate(candidate, data):
    """Correlation estimate of ``data`` (n x p) under one candidate estimator.

    - sample: Pearson correlation.
    - linear-shrinkage-LW: (1-s) R + s I with the Ledoit-Wolf intensity s.
    - dense-linear-shrinkage: (1-s) R + s T, T having the mean off-diagonal
      sample correlation off the diagonal.
    - hard-threshold: off-diagonal entries with |r| < gamma set to 0.
    - poet: top-k eigencomponents of R plus the residual, whose entries
      below ``lambda`` on the residual-correlation scale are zeroed.

    A ``shrinkage`` hyperparameter overrides the estimated intensity.
    """
    if isinstance(candidate, str):
        candidate = EstimatorCandidate(candidate)
    Z = _standardize(data)
    n, p = Z.shape
    R = Z.T @ Z / n
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    hp = candidate.hyperparameters
    kind = candidate.kind
    if kind == "sample":
        return R
    if kind in ("linear-shrinkage-LW", "dense-linear-shrinkage"):
        if kind == "linear-shrinkage-LW":
            target = np.eye(p)
        else:
            rbar = R[~np.eye(p, dtype=bool)].mean() if p > 1 else 0.0
            target = np.full((p, p), rbar)
            np.fill_diagonal(target, 1.0)
        s = hp.get("shrinkage")
        if s is None:
            s = _shrinkage_intensity(Z, R, target)
        return (1 - s) * R + s * target
    if kind == "hard-threshold":
        out = np.where(np.abs(R) >= hp["gamma"], R, 0.0)
        np.fill_diagonal(out, 1.0)
        return out
    k = int(hp["k"])
    if k >= min(n, p):
        raise ValueError(f"poet factor count k={k} must be below min(n, p)={min(n, p)}")
    return _poet(R, k, hp.get("lambda", 0.0))


def _folds(n, folds, seed):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    return np.array_split(perm, folds)


def cv_select(candidates, data, folds=5, seed=0):
    """Pick the estimator with the smallest cross-validated Frobenius risk.

    The risk of a candidate is the mean over folds of
    ||estimate(train) - sample_correlation(validation)||_F^2.  Returns the
    winner and the risk table as a list of ``(candidate, risk)`` sorted by
    increasing risk; ties keep the earlier candidate first.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate estimators given")
    if folds < 2:
        raise ValueError("need at least 2 folds")
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    splits = _folds(n, folds, seed)
    if min(len(s) for s in splits) < 2:
        raise ValueError(f"{n} rows cannot fill {folds} folds of at least 2 rows")
    risks = np.zeros(len(candidates))
    for val in splits:
        train = np.setdiff1d(np.arange(n), val)
        R_val = sample_correlation(data[val])
        for i, cand in enumerate(candidates):
            E = estimate(cand, data[train])
            risks[i] += np.sum((E - R_val) ** 2)
    risks /= len(splits)
    order = np.argsort(risks, kind="stable")
    table = [(candidates[i], float(risks[i])) for i in order]
    return table[0][0], table


def symmetric_roots(sigma, floor_ratio=DEFAULT_FLOOR, tag="oracle"):
    """Symmetric square root and inverse square root via eigendecomposition.

    Eigenvalues below ``floor_ratio * max eigenvalue`` are raised to that
    floor first, so singular estimates still have a finite inverse root.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError("sigma must be square")
    if np.max(np.abs(sigma - sigma.T), initial=0.0) > 1e-8:
        raise ValueError("sigma is not symmetric")
    if not 0 < floor_ratio < 1:
        raise ValueError("floor_ratio must lie in (0, 1)")
    sigma = 0.5 * (sigma + sigma.T)
    vals, vecs = np.linalg.eigh(sigma)
    floor = floor_ratio * vals.max()
    vals = np.maximum(vals, floor)
    root = np.sqrt(vals)
    sqrt = (vecs * root) @ vecs.T
    inv_sqrt = (vecs / root) @ vecs.T
    return CovarianceModel(
        sigma=sigma,
        sqrt=0.5 * (sqrt + sqrt.T),
        inv_sqrt=0.5 * (inv_sqrt + inv_sqrt.T),
        estimator_tag=tag,
    )


def pooled_arm_centered(x1, x2):
    """Stack both arms after centering each one on its own column means."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    return np.vstack([x1 - x1.mean(axis=0), x2 - x2.mean(axis=0)])


def whiten(X, cov):
    """Right-multiply a biomarker matrix by Sigma^{-1/2}."""
    return np.asarray(X, dtype=float) @ cov.inv_sqrt
