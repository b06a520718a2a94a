"""Second-stage estimators and their plug-in asymptotic variances.

All estimators share the same pipeline: rank-transform the fitted index,
smooth conditional means with the rank-based kernel smoother, and combine.
Because ranks depend on the index direction only through its ordering, every
estimate here is exactly invariant to positive rescaling of the first-stage
direction.

``selection_estimate`` residualizes outcome and regressors against the index
within the selected subsample and regresses residuals on residuals; its
variance is a sandwich with the squared fitted residuals in the middle.
``matching_estimate`` is the mean treated-minus-matched-control contrast
with an influence-function variance built from the fitted propensity and the
two arm means. ``ols_no_correction`` is the deliberately biased baseline that
ignores selection. ``plugin_estimate`` is the generic scaffold of which the
named estimators are specializations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import EstimationError
from .first_stage import IndexFit
from .kernels import QUARTIC, Kernel
from .ranks import RankValues, ranks
from .snn import snn_fit

__all__ = [
    "CI_LEVELS",
    "SelectionSample",
    "MatchingSample",
    "EstimateReport",
    "plugin_estimate",
    "selection_estimate",
    "matching_estimate",
    "ols_no_correction",
]

CI_LEVELS = (0.90, 0.95, 0.99)

_MAX_CONDITION = 1e10


@dataclass(frozen=True)
class SelectionSample:
    """Observations (y, z, x, d) with the outcome observed only where d = 1."""

    y: np.ndarray
    z: np.ndarray
    x: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        z = np.atleast_2d(np.asarray(self.z, dtype=float))
        if z.shape[0] == 1 and y.shape[0] != 1:
            z = z.T
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if x.shape[0] == 1 and y.shape[0] != 1:
            x = x.T
        d = np.asarray(self.d)
        n = y.shape[0]
        if not (z.shape[0] == n and x.shape[0] == n and d.shape[0] == n):
            raise ValueError("sample columns have mismatched lengths")
        if not np.isin(d, (0, 1)).all():
            raise ValueError("selection indicator must contain only 0 and 1")
        d = d.astype(int)
        if d.sum() < z.shape[1] + 2:
            raise ValueError("too few selected observations to fit the model")
        if np.linalg.matrix_rank(z[d == 1]) < z.shape[1]:
            raise ValueError("regressors are rank deficient on the selected subsample")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class MatchingSample:
    """Observations (y, z, x) with z the binary treatment status."""

    y: np.ndarray
    z: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        z = np.asarray(self.z)
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if x.shape[0] == 1 and y.shape[0] != 1:
            x = x.T
        n = y.shape[0]
        if not (z.shape[0] == n and x.shape[0] == n):
            raise ValueError("sample columns have mismatched lengths")
        if not np.isin(z, (0, 1)).all():
            raise ValueError("treatment status must contain only 0 and 1")
        z = z.astype(int)
        if z.min() == z.max():
            raise ValueError("both treatment arms must be nonempty")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass
class EstimateReport:
    """Point estimate, sqrt(n)-scale covariance, and confidence intervals."""

    beta: np.ndarray
    vcov: np.ndarray
    se: np.ndarray
    ci: dict[float, np.ndarray]
    h_used: dict[str, object]
    theta_used: IndexFit | None
    diagnostics: dict[str, int] = field(default_factory=dict)


def _finalize_report(beta, vcov, n, h_used, theta_used, diagnostics) -> EstimateReport:
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    vcov = np.atleast_2d(np.asarray(vcov, dtype=float))
    vcov = 0.5 * (vcov + vcov.T)
    eigmin = float(np.linalg.eigvalsh(vcov).min())
    if eigmin < -1e-8 * max(np.trace(vcov), 1.0):
        raise EstimationError(f"covariance is not positive semidefinite ({eigmin=})")
    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None) / n)
    ci = {}
    for level in CI_LEVELS:
        zq = norm.ppf(0.5 + level / 2.0)
        ci[level] = np.column_stack([beta - zq * se, beta + zq * se])
    return EstimateReport(
        beta=beta,
        vcov=vcov,
        se=se,
        ci=ci,
        h_used=h_used,
        theta_used=theta_used,
        diagnostics=diagnostics,
    )


def _column_fits(u: RankValues, w2d, cond, hs, kernel) -> tuple[np.ndarray, int]:
    """Per-column smoother fits, allowing one bandwidth per column."""
    n, p = w2d.shape
    hs = np.broadcast_to(np.asarray(hs, dtype=float), (p,))
    fitted = np.empty((n, p))
    hits = 0
    for j in range(p):
        fit = snn_fit(u, w2d[:, j], cond, h=hs[j], kernel=kernel)
        fitted[:, j] = fit.fitted
        hits += fit.denominator_floor_hits
    return fitted, hits


def selection_estimate(
    sample: SelectionSample,
    theta: IndexFit,
    h_y: float,
    h_z,
    *,
    kernel: Kernel = QUARTIC,
) -> EstimateReport:
    """Residual-on-residual regression within the selected subsample.

    Both the outcome and each regressor column are smoothed against the
    rank-transformed index over d = 1 (bandwidths ``h_y`` and ``h_z``, the
    latter scalar or per column); the slope of the outcome residuals on the
    regressor residuals is the estimate. The covariance scales sqrt(n)(b - b0).
    """
    u = ranks(sample.x @ theta.theta)
    cond = (sample.d, 1)
    fit_y = snn_fit(u, sample.y, cond, h=h_y, kernel=kernel)
    fitted_z, hits_z = _column_fits(u, sample.z, cond, h_z, kernel)

    sel = sample.d == 1
    res_y = (sample.y - fit_y.fitted)[sel]
    res_z = (sample.z - fitted_z)[sel]
    n1 = int(sel.sum())
    s_zz = res_z.T @ res_z / n1
    s_zy = res_z.T @ res_y / n1

    if np.linalg.cond(s_zz) >= _MAX_CONDITION:
        eig = np.linalg.eigvalsh(s_zz)
        raise EstimationError(
            f"residual cross-product matrix is near singular "
            f"(smallest eigenvalue {eig[0]:.3e})"
        )
    beta = np.linalg.solve(s_zz, s_zy)

    n = sample.n
    p1 = n1 / n
    v = res_y - res_z @ beta
    omega = (res_z * v[:, None] ** 2).T @ res_z / (n * p1**2)
    s_inv = np.linalg.inv(s_zz)
    vcov = s_inv @ omega @ s_inv

    return _finalize_report(
        beta,
        vcov,
        n,
        h_used={"y": float(h_y), "z": np.broadcast_to(np.asarray(h_z, float), (sample.z.shape[1],)).copy()},
        theta_used=theta,
        diagnostics={"denominator_floor_hits": fit_y.denominator_floor_hits + hits_z},
    )


def matching_estimate(
    sample: MatchingSample,
    theta: IndexFit,
    h: float,
    trim: float = 0.01,
    *,
    kernel: Kernel = QUARTIC,
) -> EstimateReport:
    """Treated-minus-matched-control mean on the rank-transformed index.

    The control response surface is smoothed over the untreated arm and
    evaluated at every observation; the estimate averages y minus that fit
    over the treated. The variance plugs fitted propensities and both arm
    means into the influence function; observations whose fitted propensity
    leaves [trim, 1 - trim] are dropped from the variance sum (counted in
    diagnostics), never from the point estimate.
    """
    z = sample.z
    if (z == 1).sum() < 10 or (z == 0).sum() < 10:
        raise ValueError("need at least 10 observations in each treatment arm")
    u = ranks(sample.x @ theta.theta)

    fit0 = snn_fit(u, sample.y, (z, 0), h=h, kernel=kernel)
    fit1 = snn_fit(u, sample.y, (z, 1), h=h, kernel=kernel)
    fit_p = snn_fit(u, z.astype(float), None, h=h, kernel=kernel)
    mu0, mu1, pscore = fit0.fitted, fit1.fitted, fit_p.fitted

    n = sample.n
    p1 = z.mean()
    treated = z == 1
    beta = float((sample.y[treated] - mu0[treated]).mean())

    eps0 = sample.y - mu0
    eps1 = sample.y - mu1
    gamma = (
        z * eps1 / p1
        - (1 - z) * pscore * eps0 / ((1.0 - pscore) * p1)
        + z * (mu1 - mu0 - beta) / p1
    )
    keep = (pscore >= trim) & (pscore <= 1.0 - trim)
    trimmed = int(n - keep.sum())
    if not (keep & treated).any() or not (keep & ~treated).any():
        raise EstimationError("a treatment arm is empty after propensity trimming")
    vcov = np.array([[float((gamma[keep] ** 2).sum() / n)]])

    hits = (
        fit0.denominator_floor_hits
        + fit1.denominator_floor_hits
        + fit_p.denominator_floor_hits
    )
    return _finalize_report(
        [beta],
        vcov,
        n,
        h_used={"y": float(h)},
        theta_used=theta,
        diagnostics={"denominator_floor_hits": hits, "propensity_trimmed": trimmed},
    )


def ols_no_correction(sample: SelectionSample) -> EstimateReport:
    """Plain OLS of y on z over the selected subsample, no selection control.

    The deliberately naive baseline: nothing absorbs the selection-induced
    shift of the outcome noise, so the slopes soak it up and the bias that
    the corrected estimators remove stays visible. Covariance is
    heteroskedasticity robust.
    """
    sel = sample.d == 1
    design = sample.z[sel]
    ysel = sample.y[sel]
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise EstimationError("selected-subsample regressors are rank deficient")
    xtx = design.T @ design
    coef = np.linalg.solve(xtx, design.T @ ysel)
    resid = ysel - design @ coef
    meat = design.T @ (design * resid[:, None] ** 2)
    xtx_inv = np.linalg.inv(xtx)
    cov_coef = xtx_inv @ meat @ xtx_inv

    n = sample.n
    return _finalize_report(
        coef,
        n * cov_coef,
        n,
        h_used={},
        theta_used=None,
        diagnostics={},
    )


def plugin_estimate(
    w,
    s,
    x,
    d,
    phi,
    H,
    b_hat,
    theta: IndexFit,
    h,
    *,
    kernel: Kernel = QUARTIC,
):
    """Generic two-step plug-in H(a_hat, b_hat).

    a_hat is the selected-sample mean of S_i applied to phi of the smoothed
    conditional means of the columns of w at each observation's rank. The
    named estimators above are fast-path specializations of this scaffold.

    Parameters
    ----------
    w : array (n, L)
        Responses whose conditional means on the index are smoothed.
    s : array (n, dS, dphi)
        Per-observation weighting matrices applied to phi values.
    x : array (n, k)
        Index covariates.
    d : array (n,) of {0, 1} or None
        Conditioning indicator; None conditions on nothing.
    phi : callable (n, L) -> (n, dphi)
        Smooth map applied row-wise to the fitted means.
    H : callable (a, b_hat) -> array
        Final combining map.
    h : float or sequence of length L
        Smoother bandwidth(s), one per response column.
    """
    w2d = np.atleast_2d(np.asarray(w, dtype=float))
    if w2d.shape[0] == 1 and np.asarray(x).shape[0] != 1:
        w2d = w2d.T
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    n = w2d.shape[0]
    mask = np.ones(n, dtype=bool) if d is None else np.asarray(d) == 1
    if mask.sum() < 2:
        raise ValueError("need at least two selected observations")

    u = ranks(x @ theta.theta)
    cond = None if d is None else (np.asarray(d), 1)
    fitted, _ = _column_fits(u, w2d, cond, h, kernel)
    phi_vals = np.asarray(phi(fitted), dtype=float)
    contrib = np.einsum("nij,nj->ni", s, phi_vals)
    a_hat = contrib[mask].mean(axis=0)
    try:
        return np.asarray(H(a_hat, b_hat), dtype=float)
    except np.linalg.LinAlgError as exc:
        raise EstimationError(f"combining map failed at the estimate: {exc}") from exc
