"""Seeded replication engine for the simulation study.

The data generating process draws covariates from shifted uniforms, selects
through a single index with conditionally heteroskedastic (optionally heavy
tailed) errors, and builds outcomes whose noise shares a component with the
selection error, so ignoring selection produces real bias:

    z_i = u1_i - (eta_{1i}/2) 1,      x_i = u2_i - eta_i / 2,
    d_i = 1{x_i' theta_0 + eps_i >= 0},
    eps_i = t_i * g(x_i' theta_0) + e_i,
    y*_i = z_i' beta_0 + v_i,         y_i = y*_i d_i,
    v_i = (2 zeta_i + e_i) * 2 Phi((x_i' theta_0)^2 + |x_i' theta_0|),

with four families: the A families use g(q) = 2 Phi(q^2 + |q|) and the B
families g(q) = exp(q - 1); the N variants draw t_i standard normal and the
T variants standard Cauchy, with the B variants adding the shared e_i into
t_i as well. The same e_i draw appears in eps_i and v_i, which is what makes
the selection bias bite.

Every replication owns a counter-based random stream keyed by
(master seed, spec, replication index), so results are bit-identical no
matter how work is scheduled across processes, and paired estimator arms see
exactly the same sample.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.stats import norm

from .bandwidth import cross_validate
from .errors import BandwidthError, EstimationError
from .estimators import (
    CI_LEVELS,
    EstimateReport,
    SelectionSample,
    matching_estimate,
    ols_no_correction,
    selection_estimate,
)
from .first_stage import SearchConfig, fixed_index, max_score, normalize_direction
from .kernels import QUARTIC, Kernel
from .ranks import ranks, ranks_loo
from .snn import default_bandwidth_bounds, snn_fit

__all__ = [
    "Family",
    "Arm",
    "DgpSpec",
    "McResult",
    "generate",
    "run_table",
    "theorem1_gap",
    "bahadur_check",
    "index_smoothness",
]


class Family(Enum):
    AN = "AN"
    AT = "AT"
    BN = "BN"
    BT = "BT"


class Arm(Enum):
    PLUGIN_THETA0 = "plugin-theta0"
    PLUGIN_THETA_HAT = "plugin-thetahat"
    NO_CORRECTION = "no-correction"


@dataclass(frozen=True)
class DgpSpec:
    """One simulation design cell."""

    family: Family
    k: int
    n: int
    theta0: tuple = None
    beta0: tuple = (2.0, 2.0, 2.0)

    def __post_init__(self):
        if self.k not in (3, 6):
            raise ValueError(f"covariate dimension must be 3 or 6, got {self.k}")
        if self.n < 50:
            raise ValueError(f"sample size must be at least 50, got {self.n}")
        theta0 = self.theta0 if self.theta0 is not None else (2.0,) * self.k
        if len(theta0) != self.k:
            raise ValueError("theta0 length must match the covariate dimension")
        if len(self.beta0) != 3:
            raise ValueError("beta0 must have three components")
        object.__setattr__(self, "theta0", tuple(float(t) for t in theta0))
        object.__setattr__(self, "beta0", tuple(float(b) for b in self.beta0))


@dataclass
class McResult:
    """Per-replication estimates and summary metrics for one (spec, arm) cell."""

    spec: DgpSpec
    arm: Arm
    betas: np.ndarray
    ses: np.ndarray
    hits: np.ndarray
    levels: tuple
    summary: dict
    reps: int
    failures: int
    master_seed: int


_MAX_FAILURE_RATE = 0.05
_U64 = np.uint64


def _spec_key(spec: DgpSpec) -> int:
    tag = f"{spec.family.value}:{spec.k}:{spec.n}"
    return zlib.crc32(tag.encode())


def _philox(word0: int, spec_key: int, rep: int, tag: int) -> np.random.Generator:
    # Philox takes a 128-bit key as two uint64 words; pack the cell identity,
    # replication index (< 2^28), and stream tag (< 16) into the second word.
    if not 0 <= rep < (1 << 28):
        raise ValueError("replication index out of range")
    word1 = (spec_key << 32) | (rep << 4) | tag
    key = np.array([word0 & 0xFFFFFFFFFFFFFFFF, word1], dtype=_U64)
    return np.random.Generator(np.random.Philox(key=key))


def _stream(master_seed: int, spec: DgpSpec, rep: int, tag: int) -> np.random.Generator:
    return _philox(int(master_seed), _spec_key(spec), rep, tag)


def _search_seed(master_seed: int, spec: DgpSpec, rep: int) -> int:
    ss = np.random.SeedSequence((int(master_seed), _spec_key(spec), int(rep), 1))
    return int(ss.generate_state(1, np.uint64)[0])


def _amp(q: np.ndarray) -> np.ndarray:
    return 2.0 * norm.cdf(q * q + np.abs(q))


def generate(spec: DgpSpec, seed) -> SelectionSample:
    """Draw one sample; ``seed`` is an int or a ready Generator."""
    if isinstance(seed, np.random.Generator):
        rng = seed
    else:
        rng = _philox(int(seed), 0, 0, 0)
    n, k = spec.n, spec.k
    u1 = rng.random((n, 3))
    u2 = rng.random((n, k))
    eta = rng.random((n, k))
    e = rng.standard_normal(n)
    heavy = spec.family in (Family.AT, Family.BT)
    t = rng.standard_cauchy(n) if heavy else rng.standard_normal(n)
    zeta = rng.standard_normal(n)

    z = u1 - 0.5 * eta[:, [0]]
    x = u2 - 0.5 * eta
    q = x @ np.asarray(spec.theta0)

    if spec.family in (Family.AN, Family.AT):
        scale = _amp(q)
    else:
        scale = np.exp(q - 1.0)
        t = t + e
    eps = t * scale + e
    d = (q + eps >= 0.0).astype(int)
    # The outcome noise shares e with the selection error; the heavier weight
    # on the shared component is what makes the uncorrected fit visibly biased.
    v = (zeta + 2.0 * e) * _amp(q)
    y = (z @ np.asarray(spec.beta0) + v) * d
    return SelectionSample(y=y, z=z, x=x, d=d)


def _cv_bandwidths(u, sample: SelectionSample, kernel: Kernel):
    h_y = cross_validate(u, sample.y, (sample.d, 1), kernel=kernel).h_star
    h_z = [
        cv.h_star
        for cv in cross_validate(u, sample.z, (sample.d, 1), kernel=kernel)
    ]
    return h_y, h_z


def _corrected_estimate(
    sample: SelectionSample, theta, h_policy, kernel: Kernel
) -> EstimateReport:
    if h_policy == "cv":
        u = ranks(sample.x @ theta.theta)
        h_y, h_z = _cv_bandwidths(u, sample, kernel)
    else:
        h_y = h_z = float(h_policy)
    return selection_estimate(sample, theta, h_y, h_z, kernel=kernel)


def _one_rep(spec, rep, master_seed, arms, h_policy, kernel=QUARTIC):
    """Run all requested arms on one shared sample; per-arm failure capture."""
    sample = generate(spec, _stream(master_seed, spec, rep, 0))
    out = {}
    theta_hat = None
    for arm in arms:
        try:
            if arm is Arm.NO_CORRECTION:
                report = ols_no_correction(sample)
            else:
                if arm is Arm.PLUGIN_THETA0:
                    theta = fixed_index(spec.theta0)
                else:
                    if theta_hat is None:
                        theta_hat = max_score(
                            sample.x,
                            sample.d,
                            SearchConfig(seed=_search_seed(master_seed, spec, rep)),
                        )
                    theta = theta_hat
                report = _corrected_estimate(sample, theta, h_policy, kernel)
            out[arm] = (report.beta.copy(), report.se.copy())
        except (EstimationError, BandwidthError, ValueError, np.linalg.LinAlgError):
            out[arm] = None
    return out


def _rep_chunk(args):
    spec, reps, master_seed, arms, h_policy = args
    return [_one_rep(spec, r, master_seed, arms, h_policy) for r in reps]


def _pmap_reps(spec, n_reps, master_seed, arms, h_policy, n_jobs):
    if n_jobs <= 1:
        return [_one_rep(spec, r, master_seed, arms, h_policy) for r in range(n_reps)]
    chunk = max(1, n_reps // (n_jobs * 8))
    tasks = [
        (spec, range(lo, min(lo + chunk, n_reps)), master_seed, arms, h_policy)
        for lo in range(0, n_reps, chunk)
    ]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        chunks = list(pool.map(_rep_chunk, tasks))
    return [rep for ch in chunks for rep in ch]


def _summarize(spec, arm, rows, reps, master_seed, levels) -> McResult:
    ok = [r[arm] for r in rows if r[arm] is not None]
    failures = reps - len(ok)
    if failures > _MAX_FAILURE_RATE * reps:
        raise EstimationError(
            f"{failures}/{reps} replications failed for {spec.family.value} "
            f"k={spec.k} n={spec.n} arm={arm.value}"
        )
    betas = np.array([b for b, _ in ok])
    ses = np.array([s for _, s in ok])
    beta0 = np.asarray(spec.beta0)
    err = betas - beta0
    hits = np.empty((len(ok), len(levels)), dtype=bool)
    for li, level in enumerate(levels):
        zq = norm.ppf(0.5 + level / 2.0)
        hits[:, li] = np.abs(err[:, 0]) <= zq * ses[:, 0]
    mse = float((err**2).mean())
    summary = {
        "mae": float(np.abs(err).mean()),
        "mse": mse,
        "rmse": float(np.sqrt(mse)),
        "coverage": {level: float(hits[:, li].mean()) for li, level in enumerate(levels)},
    }
    return McResult(
        spec=spec,
        arm=arm,
        betas=betas,
        ses=ses,
        hits=hits,
        levels=tuple(levels),
        summary=summary,
        reps=reps,
        failures=failures,
        master_seed=master_seed,
    )


def run_table(
    specs,
    arms,
    reps: int,
    master_seed: int,
    *,
    h_policy="cv",
    levels=CI_LEVELS,
    n_jobs: int = 1,
) -> list[McResult]:
    """Run each spec cell for ``reps`` paired replications and aggregate.

    Arms within a replication share the sample exactly. A replication that
    fails (singular blocks, degenerate bandwidth search) is excluded and
    counted; more than 5% failures in any cell aborts the run.
    """
    if reps < 1:
        raise ValueError("need at least one replication")
    arms = tuple(arms)
    results = []
    for spec in specs:
        rows = _pmap_reps(spec, reps, master_seed, arms, h_policy, n_jobs)
        for arm in arms:
            results.append(_summarize(spec, arm, rows, reps, master_seed, levels))
    return results


def _gap_rep(args):
    spec, rep, master_seed, h_policy = args
    sample = generate(spec, _stream(master_seed, spec, rep, 0))
    try:
        theta_hat = max_score(
            sample.x, sample.d, SearchConfig(seed=_search_seed(master_seed, spec, rep))
        )
        b_hat = _corrected_estimate(sample, theta_hat, h_policy, QUARTIC).beta
        b_orc = _corrected_estimate(
            sample, fixed_index(spec.theta0), h_policy, QUARTIC
        ).beta
    except (EstimationError, BandwidthError, ValueError, np.linalg.LinAlgError):
        return None
    return float(np.linalg.norm(b_hat - b_orc))


def theorem1_gap(
    spec: DgpSpec,
    n_list,
    reps: int,
    master_seed: int,
    *,
    h_policy="cv",
    n_jobs: int = 1,
    arms=(Arm.PLUGIN_THETA_HAT, Arm.PLUGIN_THETA0),
) -> list[dict]:
    """Per sample size, the median of sqrt(n) times the estimated-direction
    versus known-direction estimate gap on shared samples."""
    if Arm.NO_CORRECTION in arms:
        raise ValueError("the uncorrected arm has no index; gap is undefined")
    n_list = list(n_list)
    if sorted(n_list) != n_list:
        raise ValueError("sample sizes must be increasing")
    out = []
    for n in n_list:
        spec_n = replace(spec, n=n)
        tasks = [(spec_n, r, master_seed, h_policy) for r in range(reps)]
        if n_jobs <= 1:
            gaps = [_gap_rep(t) for t in tasks]
        else:
            with ProcessPoolExecutor(max_workers=n_jobs) as pool:
                gaps = list(pool.map(_gap_rep, tasks, chunksize=max(1, reps // (n_jobs * 4))))
        ok = np.array([g for g in gaps if g is not None])
        failures = reps - ok.size
        if failures > _MAX_FAILURE_RATE * reps:
            raise EstimationError(f"{failures}/{reps} gap replications failed at n={n}")
        out.append(
            {
                "n": n,
                "median_scaled_gap": float(np.median(np.sqrt(n) * ok)),
                "reps": reps,
                "failures": failures,
            }
        )
    return out


def _binned_curve(u: np.ndarray, vals: np.ndarray, n_bins: int, mask=None):
    """Binned conditional mean of vals given u in [0, 1], linearly interpolable."""
    if mask is None:
        mask = np.ones(u.shape[0], dtype=bool)
    bins = np.minimum((u[mask] * n_bins).astype(np.intp), n_bins - 1)
    cnt = np.bincount(bins, minlength=n_bins).astype(float)
    tot = np.bincount(bins, weights=vals[mask], minlength=n_bins)
    centers = (np.arange(n_bins) + 0.5) / n_bins
    alive = cnt > 0
    means = np.empty(n_bins)
    means[alive] = tot[alive] / cnt[alive]
    if not alive.all():
        means[~alive] = np.interp(centers[~alive], centers[alive], means[alive])
    return centers, means


def _pop_ecdf(pop_sorted: np.ndarray, values: np.ndarray) -> np.ndarray:
    return np.searchsorted(pop_sorted, values, side="right") / pop_sorted.size


def bahadur_check(
    n: int,
    reps: int,
    h: float,
    master_seed: int,
    *,
    family: Family = Family.AN,
    k: int = 3,
    radius_scale: float = 1.0,
    n_directions: int = 5,
    population: int = 100_000,
    n_bins: int = 200,
    phi=None,
    psi=None,
    kernel: Kernel = QUARTIC,
) -> dict:
    """Compare the leave-one-out smoother functional against its linear form.

    For directions theta on a sphere of radius ``radius_scale * n^(-1/3)``
    around the true direction, computes

        nu_n = n^{-1/2} sum_i psi(s_i) (ghat_{-i}(u_i) - g(u_i))

    with the leave-one-out smoother, and the linear surrogate

        n^{-1/2} sum_i g_psi(u_i) (phi(w_i) - g(u_i)),

    where the population curves g, g_psi come from binned conditional means
    on a large simulated population. Returns the per-replication sup over
    theta of the absolute difference; its average shrinking with n is the
    testable footprint of the uniform representation.

    The functional instances are w = y (outcome), s = first z column,
    psi = tanh, phi = identity, overridable for degenerate-case tests.
    """
    if n < 200:
        raise ValueError(f"need n >= 200, got {n}")
    phi = phi if phi is not None else (lambda w: w)
    psi = psi if psi is not None else np.tanh
    spec = DgpSpec(family=family, k=k, n=n)
    theta0 = normalize_direction(spec.theta0)

    dir_rng = _stream(master_seed, spec, 0, 4)
    radius = radius_scale * n ** (-1.0 / 3.0)
    thetas = [theta0]
    for _ in range(n_directions):
        vec = dir_rng.standard_normal(k)
        thetas.append(normalize_direction(theta0 + radius * vec / np.linalg.norm(vec)))

    pop = generate(replace(spec, n=population), _stream(master_seed, spec, 0, 3))
    pop_w = phi(pop.y)
    pop_s = psi(pop.z[:, 0])
    curves = []
    for theta in thetas:
        idx = np.sort(pop.x @ theta)
        u_pop = _pop_ecdf(idx, pop.x @ theta)
        cg, gw = _binned_curve(u_pop, pop_w, n_bins)
        _, gs = _binned_curve(u_pop, pop_s, n_bins)
        curves.append((idx, cg, gw, gs))

    sups = np.empty(reps)
    for rep in range(reps):
        sample = generate(spec, _stream(master_seed, spec, rep, 2))
        w_i = phi(sample.y)
        s_i = psi(sample.z[:, 0])
        worst = 0.0
        for theta, (idx_sorted, cg, gw, gs) in zip(thetas, curves):
            iv = sample.x @ theta
            u_loo = ranks_loo(iv)
            ghat = snn_fit(u_loo, w_i, None, h=h, kernel=kernel, loo=True).fitted
            u_true = _pop_ecdf(idx_sorted, iv)
            g_w = np.interp(u_true, cg, gw)
            g_s = np.interp(u_true, cg, gs)
            nu = (s_i * (ghat - g_w)).sum() / np.sqrt(n)
            lin = (g_s * (w_i - g_w)).sum() / np.sqrt(n)
            worst = max(worst, abs(nu - lin))
        sups[rep] = worst

    return {
        "n": n,
        "h": float(h),
        "sup_gap": float(sups.mean()),
        "per_rep": sups,
        "radius": radius,
        "reps": reps,
    }


def index_smoothness(
    family: Family,
    k: int,
    radii,
    master_seed: int,
    *,
    population: int = 100_000,
    n_directions: int = 16,
    n_bins: int = 400,
) -> dict:
    """Population-level sensitivity of the smoothed moment map to the index.

    On one fixed simulated population, computes the selection-model moment
    block a(theta) = E[z (mu_y(u_theta), mu_z(u_theta)') | d = 1] with binned
    conditional means, and reports max over directions of
    ||a(theta0 + r v) - a(theta0)|| for each radius r. Quadratic decay of
    these gaps in r is the smoothness the two-step argument leans on.
    """
    spec = DgpSpec(family=family, k=k, n=population)
    pop = generate(spec, _stream(master_seed, spec, 0, 5))
    theta0 = normalize_direction(spec.theta0)
    sel = pop.d == 1
    w_cols = np.column_stack([pop.y, pop.z])

    def a_of(theta):
        u = ranks(pop.x @ theta).u
        mus = np.empty((sel.sum(), w_cols.shape[1]))
        bins = np.minimum((u[sel] * n_bins).astype(np.intp), n_bins - 1)
        for j in range(w_cols.shape[1]):
            _, curve = _binned_curve(u, w_cols[:, j], n_bins, mask=sel)
            mus[:, j] = curve[bins]
        return pop.z[sel].T @ mus / sel.sum()

    dir_rng = _stream(master_seed, spec, 0, 6)
    dirs = dir_rng.standard_normal((n_directions, k))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    a0 = a_of(theta0)
    gaps = {}
    for r in radii:
        worst = 0.0
        for v in dirs:
            worst = max(worst, float(np.linalg.norm(a_of(theta0 + r * v) - a0)))
        gaps[float(r)] = worst
    return gaps
