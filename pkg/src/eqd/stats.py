"""Correlation decay, variance, and central-limit statistics.

Correlations are computed by one forward-orbit sweep over the invariant
sample (pushing forward preserves the measure), which serves every lag
at once; the adjoint-operator route lives in ``transfer`` and acts as an
independent cross-check.  Rate fits use weighted least squares on log
magnitudes above a 2-sigma noise floor with a residual-bootstrap CI.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import rng as _rng
from .dynamics import degrees, map_hash
from .errors import InsufficientSignal, NormUnavailable, OrbitDropWarning
from .fibers import random_preimages_batch
from .measure import integrate
from .observables import Observable

NOISE_FLOOR_SIGMAS = 2.0
DEGENERATE_FACTOR = 10.0


def ks_test(values, cdf):
    """One-sample Kolmogorov-Smirnov statistic and asymptotic p-value.

    Uses the finite-sample correction D * (sqrt(n) + 0.12 + 0.11/sqrt(n))
    before the Kolmogorov tail, accurate down to small sample sizes.
    """
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = x.size
    f = cdf(x)
    grid = np.arange(n, dtype=np.float64)
    d = float(np.maximum((grid + 1) / n - f, f - grid / n).max())
    lam = d * (np.sqrt(n) + 0.12 + 0.11 / np.sqrt(n))
    return float(d), float(special.kolmogorov(lam))


def normal_cdf(mean, sigma):
    return lambda x: special.ndtr((x - mean) / sigma)


def _batch_values_stderr(values):
    b = max(2, int(np.sqrt(values.size)))
    size = values.size // b
    bm = values[: b * size].reshape(b, size)
    return bm, b, size


def _orbit_values(dyn_map, points, obs_list, n_max):
    """Observable values along forward orbits: (n_obs, n_max+1, N) + alive mask."""
    n = points.shape[0]
    vals = np.empty((len(obs_list), n_max + 1, n))
    alive = np.ones(n, dtype=bool)
    cur = points
    for k, ob in enumerate(obs_list):
        vals[k, 0] = ob(cur)
    for step in range(1, n_max + 1):
        cur, ok = dyn_map.evaluate_batch(cur)
        alive &= ok
        for k, ob in enumerate(obs_list):
            vals[k, step] = ob(cur)
    alive &= np.isfinite(vals).all(axis=(0, 1))
    return vals, alive


@dataclass
class CorrelationSeries:
    """Lagged cross-correlations of two observables over an invariant sample."""

    n: np.ndarray
    corr: np.ndarray
    stderr: np.ndarray
    meta: dict
    psi_means: np.ndarray = field(default=None, repr=False)
    psi_mean_stderr: np.ndarray = field(default=None, repr=False)


def correlation_series(dyn_map, mu, psi, phi, n_max):
    """Entries <mu, (psi o f^n) phi> - <mu, psi o f^n><mu, phi> for n <= n_max.

    Samples whose orbit hits indeterminacy or an observable pole are
    dropped from every lag (counted; above 1% a warning fires).  The
    stderr per lag comes from sqrt(N) batch means.
    """
    vals, alive = _orbit_values(dyn_map, mu.points, [psi, phi], n_max)
    dropped = 1.0 - float(mu.weights[alive].sum())
    if dropped > 0.01:
        warnings.warn(f"{dropped:.1%} of orbits dropped", OrbitDropWarning)
    w = mu.weights[alive]
    w = w / w.sum()
    psi_vals = vals[0][:, alive]
    phi0 = vals[1, 0][alive]
    phi_mean = float(w @ phi0)
    exact = mu.provenance.get("method") == "tree"

    corr = np.empty(n_max + 1)
    stderr = np.empty(n_max + 1)
    psi_means = np.empty(n_max + 1)
    psi_se = np.empty(n_max + 1)
    for n in range(n_max + 1):
        pm = float(w @ psi_vals[n])
        psi_means[n] = pm
        corr[n] = float(w @ (psi_vals[n] * phi0)) - pm * phi_mean
        if exact:
            stderr[n] = 0.0
            psi_se[n] = 0.0
        else:
            bm_y, b, size = _batch_values_stderr(psi_vals[n] * phi0)
            bm_p, _, _ = _batch_values_stderr(psi_vals[n])
            bm_f, _, _ = _batch_values_stderr(phi0)
            per_batch = bm_y.mean(axis=1) - bm_p.mean(axis=1) * bm_f.mean(axis=1)
            stderr[n] = float(per_batch.std(ddof=1) / np.sqrt(b))
            psi_se[n] = float(bm_p.mean(axis=1).std(ddof=1) / np.sqrt(b))

    sup_psi = float(np.abs(psi_vals).max())
    sup_phi = float(np.abs(phi0).max())
    assert np.all(np.abs(corr) <= sup_psi * sup_phi + 1e-9 * (1.0 + sup_psi * sup_phi))

    meta = {
        "map_hash": map_hash(dyn_map),
        "psi": psi.spec,
        "phi": phi.spec,
        "sample": dict(mu.provenance),
        "centering": {"phi_mean": phi_mean, "psi_mean_n0": psi_means[0]},
        "dropped_frac": dropped,
        "psi_sup_sample": sup_psi,
        "phi_sup_sample": sup_phi,
    }
    return CorrelationSeries(np.arange(n_max + 1), corr, stderr, meta, psi_means, psi_se)


@dataclass
class DecayFit:
    rate: float
    rate_ci: tuple
    floor_index: int
    n_used: np.ndarray


def decay_fit(series, resamples=1000, seed=0):
    """Exponential decay rate (nats/step) of |corr_n| above the noise floor.

    Weighted least squares on log magnitudes; the CI is a percentile
    residual bootstrap, which assumes nothing about the fit residuals.
    Raises InsufficientSignal with fewer than three usable entries.
    """
    mag = np.abs(series.corr)
    usable = (mag > NOISE_FLOOR_SIGMAS * series.stderr) & (mag > 0)
    if usable.sum() < 3:
        raise InsufficientSignal(f"{int(usable.sum())} entries above the noise floor")
    x = series.n[usable].astype(np.float64)
    y = np.log(mag[usable])
    wts = (mag[usable] / np.maximum(series.stderr[usable], 1e-300)) ** 2
    wts = np.minimum(wts, 1e12)
    sw = np.sqrt(wts)
    design = np.stack([np.ones_like(x), x], axis=1)

    def solve(yy):
        coef, *_ = np.linalg.lstsq(design * sw[:, None], yy * sw, rcond=None)
        return coef

    coef = solve(y)
    rate = -float(coef[1])
    resid = y - design @ coef
    gen = _rng.stream(seed, 11)
    boot = np.empty(resamples)
    for i in range(resamples):
        yy = design @ coef + resid[gen.integers(0, resid.size, size=resid.size)]
        boot[i] = -solve(yy)[1]
    lo, hi = np.percentile(boot, [2.5, 97.5])
    below = np.nonzero(~usable)[0]
    floor_index = int(series.n[below[0]]) if below.size else int(series.n[-1]) + 1
    return DecayFit(rate, (float(lo), float(hi)), floor_index, series.n[usable].copy())


@dataclass
class MixingBoundReport:
    """Per-lag ratios of |corr_n| to the theoretical decay envelope."""

    n: np.ndarray
    ratios: np.ndarray
    ratio_stderr: np.ndarray
    bounds: np.ndarray
    usable: np.ndarray
    a_emp: float
    exponent_violation: bool


def mixing_bound_check(series, dyn_map, phi_star_norm, psi_sup):
    """Compare a correlation series against sup * quasi-norm * envelope.

    The envelope is delta_n^(1/2) d_t^(-n/2).  A_emp is the largest
    ratio over entries above the noise floor; the violation flag fires
    when successive usable ratios increase beyond 3 sigma, i.e. when the
    data decays with a smaller exponent than the envelope.
    """
    if phi_star_norm is None or psi_sup is None or not np.isfinite(phi_star_norm * psi_sup):
        raise NormUnavailable("need finite psi sup norm and phi quasi-norm")
    rep = degrees(dyn_map)
    envelope = np.array(
        [np.sqrt(rep.delta(int(n))) * rep.d_t ** (-int(n) / 2.0) for n in series.n]
    )
    bounds = psi_sup * phi_star_norm * envelope
    ratios = np.abs(series.corr) / bounds
    rse = series.stderr / bounds
    usable = np.abs(series.corr) > NOISE_FLOOR_SIGMAS * series.stderr
    a_emp = float(ratios[usable].max()) if np.any(usable) else 0.0
    violation = False
    idx = np.nonzero(usable)[0]
    for a, b in zip(idx[:-1], idx[1:]):
        if ratios[b] - ratios[a] > 3.0 * np.hypot(rse[a], rse[b]):
            violation = True
    return MixingBoundReport(series.n.copy(), ratios, rse, bounds, usable, a_emp, violation)


def green_kubo_sigma2(dyn_map, mu, phi, n_max):
    """Integrated-autocorrelation variance of a centered observable.

    sigma^2 = <phi^2> + 2 sum_{n>=1} <phi (phi o f^n)>, truncated at
    n_max; the quoted stderr adds a fitted-tail estimate for the
    truncation to the batch-means error of the whole functional.
    """
    center, _ = integrate(mu, phi)
    vals, alive = _orbit_values(dyn_map, mu.points, [phi], n_max)
    dropped = 1.0 - float(mu.weights[alive].sum())
    if dropped > 0.01:
        warnings.warn(f"{dropped:.1%} of orbits dropped", OrbitDropWarning)
    v = vals[0][:, alive] - center
    w = mu.weights[alive]
    w = w / w.sum()
    per_sample = v[0] ** 2 + 2.0 * (v[1:] * v[0]).sum(axis=0)
    sigma2 = float(w @ per_sample)
    bm, b, size = _batch_values_stderr(per_sample)
    stderr = float(bm.mean(axis=1).std(ddof=1) / np.sqrt(b))

    # truncation tail from the fitted decay of the autocovariances
    terms = np.array([float(w @ (v[n] * v[0])) for n in range(n_max + 1)])
    term_se = np.empty(n_max + 1)
    for n in range(n_max + 1):
        bmn, bn, _ = _batch_values_stderr(v[n] * v[0])
        term_se[n] = float(bmn.mean(axis=1).std(ddof=1) / np.sqrt(bn))
    tail = 0.0
    try:
        fit = decay_fit(
            CorrelationSeries(np.arange(1, n_max + 1), terms[1:], term_se[1:], {})
        )
        rho = np.exp(-fit.rate)
        if rho < 1.0:
            tail = 2.0 * abs(terms[n_max]) * rho / (1.0 - rho)
    except InsufficientSignal:
        pass
    return sigma2, stderr + tail


@dataclass
class CltReport:
    """Normalized Birkhoff-sum statistics against the Gaussian limit."""

    sigma2_gk: float
    sigma2_emp: float
    ks_stat: float
    ks_p: float
    n_block: int
    trajectories: int
    degenerate: bool
    noise_floor: float
    stats: np.ndarray = field(repr=False)
    dropped: int = 0

    def __post_init__(self):
        assert self.sigma2_emp >= 0.0
        if self.degenerate:
            assert self.sigma2_emp < self.noise_floor


def birkhoff_clt(dyn_map, mu, phi, n_block, trajectories, seed, gk_n_max=8):
    """Distribution of block-normalized orbit sums of a centered observable.

    Starts are drawn from the sample with replacement; each trajectory
    contributes S = sum_{i<n} phi(f^i x) / sqrt(n).  The report compares
    the empirical law against a centered Gaussian with the integrated
    autocovariance variance; a variance below the n_block noise floor
    flags the observable as degenerate (coboundary-like).
    """
    center, _ = integrate(mu, phi)
    gen = _rng.stream(seed, 13)
    p = None if mu.uniform else mu.weights
    starts = mu.points[gen.choice(len(mu), size=trajectories, replace=True, p=p)]
    sums = np.zeros(trajectories)
    alive = np.ones(trajectories, dtype=bool)
    cur = starts
    for step in range(n_block):
        v = phi(cur) - center
        alive &= np.isfinite(v)
        sums += np.where(alive, v, 0.0)
        if step < n_block - 1:
            cur, ok = dyn_map.evaluate_batch(cur)
            alive &= ok
    stats = sums[alive] / np.sqrt(n_block)
    dropped = int(trajectories - alive.sum())
    if dropped > 0.01 * trajectories:
        warnings.warn(f"{dropped} trajectories dropped", OrbitDropWarning)

    sigma2_gk, gk_se = green_kubo_sigma2(dyn_map, mu, phi, gk_n_max)
    if sigma2_gk < -3.0 * gk_se:
        warnings.warn(
            "integrated variance negative beyond noise: coboundary or error", UserWarning
        )
    m2, _ = integrate(mu, obs_square_centered(phi, center))
    noise_floor = DEGENERATE_FACTOR * max(m2, 1e-300) / n_block
    sigma2_emp = float(stats.var(ddof=1))
    degenerate = sigma2_emp < noise_floor
    if degenerate or sigma2_gk <= 0:
        ks_stat, ks_p = float("nan"), float("nan")
    else:
        ks_stat, ks_p = ks_test(stats, normal_cdf(0.0, np.sqrt(sigma2_gk)))
    return CltReport(
        sigma2_gk,
        sigma2_emp,
        ks_stat,
        ks_p,
        n_block,
        trajectories,
        degenerate,
        noise_floor,
        stats,
        dropped,
    )


def obs_square_centered(phi, center):
    """(phi - center)^2 as a plain callable-compatible observable stand-in."""
    return Observable(
        lambda z: (phi(z) - center) ** 2,
        "composed",
        f"square_centered({phi.spec})",
        dim=phi.dim,
        pole_dist=phi.pole_dist,
    )


def stationarity_check(dyn_map, mu, psi, n_max):
    """Means of psi o f^n with stderr, for push-forward invariance checks."""
    series = correlation_series(dyn_map, mu, psi, psi, n_max)
    return series.psi_means, series.psi_mean_stderr
