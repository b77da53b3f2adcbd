"""Quantitative diagnostics: Gaussianity, reconstruction error, concentration.

The correlation metrics treat each state as a (C, H, W) grid and measure mean
absolute Pearson correlation between channels and between adjacent pixels,
computed per image and averaged over the batch.  Absolute published values at
other resolutions do not transfer; always compare against a fresh-Gaussian
reference computed by the same code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import InvalidArgumentError, UndefinedCorrelationError
from .flow import Trajectory


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a.ravel()
    b = b.ravel()
    sa, sb = a.std(), b.std()
    if sa == 0.0 or sb == 0.0:
        raise UndefinedCorrelationError("correlation of a constant signal is undefined")
    return float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))


@dataclass(frozen=True)
class GaussianityReport:
    chan_corr: float
    hori_corr: float
    vert_corr: float
    sample_count: int
    chan_se: float
    hori_se: float
    vert_se: float
    per_image: dict = field(repr=False, default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "chan_corr": self.chan_corr, "hori_corr": self.hori_corr,
            "vert_corr": self.vert_corr, "sample_count": self.sample_count,
            "chan_se": self.chan_se, "hori_se": self.hori_se, "vert_se": self.vert_se,
        }


def correlation_metrics(noises: np.ndarray, grid_shape=None) -> GaussianityReport:
    """Mean absolute inter-channel / horizontal / vertical correlations.

    ``noises`` is ``(B, C, H, W)``, or ``(B, d)`` together with ``grid_shape``.
    Each |r| is computed per image (channel pairs for CHAN; right- and
    down-neighbour pixel pairs pooled over the image for HORI/VERT), then
    averaged over the batch; standard errors describe the batch spread.
    """
    noises = np.asarray(noises, dtype=float)
    if noises.ndim == 2:
        if grid_shape is None:
            raise InvalidArgumentError("flat noises need a grid_shape")
        noises = noises.reshape((noises.shape[0],) + tuple(grid_shape))
    if noises.ndim != 4:
        raise InvalidArgumentError("expected a (B, C, H, W) batch")
    b, c, h, w = noises.shape
    if c < 2 or h < 2 or w < 2:
        raise InvalidArgumentError("need C >= 2 and H, W >= 2")
    chan = np.empty(b)
    hori = np.empty(b)
    vert = np.empty(b)
    pairs = [(i, j) for i in range(c) for j in range(i + 1, c)]
    for k in range(b):
        img = noises[k]
        chan[k] = np.mean([abs(_pearson(img[i], img[j])) for i, j in pairs])
        hori[k] = abs(_pearson(img[:, :, :-1], img[:, :, 1:]))
        vert[k] = abs(_pearson(img[:, :-1, :], img[:, 1:, :]))
    def _se(v):
        return float(v.std(ddof=1) / np.sqrt(b)) if b > 1 else 0.0
    return GaussianityReport(
        chan_corr=float(chan.mean()), hori_corr=float(hori.mean()),
        vert_corr=float(vert.mean()), sample_count=b,
        chan_se=_se(chan), hori_se=_se(hori), vert_se=_se(vert),
        per_image={"chan": chan, "hori": hori, "vert": vert},
    )


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidArgumentError("mse needs matching shapes")
    return float(np.mean((a - b) ** 2))


def ssim(a: np.ndarray, b: np.ndarray, dynamic_range: float,
         window: int = 8, k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale SSIM with a uniform window, averaged over channels.

    Inputs are (C, H, W) grids; the window slides in valid mode, so it must
    fit inside the image.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 3:
        raise InvalidArgumentError("ssim needs matching (C, H, W) grids")
    _, h, w = a.shape
    if window > h or window > w:
        raise InvalidArgumentError("window larger than image")
    if dynamic_range <= 0:
        raise InvalidArgumentError("dynamic range must be positive")
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2

    def _windows(img):
        win = np.lib.stride_tricks.sliding_window_view(img, (window, window), axis=(1, 2))
        return win.reshape(win.shape[0], win.shape[1], win.shape[2], -1)

    wa, wb = _windows(a), _windows(b)
    mu_a = wa.mean(axis=-1)
    mu_b = wb.mean(axis=-1)
    var_a = wa.var(axis=-1)
    var_b = wb.var(axis=-1)
    cov = (wa * wb).mean(axis=-1) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def singularity_trace(oracle, trajectory: Trajectory):
    """Per-point ratio ``||E[x0|x_t] - x_t|| / sigma_t`` along a trajectory.

    Returns ``(sigmas, ratios)``; for batched trajectories the ratio array is
    ``(n_times, batch)``.  Equal to ``sigma_t * ||score||`` pointwise.
    """
    times = trajectory.grid.times
    sigmas = np.asarray(trajectory.schedule.sigma(times))
    if np.any(sigmas <= 0):
        raise InvalidArgumentError("trace needs sigma > 0 on every grid point")
    ratios = np.empty(trajectory.states.shape[:-1])
    for i in range(times.size):
        x = trajectory.states[i]
        pm = oracle.posterior_mean(x, float(sigmas[i]))
        ratios[i] = np.linalg.norm(pm - x, axis=-1) / sigmas[i]
    return sigmas, ratios


def trace_rms(ratios: np.ndarray) -> np.ndarray:
    """Root-mean-square of a batched trace over the batch axis.

    The squared ratio averages to the normal dimension ``d - n`` in the
    small-noise limit, so the RMS curve converges to ``sqrt(d - n)``.
    """
    ratios = np.asarray(ratios)
    if ratios.ndim == 1:
        return ratios
    return np.sqrt(np.mean(ratios**2, axis=tuple(range(1, ratios.ndim))))


@dataclass(frozen=True)
class ConcentrationReport:
    ratios: np.ndarray = field(repr=False)
    coverage_fraction: float
    band: tuple[float, float]
    ks_statistic: float
    ks_pvalue: float
    df: int
    sigma: float

    def to_dict(self) -> dict:
        return {
            "coverage_fraction": self.coverage_fraction, "band": list(self.band),
            "ks_statistic": self.ks_statistic, "ks_pvalue": self.ks_pvalue,
            "df": self.df, "sigma": self.sigma, "trials": int(self.ratios.size),
            "ratio_mean": float(self.ratios.mean()),
            "ratio_rms": float(np.sqrt(np.mean(self.ratios**2))),
        }


def projection_concentration(oracle, sigma: float, trials: int, seed,
                             epsilon: float = 0.05) -> ConcentrationReport:
    """Distribution of the projection distance over ``sigma`` at small noise.

    Draws ``x = x0 + sigma * n`` from the forward process, measures
    ``||x - nearest_manifold_point(x)|| / sigma``, and KS-tests the ratios
    against the chi distribution with ``d - n`` degrees of freedom.  The
    coverage band around ``sqrt(d - n)`` is calibrated on a pilot half of the
    batch (sub-Gaussian tail ``2 exp(-k A^2)`` with ``k`` fitted empirically)
    and evaluated on the fresh half.
    """
    if trials < 100:
        raise InvalidArgumentError("need at least 100 trials")
    if sigma <= 0:
        raise InvalidArgumentError("sigma must be positive")
    x0 = oracle.sample_data((seed, 0xDA7A), trials)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x401)))
    x = x0 + sigma * rng.standard_normal(x0.shape)
    proj = oracle.nearest_manifold_point(x)
    ratios = np.linalg.norm(x - proj, axis=-1) / sigma
    df = oracle.dim - oracle.manifold_dim
    ks = stats.kstest(ratios, stats.chi(df).cdf)
    half = trials // 2
    pilot, fresh = ratios[:half], ratios[half:]
    k_hat = 1.0 / (2.0 * float(pilot.var()))
    a_eps = float(np.sqrt(np.log(2.0 / epsilon) / k_hat))
    center = np.sqrt(df)
    lo, hi = center - a_eps, center + a_eps
    coverage = float(np.mean((fresh >= lo) & (fresh <= hi)))
    return ConcentrationReport(
        ratios=ratios, coverage_fraction=coverage, band=(lo, hi),
        ks_statistic=float(ks.statistic), ks_pvalue=float(ks.pvalue),
        df=df, sigma=float(sigma),
    )


@dataclass(frozen=True)
class BoundCheck:
    delta: float
    d: int
    chi_bound: float  # the radicand d + 2 sqrt(-d log delta) - 2 log delta
    empirical_violation_rate: float | None = None

    def to_dict(self) -> dict:
        return {
            "delta": self.delta, "d": self.d, "chi_bound": self.chi_bound,
            "empirical_violation_rate": self.empirical_violation_rate,
        }


def chi_square_bound(d: int, delta: float, sq_norms: np.ndarray | None = None,
                     trials: int | None = None, seed=None) -> BoundCheck:
    """High-probability bound on the squared norm of a standard Gaussian.

    Returns the radicand ``d + 2 sqrt(-d log delta) - 2 log delta``; the
    squared norm exceeds it with probability at most ``delta``.  Optionally
    measures the empirical violation rate on a provided batch of squared
    norms or on ``trials`` fresh standard-normal draws.
    """
    if d < 1:
        raise InvalidArgumentError("d must be at least 1")
    if not 0.0 < delta < 1.0:
        raise InvalidArgumentError("delta must lie in (0, 1)")
    log_delta = np.log(delta)
    bound = d + 2.0 * np.sqrt(-d * log_delta) - 2.0 * log_delta
    rate = None
    if sq_norms is None and trials is not None:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC41)))
        sq_norms = np.sum(rng.standard_normal((trials, d)) ** 2, axis=1)
    if sq_norms is not None:
        rate = float(np.mean(np.asarray(sq_norms) > bound))
    return BoundCheck(delta=float(delta), d=int(d), chi_bound=float(bound),
                      empirical_violation_rate=rate)
