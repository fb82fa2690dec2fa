"""FID, KID and distribution checks against analytic mixtures."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError, InsufficientDataError, NotPSDError, ParameterError
from .numerics import RngStream, gaussian, psd_sqrt


@dataclass
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int


def fit_stats(features):
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise ContractError(f"features must be (n, d), got {f.shape}")
    if f.shape[0] < 2:
        raise InsufficientDataError(f"need at least 2 samples, got {f.shape[0]}")
    mu = f.mean(axis=0)
    c = f - mu
    sigma = c.T @ c / (f.shape[0] - 1)
    return GaussianStats(mu, 0.5 * (sigma + sigma.T), f.shape[0])


def _trace_sqrt_product(s1, s2):
    """Tr((s1 s2)^{1/2}) computed as Tr((s1^{1/2} s2 s1^{1/2})^{1/2})."""
    r1 = psd_sqrt(s1)
    m = r1 @ s2 @ r1
    return float(np.trace(psd_sqrt(0.5 * (m + m.T))))


def fid(a, b):
    if a.mu.shape != b.mu.shape or a.sigma.shape != b.sigma.shape:
        raise ContractError(f"dimension mismatch: {a.mu.shape} vs {b.mu.shape}")
    diff = a.mu - b.mu
    s1, s2 = a.sigma, b.sigma
    try:
        tr = _trace_sqrt_product(s1, s2)
    except NotPSDError:
        eye = 1e-6 * np.eye(s1.shape[0])
        s1, s2 = s1 + eye, s2 + eye
        tr = _trace_sqrt_product(s1, s2)
    value = float(diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * tr)
    return max(value, 0.0)


def fid_from_features(x, y):
    return fid(fit_stats(x), fit_stats(y))


@dataclass
class KIDConfig:
    degree: int = 3
    gamma: float = None  # None means 1/d
    coef: float = 1.0
    subset_size: int = 100
    n_subsets: int = 10

    def __post_init__(self):
        if self.subset_size < 2:
            raise ParameterError("subset_size must be >= 2")
        if self.n_subsets < 1:
            raise ParameterError("n_subsets must be >= 1")


def mmd2_unbiased(x, y, gamma, coef=1.0, degree=3):
    """Unbiased squared MMD with kernel ``(gamma <x, y> + coef) ** degree``."""
    n, m = x.shape[0], y.shape[0]
    sxx, syy, sxy = kernels.poly_kernel_sums(x, y, gamma, coef, degree)
    return sxx / (n * (n - 1)) + syy / (m * (m - 1)) - 2.0 * sxy / (n * m)


def kid(x, y, cfg=None, rng=None):
    """Mean and standard deviation of the unbiased MMD^2 over random subsets."""
    cfg = KIDConfig() if cfg is None else cfg
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[1] != y.shape[1]:
        raise ContractError("feature dimensions differ")
    m = cfg.subset_size
    if m > min(len(x), len(y)):
        raise ParameterError(f"subset size {m} exceeds sample counts {len(x)}, {len(y)}")
    gamma = 1.0 / x.shape[1] if cfg.gamma is None else cfg.gamma
    rng = RngStream(0, 0x6B6964) if rng is None else rng
    vals = []
    for _ in range(cfg.n_subsets):
        ix = rng.permutation(len(x))[:m]
        iy = rng.permutation(len(y))[:m]
        vals.append(mmd2_unbiased(x[ix], y[iy], gamma, cfg.coef, cfg.degree))
    vals = np.asarray(vals)
    std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return float(vals.mean()), std


def wasserstein_1d(a, b):
    """W1 between two 1D empirical distributions of any sizes: integral of |F_a - F_b|."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    grid = np.sort(np.concatenate([a, b]))
    fa = np.searchsorted(a, grid[:-1], side="right") / a.size
    fb = np.searchsorted(b, grid[:-1], side="right") / b.size
    return float(np.sum(np.abs(fa - fb) * np.diff(grid)))


def sliced_wasserstein(x, y, n_projections=32, rng=None):
    """Mean 1D Wasserstein-1 distance over random unit directions."""
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
    rng = RngStream(0, 0x5357) if rng is None else rng
    dirs = gaussian(rng, (n_projections, x.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    px, py = x @ dirs.T, y @ dirs.T
    return float(np.mean([wasserstein_1d(px[:, k], py[:, k]) for k in range(n_projections)]))


@dataclass
class DistributionReport:
    weights: np.ndarray
    mean_errors: np.ndarray
    sliced_w: float
    baseline_sliced_w: float

    def to_dict(self):
        return {"weights": self.weights.tolist(), "mean_errors": self.mean_errors.tolist(),
                "sliced_w": self.sliced_w, "baseline_sliced_w": self.baseline_sliced_w}


def distribution_checks(samples, target, rng=None, n_projections=32, min_samples=1000,
                        ref_factor=16, n_baseline=4):
    """Compare samples with an analytic mixture.

    Weights come from nearest-mean assignment; mean errors are distances
    between each component's assigned-sample mean and its true mean (NaN if a
    component received no samples). ``sliced_w`` is measured against a direct
    reference sample ``ref_factor`` times larger than ``samples``;
    ``baseline_sliced_w`` is the same distance averaged over ``n_baseline``
    independent direct samples of the same size as ``samples``.
    """
    x = np.asarray(samples, dtype=np.float64).reshape(len(samples), -1)
    if len(x) < min_samples:
        raise InsufficientDataError(f"need at least {min_samples} samples, got {len(x)}")
    rng = RngStream(0, 0x44434B) if rng is None else rng
    d2 = ((x[:, None, :] - target.means[None]) ** 2).sum(axis=-1)
    assign = d2.argmin(axis=1)
    K = len(target.weights)
    weights = np.bincount(assign, minlength=K) / len(x)
    errs = np.full(K, np.nan)
    for k in range(K):
        if np.any(assign == k):
            errs[k] = float(np.linalg.norm(x[assign == k].mean(axis=0) - target.means[k]))
    ref, _ = target.sample_data(ref_factor * len(x), rng.child(1))
    proj = rng.child(2)
    sw = sliced_wasserstein(x, ref, n_projections, proj.copy())
    base = [sliced_wasserstein(target.sample_data(len(x), rng.child(10 + i))[0], ref,
                               n_projections, proj.copy()) for i in range(n_baseline)]
    return DistributionReport(weights, errs, sw, float(np.mean(base)))
