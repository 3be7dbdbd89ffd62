"""Robust 2-D location estimation by normalized reweighting.

A location estimate for samples {x_i} minimizes sum_i rho(||z - x_i||)
over z.  Each iteration reweights the samples by w_i = weight(||z - x_i||)
and moves to the weighted mean

    z+ = sum_i w_i x_i / sum_i w_i,

which exactly minimizes the quadratic majorizer of the objective, so the
objective never increases.  With the quadratic penalty all weights are 1
and the first iteration already lands on the grand mean; with the
absolute penalty this is the classic geometric-median iteration; with the
capped penalty samples farther than gamma receive weight zero and stop
influencing the estimate, which is what keeps the estimate near the clean
mean as the outlier fraction grows.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import penalties
from ._rng import substream

#: defaults mirror the simulation setup: clean samples from N((0,0), 1),
#: outliers from N((8,8), 0.5) (second parameter is the variance)
CLEAN_CENTER = (0.0, 0.0)
CLEAN_VAR = 1.0
OUTLIER_CENTER = (8.0, 8.0)
OUTLIER_VAR = 0.5


@dataclass(frozen=True)
class SampleSet:
    """Clean and outlier 2-D samples, kept separate so bias is measurable."""

    clean: np.ndarray
    outliers: np.ndarray
    seed: int

    def __post_init__(self):
        if self.clean.shape[0] < 1:
            raise ValueError("need at least one clean sample")

    @property
    def points(self):
        if self.outliers.size == 0:
            return self.clean
        return np.vstack([self.clean, self.outliers])

    @property
    def clean_mean(self):
        return self.clean.mean(axis=0)


@dataclass(frozen=True)
class MeanEstimate:
    value: np.ndarray
    trajectory: np.ndarray  # iterates including the start, last row == value
    converged: bool
    iterations_used: int


def generate_samples(n_clean, outlier_ratio, seed, clean_center=CLEAN_CENTER,
                     clean_var=CLEAN_VAR, outlier_center=OUTLIER_CENTER,
                     outlier_var=OUTLIER_VAR):
    """Draw n_clean Gaussian samples plus outliers at the requested ratio.

    The outlier count m solves m = round(ratio * (n_clean + m)), so the
    ratio is a fraction of the combined sample.  Deterministic given seed.
    """
    if not 0 <= outlier_ratio < 1:
        raise ValueError("outlier_ratio must lie in [0, 1)")
    n_clean = int(n_clean)
    m = int(round(outlier_ratio * n_clean / (1.0 - outlier_ratio)))
    rng = substream(seed, "mean-sim")
    clean = np.asarray(clean_center) + np.sqrt(clean_var) * rng.standard_normal(
        (n_clean, 2))
    outliers = np.asarray(outlier_center) + np.sqrt(outlier_var) * (
        rng.standard_normal((m, 2)))
    return SampleSet(clean=clean, outliers=outliers, seed=int(seed))


def location_objective(points, z, penalty):
    """sum_i rho(||z - x_i||) for the matching penalty."""
    d = np.linalg.norm(points - np.asarray(z), axis=1)
    return float(np.sum(penalty.rho(d)))


def estimate_mean(samples, penalty, max_iter=200, tol=1e-9, z0=None):
    """Reweighting iteration for the penalized location estimate.

    Starts from the coordinate-wise median of all samples (deterministic
    and biased toward the majority cluster) unless z0 overrides it.  Stops
    when the iterate moves less than tol, when max_iter is reached, or --
    capped penalty only -- when every sample sits beyond gamma and all
    weights vanish, which is flagged as not converged.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    pts = samples.points if isinstance(samples, SampleSet) else np.asarray(samples)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("location estimation is specified for 2-D samples")
    if pts.shape[0] == 0:
        raise ValueError("empty sample set")
    z = np.median(pts, axis=0) if z0 is None else np.asarray(z0, dtype=float)
    trajectory = [z]
    converged = False
    iterations = 0
    for _ in range(max_iter):
        w = penalty.weight(np.linalg.norm(pts - z, axis=1))
        total = w.sum()
        if total == 0.0:
            break  # every sample pruned: nothing pulls the iterate
        z_new = (w @ pts) / total
        trajectory.append(z_new)
        iterations += 1
        if np.linalg.norm(z_new - z) <= tol:
            z = z_new
            converged = True
            break
        z = z_new
    return MeanEstimate(value=z, trajectory=np.asarray(trajectory),
                        converged=converged, iterations_used=iterations)


def bias_report(samples, estimates):
    """Distance of each named estimate to the clean-sample mean.

    `estimates` maps labels to MeanEstimate values (dict or pair list);
    returns one {"estimator", "distance"} row per entry.
    """
    items = estimates.items() if isinstance(estimates, dict) else list(estimates)
    if not items:
        raise ValueError("no estimates to report")
    target = samples.clean_mean
    return [
        {"estimator": str(label),
         "distance": float(np.linalg.norm(est.value - target))}
        for label, est in items
    ]


class RobustLocation(BaseEstimator):
    """Sklearn-style robust location estimator for 2-D samples.

    After `fit(X)` the estimate is in `location_`, with the iterate path
    in `trajectory_` and convergence diagnostics in `converged_` and
    `n_iter_`.
    """

    def __init__(self, penalty="mcp", gamma=4.0, eps=1e-12, max_iter=200,
                 tol=1e-9):
        self.penalty = penalty
        self.gamma = gamma
        self.eps = eps
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y=None):
        cfg = {"kind": self.penalty}
        if self.penalty == "mcp":
            cfg["gamma"] = self.gamma
        pen = penalties.from_config(cfg, eps=self.eps)
        est = estimate_mean(np.asarray(X, dtype=float), pen,
                            max_iter=self.max_iter, tol=self.tol)
        self.location_ = est.value
        self.trajectory_ = est.trajectory
        self.converged_ = est.converged
        self.n_iter_ = est.iterations_used
        return self
