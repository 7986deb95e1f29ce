"""Distances between empirical laws."""
from __future__ import annotations

import numpy as np
from scipy.stats import wasserstein_distance

from .rng import RngStream

N_PROJ = 32


def projections(n: int = N_PROJ) -> np.ndarray:
    th = np.pi * np.arange(n) / n
    return np.stack([np.cos(th), np.sin(th)], axis=1)


def w1(u, v) -> float:
    return float(wasserstein_distance(np.ravel(u), np.ravel(v)))


def sliced_w1(X, Y, n_proj: int = N_PROJ) -> float:
    """Mean 1-d W1 of the two clouds over equi-angular directions in [0, pi)."""
    P = projections(n_proj)
    X, Y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
    return float(np.mean([w1(X @ d, Y @ d) for d in P]))


def bootstrap_se(stat, X, Y, rng: RngStream, n_boot: int = 50) -> float:
    """Standard error of ``stat(X, Y)`` by resampling both samples."""
    X, Y = np.asarray(X), np.asarray(Y)
    vals = []
    for _ in range(n_boot):
        i = (rng.uniform(X.shape[0]) * X.shape[0]).astype(np.int64)
        j = (rng.uniform(Y.shape[0]) * Y.shape[0]).astype(np.int64)
        vals.append(stat(X[i], Y[j]))
    return float(np.std(vals, ddof=1))


def moments(X) -> dict:
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    m = X.mean(axis=0)
    C = np.cov(X.T)
    # SE of covariance entries for (near-)Gaussian data
    d = np.sqrt(np.diag(C))
    cse = np.sqrt((C**2 + np.outer(d**2, d**2)) / (n - 1))
    return {"mean": m.tolist(), "mean_se": (d / np.sqrt(n)).tolist(),
            "cov": C.tolist(), "cov_se": cse.tolist()}
