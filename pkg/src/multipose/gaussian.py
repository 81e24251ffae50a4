"""Axis-aligned Gaussian over 3D translations."""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

VAR_FLOOR = 1e-8
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianDiag:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, float)
        var = np.asarray(self.var, float)
        if mean.shape != (3,) or var.shape != (3,):
            raise ConfigurationError("mean and var must be 3-vectors")
        if np.any(~np.isfinite(var)) or np.any(var < 0.0):
            raise ConfigurationError(f"variances must be finite and nonnegative, got {var}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", np.maximum(var, VAR_FLOOR))


def log_pdf_batch(mean, var, t):
    """Diagonal Gaussian log density, vectorized over leading axes."""
    r = t - mean
    return -0.5 * np.sum(r * r / var + np.log(var), axis=-1) - 1.5 * LOG_2PI


def log_pdf(g, t):
    return float(log_pdf_batch(g.mean, g.var, np.asarray(t, float)))


def entropy(g):
    """1.5 + 1.5 log(2 pi) + 0.5 log|Sigma|, in nats."""
    var = g.var if isinstance(g, GaussianDiag) else np.asarray(g, float)
    return 1.5 + 1.5 * LOG_2PI + 0.5 * np.sum(np.log(var), axis=-1)


def grad_log_pdf(g, t):
    """(d/d mean, d/d var) of log_pdf."""
    r = np.asarray(t, float) - g.mean
    return r / g.var, 0.5 * (r * r / g.var ** 2 - 1.0 / g.var)
