"""Gaussian and binomial helpers used by the certification formulas."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .errors import ConfigError, DomainError

PROB_EPS = 1e-4
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class ConfidenceParams:
    """Parameters of the two-stage Monte-Carlo certification protocol."""

    alpha: float = 0.001
    n0: int = 100
    n: int = 10_000

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.n0 < 1 or self.n < 1:
            raise ConfigError("n0 and n must be positive")


def std_normal_cdf(x):
    return special.ndtr(x)


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    out = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return float(out) if out.ndim == 0 else out


def std_normal_quantile(p):
    """Inverse of the standard normal CDF; raises outside the open unit interval."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(~((p_arr > 0.0) & (p_arr < 1.0))):
        raise DomainError(f"quantile needs p in (0, 1), got {p}")
    out = special.ndtri(p_arr)
    return float(out) if out.ndim == 0 else out


def clopper_pearson_lower(successes: int, trials: int, alpha: float) -> float:
    """One-sided ``1 - alpha`` lower confidence bound on a binomial proportion."""
    if trials < 1 or not 0 <= successes <= trials:
        raise DomainError(f"need 0 <= successes <= trials, got {successes}/{trials}")
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must be in (0, 1), got {alpha}")
    if successes == 0:
        return 0.0
    return float(stats.beta.ppf(alpha, successes, trials - successes + 1))


def clamp_probability(p, eps: float = PROB_EPS):
    out = np.clip(p, eps, 1.0 - eps)
    return float(out) if np.ndim(out) == 0 else out
