"""Camera-noise model and learned confidence supports.

Each axis of the measurement noise is a normal truncated at three standard
deviations. A support estimate V_hat(n) is built from n samples by
Bonferroni-splitting the failure budget eps over four intervals (mean and
standard deviation, two axes) and taking

    [mu_lo - 3 sigma_hi, mu_hi + 3 sigma_hi]

per axis. If both intervals cover, the box covers the true support, so the
box misses with probability at most eps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import ndtr, ndtri

from .sets import Box

TRUNCATION = 3.0
MIN_SAMPLES = 8


class InsufficientSamples(ValueError):
    pass


@dataclass(frozen=True)
class TruncNormalAxis:
    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    @property
    def support(self) -> tuple[float, float]:
        return self.mu - TRUNCATION * self.sigma, self.mu + TRUNCATION * self.sigma


@dataclass(frozen=True)
class NoiseModel:
    axes: tuple[TruncNormalAxis, TruncNormalAxis] = (TruncNormalAxis(0.0, 0.004), TruncNormalAxis(0.0, 0.006))

    @classmethod
    def from_arrays(cls, mu, sigma) -> "NoiseModel":
        return cls(tuple(TruncNormalAxis(float(m), float(s)) for m, s in zip(mu, sigma)))

    @property
    def mu(self) -> np.ndarray:
        return np.array([a.mu for a in self.axes])

    @property
    def sigma(self) -> np.ndarray:
        return np.array([a.sigma for a in self.axes])

    @property
    def support(self) -> Box:
        lo, hi = zip(*(a.support for a in self.axes))
        return Box(lo, hi)

    def scaled(self, factor: float) -> "NoiseModel":
        return NoiseModel.from_arrays(self.mu, self.sigma * factor)


def sample_noise(model: NoiseModel, rng, count: int) -> np.ndarray:
    """(count, 2) i.i.d. draws by inverse CDF on the truncated interval."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(rng)
    lo, hi = ndtr(-TRUNCATION), ndtr(TRUNCATION)
    u = rng.uniform(lo, hi, size=(count, 2))
    z = np.clip(ndtri(u), -TRUNCATION, TRUNCATION)
    return model.mu + z * model.sigma


@dataclass(frozen=True)
class ConfidenceSupport:
    n: int
    epsilon: float
    box: Box
    mu_ci: np.ndarray  # (2, 2): rows are axes, columns (lo, hi)
    sigma_ci: np.ndarray
    mean: np.ndarray = field(default=None)
    std: np.ndarray = field(default=None)

    def covers(self, true_support: Box) -> bool:
        return self.box.contains_box(true_support, slack=0.0)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "epsilon": self.epsilon,
            "box": {"type": "box", "lo": self.box.lo.tolist(), "hi": self.box.hi.tolist()},
            "mu_ci": np.asarray(self.mu_ci).tolist(),
            "sigma_ci": np.asarray(self.sigma_ci).tolist(),
            "mean": np.asarray(self.mean).tolist(),
            "std": np.asarray(self.std).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConfidenceSupport":
        return cls(
            n=int(d["n"]),
            epsilon=float(d["epsilon"]),
            box=Box(d["box"]["lo"], d["box"]["hi"]),
            mu_ci=np.asarray(d["mu_ci"], dtype=float),
            sigma_ci=np.asarray(d["sigma_ci"], dtype=float),
            mean=np.asarray(d.get("mean", [np.nan, np.nan]), dtype=float),
            std=np.asarray(d.get("std", [np.nan, np.nan]), dtype=float),
        )


def fit_confidence_support(samples, epsilon: float) -> ConfidenceSupport:
    samples = np.asarray(samples, dtype=float).reshape(-1, 2)
    n = samples.shape[0]
    if n < MIN_SAMPLES:
        raise InsufficientSamples(f"need at least {MIN_SAMPLES} samples per axis, got {n}")
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    level = epsilon / 4.0  # two parameters x two axes
    mean = samples.mean(axis=0)
    std = samples.std(axis=0, ddof=1)
    dof = n - 1
    t = stats.t.ppf(1.0 - level / 2.0, dof)
    half = t * std / np.sqrt(n)
    mu_ci = np.column_stack([mean - half, mean + half])
    chi_lo = stats.chi2.ppf(level / 2.0, dof)
    chi_hi = stats.chi2.ppf(1.0 - level / 2.0, dof)
    sigma_ci = np.column_stack([std * np.sqrt(dof / chi_hi), std * np.sqrt(dof / chi_lo)])
    lo = mu_ci[:, 0] - TRUNCATION * sigma_ci[:, 1]
    hi = mu_ci[:, 1] + TRUNCATION * sigma_ci[:, 1]
    return ConfidenceSupport(n, float(epsilon), Box(lo, hi), mu_ci, sigma_ci, mean, std)


def support_failure_prob(model: NoiseModel, n: int, epsilon: float, trials: int, rng=None) -> float:
    """Fraction of independent refits whose box fails to contain the true support."""
    rng = np.random.default_rng(rng)
    truth = model.support
    misses = 0
    for _ in range(trials):
        cs = fit_confidence_support(sample_noise(model, rng, n), epsilon)
        misses += not cs.covers(truth)
    return misses / trials


def escalate_epsilon(epsilon: float, factor: float = 1.5, cap: float = 0.5):
    """Yield eps, 1.5 eps, ... up to ``cap`` (the last value is the cap itself)."""
    eps = float(epsilon)
    while True:
        yield eps
        if eps >= cap:
            return
        eps = min(eps * factor, cap)
