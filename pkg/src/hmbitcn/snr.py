"""SNR gain of two-channel linear fusion, analytic and Monte-Carlo.

Model: x_k = s_k + e_k for k = 1, 2 with zero-mean signals of variance
sigma_s2 and correlation rho, noise of variance sigma_e2 and correlation
gamma, signal independent of noise. Fusing y = a*x1 + b*x2 multiplies the
SNR by (a^2 + b^2 + 2ab*rho) / (a^2 + b^2 + 2ab*gamma).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

DEGENERATE_DENOM = 1e-12


class DegenerateError(ArithmeticError):
    pass


class FusionMode(str, enum.Enum):
    DIFFERENCE = "difference"
    COOPERATIVE = "cooperative"
    NEUTRAL = "neutral"
    DEGRADING = "degrading"


@dataclass(frozen=True)
class SignalModel:
    sigma_s2: float = 1.0
    sigma_e2: float = 1.0
    rho: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if self.sigma_s2 <= 0 or self.sigma_e2 <= 0:
            raise ValueError("variances must be positive")
        if not (-1.0 <= self.rho <= 1.0 and -1.0 <= self.gamma <= 1.0):
            raise ValueError("correlations must lie in [-1, 1]")

    @property
    def snr_in(self) -> float:
        return self.sigma_s2 / self.sigma_e2


def _quad(a: float, b: float, corr: float) -> float:
    return a * a + b * b + 2.0 * a * b * corr


def theoretical_gain(a: float, b: float, rho: float, gamma: float) -> float:
    denom = _quad(a, b, gamma)
    if denom <= DEGENERATE_DENOM:
        raise DegenerateError(f"noise power a^2+b^2+2ab*gamma = {denom:g}; fused noise cancels")
    return _quad(a, b, rho) / denom


def classify_mode(a: float, b: float, rho: float, gamma: float) -> FusionMode:
    if 2.0 * a * b * (rho - gamma) == 0.0:
        return FusionMode.NEUTRAL
    if a * b < 0 and rho < gamma:
        return FusionMode.DIFFERENCE
    if a * b > 0 and rho > gamma:
        return FusionMode.COOPERATIVE
    return FusionMode.DEGRADING


def _correlated_pair(rng: np.random.Generator, count: int, var: float, corr: float):
    z1 = rng.standard_normal(count)
    z2 = rng.standard_normal(count)
    scale = math.sqrt(var)
    first = scale * z1
    second = scale * (corr * z1 + math.sqrt(max(0.0, 1.0 - corr * corr)) * z2)
    return first, second


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream; every random draw in the package goes through this."""
    return np.random.Generator(np.random.Philox(seed))


def sample_correlated_pairs(model: SignalModel, count: int, seed: int):
    """Draw (s1, s2, e1, e2), each of length ``count``."""
    if count <= 0:
        raise ValueError("count must be positive")
    rng = make_rng(seed)
    s1, s2 = _correlated_pair(rng, count, model.sigma_s2, model.rho)
    e1, e2 = _correlated_pair(rng, count, model.sigma_e2, model.gamma)
    return s1, s2, e1, e2


def empirical_snr_gain(a: float, b: float, s1, s2, e1, e2) -> float:
    noise_out = np.var(a * e1 + b * e2)
    noise_in = np.var(e1)
    if noise_out == 0.0 or noise_in == 0.0:
        raise DegenerateError("zero sample noise variance")
    return float((np.var(a * s1 + b * s2) / noise_out) / (np.var(s1) / noise_in))


@dataclass(frozen=True)
class CoefficientOptimum:
    a: float
    b: float
    gain: float
    mode: FusionMode


def grid_search_coefficients(rho: float, gamma: float, grid_resolution: int = 3600) -> CoefficientOptimum:
    """Maximize the gain over unit-norm (a, b); the gain ignores overall scale and sign."""
    theta = np.arange(grid_resolution) * (math.pi / grid_resolution)
    a = np.cos(theta)
    b = np.sin(theta)
    num = 1.0 + 2.0 * a * b * rho
    den = 1.0 + 2.0 * a * b * gamma
    gain = np.where(den > DEGENERATE_DENOM, num / np.where(den > DEGENERATE_DENOM, den, 1.0), -np.inf)
    best = int(np.argmax(gain))
    if gain[best] <= 1.0:
        return CoefficientOptimum(1.0, 0.0, 1.0, FusionMode.NEUTRAL)
    a_best, b_best = float(a[best]), float(b[best])
    return CoefficientOptimum(a_best, b_best, float(gain[best]), classify_mode(a_best, b_best, rho, gamma))


DEFAULT_COEFFICIENTS = [
    (1.0, 1.0), (1.0, -1.0), (0.5, 1.0), (1.0, -0.5), (0.3, 1.0),
    (1.0, -0.3), (-1.0, 0.5), (0.5, 0.5), (1.0, 0.0), (-0.3, -1.0),
]
DEFAULT_CORRELATIONS = [-0.9, -0.5, 0.0, 0.5, 0.9]


def snr_grid(coefficients=None, correlations=None, min_denominator: float = 0.1):
    """(a, b, rho, gamma) cells whose noise denominator is at least ``min_denominator``."""
    coefficients = DEFAULT_COEFFICIENTS if coefficients is None else coefficients
    correlations = DEFAULT_CORRELATIONS if correlations is None else correlations
    cells = []
    for rho in correlations:
        for gamma in correlations:
            for a, b in coefficients:
                if _quad(a, b, gamma) >= min_denominator:
                    cells.append((a, b, rho, gamma))
    return cells


def verify_snr_grid(cells, count: int = 1_000_000, seed: int = 0, sigma_s2: float = 1.0, sigma_e2: float = 1.0):
    """Monte-Carlo check of every cell; one sample draw is shared per (rho, gamma)."""
    rows = []
    cache_key = None
    draws = None
    for a, b, rho, gamma in cells:
        if cache_key != (rho, gamma):
            cache_key = (rho, gamma)
            draws = sample_correlated_pairs(SignalModel(sigma_s2, sigma_e2, rho, gamma), count, seed)
        rows.append({
            "a": a,
            "b": b,
            "rho": rho,
            "gamma": gamma,
            "theoretical_gain": theoretical_gain(a, b, rho, gamma),
            "empirical_gain": empirical_snr_gain(a, b, *draws),
            "mode": classify_mode(a, b, rho, gamma).value,
            "N": count,
            "seed": seed,
        })
    return rows
