"""Zero-mean generalized Gaussian distribution (GGD) statistics.

The density is

    p(x; alpha, sigma) = alpha / (2 beta Gamma(1/alpha)) * exp(-(|x|/beta)^alpha)

with beta = sigma * sqrt(Gamma(1/alpha) / Gamma(3/alpha)), so sigma is the
standard deviation for every shape alpha. alpha = 2 is Gaussian, alpha = 1 is
Laplacian. Fitting uses the classic moment-matching estimator: the ratio
gamma(alpha) = Gamma(2/alpha)^2 / (Gamma(1/alpha) Gamma(3/alpha)) equals
(E|x|)^2 / E[x^2] and is strictly increasing in alpha, so a bisection on
[ALPHA_MIN, ALPHA_MAX] recovers the shape; sigma = sqrt(E[x^2]).

The Kullback-Leibler divergence between two GGDs is closed-form. Expanding
KL(p||q) = E_p[ln p - ln q] with E_p[(|x|/beta_q)^alpha_q] =
(beta_p/beta_q)^alpha_q * Gamma((alpha_q+1)/alpha_p) / Gamma(1/alpha_p):

    KL(p||q) = ln( alpha_p beta_q Gamma(1/alpha_q)
                 / (alpha_q beta_p Gamma(1/alpha_p)) )
               + (beta_p/beta_q)^alpha_q Gamma((alpha_q+1)/alpha_p)
                 / Gamma(1/alpha_p)
               - 1/alpha_p
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FitError, ValidationError

ALPHA_MIN = 0.1
ALPHA_MAX = 10.0
ALPHA_BISECTION_TOL = 1e-6
MIN_FIT_COUNT = 1000

NEG_INF = float("-inf")


@dataclass(frozen=True)
class GGDParams:
    """Shape, scale (standard deviation), and the derived exponent scale."""

    alpha: float
    sigma: float
    beta: float
    clamped: bool = False


@dataclass
class SampleVector:
    """1-D float64 sample container consumed by the GGD fitter."""

    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64).ravel()

    @property
    def count(self) -> int:
        return int(self.values.size)


def beta_from(alpha: float, sigma: float) -> float:
    return sigma * math.exp(0.5 * (math.lgamma(1.0 / alpha) - math.lgamma(3.0 / alpha)))


def make_ggd(alpha: float, sigma: float, clamped: bool = False) -> GGDParams:
    if not (alpha > 0.0 and math.isfinite(alpha)):
        raise ValidationError(f"alpha must be a positive finite number, got {alpha}")
    if not (sigma > 0.0 and math.isfinite(sigma)):
        raise ValidationError(f"sigma must be a positive finite number, got {sigma}")
    return GGDParams(alpha=float(alpha), sigma=float(sigma), beta=beta_from(alpha, sigma), clamped=clamped)


def ggd_pdf(params: GGDParams, x: np.ndarray | float) -> np.ndarray | float:
    """Density of the zero-mean GGD, vectorized over x."""
    a, b = params.alpha, params.beta
    norm = a / (2.0 * b * math.exp(math.lgamma(1.0 / a)))
    xs = np.asarray(x, dtype=np.float64)
    out = norm * np.exp(-((np.abs(xs) / b) ** a))
    return float(out) if np.isscalar(x) or xs.ndim == 0 else out


def moment_ratio(alpha: float) -> float:
    """gamma(alpha) = Gamma(2/a)^2 / (Gamma(1/a) Gamma(3/a)), in (0, 3/4)."""
    return math.exp(2.0 * math.lgamma(2.0 / alpha) - math.lgamma(1.0 / alpha) - math.lgamma(3.0 / alpha))


def fit_ggd(samples: SampleVector | np.ndarray, min_count: int = MIN_FIT_COUNT) -> GGDParams:
    """Moment-matching fit of (alpha, sigma) to zero-mean samples.

    alpha is bisected on [ALPHA_MIN, ALPHA_MAX] to |delta alpha| <= 1e-6 and
    clamped (with the `clamped` flag set) when the empirical moment ratio
    falls outside the attainable range.
    """
    values = samples.values if isinstance(samples, SampleVector) else np.asarray(samples, dtype=np.float64).ravel()
    if values.size < min_count:
        raise FitError(f"need at least {min_count} samples, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise FitError("samples contain non-finite values")
    m1 = float(np.mean(np.abs(values)))
    m2 = float(np.mean(values**2))
    # Spread at or below 1e-12 is float-error residue, not signal: treat as
    # the zero-variance degenerate case rather than fitting noise.
    if m2 <= 1e-24 or values.min() == values.max():
        raise FitError("degenerate zero-variance samples")
    sigma = math.sqrt(m2)
    target = m1 * m1 / m2

    lo, hi = ALPHA_MIN, ALPHA_MAX
    if target <= moment_ratio(lo):
        return make_ggd(lo, sigma, clamped=True)
    if target >= moment_ratio(hi):
        return make_ggd(hi, sigma, clamped=True)
    while hi - lo > ALPHA_BISECTION_TOL:
        mid = 0.5 * (lo + hi)
        if moment_ratio(mid) < target:
            lo = mid
        else:
            hi = mid
    return make_ggd(0.5 * (lo + hi), sigma)


def kl_ggd(p: GGDParams, q: GGDParams) -> float:
    """Closed-form KL(p||q). Zero (to rounding) iff the parameters match."""
    log_term = (
        math.log(p.alpha)
        - math.log(q.alpha)
        + math.log(q.beta)
        - math.log(p.beta)
        + math.lgamma(1.0 / q.alpha)
        - math.lgamma(1.0 / p.alpha)
    )
    growth = (
        q.alpha * (math.log(p.beta) - math.log(q.beta))
        + math.lgamma((q.alpha + 1.0) / p.alpha)
        - math.lgamma(1.0 / p.alpha)
    )
    value = log_term + math.exp(growth) - 1.0 / p.alpha
    return max(value, 0.0)


def sym_log_kl(p: GGDParams, q: GGDParams) -> float:
    """Natural log of the symmetrized KL; -inf sentinel for identical fits."""
    if p.alpha == q.alpha and p.sigma == q.sigma:
        return NEG_INF
    s = 0.5 * (kl_ggd(p, q) + kl_ggd(q, p))
    if s <= 0.0:
        return NEG_INF
    return math.log(s)


def sample_ggd(params: GGDParams, count: int, seed: int) -> SampleVector:
    """i.i.d. GGD draws via the gamma transform |x| = beta * G^(1/alpha).

    G ~ Gamma(1/alpha, 1) and a fair random sign; deterministic per seed.
    """
    if count < 1:
        raise ValidationError("count must be >= 1")
    rng = np.random.default_rng(seed)
    g = rng.standard_gamma(1.0 / params.alpha, size=count)
    magnitude = params.beta * np.power(g, 1.0 / params.alpha)
    sign = np.where(rng.random(count) < 0.5, -1.0, 1.0)
    return SampleVector(values=magnitude * sign)
