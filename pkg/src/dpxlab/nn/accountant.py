"""Renyi-DP accounting for the subsampled Gaussian mechanism.

Each DP-SGD step applies the Gaussian mechanism to a Poisson-subsampled batch
(sampling rate q, noise multiplier sigma).  Its Renyi divergence at integer
order alpha has the closed binomial form (Mironov et al. 2019)

    A(alpha) = sum_{k=0..alpha} C(alpha, k) (1-q)^(alpha-k) q^k
               exp((k^2 - k) / (2 sigma^2)),
    RDP(alpha) = log A(alpha) / (alpha - 1),

evaluated in log space.  Composition over steps is additive in RDP, and the
standard conversion gives (epsilon, delta); we minimize over a fixed grid of
integer orders.
"""

from __future__ import annotations

import math

from ..errors import ConfigError

DEFAULT_ORDERS = tuple(range(2, 65))


def _log_binom(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def rdp_subsampled_gaussian(q: float, sigma: float, alpha: int) -> float:
    """Per-step RDP of order ``alpha`` for sampling rate ``q`` and noise ``sigma``."""
    if not 0.0 < q <= 1.0:
        raise ConfigError(f"sampling rate must be in (0, 1], got {q}")
    if sigma <= 0.0:
        raise ConfigError(f"noise multiplier must be positive, got {sigma}")
    if not isinstance(alpha, int) or alpha < 2:
        raise ConfigError(f"order must be an integer >= 2, got {alpha}")
    if q == 1.0:
        # plain Gaussian mechanism
        return alpha / (2.0 * sigma**2)
    log_terms = []
    log_q = math.log(q)
    log_1mq = math.log1p(-q)
    for k in range(alpha + 1):
        log_terms.append(
            _log_binom(alpha, k)
            + k * log_q
            + (alpha - k) * log_1mq
            + (k * k - k) / (2.0 * sigma**2)
        )
    m = max(log_terms)
    log_a = m + math.log(sum(math.exp(t - m) for t in log_terms))
    # A(alpha) >= 1 by Jensen; clamp rounding noise
    return max(log_a, 0.0) / (alpha - 1)


def epsilon_from_rdp(
    q: float,
    sigma: float,
    steps: int,
    delta: float,
    orders: tuple[int, ...] = DEFAULT_ORDERS,
) -> tuple[float, int]:
    """Tightest (epsilon, best_order) over the order grid after ``steps`` compositions."""
    if steps < 1:
        raise ConfigError(f"steps must be positive, got {steps}")
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"delta must be in (0, 1), got {delta}")
    best = (math.inf, orders[0])
    for alpha in orders:
        eps = steps * rdp_subsampled_gaussian(q, sigma, alpha) + math.log(1.0 / delta) / (
            alpha - 1
        )
        if eps < best[0]:
            best = (eps, alpha)
    return best


def accountant_epsilon(q: float, sigma: float, steps: int, delta: float) -> float:
    """Epsilon spent by ``steps`` subsampled-Gaussian steps at rate ``q``, noise ``sigma``."""
    return epsilon_from_rdp(q, sigma, steps, delta)[0]


def sigma_for_epsilon(
    q: float,
    steps: int,
    epsilon_target: float,
    delta: float,
    sigma_lo: float = 0.3,
    sigma_hi: float = 200.0,
    iterations: int = 80,
) -> float:
    """Smallest noise multiplier (by bisection) whose spent epsilon meets the target.

    Epsilon is monotone decreasing in sigma, so plain bisection suffices.
    Raises ConfigError when even ``sigma_hi`` cannot reach the target.
    """
    if epsilon_target <= 0.0:
        raise ConfigError(f"epsilon target must be positive, got {epsilon_target}")
    if accountant_epsilon(q, sigma_hi, steps, delta) > epsilon_target:
        raise ConfigError(
            f"epsilon target {epsilon_target} unreachable with sigma <= {sigma_hi}"
        )
    if accountant_epsilon(q, sigma_lo, steps, delta) <= epsilon_target:
        return sigma_lo
    lo, hi = sigma_lo, sigma_hi
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if accountant_epsilon(q, mid, steps, delta) <= epsilon_target:
            hi = mid
        else:
            lo = mid
    return hi
