"""Closed-form RLNC overhead analytics.

``p_success(m, x, q)`` is the probability that m + x uniform random
coefficient vectors in GF(q)^m span the space. The star network needs all
Y sources to resolve m' = (Y-1)m unknowns each; receivers are treated as
independent, giving ``p_success(m', x, q)**Y``.

Infinite sums stop once the summand falls below 1e-14; every summand is
dominated by a geometric series with ratio 1/q, so the omitted tail is at
most ``term * q / (q - 1)``.
"""

from __future__ import annotations

import math

from .errors import ConfigurationError

SERIES_TOL = 1e-14
MAX_TERMS = 100_000


def _check(m: int, x: int, q: int) -> None:
    if m < 0 or x < 0 or q < 2:
        raise ConfigurationError(f"need m >= 0, x >= 0, q >= 2 (got m={m}, x={x}, q={q})")


def log_p_success(m: int, x: int, q: int) -> float:
    """Natural log of p_success; exact for products too close to 1 to store."""
    _check(m, x, q)
    total = 0.0
    lq = math.log(q)
    for i in range(1, m + 1):
        t = math.exp(-(x + i) * lq)
        if t < 1e-22:
            # remaining factors: log1p(-u) == -u to double precision
            remaining = m - i + 1
            total -= t * -math.expm1(-remaining * lq) / -math.expm1(-lq)
            break
        total += math.log1p(-t)
    return total


def p_success(m: int, x: int, q: int) -> float:
    """Probability that m + x random blocks decode m unknowns over GF(q)."""
    return math.exp(log_p_success(m, x, q))


def p_failure(m: int, x: int, q: int) -> float:
    """1 - p_success, computed without cancellation."""
    return -math.expm1(log_p_success(m, x, q))


def p_success_star(m: int, x: int, q: int, Y: int) -> float:
    """All Y receivers can decode their (Y-1)m unknowns from m' + x blocks.

    Y = 1 means zero unknowns, so the probability is 1.
    """
    if Y < 1:
        raise ConfigurationError(f"need Y >= 1, got {Y}")
    return math.exp(Y * log_p_success((Y - 1) * m, x, q))


def p_success_bounds(m: int, x: int, q: int) -> tuple[float, float]:
    """m-independent bounds: lower < p_success(m, x, q) <= upper."""
    _check(m, x, q)
    lower = 1.0 - q ** (-x) / (q - 1)
    upper = 1.0 - q ** (-x - 1.0)
    return lower, upper


def expected_overhead(m: int, q: int) -> float:
    """Mean number of blocks beyond m needed by a single source."""
    if m < 1 or q < 2:
        raise ConfigurationError(f"need m >= 1, q >= 2 (got m={m}, q={q})")
    total = 0.0
    for i in range(1, m + 1):
        term = 1.0 / math.expm1(i * math.log(q))
        total += term
        if term < SERIES_TOL * 1e-3:
            break
    return total


def _binomial_sum(Y: int, q: int, numerator) -> float:
    if Y < 1 or q < 2:
        raise ConfigurationError(f"need Y >= 1, q >= 2 (got Y={Y}, q={q})")
    total = 0.0
    for j in range(1, Y + 1):
        denom = (q - 1) ** j * (q ** j - 1) ** 2
        total += math.comb(Y, j) * (-1) ** (j + 1) * numerator(j) / denom
    return total


def overhead_upper(q: int, Y: int) -> float:
    """m-independent upper bound X*(q, Y) on the star-network overhead."""
    return _binomial_sum(Y, q, lambda j: q ** (2 * j) - (q - 1) ** j)


def overhead_lower(q: int, Y: int) -> float:
    """m-independent lower bound on the star-network overhead."""
    return _binomial_sum(Y, q, lambda j: (q * q - q) ** j - q ** j)


def expected_star_overhead(m: int, q: int, Y: int) -> float:
    """Mean blocks beyond the unknown count until Y independent receivers decode.

    For Y >= 2 each receiver has (Y-1)m unknowns. Y = 1 is the single-source
    case with m unknowns, matching how the Y = 1 bounds are read.
    """
    if m < 1 or q < 2 or Y < 1:
        raise ConfigurationError(f"need m >= 1, q >= 2, Y >= 1 (got m={m}, q={q}, Y={Y})")
    if Y == 1:
        return expected_overhead(m, q)
    unknowns = (Y - 1) * m
    total = 0.0
    for x in range(MAX_TERMS):
        term = -math.expm1(Y * log_p_success(unknowns, x, q))
        total += term
        if term < SERIES_TOL:
            break
    return total
