"""Expected transmissions for the MAC, broadcast and joint phases.

Costs are counted in blocks (time slots) and in bit-time units, one unit
being the time to send one channel bit. A coded block carries
``n = k / R`` channel bits with ``k = K/m + h``. Throughput is the YK
message bits delivered divided by the expected bit-time.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

from . import overhead as ovh
from .channel import CodingModel, block_error
from .errors import ConfigurationError, ContractError

DIVISIBILITY_MODES = ("strict", "relaxed", "continuous")
TAIL_TERM_TOL = 1e-12
TAIL_BOUND_TOL = 1e-10
MAX_SERIES_TERMS = 1_000_000
MAX_EXPECTED_BLOCKS = 1e6


def payload_bits(K: int, m: int, granularity: int, divisibility: str) -> float:
    """Data bits per block for a K-bit message split into m blocks.

    ``strict`` demands that m*granularity divides K, ``relaxed`` pads each
    block up to a whole number of symbols, ``continuous`` returns K/m.
    """
    if m < 1:
        raise ConfigurationError(f"block count must be >= 1, got {m}")
    if divisibility == "continuous":
        return K / m
    if divisibility == "strict":
        if K % (m * granularity):
            raise ConfigurationError(f"K={K} is not divisible by m*l={m * granularity}")
        return K // m
    if divisibility == "relaxed":
        return granularity * -(-K // (m * granularity))
    raise ConfigurationError(f"unknown divisibility mode {divisibility!r}")


def admissible(K: int, m: int, granularity: int, divisibility: str) -> bool:
    if divisibility == "strict":
        return K % (m * granularity) == 0
    return 1 <= m <= max(1, -(-K // granularity))


@dataclass(frozen=True)
class NetworkParams:
    """A full star-network scenario at one operating point (m, R).

    ``eps_mac`` / ``eps_br`` override the model-derived block error rates,
    which is how tests pin the erasure probabilities directly. TDMA costs
    use 1-bit granularity for block sizes; RLNC uses l = log2(q).
    """

    Y: int
    K: int
    h: int = 0
    q: int = 2
    m: int = 1
    p_mac: float = 0.0
    p_br: float = 0.0
    R: float = 1.0
    model: CodingModel = CodingModel.ERROR_EXPONENT
    divisibility: str = "strict"
    eps_mac: float | None = None
    eps_br: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "model", CodingModel.parse(self.model))
        if self.Y < 1 or self.K < 1 or self.h < 0 or self.m < 1:
            raise ConfigurationError(f"invalid sizes Y={self.Y} K={self.K} h={self.h} m={self.m}")
        if self.q < 2 or self.q & (self.q - 1):
            raise ConfigurationError(f"field size {self.q} is not a power of two >= 2")
        if self.divisibility not in DIVISIBILITY_MODES:
            raise ConfigurationError(f"unknown divisibility mode {self.divisibility!r}")
        for name in ("eps_mac", "eps_br"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v < 1.0:
                raise ConfigurationError(f"{name}={v} outside [0, 1)")

    def replace(self, **changes) -> NetworkParams:
        return dataclasses.replace(self, **changes)

    @property
    def l(self) -> int:
        return self.q.bit_length() - 1

    @property
    def m_prime(self) -> int:
        return (self.Y - 1) * self.m

    def k(self, tdma: bool = False) -> float:
        """Channel input block length K/m + h (after any padding)."""
        return payload_bits(self.K, self.m, 1 if tdma else self.l, self.divisibility) + self.h

    def n(self, tdma: bool = False) -> float:
        return self.k(tdma) / self.R

    def epsilons(self, tdma: bool = False) -> tuple[float, float]:
        k = self.k(tdma)
        e_mac = self.eps_mac if self.eps_mac is not None else block_error(self.model, self.R, k, self.p_mac)
        e_br = self.eps_br if self.eps_br is not None else block_error(self.model, self.R, k, self.p_br)
        return e_mac, e_br


@dataclass(frozen=True)
class ExpectedCost:
    blocks: float
    bits: float
    throughput: float

    @classmethod
    def from_blocks(cls, params: NetworkParams, blocks: float, tdma: bool = False) -> ExpectedCost:
        bits = blocks * params.n(tdma)
        return cls(blocks, bits, params.Y * params.K / bits if bits > 0 else math.inf)


def _geometric_mean_blocks(count: float, eps: float) -> float:
    return count / (1.0 - eps)


# MAC phase

def mac_rlnc_blocks(params: NetworkParams, overhead="bound") -> float:
    """Expected coded blocks sent by the sources until every source can decode.

    ``overhead`` selects the overhead term: "bound" uses X*(q, Y) as in the
    closed-form analysis, "exact" uses the independent-receiver mean for the
    actual m, and a number is used verbatim.
    """
    if overhead == "bound":
        x = ovh.overhead_upper(params.q, params.Y)
    elif overhead == "exact":
        x = ovh.expected_star_overhead(params.m, params.q, params.Y) if params.Y > 1 else 0.0
    else:
        x = float(overhead)
    e_mac, _ = params.epsilons()
    return _geometric_mean_blocks(params.m_prime + x, e_mac)


def mac_rlnc_bits(params: NetworkParams, overhead="bound") -> float:
    return mac_rlnc_blocks(params, overhead) * params.n()


def mac_tdma_blocks(params: NetworkParams) -> float:
    e_mac, _ = params.epsilons(tdma=True)
    return _geometric_mean_blocks(params.Y * params.m, e_mac)


def mac_tdma_bits(params: NetworkParams) -> float:
    return mac_tdma_blocks(params) * params.n(tdma=True)


# broadcast phase, TDMA/ARQ

def br_tdma_blocks_series(Y: int, m: int, eps: float) -> tuple[float, int]:
    """Y m sum_{i>=0} [1 - (1 - eps^i)^(Y-1)], with its truncation index."""
    if Y < 2:
        return 0.0, 0
    if eps >= 1.0 - 1e-15:
        raise ArithmeticError(f"broadcast erasure probability {eps} leaves the series divergent")
    total = 0.0
    for i in range(MAX_SERIES_TERMS):
        term = -math.expm1((Y - 1) * math.log1p(-eps ** i)) if i else 1.0
        total += term
        if i and term < TAIL_TERM_TOL and (eps >= 1.0 or term * eps / (1.0 - eps) < TAIL_BOUND_TOL):
            return Y * m * total, i
    raise ArithmeticError("broadcast series did not converge")


def br_tdma_blocks_finite(Y: int, m: int, eps: float) -> float:
    """Finite alternating form over the Y-1 destinations."""
    return sum((-1) ** (i + 1) * math.comb(Y - 1, i) * Y * m / (1.0 - eps ** i)
               for i in range(1, Y))


def br_tdma_blocks(params: NetworkParams, method: str = "finite") -> float:
    """Expected relay broadcasts until all Y-1 destinations hold every block."""
    _, e_br = params.epsilons(tdma=True)
    if method == "finite":
        return br_tdma_blocks_finite(params.Y, params.m, e_br)
    if method == "series":
        return br_tdma_blocks_series(params.Y, params.m, e_br)[0]
    raise ContractError(f"unknown evaluator {method!r}")


def br_tdma_bits(params: NetworkParams) -> float:
    return br_tdma_blocks(params) * params.n(tdma=True)


# broadcast phase, RLNC

def br_rlnc_series(m_prime: int, q: int, Y: int, eps: float) -> tuple[float, int]:
    """Expected relay broadcasts until Y receivers decode m' unknowns each.

    Returns the value and the index of the last series term used. Term i is
    the probability that i broadcasts are not enough:
    ``1 - [sum_j C(i,j)(1-eps)^j eps^(i-j) p_success(m', j-m', q)]^Y``.
    """
    if m_prime == 0:
        return 0.0, 0
    if not 0.0 <= eps < 1.0:
        raise ContractError(f"broadcast erasure probability {eps} outside [0, 1)")
    if m_prime / (1.0 - eps) > MAX_EXPECTED_BLOCKS:
        raise ArithmeticError(
            f"expected broadcasts exceed {MAX_EXPECTED_BLOCKS:g} (m'={m_prime}, eps={eps:.3g})")
    fail = _failure_table(m_prime, q)
    pmf = _binomial_pmf(m_prime, 1.0 - eps)
    total, idx = _rlnc_series_kernel(pmf, fail, m_prime, Y, 1.0 - eps,
                                     TAIL_TERM_TOL, TAIL_BOUND_TOL, int(MAX_SERIES_TERMS))
    if idx < 0:
        raise ArithmeticError("RLNC broadcast series did not converge")
    return total, idx


@njit(cache=True)
def _rlnc_series_kernel(pmf0, fail, m_prime, Y, s, term_tol, bound_tol, max_terms):
    # pmf of the received count after i broadcasts, starting at i = m'. Mass
    # beyond m' + len(fail) belongs to receivers that are done, so the array
    # is truncated there and each step costs O(m' + len(fail)).
    support = m_prime + fail.size
    pmf = np.zeros(support + 1)
    n0 = min(pmf0.size, support + 1)
    pmf[:n0] = pmf0[:n0]
    width = n0
    total = float(m_prime)
    prev = -1.0
    for i in range(m_prime, max_terms):
        f_one = 0.0
        for j in range(min(m_prime, width)):
            f_one += pmf[j]
        for j in range(m_prime, width):
            f_one += pmf[j] * fail[j - m_prime]
        if f_one > 1.0:
            f_one = 1.0
        term = -math.expm1(Y * math.log1p(-f_one)) if f_one < 1.0 else 1.0
        total += term
        if term < term_tol:
            if term == 0.0:
                return total, i
            if prev > 0.0:
                ratio = term / prev
                if ratio < 1.0 and term * ratio / (1.0 - ratio) < bound_tol:
                    return total, i
        prev = term
        if width < support:
            width += 1
        for j in range(width - 1, 0, -1):
            pmf[j] = pmf[j] * (1.0 - s) + pmf[j - 1] * s
        pmf[0] *= 1.0 - s
    return total, -1


@lru_cache(maxsize=4096)
def _failure_table(m_prime: int, q: int) -> np.ndarray:
    # single-receiver failure probability with x extra blocks, x = 0, 1, ...
    fail = []
    for x in range(10_000):
        f = ovh.p_failure(m_prime, x, q)
        fail.append(f)
        if f < 1e-20:
            break
    out = np.array(fail)
    out.flags.writeable = False
    return out


def _binomial_pmf(n: int, s: float) -> np.ndarray:
    pmf = np.ones(1)
    for _ in range(n):
        pmf = _binomial_step(pmf, s)
    return pmf


def _binomial_step(pmf: np.ndarray, s: float) -> np.ndarray:
    out = np.empty(pmf.size + 1)
    out[0] = pmf[0] * (1.0 - s)
    out[1:-1] = pmf[1:] * (1.0 - s) + pmf[:-1] * s
    out[-1] = pmf[-1] * s
    return out


def br_rlnc_blocks(params: NetworkParams) -> float:
    _, e_br = params.epsilons()
    return br_rlnc_series(params.m_prime, params.q, params.Y, e_br)[0]


def br_rlnc_bits(params: NetworkParams) -> float:
    return br_rlnc_blocks(params) * params.n()


# joint star network

def star_rlnc_slots(params: NetworkParams) -> float:
    """Expected MAC plus broadcast slots; each broadcast needs 1/(1-eps_mac) MAC slots."""
    e_mac, e_br = params.epsilons()
    br = br_rlnc_series(params.m_prime, params.q, params.Y, e_br)[0]
    return br * (1.0 + 1.0 / (1.0 - e_mac))


def star_rlnc_bits(params: NetworkParams) -> float:
    return star_rlnc_slots(params) * params.n()


def star_tdma_slots(params: NetworkParams) -> float:
    e_mac, e_br = params.epsilons(tdma=True)
    return (_geometric_mean_blocks(params.Y * params.m, e_mac)
            + br_tdma_blocks_finite(params.Y, params.m, e_br))


def star_tdma_bits(params: NetworkParams) -> float:
    return star_tdma_slots(params) * params.n(tdma=True)


def star_rlnc_cost(params: NetworkParams) -> ExpectedCost:
    return ExpectedCost.from_blocks(params, star_rlnc_slots(params))


def star_tdma_cost(params: NetworkParams) -> ExpectedCost:
    return ExpectedCost.from_blocks(params, star_tdma_slots(params), tdma=True)


def throughput_ratio(params_rlnc: NetworkParams, params_tdma: NetworkParams) -> float:
    """T_RLNC / T_TDMA = expected TDMA bit-time over expected RLNC bit-time."""
    if (params_rlnc.Y, params_rlnc.K) != (params_tdma.Y, params_tdma.K):
        raise ContractError("both schemes must deliver the same Y and K")
    return star_tdma_bits(params_tdma) / star_rlnc_bits(params_rlnc)


def asymptotic_ratio(Y: int) -> float:
    return Y / (Y - 1)
