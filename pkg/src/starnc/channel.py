"""Binary symmetric channels and block-error models.

Two models map (code rate R, input block bits k, crossover p) to a block
error probability:

* error exponent: ``eps = 2**(-n*(R0 - R))`` with ``n = k/R`` and cutoff
  rate ``R0 = -log2(1/2 + sqrt(p(1-p)))``; valid for R < R0. The bound is
  used as the block error probability itself.
* PPV normal approximation: ``R = C - sqrt(p(1-p)/n) log2((1-p)/p) Qinv(eps)
  + log2(n)/(2n)``, inverted for eps.

Analytics use real-valued n = k/R; simulated transmissions use ceil(k/R).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ModelDomainError
from .rlnc import superpose

PPV_EPS_CLAMP = 1e-12
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class CodingModel(str, enum.Enum):
    ERROR_EXPONENT = "ee"
    PPV = "ppv"

    @classmethod
    def parse(cls, value) -> CodingModel:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ModelDomainError(f"unknown coding model {value!r}; use 'ee' or 'ppv'") from None


@dataclass(frozen=True)
class BscParams:
    p: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 0.5:
            raise ModelDomainError(f"crossover probability {self.p} outside [0, 0.5]")


@dataclass(frozen=True)
class CodeParams:
    R: float
    k: float

    def __post_init__(self) -> None:
        if not 0.0 < self.R <= 1.0:
            raise ModelDomainError(f"code rate {self.R} outside (0, 1]")
        if self.k <= 0:
            raise ContractError(f"input block length {self.k} must be positive")

    @property
    def n(self) -> float:
        return self.k / self.R

    @property
    def n_bits(self) -> int:
        """Whole channel uses per block, as transmitted in simulation."""
        return math.ceil(self.k / self.R - 1e-9)


def _check_p(p: float) -> float:
    return BscParams(float(p)).p


def bsc_transmit(block, p, rng: np.random.Generator) -> np.ndarray:
    """Flip each bit independently with probability p."""
    p = p.p if isinstance(p, BscParams) else _check_p(p)
    block = np.asarray(block, dtype=np.int64)
    flips = rng.random(block.shape) < p
    return block ^ flips.astype(np.int64)


def adder_mac(blocks, p_mac, rng: np.random.Generator) -> np.ndarray:
    """Relay observation of simultaneous transmissions: XOR, then a BSC."""
    return bsc_transmit(superpose(blocks), p_mac, rng)


def cutoff_rate(p: float) -> float:
    p = _check_p(p)
    return -math.log2(0.5 + math.sqrt(p * (1.0 - p)))


def entropy(x: float) -> float:
    """Binary entropy in bits."""
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def capacity(p: float) -> float:
    return 1.0 - entropy(_check_p(p))


def block_error_ee(R: float, k: float, p: float) -> float:
    """Union-bound error exponent block error, 2**(-k (R0/R - 1))."""
    r0 = cutoff_rate(p)
    if not 0.0 < R < r0:
        raise ModelDomainError(f"rate {R} outside (0, R0={r0:.6g})")
    return 2.0 ** (-k * (r0 / R - 1.0))


def q_func(x: float) -> float:
    """Gaussian tail probability Q(x)."""
    return 0.5 * math.erfc(x / _SQRT2)


def _q_inv_guess(y: float) -> float:
    # Tail asymptote for small y, linearization around the centre otherwise.
    t = min(y, 1.0 - y)
    if t < 0.05:
        s = math.sqrt(-2.0 * math.log(t))
        x = s - (2.515517 + 0.802853 * s + 0.010328 * s * s) / (
            1.0 + 1.432788 * s + 0.189269 * s * s + 0.001308 * s ** 3)
    else:
        x = (0.5 - t) * math.sqrt(2.0 * math.pi)
    return x if y < 0.5 else -x


def q_inv(y: float) -> float:
    """Inverse of Q on (0, 1) by bracketed Newton iteration."""
    if not 0.0 < y < 1.0:
        raise ModelDomainError(f"Q^-1 argument {y} outside (0, 1)")
    if y == 0.5:
        return 0.0
    if y > 0.5:
        # 1 - y is exact here and keeps the tail resolution
        return -q_inv(1.0 - y)
    lo, hi = -40.0, 40.0
    x = _q_inv_guess(y)
    for _ in range(200):
        fx = q_func(x) - y
        if fx > 0.0:
            lo = x
        else:
            hi = x
        if abs(fx) <= 1e-15 * y or hi - lo < 1e-15:
            break
        dens = _INV_SQRT_2PI * math.exp(-0.5 * x * x)
        step = fx / dens if dens > 0.0 else math.inf
        x_new = x + step
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if x_new == x:
            break
        x = x_new
    return x


def _ppv_terms(n: float, p: float):
    p = _check_p(p)
    if p == 0.0 or p == 0.5:
        raise ModelDomainError(f"normal approximation is degenerate at p={p}")
    if n < 1.0:
        raise ModelDomainError(f"block length {n} must be at least 1")
    scale = math.sqrt(p * (1.0 - p) / n) * math.log2((1.0 - p) / p)
    return capacity(p), scale, math.log2(n) / (2.0 * n)


def ppv_rate(n: float, p: float, eps: float) -> float:
    """Achievable rate at block length n and block error eps."""
    c, scale, log_term = _ppv_terms(n, p)
    return c - scale * q_inv(eps) + log_term


def ppv_epsilon(n: float, p: float, R: float) -> float:
    """Block error at which rate R is achievable with block length n."""
    c, scale, log_term = _ppv_terms(n, p)
    return q_func((c - R + log_term) / scale)


def block_error(model, R: float, k: float, p: float) -> float:
    """Block error probability used by the optimizers and the simulator.

    A noiseless channel (p = 0) never fails at any R <= 1. PPV errors are
    clamped to [1e-12, 1 - 1e-12].
    """
    model = CodingModel.parse(model)
    if not 0.0 < R <= 1.0:
        raise ModelDomainError(f"code rate {R} outside (0, 1]")
    if _check_p(p) == 0.0:
        return 0.0
    if model is CodingModel.ERROR_EXPONENT:
        return block_error_ee(R, k, p)
    eps = ppv_epsilon(k / R, p, R)
    return min(max(eps, PPV_EPS_CLAMP), 1.0 - PPV_EPS_CLAMP)


def rate_limit(model, p: float) -> float:
    """Largest rate at which the model can deliver a block at all."""
    model = CodingModel.parse(model)
    if _check_p(p) == 0.0:
        return 1.0
    if model is CodingModel.ERROR_EXPONENT:
        return cutoff_rate(p)
    return 1.0
