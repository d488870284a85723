"""Throughput-maximizing block count m and code rate R.

Closed forms exist for the MAC phase under the error-exponent model: the
optimal rate fraction R/R0 depends only on the block length k through the
lower Lambert-W branch, and for h = 0, Y = 2 the optimal m has a Lambert-W
form too. Everything else is found by direct minimization of the expected
bit-time: an outer scan over admissible m and an inner golden-section
search over R on a bracket whose unimodality is checked on a coarse grid
first.

The m scan stops once a lower bound on the cost of every larger m exceeds
the incumbent. For m' = (Y-1)m unknowns each block of k bits costs at least
``g(k) = min_R 1/(R (1 - eps(R, k)))`` per channel, so any m'' >= m costs at
least ``(Y-1)(K + m h) g(k(m))`` per phase; the bound grows with m because
g grows as blocks shorten.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import overhead as ovh
from . import throughput as tp
from .channel import CodingModel, block_error, cutoff_rate
from .errors import ConfigurationError, ContractError, ModelDomainError
from .throughput import ExpectedCost, NetworkParams

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
LAMBERT_A1 = 0.3361
LAMBERT_A2 = 0.0042
LAMBERT_A3 = 0.0201
R_FLOOR = 1e-3
GRID_POINTS = 40
GOLDEN_TOL = 1e-10
PHI = (math.sqrt(5.0) - 1.0) / 2.0

SCHEMES = ("rlnc", "tdma")
PHASES = ("mac", "broadcast", "joint")


# Lambert W, lower branch

def _w_approx_sigma(sigma: float) -> float:
    root = math.sqrt(sigma)
    inner = 1.0 + LAMBERT_A1 * math.sqrt(sigma / 2.0) / (
        1.0 - LAMBERT_A2 * sigma * math.exp(-LAMBERT_A3 * root))
    return -1.0 - sigma - 2.0 / LAMBERT_A1 * (1.0 - 1.0 / inner)


def _check_w_domain(x: float) -> None:
    if not -1.0 / math.e - 1e-16 <= x < 0.0:
        raise ModelDomainError(f"W_-1 is real only on [-1/e, 0), got {x}")


def lambert_w_m1_approx(x: float) -> float:
    """Closed-form approximation of W_-1 (max relative error about 0.025%)."""
    _check_w_domain(x)
    sigma = max(-math.log(-x) - 1.0, 0.0)
    return _w_approx_sigma(sigma)


def lambert_w_m1_neg_exp(s: float) -> float:
    """W_-1(-exp(-s)) for s >= 1, without forming the underflowing argument.

    Solves ``w + ln(-w) + s = 0`` by Halley iteration from the closed-form
    approximation; the residual equals ln(W e^W / x).
    """
    if s < 1.0:
        if s > 1.0 - 1e-15:
            s = 1.0
        else:
            raise ModelDomainError(f"W_-1(-exp(-s)) needs s >= 1, got {s}")
    if s == 1.0:
        return -1.0
    w = _w_approx_sigma(s - 1.0)
    for _ in range(50):
        g = w + math.log(-w) + s
        if abs(g) <= 1e-15 * max(1.0, s):
            break
        g1 = 1.0 + 1.0 / w
        g2 = -1.0 / (w * w)
        denom = 2.0 * g1 * g1 - g * g2
        step = 2.0 * g * g1 / denom if denom != 0.0 else g / g1
        w_new = w - step
        if not w_new < -1.0:
            w_new = 0.5 * (w - 1.0)
        if w_new == w:
            break
        w = w_new
    return w


def lambert_w_m1(x: float) -> float:
    """Lower branch W_-1(x) on [-1/e, 0), refined to |W e^W - x| <= 1e-12 |x|."""
    _check_w_domain(x)
    if x <= -1.0 / math.e:
        return -1.0
    return lambert_w_m1_neg_exp(-math.log(-x))


# MAC-phase closed forms

def optimal_rate_ratio_mac(k: float) -> float:
    """R/R0 minimizing k/(R (1 - 2^(-k (R0/R - 1)))) for a k-bit input block."""
    if k <= 0:
        raise ConfigurationError(f"block length must be positive, got {k}")
    w = lambert_w_m1_neg_exp(LN2 * k + 1.0)
    return -LN2 * k / (w + 1.0)


def rate_stationarity_residual(ratio: float, k: float) -> float:
    """d/dR of the MAC cost, up to a positive factor, at R/R0 = ratio."""
    e = 2.0 ** (-k * (1.0 / ratio - 1.0))
    return 1.0 - e - LN2 * k / ratio * e


def m_stationarity_residual(m: float, z: float, K: float, h: float, Y: int, X: float) -> float:
    """d/dm of the MAC RLNC cost at fixed z = R0/R - 1, written as
    ``2^(z k) - 1 - ln2 z K k (X + m(Y-1)) / (K X - h m^2 (Y-1))``."""
    k = K / m + h
    return (2.0 ** (z * k) - 1.0
            - LN2 * z * K * k * (X + m * (Y - 1)) / (K * X - h * m * m * (Y - 1)))


def optimal_m_given_z(K: float, z: float, X: float) -> float:
    """Continuous optimal m for h = 0, Y = 2 at fixed z = R0/R - 1."""
    c = 1.0 + LN2 * z * K / X
    return -LN2 * z * K / (c + lambert_w_m1_neg_exp(c))


def closed_form_m_mac(K: float, q: int, iterations: int = 200) -> tuple[float, float]:
    """Joint continuous optimum (m, R/R0) for h = 0, Y = 2.

    Alternates the closed-form m at fixed rate and the closed-form rate at
    block length K/m until both settle.
    """
    X = ovh.overhead_upper(q, 2)
    m = 1.0
    ratio = optimal_rate_ratio_mac(K / m)
    for _ in range(iterations):
        z = 1.0 / ratio - 1.0
        m_new = max(optimal_m_given_z(K, z, X), 1e-9)
        ratio = optimal_rate_ratio_mac(K / m_new)
        if abs(m_new - m) <= 1e-12 * m_new:
            m = m_new
            break
        m = m_new
    return m, ratio


def _tdma_terms(ratio: float, k: float, Y: int):
    z = 1.0 / ratio - 1.0
    out = []
    for i in range(1, Y):
        e = 2.0 ** (-i * z * k)
        out.append((i, (1.0 - e - i * k * LN2 / ratio * e) / (1.0 - e) ** 2))
    return out


def broadcast_tdma_residual(ratio: float, k: float, Y: int) -> float:
    """Stationarity of the TDMA broadcast cost in R (Y-1 destinations)."""
    return sum((-1) ** i * math.comb(Y - 1, i) * t for i, t in _tdma_terms(ratio, k, Y))


def joint_tdma_residual(ratio: float, k: float, Y: int) -> float:
    """Stationarity of the symmetric joint TDMA cost in R."""
    terms = _tdma_terms(ratio, k, max(Y, 2))
    return broadcast_tdma_residual(ratio, k, Y) - terms[0][1]


# one-dimensional minimization

def golden_section(f, a: float, b: float, tol: float = GOLDEN_TOL, max_iter: int = 500):
    """Minimize a unimodal f on [a, b]; returns (x, f(x), iterations)."""
    c = b - PHI * (b - a)
    d = a + PHI * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while abs(b - a) > tol * max(1.0, abs(a) + abs(b)) and it < max_iter:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + PHI * (b - a)
            fd = f(d)
        it += 1
    if fc <= fd:
        return c, fc, it
    return d, fd, it


def is_unimodal(values) -> bool:
    """True if the sequence is non-increasing up to its minimum and non-decreasing after."""
    v = np.nan_to_num(np.asarray(values, dtype=float), nan=np.inf, posinf=np.finfo(float).max)
    i = int(np.argmin(v))
    left, right = v[:i + 1], v[i:]
    return bool(np.all(np.diff(left) <= 0) and np.all(np.diff(right) >= 0))


@dataclass
class LineSearch:
    x: float
    value: float
    evaluations: int
    unimodal: bool


def minimize_on_grid(f, grid, tol: float = GOLDEN_TOL) -> LineSearch:
    """Coarse grid, unimodality check, then golden section around the best point.

    A non-unimodal grid is logged and refined around its global minimum on a
    grid ten times denser before the golden-section polish.
    """
    grid = np.asarray(grid, dtype=float)
    values = np.array([f(x) for x in grid])
    evals = grid.size
    unimodal = is_unimodal(values)
    if not unimodal:
        log.info("objective not unimodal on its bracket; refining by grid search")
        i = int(np.argmin(values))
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        grid = np.linspace(lo, hi, 10 * GRID_POINTS)
        values = np.array([f(x) for x in grid])
        evals += grid.size
    i = int(np.argmin(values))
    if not np.isfinite(values[i]):
        raise ModelDomainError("objective is infinite everywhere on the bracket")
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    x, fx, it = golden_section(f, lo, hi, tol)
    if values[i] < fx:
        x, fx = grid[i], values[i]
    return LineSearch(float(x), float(fx), evals + it + 2, unimodal)


# rate search on a model's domain

EPS_CEILING = 0.999


def _ppv_rate_ceiling(k: float, p: float) -> float:
    """Rate at which the PPV block error reaches EPS_CEILING."""
    if block_error(CodingModel.PPV, 1.0, k, p) < EPS_CEILING:
        return 1.0
    lo, hi = R_FLOOR * 1e-3, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if block_error(CodingModel.PPV, mid, k, p) >= EPS_CEILING:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-13:
            break
    return lo


class RateSpace:
    """Search coordinate for R on a model's admissible bracket.

    Error-exponent model: ``R = R_lim / (1 + exp(u))`` so the search can get
    as close to the cutoff rate as long blocks demand. PPV: R itself. Both
    brackets end where the block error reaches EPS_CEILING; beyond it the
    cost exceeds a thousand times the error-free cost and cannot be optimal.
    """

    def __init__(self, model, ps, k: float) -> None:
        self.model = CodingModel.parse(model)
        noisy = [p for p in ps if p > 0.0]
        self.noiseless = not noisy
        if self.noiseless:
            self.lo = self.hi = 1.0
            return
        if self.model is CodingModel.ERROR_EXPONENT:
            self.r_lim = min(cutoff_rate(p) for p in noisy)
            r_lo = min(R_FLOOR, self.r_lim / 10.0)
            self.lo = math.log(-math.log2(EPS_CEILING) / k)
            self.hi = math.log(self.r_lim / r_lo - 1.0)
        else:
            self.r_lim = min(_ppv_rate_ceiling(k, p) for p in noisy)
            self.lo = min(R_FLOOR, self.r_lim / 10.0)
            self.hi = self.r_lim

    def rate(self, u: float) -> float:
        if self.noiseless:
            return 1.0
        if self.model is CodingModel.ERROR_EXPONENT:
            return self.r_lim / (1.0 + math.exp(u))
        return u

    def grid(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, GRID_POINTS)


def minimize_rate(cost, model, ps, k: float):
    """Minimize ``cost(R)`` over the admissible rates; returns (R, cost, LineSearch)."""
    space = RateSpace(model, ps, k)
    if space.noiseless:
        return 1.0, cost(1.0), LineSearch(1.0, cost(1.0), 1, True)

    def f(u):
        try:
            v = cost(space.rate(u))
        except (ModelDomainError, ZeroDivisionError, OverflowError, ArithmeticError):
            return math.inf
        return v if np.isfinite(v) else math.inf

    ls = minimize_on_grid(f, space.grid())
    return space.rate(ls.x), ls.value, ls


def min_cost_per_bit(model, p: float, k: float) -> float:
    """g(k) = min_R 1 / (R (1 - eps(R, k))): least bit-time per delivered input bit."""
    if p == 0.0:
        return 1.0
    model = CodingModel.parse(model)
    if model is CodingModel.ERROR_EXPONENT:
        ratio = optimal_rate_ratio_mac(k)
        R = cutoff_rate(p) * ratio
        return 1.0 / (R * -math.expm1(-LN2 * k * (1.0 / ratio - 1.0)))
    _, v, _ = minimize_rate(lambda R: 1.0 / (R * (1.0 - block_error(model, R, k, p))), model, [p], k)
    return v


def optimal_rate_broadcast_tdma(k: float, Y: int) -> float:
    """R/R0 minimizing the TDMA broadcast cost for Y-1 destinations."""
    if Y < 2:
        raise ConfigurationError(f"broadcast needs Y >= 2, got {Y}")

    def f(u):
        z = math.exp(u)
        return (1.0 + z) * tp.br_tdma_blocks_finite(Y, 1, 2.0 ** (-k * z))

    ls = minimize_on_grid(f, np.linspace(math.log(1e-12), math.log(1e3), GRID_POINTS), 1e-12)
    return 1.0 / (1.0 + math.exp(ls.x))


def optimal_rate_joint_tdma(k: float, Y: int) -> float:
    """R/R0 minimizing the symmetric joint TDMA cost (uplink plus broadcast)."""
    def f(u):
        z = math.exp(u)
        e = 2.0 ** (-k * z)
        return (1.0 + z) * (Y / (1.0 - e) + tp.br_tdma_blocks_finite(Y, 1, e))

    ls = minimize_on_grid(f, np.linspace(math.log(1e-12), math.log(1e3), GRID_POINTS), 1e-12)
    return 1.0 / (1.0 + math.exp(ls.x))


# joint search over (m, R)

@dataclass
class OptimizationResult:
    scheme: str
    phase: str
    m_opt: int
    R_opt: float
    R_over_R0: float | None
    cost: ExpectedCost
    params: NetworkParams
    certificate: str
    trace: list = field(default_factory=list)
    fallbacks: int = 0

    @property
    def throughput(self) -> float:
        return self.cost.throughput

    def as_row(self) -> dict:
        return {
            "m_opt": self.m_opt,
            "R_opt": self.R_opt,
            "R_over_R0": self.R_over_R0,
            "blocks": self.cost.blocks,
            "bits": self.cost.bits,
            "throughput": self.cost.throughput,
            "certificate": self.certificate,
        }


def _blocks_function(scheme: str, phase: str, overhead):
    if scheme == "rlnc":
        if phase == "mac":
            return lambda p: tp.mac_rlnc_blocks(p, overhead)
        if phase == "broadcast":
            return tp.br_rlnc_blocks
        return tp.star_rlnc_slots
    if phase == "mac":
        return tp.mac_tdma_blocks
    if phase == "broadcast":
        return tp.br_tdma_blocks
    return tp.star_tdma_slots


def phase_params(params: NetworkParams, phase: str) -> NetworkParams:
    """Silence the channel a single-phase analysis treats as error free."""
    if phase == "mac":
        return params.replace(p_br=0.0, eps_br=None)
    if phase == "broadcast":
        return params.replace(p_mac=0.0, eps_mac=None)
    return params


def _phase_channels(params: NetworkParams, phase: str):
    if phase == "mac":
        return [params.p_mac]
    if phase == "broadcast":
        return [params.p_br]
    return [params.p_mac, params.p_br]


def candidate_ms(params: NetworkParams, tdma: bool, m_max: int | None = None):
    g = 1 if tdma else params.l
    if params.divisibility == "continuous":
        top = params.K
    else:
        top = max(1, -(-params.K // g))
    if m_max is not None:
        top = min(top, m_max)
    return [m for m in range(1, top + 1) if tp.admissible(params.K, m, g, params.divisibility)]


def optimize_rate(params: NetworkParams, scheme: str = "rlnc", phase: str = "joint",
                  overhead="bound"):
    """Best R at the fixed m of ``params``; returns (R, bits, LineSearch)."""
    tdma = scheme == "tdma"
    params = phase_params(params, phase)
    blocks = _blocks_function(scheme, phase, overhead)
    k = params.k(tdma)

    def cost(R):
        p = params.replace(R=R)
        return blocks(p) * p.n(tdma)

    return minimize_rate(cost, params.model, _phase_channels(params, phase), k)


def optimize(params: NetworkParams, scheme: str = "rlnc", phase: str = "joint",
             exhaustive: bool = False, m_max: int | None = None,
             overhead="bound") -> OptimizationResult:
    """Minimize expected bit-time over admissible m and R.

    ``params.m`` and ``params.R`` are ignored. With ``exhaustive`` every
    admissible m up to ``m_max`` is evaluated; otherwise the scan stops when
    the lower bound described in the module docstring rules out the rest.
    """
    if scheme not in SCHEMES or phase not in PHASES:
        raise ContractError(f"unknown scheme/phase {scheme!r}/{phase!r}")
    tdma = scheme == "tdma"
    params = phase_params(params, phase)
    channels = _phase_channels(params, phase)
    blocks_fn = _blocks_function(scheme, phase, overhead)
    ms = candidate_ms(params, tdma, m_max)
    if not ms:
        raise ConfigurationError(
            f"no admissible block count for K={params.K}, q={params.q} ({params.divisibility})")
    per_unknown = params.Y if tdma else params.Y - 1
    best = None
    trace = []
    fallbacks = 0
    certificate = "exhaustive" if exhaustive else "scan"
    for m in ms:
        pm = params.replace(m=m)
        k = pm.k(tdma)
        if not exhaustive and best is not None and per_unknown > 0:
            g = sum(min_cost_per_bit(params.model, p, k) for p in channels)
            bound = per_unknown * (params.K + m * params.h) * g
            if bound > best[2]:
                certificate = "bounded"
                trace.append({"m": m, "pruned_by_bound": bound})
                break

        def cost(R, pm=pm):
            p = pm.replace(R=R)
            return blocks_fn(p) * p.n(tdma)

        R, bits, ls = minimize_rate(cost, params.model, channels, k)
        fallbacks += not ls.unimodal
        trace.append({"m": m, "R": R, "bits": bits})
        if best is None or bits < best[2]:
            best = (m, R, bits)
    m, R, _ = best
    final = params.replace(m=m, R=R)
    cost = ExpectedCost.from_blocks(final, blocks_fn(final), tdma)
    noisy = [p for p in channels if p > 0]
    ratio = None
    if params.model is CodingModel.ERROR_EXPONENT and noisy:
        ratio = R / min(cutoff_rate(p) for p in noisy)
    return OptimizationResult(scheme, phase, m, R, ratio, cost, final, certificate, trace, fallbacks)


def optimal_m_mac(params: NetworkParams, overhead="bound", exhaustive: bool = False,
                  m_max: int | None = None) -> OptimizationResult:
    """MAC-phase RLNC optimum using the closed-form rate for every m.

    Error-exponent model only; for each admissible m the rate is
    R0 * optimal_rate_ratio_mac(k(m)), which is the exact minimizer in R.
    """
    if params.model is not CodingModel.ERROR_EXPONENT:
        raise ModelDomainError("closed-form MAC optimum requires the error-exponent model")
    params = phase_params(params, "mac")
    ms = candidate_ms(params, False, m_max)
    if not ms:
        raise ConfigurationError(
            f"no admissible block count for K={params.K}, q={params.q} ({params.divisibility})")
    r0 = cutoff_rate(params.p_mac) if params.p_mac > 0 else 1.0
    best = None
    trace = []
    certificate = "exhaustive" if exhaustive else "scan"
    for m in ms:
        pm = params.replace(m=m)
        k = pm.k()
        if not exhaustive and best is not None and params.Y > 1:
            bound = (params.Y - 1) * (params.K + m * params.h) * min_cost_per_bit(
                params.model, params.p_mac, k)
            if bound > best[2]:
                certificate = "bounded"
                break
        R = r0 * optimal_rate_ratio_mac(k) if params.p_mac > 0 else 1.0
        bits = tp.mac_rlnc_bits(pm.replace(R=R), overhead)
        trace.append({"m": m, "R": R, "bits": bits})
        if best is None or bits < best[2]:
            best = (m, R, bits)
    m, R, _ = best
    final = params.replace(m=m, R=R)
    cost = ExpectedCost.from_blocks(final, tp.mac_rlnc_blocks(final, overhead))
    return OptimizationResult("rlnc", "mac", m, R, R / r0, cost, final, certificate, trace)


def optimal_joint_tdma(params: NetworkParams, m_max: int = 16) -> OptimizationResult:
    """Joint TDMA optimum; the m scan up to ``m_max`` certifies m = 1."""
    return optimize(params, "tdma", "joint", exhaustive=True, m_max=m_max)


def optimal_joint_rlnc(params: NetworkParams, phase: str = "joint", **kw) -> OptimizationResult:
    return optimize(params, "rlnc", phase, **kw)


def optimal_throughput_ratio(params: NetworkParams, **kw):
    """T_RLNC / T_TDMA with each scheme at its own joint optimum."""
    rl = optimize(params, "rlnc", "joint", **kw)
    td = optimize(params, "tdma", "joint", m_max=kw.get("m_max"))
    return td.cost.bits / rl.cost.bits, rl, td


def find_crossings(f, lo: int, hi: int, level: float = 1.0, samples: int = 24):
    """Integer points where ``f`` crosses ``level`` between lo and hi.

    Sign changes are located on a log-spaced sample and refined by integer
    bisection; each reported K is the first integer with f(K) >= level.
    """
    ks = sorted(set(np.unique(np.geomspace(lo, hi, samples).round().astype(int)).tolist()))
    vals = [f(k) - level for k in ks]
    out = []
    for (a, fa), (b, fb) in zip(zip(ks, vals), zip(ks[1:], vals[1:])):
        if (fa < 0) == (fb < 0):
            continue
        rising = fa < 0
        while b - a > 1:
            mid = (a + b) // 2
            fm = f(mid) - level
            if (fm < 0) == (fa < 0):
                a, fa = mid, fm
            else:
                b, fb = mid, fm
        out.append({"K": b if rising else a, "direction": "up" if rising else "down"})
    return out
