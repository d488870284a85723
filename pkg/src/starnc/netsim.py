"""Monte Carlo simulation of the star-network protocol.

RLNC: every MAC slot all Y sources send a fresh coded block. If the relay
decodes the channel code it broadcasts the superposition once, and each
source that still lacks rank receives it independently. The run ends when
every source can decode (the relay's ACK is free and instantaneous).

TDMA: m rounds, sources in turn. Each block is repeated on the uplink until
the relay gets it, then broadcast until every other source holds it.

Channel decoding is not simulated bit by bit: relay and receiver successes
are Bernoulli draws with the analytic block error rates. Rank-only fidelity
tracks the real coefficient matrices in numba kernels. Symbolic fidelity
pushes actual GF(q) payloads through `rlnc` and checks the decoded bits.
Both draw from the same counter-based streams keyed by (seed, trial, tag,
event), so for one seed they produce identical slot counts.
"""

from __future__ import annotations

import json
import logging
import math
import os
from collections import Counter
from dataclasses import asdict, dataclass, field

import numba
import numpy as np
from numba import njit, prange

from . import __version__
from . import rng as rng_mod
from . import throughput as tp
from .errors import ConfigurationError
from .galois import GaloisField
from .rlnc import CoefficientStream, ReceiverState, SourceMessage, encode_block, superpose
from .rng import (TAG_BROADCAST, TAG_MAC, TAG_PAYLOAD, TAG_SOURCE, TAG_TDMA_DOWN,
                  TAG_TDMA_UP, hash3_nb, hash4_nb, hash5_nb, hash_words, to_unit,
                  to_unit_nb)
from .throughput import NetworkParams

log = logging.getLogger(__name__)

# try TBB last: an old TBB makes numba warn on every run. The caller's
# environment wins
if "NUMBA_THREADING_LAYER" not in os.environ and "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

SCHEMA_VERSION = 1
SLOT_GUARD = 1_000_000
Z_FLAG = 4.0
MODES = ("rlnc", "tdma")
FIDELITIES = ("rank", "symbolic")


# kernels

@njit(cache=True)
def _gf_mul(a, b, exp, log):
    if a == 0 or b == 0:
        return 0
    return exp[log[a] + log[b]]


@njit(cache=True)
def _insert(rows, has, v, n, exp, log, q):
    # reduce v against the pivot rows; store it if it is independent
    for c in range(n):
        if v[c] == 0:
            continue
        if has[c]:
            f = v[c]
            for k in range(c, n):
                if rows[c, k] != 0:
                    v[k] ^= _gf_mul(f, rows[c, k], exp, log)
            continue
        inv = exp[(q - 1 - log[v[c]]) % (q - 1)]
        for k in range(c, n):
            rows[c, k] = _gf_mul(inv, v[k], exp, log)
        has[c] = True
        return True
    return False


@njit(cache=True, parallel=True)
def _rlnc_kernel(seed, trials, Y, m, q, exp, log, eps_mac, eps_br, guard,
                 mac_out, br_out, ovh_out, status):
    mp = (Y - 1) * m
    mask = q - 1
    for t in prange(trials):
        rows = np.zeros((Y, mp, mp), np.int64)
        has = np.zeros((Y, mp), np.bool_)
        rank = np.zeros(Y, np.int64)
        cols = np.zeros(Y, np.int64)
        src = np.empty(Y, np.uint64)
        for s in range(Y):
            src[s] = hash4_nb(seed, t, TAG_SOURCE, s)
        coef = np.empty((Y, m), np.int64)
        v = np.empty(mp, np.int64)
        pending = Y if mp > 0 else 0
        mac = 0
        br = 0
        while pending > 0:
            if mac + br >= guard:
                status[t] = 1
                break
            b = mac
            mac += 1
            if to_unit_nb(hash4_nb(seed, t, TAG_MAC, b)) < eps_mac:
                continue
            ev = br
            br += 1
            for s in range(Y):
                for j in range(m):
                    coef[s, j] = np.int64(hash3_nb(src[s], b, j) & np.uint64(mask))
            for i in range(Y):
                if rank[i] == mp:
                    continue
                if to_unit_nb(hash5_nb(seed, t, TAG_BROADCAST, ev, i)) < eps_br:
                    continue
                cols[i] += 1
                c = 0
                for s in range(Y):
                    if s == i:
                        continue
                    for j in range(m):
                        v[c] = coef[s, j]
                        c += 1
                if _insert(rows[i], has[i], v, mp, exp, log, q):
                    rank[i] += 1
                    if rank[i] == mp:
                        ovh_out[t, i] = cols[i] - mp
                        pending -= 1
        mac_out[t] = mac
        br_out[t] = br


@njit(cache=True, parallel=True)
def _single_overhead_kernel(seed, trials, m, q, exp, log, out):
    mask = q - 1
    for t in prange(trials):
        rows = np.zeros((m, m), np.int64)
        has = np.zeros(m, np.bool_)
        v = np.empty(m, np.int64)
        src = hash4_nb(seed, t, TAG_SOURCE, 0)
        rank = 0
        b = 0
        while rank < m:
            for j in range(m):
                v[j] = np.int64(hash3_nb(src, b, j) & np.uint64(mask))
            b += 1
            if _insert(rows, has, v, m, exp, log, q):
                rank += 1
        out[t] = b - m


@njit(cache=True, parallel=True)
def _tdma_kernel(seed, trials, Y, m, eps_mac, eps_br, guard, mac_out, br_out, status):
    for t in prange(trials):
        got = np.zeros(Y, np.bool_)
        mac = 0
        br = 0
        stop = False
        for r in range(m):
            for s in range(Y):
                while True:
                    if mac + br >= guard:
                        stop = True
                        break
                    u = to_unit_nb(hash4_nb(seed, t, TAG_TDMA_UP, mac))
                    mac += 1
                    if u >= eps_mac:
                        break
                if stop:
                    break
                got[:] = False
                pending = Y - 1
                while pending > 0:
                    if mac + br >= guard:
                        stop = True
                        break
                    ev = br
                    br += 1
                    for d in range(Y):
                        if d == s or got[d]:
                            continue
                        if to_unit_nb(hash5_nb(seed, t, TAG_TDMA_DOWN, ev, d)) >= eps_br:
                            got[d] = True
                            pending -= 1
                if stop:
                    break
            if stop:
                break
        status[t] = 1 if stop else 0
        mac_out[t] = mac
        br_out[t] = br


# reports

@dataclass
class Moments:
    """Count, sum and sum of squares; merges associatively."""

    n: int = 0
    s: float = 0.0
    ss: float = 0.0

    @classmethod
    def of(cls, x) -> Moments:
        x = np.asarray(x, dtype=np.float64)
        return cls(int(x.size), float(x.sum()), float((x * x).sum()))

    def __add__(self, other: Moments) -> Moments:
        return Moments(self.n + other.n, self.s + other.s, self.ss + other.ss)

    @property
    def mean(self) -> float:
        return self.s / self.n if self.n else math.nan

    @property
    def var(self) -> float:
        if self.n < 2:
            return 0.0
        return max(self.ss - self.s * self.s / self.n, 0.0) / (self.n - 1)

    @property
    def se(self) -> float:
        return math.sqrt(self.var / self.n) if self.n else math.nan

    @property
    def ci95(self) -> float:
        return 1.959963984540054 * self.se

    def summary(self) -> dict:
        return {"mean": self.mean, "std": math.sqrt(self.var), "se": self.se,
                "ci95": self.ci95, "n": self.n}


@dataclass(frozen=True)
class TrialConfig:
    params: NetworkParams
    trials: int = 1000
    seed: int = 0
    mode: str = "rlnc"
    fidelity: str = "rank"
    trace: bool = False

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ConfigurationError(f"trial count must be >= 1, got {self.trials}")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.fidelity not in FIDELITIES:
            raise ConfigurationError(f"unknown fidelity {self.fidelity!r}")
        if self.trace and self.fidelity != "symbolic":
            raise ConfigurationError("event traces need symbolic fidelity")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError(f"seed must fit in 64 bits, got {self.seed}")

    @property
    def tdma(self) -> bool:
        return self.mode == "tdma"


@dataclass
class SimulationReport:
    mode: str
    fidelity: str
    trials: int
    seed: int
    params: dict
    mac_slots: Moments
    br_slots: Moments
    total_slots: Moments
    n: float
    overhead_hist: dict = field(default_factory=dict)
    truncated: int = 0
    decode_errors: int = 0
    warnings: list = field(default_factory=list)
    trace: list | None = None

    @property
    def mean_bits(self) -> float:
        return self.total_slots.mean * self.n

    @property
    def throughput(self) -> float:
        bits = self.mean_bits
        return self.params["Y"] * self.params["K"] / bits if bits > 0 else math.inf

    @property
    def overhead_mean(self) -> float:
        count = sum(self.overhead_hist.values())
        return sum(k * v for k, v in self.overhead_hist.items()) / count if count else math.nan

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "tool_version": __version__,
            "mode": self.mode,
            "fidelity": self.fidelity,
            "trials": self.trials,
            "seed": self.seed,
            "params": self.params,
            "slots": {
                "mac": self.mac_slots.summary(),
                "broadcast": self.br_slots.summary(),
                "total": self.total_slots.summary(),
            },
            "bits_per_slot": self.n,
            "mean_bits": self.mean_bits,
            "bits_ci95": self.total_slots.ci95 * self.n,
            "throughput": self.throughput,
            "overhead_histogram": {str(k): v for k, v in sorted(self.overhead_hist.items())},
            "truncated": self.truncated,
            "decode_errors": self.decode_errors,
            "warnings": list(self.warnings),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def params_dict(params: NetworkParams) -> dict:
    d = asdict(params)
    d["model"] = params.model.value
    return d


def _field_tables(q: int):
    l = q.bit_length() - 1
    if q < 2 or 1 << l != q:
        raise ConfigurationError(f"field size must be a power of two, got {q}")
    f = GaloisField(l)
    return f, np.ascontiguousarray(f.exp), np.ascontiguousarray(f.log)


def _report(config: TrialConfig, mac, br, status, hist, decode_errors=0, trace=None):
    ok = status == 0
    truncated = int((~ok).sum())
    warnings = []
    if truncated:
        warnings.append(f"{truncated} trial(s) hit the {SLOT_GUARD} slot guard and were dropped")
        log.warning("%s", warnings[-1])
    if decode_errors:
        warnings.append(f"{decode_errors} receiver(s) decoded wrong data")
    mac, br = mac[ok], br[ok]
    p = config.params
    return SimulationReport(
        mode=config.mode, fidelity=config.fidelity, trials=config.trials, seed=config.seed,
        params=params_dict(p), mac_slots=Moments.of(mac), br_slots=Moments.of(br),
        total_slots=Moments.of(mac + br), n=p.n(config.tdma), overhead_hist=dict(hist),
        truncated=truncated, decode_errors=decode_errors, warnings=warnings, trace=trace)


def simulate_rlnc(config: TrialConfig) -> SimulationReport:
    if config.mode != "rlnc":
        raise ConfigurationError("simulate_rlnc needs an rlnc config")
    if config.fidelity == "symbolic":
        return _simulate_rlnc_symbolic(config)
    p = config.params
    e_mac, e_br = p.epsilons()
    _, exp, lg = _field_tables(p.q)
    T = config.trials
    mac = np.zeros(T, np.int64)
    br = np.zeros(T, np.int64)
    ovh = np.full((T, p.Y), -1, np.int64)
    status = np.zeros(T, np.int64)
    _rlnc_kernel(np.uint64(config.seed), T, p.Y, p.m, p.q, exp, lg, e_mac, e_br,
                 SLOT_GUARD, mac, br, ovh, status)
    done = ovh[status == 0]
    hist = Counter(done[done >= 0].tolist())
    return _report(config, mac, br, status, hist)


def _simulate_rlnc_symbolic(config: TrialConfig) -> SimulationReport:
    p = config.params
    e_mac, e_br = p.epsilons()
    f, _, _ = _field_tables(p.q)
    # pad each block to whole symbols; padding bits are zero
    block_bits = int(tp.payload_bits(p.K, p.m, f.l, "relaxed"))
    mp = p.m_prime
    seed = config.seed
    T = config.trials
    mac = np.zeros(T, np.int64)
    br = np.zeros(T, np.int64)
    status = np.zeros(T, np.int64)
    hist = Counter()
    errors = 0
    trace = [] if config.trace else None
    for t in range(T):
        msgs = []
        for s in range(p.Y):
            g = rng_mod.generator(seed, t, TAG_PAYLOAD, s)
            bits = np.zeros(block_bits * p.m, dtype=np.int64)
            bits[:p.K] = g.integers(0, 2, size=p.K)
            msgs.append(SourceMessage(s, bits, p.m, f))
        streams = [CoefficientStream(s, hash_words(seed, t, TAG_SOURCE, s), p.m, f)
                   for s in range(p.Y)]
        rx = [ReceiverState(s, p.Y, msgs[s]) for s in range(p.Y)]
        decoded_at = {}
        n_mac = n_br = 0
        pending = p.Y if mp > 0 else 0
        while pending:
            if n_mac + n_br >= SLOT_GUARD:
                status[t] = 1
                break
            b = n_mac
            n_mac += 1
            relay_ok = to_unit(hash_words(seed, t, TAG_MAC, b)) >= e_mac
            if trace is not None:
                trace.append({"trial": t, "slot": n_mac + n_br - 1, "kind": "mac", "block": b,
                              "senders": list(range(p.Y)), "relay_ok": relay_ok,
                              "decodable": sorted(decoded_at)})
            if not relay_ok:
                continue
            sup = superpose([encode_block(f, msgs[s], streams[s].coefficients(b))
                             for s in range(p.Y)])
            ev = n_br
            n_br += 1
            received = []
            for i in range(p.Y):
                if i in decoded_at:
                    continue
                if to_unit(hash_words(seed, t, TAG_BROADCAST, ev, i)) < e_br:
                    continue
                received.append(i)
                if rx[i].ingest(b, sup, streams):
                    decoded_at[i] = rx[i].columns - mp
                    pending -= 1
            if trace is not None:
                trace.append({"trial": t, "slot": n_mac + n_br - 1, "kind": "broadcast",
                              "block": b, "received": received,
                              "decodable": sorted(decoded_at)})
        mac[t], br[t] = n_mac, n_br
        if status[t]:
            continue
        hist.update(decoded_at.values())
        for i in range(p.Y if mp else 0):
            got = rx[i].decode_messages()
            for s, bits in got.items():
                if not np.array_equal(bits, msgs[s].bits):
                    errors += 1
    return _report(config, mac, br, status, hist, errors, trace)


def simulate_tdma(config: TrialConfig) -> SimulationReport:
    if config.mode != "tdma":
        raise ConfigurationError("simulate_tdma needs a tdma config")
    p = config.params
    e_mac, e_br = p.epsilons(tdma=True)
    T = config.trials
    mac = np.zeros(T, np.int64)
    br = np.zeros(T, np.int64)
    status = np.zeros(T, np.int64)
    _tdma_kernel(np.uint64(config.seed), T, p.Y, p.m, e_mac, e_br, SLOT_GUARD, mac, br, status)
    return _report(config, mac, br, status, {})


def simulate(config: TrialConfig) -> SimulationReport:
    return simulate_tdma(config) if config.tdma else simulate_rlnc(config)


def write_trace(path, events) -> None:
    """Dump trace records as newline-delimited JSON."""
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(json.dumps(ev) + "\n")


# overhead experiments

@dataclass
class OverheadSample:
    m: int
    q: int
    Y: int
    trials: int
    overhead: Moments
    per_receiver: Moments


def simulate_overhead(m: int, q: int, Y: int, trials: int, seed: int = 0) -> OverheadSample:
    """Coded blocks beyond the minimum until decoding, over error-free links.

    Y = 1 is a single source sending m blocks to one receiver. For Y >= 2
    the overhead is the number of relay broadcasts until every source
    decodes, minus m' = (Y-1)m; ``per_receiver`` pools each source's own
    decode overhead.
    """
    if m < 1 or Y < 1 or trials < 1:
        raise ConfigurationError(f"invalid overhead experiment m={m} Y={Y} trials={trials}")
    _, exp, lg = _field_tables(q)
    if Y == 1:
        out = np.zeros(trials, np.int64)
        _single_overhead_kernel(np.uint64(seed), trials, m, q, exp, lg, out)
        mom = Moments.of(out)
        return OverheadSample(m, q, Y, trials, mom, mom)
    params = NetworkParams(Y=Y, K=m * (q.bit_length() - 1), q=q, m=m)
    rep = simulate_rlnc(TrialConfig(params, trials, seed))
    br = rep.br_slots
    # every broadcast is one block, so subtract m' from each trial
    mp = params.m_prime
    star = Moments(br.n, br.s - mp * br.n, br.ss - 2 * mp * br.s + mp * mp * br.n)
    per = Moments()
    for k, v in rep.overhead_hist.items():
        per = per + Moments(v, k * v, k * k * v)
    return OverheadSample(m, q, Y, trials, star, per)


# validation against the analytic model

@dataclass(frozen=True)
class ValidationPoint:
    params: NetworkParams
    mode: str
    label: str = ""


@dataclass
class ValidationRow:
    label: str
    mode: str
    params: dict
    analytic: float
    simulated: float
    se: float
    z: float

    @property
    def flagged(self) -> bool:
        return not abs(self.z) <= Z_FLAG


@dataclass
class ValidationTable:
    rows: list
    trials: int
    seed: int
    mutation: float = 1.0

    @property
    def flagged(self) -> list:
        return [r for r in self.rows if r.flagged]

    @property
    def ok(self) -> bool:
        return not self.flagged

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "trials": self.trials, "seed": self.seed,
                "mutation": self.mutation, "z_flag": Z_FLAG,
                "rows": [asdict(r) | {"flagged": r.flagged} for r in self.rows]}


def analytic_slots(params: NetworkParams, mode: str) -> float:
    return tp.star_tdma_slots(params) if mode == "tdma" else tp.star_rlnc_slots(params)


def z_score(simulated: float, analytic: float, se: float) -> float:
    diff = simulated - analytic
    if se > 0:
        return diff / se
    # a degenerate sample: exact agreement or an infinite z
    return 0.0 if abs(diff) <= 1e-9 * max(1.0, abs(analytic)) else math.copysign(math.inf, diff)


def validate(points, trials: int = 10_000, seed: int = 0, mutation: float = 1.0,
             fidelity: str = "rank") -> ValidationTable:
    """Compare simulated mean slots with the analytic expectation per point.

    ``mutation`` scales the analytic value; anything other than 1 should
    make the harness flag the grid, which is how the harness tests itself.
    """
    rows = []
    for idx, pt in enumerate(points):
        rep = simulate(TrialConfig(pt.params, trials, seed, pt.mode, fidelity))
        a = analytic_slots(pt.params, pt.mode) * mutation
        st = rep.total_slots
        rows.append(ValidationRow(pt.label or f"point{idx}", pt.mode, params_dict(pt.params),
                                  a, st.mean, st.se, z_score(st.mean, a, st.se)))
    return ValidationTable(rows, trials, seed, mutation)


def optimized_points(params: NetworkParams, label: str = "") -> list:
    """Both schemes at their own joint optimum for one scenario."""
    from .optimizer import optimize

    out = []
    for mode in MODES:
        res = optimize(params, mode, "joint")
        out.append(ValidationPoint(res.params, mode, f"{label}{mode}"))
    return out


def symmetric_grid(qs=(4, 64), Ys=(2, 3, 6), Ks=(1000, 10_000), hs=(16, 32),
                   ps=(0.04, 0.11), model="ee", divisibility="relaxed") -> list:
    """Optimized validation points over a grid with p_mac = p_br."""
    points = []
    for q in qs:
        for Y in Ys:
            for K in Ks:
                for h in hs:
                    for p in ps:
                        base = NetworkParams(Y=Y, K=K, h=h, q=q, p_mac=p, p_br=p,
                                             model=model, divisibility=divisibility)
                        points += optimized_points(base, f"q{q}-Y{Y}-K{K}-h{h}-p{p}-")
    return points


def noiseless_grid() -> list:
    """Deterministic points where every trial costs exactly the analytic value."""
    pts = []
    for Y in (1, 2, 4, 6):
        for m in (1, 3):
            pts.append(ValidationPoint(NetworkParams(Y=Y, K=96, m=m, q=2), "tdma",
                                       f"tdma-Y{Y}-m{m}"))
    pts.append(ValidationPoint(NetworkParams(Y=1, K=96, m=2, q=4), "rlnc", "rlnc-Y1"))
    return pts
