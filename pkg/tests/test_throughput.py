import itertools
import math

import numpy as np
import pytest
from scipy import stats

from starnc import overhead as ovh
from starnc import throughput as tp
from starnc.channel import cutoff_rate
from starnc.errors import ConfigurationError, ContractError
from starnc.netsim import TrialConfig, simulate
from starnc.throughput import NetworkParams

YS = range(2, 9)
EPS = [0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5]


def brute_br_rlnc(m_prime, q, Y, eps, tol=1e-15):
    # direct evaluation of the broadcast series with scipy binomial weights
    total = float(m_prime)
    i = m_prime
    while True:
        js = np.arange(m_prime, i + 1)
        w = stats.binom.pmf(js, i, 1 - eps)
        ps = np.array([ovh.p_success(m_prime, int(j) - m_prime, q) for j in js])
        term = 1 - float(np.dot(w, ps)) ** Y
        total += term
        if term < tol and i > m_prime + 5:
            return total
        i += 1


def test_payload_bits_modes():
    assert tp.payload_bits(1000, 4, 2, "strict") == 250
    assert tp.payload_bits(1000, 3, 2, "relaxed") == 334
    assert tp.payload_bits(1000, 3, 2, "continuous") == pytest.approx(1000 / 3)
    with pytest.raises(ConfigurationError):
        tp.payload_bits(1000, 3, 2, "strict")
    with pytest.raises(ConfigurationError):
        tp.payload_bits(1000, 3, 2, "sloppy")
    assert tp.admissible(1000, 4, 2, "strict")
    assert not tp.admissible(1000, 3, 2, "strict")


def test_params_validation():
    with pytest.raises(ConfigurationError):
        NetworkParams(Y=2, K=100, q=6)
    with pytest.raises(ConfigurationError):
        NetworkParams(Y=0, K=100)
    with pytest.raises(ConfigurationError):
        NetworkParams(Y=2, K=100, eps_br=1.0)
    p = NetworkParams(Y=3, K=96, q=16, m=2, h=8)
    assert p.l == 4 and p.m_prime == 4
    assert p.k() == 56 and p.n() == 56


@pytest.mark.parametrize("Y,eps", list(itertools.product(YS, EPS)))
def test_series_identity(Y, eps):
    series, idx = tp.br_tdma_blocks_series(Y, 3, eps)
    finite = tp.br_tdma_blocks_finite(Y, 3, eps)
    assert series == pytest.approx(finite, rel=1e-9)
    assert idx > 0


def test_br_tdma_examples():
    assert tp.br_tdma_blocks_finite(4, 2, 0.0) == 8
    assert tp.br_tdma_blocks_series(4, 2, 0.0)[0] == 8
    assert tp.br_tdma_blocks_finite(2, 3, 0.25) == pytest.approx(2 * 3 / 0.75)
    assert tp.br_tdma_blocks_series(5, 1, 0.1)[0] == pytest.approx(tp.br_tdma_blocks_finite(5, 1, 0.1), rel=1e-9)
    p = NetworkParams(Y=5, K=100, eps_br=0.1, R=0.5)
    assert tp.br_tdma_bits(p) == pytest.approx(200 * tp.br_tdma_blocks_finite(5, 1, 0.1))
    assert tp.br_tdma_blocks(p, "series") == pytest.approx(tp.br_tdma_blocks(p), rel=1e-9)
    with pytest.raises(ContractError):
        tp.br_tdma_blocks(p, "magic")


def test_mac_examples():
    p = NetworkParams(Y=4, K=3 * 16, q=2**16, m=3)
    assert tp.mac_rlnc_blocks(p) == pytest.approx(9, abs=1e-3)
    p = NetworkParams(Y=2, K=100, q=2, eps_mac=0.2)
    assert tp.mac_rlnc_blocks(p) == pytest.approx((1 + ovh.overhead_upper(2, 2)) / 0.8)
    assert tp.mac_rlnc_blocks(p, "exact") == pytest.approx((1 + ovh.expected_star_overhead(1, 2, 2)) / 0.8)
    assert tp.mac_rlnc_blocks(p, 0.5) == pytest.approx(1.5 / 0.8)
    p = NetworkParams(Y=3, K=120, m=2, eps_mac=0.0)
    assert tp.mac_tdma_blocks(p) == 6
    p = NetworkParams(Y=3, K=120, R=0.5, eps_mac=0.25)
    assert tp.mac_tdma_bits(p) == pytest.approx(3 * 120 / (0.5 * 0.75))


def test_mac_ee_closed_form():
    # with the error exponent model the bits follow from R0 directly
    p = NetworkParams(Y=3, K=1000, h=16, q=4, m=2, p_mac=0.04, R=0.5)
    k = p.k()
    r0 = cutoff_rate(0.04)
    eps = 2 ** (-k * (r0 / 0.5 - 1))
    ref = k / 0.5 * (p.m_prime + ovh.overhead_upper(4, 3)) / (1 - eps)
    assert tp.mac_rlnc_bits(p) == pytest.approx(ref, rel=1e-14)


def test_tdma_bits_increase_with_m():
    # rates below the model's limit, where shorter blocks only hurt
    for model, R in itertools.product(("ee", "ppv"), (0.2, 0.35, 0.5)):
        bits = [tp.mac_tdma_bits(NetworkParams(Y=3, K=1200, h=16, m=m, p_mac=0.04, R=R,
                                               model=model, divisibility="continuous"))
                for m in range(1, 13)]
        assert np.all(np.diff(bits) > 0)
        bits = [tp.star_tdma_bits(NetworkParams(Y=6, K=1200, h=16, m=m, p_mac=0.04, p_br=0.04, R=R,
                                                model=model, divisibility="continuous"))
                for m in range(1, 13)]
        assert np.all(np.diff(bits) > 0)


@pytest.mark.parametrize("mp,q,Y,eps", [(1, 2, 2, 0.0), (2, 2, 2, 0.2), (2, 4, 3, 0.1),
                                        (4, 4, 5, 0.3), (3, 16, 4, 0.5), (5, 64, 6, 0.05)])
def test_br_rlnc_against_brute_force(mp, q, Y, eps):
    got, idx = tp.br_rlnc_series(mp, q, Y, eps)
    assert got == pytest.approx(brute_br_rlnc(mp, q, Y, eps), rel=1e-10)
    assert got >= mp / (1 - eps) - 1e-9
    assert idx >= mp


def test_br_rlnc_examples():
    assert tp.br_rlnc_series(3, 2**16, 4, 0.0)[0] == pytest.approx(3, abs=1e-3)
    # no losses, Y = 2: one receiver overhead per source
    got = tp.br_rlnc_series(1, 2, 2, 0.0)[0]
    assert got == pytest.approx(1 + ovh.expected_star_overhead(1, 2, 2), rel=1e-12)
    assert tp.br_rlnc_series(0, 4, 1, 0.3) == (0.0, 0)
    with pytest.raises(ContractError):
        tp.br_rlnc_series(2, 4, 2, 1.0)
    with pytest.raises(ArithmeticError):
        tp.br_rlnc_series(100, 4, 2, 1 - 1e-6)


def test_br_rlnc_monotone_in_eps():
    v = [tp.br_rlnc_series(4, 4, 3, e)[0] for e in np.linspace(0, 0.8, 30)]
    assert np.all(np.diff(v) > 0)


def test_br_rlnc_simulation_y2():
    p = NetworkParams(Y=2, K=4, q=4, m=2, eps_mac=0.0, eps_br=0.2)
    rep = simulate(TrialConfig(p, trials=100_000, seed=21))
    assert abs(rep.br_slots.mean - tp.br_rlnc_blocks(p)) < 3 * rep.br_slots.se


def test_star_slots_examples():
    p = NetworkParams(Y=4, K=3 * 16, q=2**16, m=3, eps_mac=0.0, eps_br=0.0)
    assert tp.star_rlnc_slots(p) == pytest.approx(2 * 3 * 3, abs=2e-3)
    p = NetworkParams(Y=3, K=60, q=4, m=2, eps_mac=0.0, eps_br=0.15)
    assert tp.star_rlnc_slots(p) == pytest.approx(2 * tp.br_rlnc_blocks(p))
    p = NetworkParams(Y=3, K=60, m=2, eps_mac=0.0, eps_br=0.0)
    assert tp.star_tdma_slots(p) == 12
    p = NetworkParams(Y=2, K=60, m=2, eps_mac=0.1, eps_br=0.3)
    assert tp.star_tdma_slots(p) == pytest.approx(4 / 0.9 + 4 / 0.7)


def test_noiseless_floors():
    for Y, m, q in itertools.product((2, 3, 6), (1, 4), (2, 16)):
        p = NetworkParams(Y=Y, K=m * 4, q=q, m=m, p_mac=0.0, p_br=0.0)
        assert tp.star_rlnc_slots(p) >= 2 * m * (Y - 1)
        assert tp.star_tdma_slots(p) >= 2 * Y * m


def test_star_simulation_agreement():
    p = NetworkParams(Y=6, K=200, m=2, eps_mac=0.1, eps_br=0.1)
    rep = simulate(TrialConfig(p, trials=50_000, seed=4, mode="tdma"))
    assert abs(rep.total_slots.mean - tp.star_tdma_slots(p)) < 3 * rep.total_slots.se
    p = NetworkParams(Y=2, K=10_000, h=16, q=64, m=4, p_mac=0.04, p_br=0.04, R=0.45, divisibility="relaxed")
    rep = simulate(TrialConfig(p, trials=50_000, seed=4))
    assert abs(rep.total_slots.mean - tp.star_rlnc_slots(p)) < 3 * rep.total_slots.se


def test_costs_positive_and_continuous_in_R():
    Rs = np.linspace(0.2, 0.5, 200)
    for fn in (tp.star_rlnc_bits, tp.star_tdma_bits):
        v = np.array([fn(NetworkParams(Y=3, K=1000, h=16, q=4, m=2, p_mac=0.04, p_br=0.04, R=R))
                      for R in Rs])
        assert np.all(np.isfinite(v)) and np.all(v > 0)
        assert np.max(np.abs(np.diff(v)) / v[1:]) < 0.05
    cost = tp.star_rlnc_cost(NetworkParams(Y=3, K=1000, h=16, q=4, m=2, p_mac=0.04, p_br=0.04, R=0.4))
    assert cost.bits == pytest.approx(cost.blocks * (500 + 16) / 0.4)
    assert 0 < cost.throughput < 1


def test_ratio_contract_and_asymptote():
    a = NetworkParams(Y=2, K=100)
    with pytest.raises(ContractError):
        tp.throughput_ratio(a, NetworkParams(Y=3, K=100))
    assert tp.asymptotic_ratio(2) == 2
    assert tp.asymptotic_ratio(6) == pytest.approx(1.2)
    # noiseless, huge field, no header: the ratio is exactly the asymptote
    for Y in (2, 3, 6):
        r = NetworkParams(Y=Y, K=2**16, q=2**16)
        t = NetworkParams(Y=Y, K=2**16)
        assert tp.throughput_ratio(r, t) == pytest.approx(Y / (Y - 1), rel=1e-4)
