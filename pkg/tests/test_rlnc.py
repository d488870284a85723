import itertools
import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from starnc import overhead as ovh
from starnc import rng as rng_mod
from starnc.errors import ConfigurationError, ContractError, DecodeStateError
from starnc.galois import GaloisField
from starnc.rlnc import (CoefficientStream, ReceiverState, SourceMessage, bits_to_symbols,
                         encode_block, superpose, symbols_to_bits)

DATA = Path(__file__).parent / "data"
MASK = (1 << 64) - 1


def splitmix_reference(*words):
    # written out from the SplitMix64 definition, independent of starnc.rng
    h = 0x6A09E667F3BCC909
    for w in words:
        z = ((h ^ w) + 0x9E3779B97F4A7C15) % 2**64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) % 2**64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) % 2**64
        h = z ^ (z >> 31)
    return h


def test_fixture_vectors():
    doc = json.loads((DATA / "coefficient_streams_v1.json").read_text())
    assert doc["version"] == 1
    for v in doc["vectors"]:
        f = GaloisField(v["l"])
        s = CoefficientStream(0, v["seed"], v["m"], f)
        assert s.coefficients(v["block"]).tolist() == v["coefficients"]
        ref = [splitmix_reference(v["seed"], v["block"], j) & (f.q - 1) for j in range(v["m"])]
        assert ref == v["coefficients"]


def test_numba_hash_twins():
    for words in [(0, 0), (1, 2, 3), (MASK, 5, 7, 9), (12, 34, 56, 78, 90)]:
        fn = {2: rng_mod.hash2_nb, 3: rng_mod.hash3_nb, 4: rng_mod.hash4_nb,
              5: rng_mod.hash5_nb}[len(words)]
        assert int(fn(*[np.uint64(w) for w in words])) == rng_mod.hash_words(*words)
        h = rng_mod.hash_words(*words)
        assert rng_mod.to_unit_nb(np.uint64(h)) == rng_mod.to_unit(h)


def test_stream_is_order_free():
    f = GaloisField(4)
    s = CoefficientStream(3, 99, 6, f)
    forward = [s.coefficients(b).tolist() for b in range(20)]
    backward = [s.coefficients(b).tolist() for b in reversed(range(20))][::-1]
    assert forward == backward
    assert CoefficientStream(3, 99, 6, f).coefficients(7).tolist() == forward[7]


def test_stream_uniform():
    f = GaloisField(4)
    s = CoefficientStream(0, 5, 4, f)
    draws = np.concatenate([s.coefficients(b) for b in range(5000)])
    counts = np.bincount(draws, minlength=16)
    assert stats.chisquare(counts).pvalue > 1e-3


@settings(max_examples=100, deadline=None)
@given(l=st.integers(1, 16), n=st.integers(1, 20), seed=st.integers(0, 2**32))
def test_bits_symbols_roundtrip(l, n, seed):
    bits = np.random.default_rng(seed).integers(0, 2, size=n * l)
    sym = bits_to_symbols(bits, l)
    assert sym.max(initial=0) < 2**l
    assert np.array_equal(symbols_to_bits(sym, l), bits)


def test_symbols_msb_first():
    assert bits_to_symbols([1, 0, 0, 1], 2).tolist() == [2, 1]
    with pytest.raises(ContractError):
        bits_to_symbols([1, 0, 1], 2)


def test_message_divisibility():
    f = GaloisField(2)
    with pytest.raises(ConfigurationError):
        SourceMessage(0, np.zeros(10, dtype=int), 3, f)
    msg = SourceMessage(0, np.zeros(12, dtype=int), 3, f)
    assert msg.blocks.shape == (3, 2)


def test_encode_examples():
    f = GaloisField(2)
    blocks = np.array([[1, 2], [3, 1]])
    assert encode_block(f, blocks, [1, 0]).tolist() == [1, 2]
    assert encode_block(f, blocks, [0, 1]).tolist() == [3, 1]
    assert encode_block(f, blocks, [0, 0]).tolist() == [0, 0]
    # by hand from the GF(4) table: 2*1 + 3*3 = 2 + 2, 2*2 + 3*1 = 3 + 3
    assert encode_block(f, blocks, [2, 3]).tolist() == [0, 0]
    assert encode_block(f, blocks, [1, 2]).tolist() == [1 ^ 1, 2 ^ 2]
    assert encode_block(f, blocks, [3, 2]).tolist() == [3 ^ 1, 1 ^ 2]
    with pytest.raises(ContractError):
        encode_block(f, blocks, [1, 2, 3])


def test_superpose():
    rng = np.random.default_rng(0)
    x = rng.integers(0, 2, size=64)
    assert not superpose([x, x]).any()
    assert np.array_equal(superpose([x]), x)
    a, b, c = (rng.integers(0, 2, size=64) for _ in range(3))
    ref = [(int(u) + int(v) + int(w)) % 2 for u, v, w in zip(a, b, c)]
    assert superpose([a, b, c]).tolist() == ref
    assert np.array_equal(superpose([c, a, b]), superpose([a, b, c]))
    with pytest.raises(ContractError):
        superpose([a, a[:10]])
    with pytest.raises(ContractError):
        superpose([])


def network(Y, m, l, K, seed):
    f = GaloisField(l)
    g = np.random.default_rng(seed)
    msgs = [SourceMessage.random(s, K, m, f, g) for s in range(Y)]
    streams = [CoefficientStream(s, rng_mod.hash_words(seed, s), m, f) for s in range(Y)]
    return f, msgs, streams


def relay(f, msgs, streams, b):
    return superpose([encode_block(f, msg, s.coefficients(b)) for msg, s in zip(msgs, streams)])


def run_until_decodable(Y, m, l, K, seed):
    f, msgs, streams = network(Y, m, l, K, seed)
    rx = [ReceiverState(s, Y, msgs[s]) for s in range(Y)]
    b = 0
    while not all(r.decodable for r in rx):
        sup = relay(f, msgs, streams, b)
        for r in rx:
            if not r.decodable:
                r.ingest(b, sup, streams)
        b += 1
    return msgs, rx


def test_roundtrip_two_sources():
    msgs, rx = run_until_decodable(2, 3, 4, 48, 1)
    for r in rx:
        got = r.decode_messages()
        for s, bits in got.items():
            assert np.array_equal(bits, msgs[s].bits)


def test_roundtrip_many_messages():
    mismatches = 0
    for seed in range(1000):
        msgs, rx = run_until_decodable(3, 2, 2, 16, seed)
        for r in rx:
            for s, bits in r.decode_messages().items():
                mismatches += not np.array_equal(bits, msgs[s].bits)
    assert mismatches == 0


def test_decoded_blocks_reencode():
    f, msgs, streams = network(3, 2, 3, 24, 9)
    r = ReceiverState(0, 3, msgs[0])
    cols, rx_sym = [], []
    b = 0
    while not r.decodable:
        sup = relay(f, msgs, streams, b)
        r.ingest(b, sup, streams)
        cols.append(np.concatenate([streams[s].coefficients(b) for s in (1, 2)]))
        rx_sym.append(sup ^ encode_block(f, msgs[0], streams[0].coefficients(b)))
        b += 1
    blocks = r.decode()
    for c, y in zip(cols, rx_sym):
        assert np.array_equal(encode_block(f, blocks, c), y)


def test_decode_too_early():
    f, msgs, streams = network(2, 2, 2, 8, 0)
    r = ReceiverState(0, 2, msgs[0])
    with pytest.raises(DecodeStateError):
        r.decode()


def test_duplicates_ignored():
    f, msgs, streams = network(2, 2, 2, 8, 3)
    r = ReceiverState(1, 2, msgs[1])
    sup = relay(f, msgs, streams, 0)
    r.ingest(0, sup, streams)
    rank = r.rank
    r.ingest(0, sup, streams)
    assert r.rank == rank
    assert r.duplicates == 1
    assert r.columns == 1


class FixedStream:
    def __init__(self, table):
        self.table = table

    def coefficients(self, b):
        return np.array(self.table[b])


def test_identity_and_dependent_columns():
    f = GaloisField(2)
    msgs = [SourceMessage(s, np.arange(8) % 2, 2, f) for s in range(2)]
    # source 1 sends e_0, e_1, then e_0 + e_1
    streams = [FixedStream({0: [0, 0], 1: [0, 0], 2: [0, 0]}),
               FixedStream({0: [1, 0], 1: [0, 1], 2: [1, 1]})]
    r = ReceiverState(0, 2, msgs[0])
    assert not r.ingest(0, relay(f, msgs, streams, 0), streams)
    assert r.ingest(1, relay(f, msgs, streams, 1), streams)
    r2 = ReceiverState(0, 2, msgs[0])
    r2.ingest(0, relay(f, msgs, streams, 0), streams)
    r2.ingest(2, relay(f, msgs, streams, 2), streams)
    before = r2.rank
    assert r2.ingest(1, relay(f, msgs, streams, 1), streams)
    assert r2.rank == before


def test_dependent_column_keeps_rank():
    f = GaloisField(2)
    msgs = [SourceMessage(s, np.ones(8, dtype=int), 2, f) for s in range(2)]
    streams = [FixedStream({b: [0, 0] for b in range(3)}),
               FixedStream({0: [1, 2], 1: [2, 3], 2: [0, 1]})]
    r = ReceiverState(0, 2, msgs[0])
    r.ingest(0, relay(f, msgs, streams, 0), streams)
    assert r.rank == 1
    # [2, 3] = 2 * [1, 2] in GF(4)
    r.ingest(1, relay(f, msgs, streams, 1), streams)
    assert r.rank == 1
    assert r.columns == 2
    r.ingest(2, relay(f, msgs, streams, 2), streams)
    assert r.rank == 2


def test_first_block_decodable_rate():
    # Y=2, m=1: one received block decodes unless its coefficient is zero
    f = GaloisField(4)
    hits = 0
    trials = 4000
    for seed in range(trials):
        streams = [CoefficientStream(s, rng_mod.hash_words(77, seed, s), 1, f) for s in range(2)]
        msgs = [SourceMessage(s, np.zeros(4, dtype=int), 1, f) for s in range(2)]
        r = ReceiverState(0, 2, msgs[0])
        hits += r.ingest(0, relay(f, msgs, streams, 0), streams)
    p = ovh.p_success(1, 0, 16)
    assert abs(hits / trials - p) < 3 * math.sqrt(p * (1 - p) / trials)


def columns_to_decode(m, l, seed):
    f = GaloisField(l)
    msgs = [SourceMessage(s, np.zeros(m * l, dtype=int), m, f) for s in range(2)]
    streams = [CoefficientStream(s, rng_mod.hash_words(seed, s), m, f) for s in range(2)]
    r = ReceiverState(0, 2, msgs[0])
    b = 0
    while not r.ingest(b, relay(f, msgs, streams, b), streams):
        b += 1
    return b + 1


@pytest.mark.slow
def test_single_source_mean_columns():
    trials = 100_000
    cols = np.array([columns_to_decode(4, 1, seed) for seed in range(trials)])
    expected = 4 + ovh.expected_overhead(4, 2)
    assert abs(cols.mean() - expected) < 3 * cols.std(ddof=1) / math.sqrt(trials)
    extra = cols.mean() - 4
    assert ovh.overhead_lower(2, 1) < extra < ovh.overhead_upper(2, 1)


def star_decode_counts(Y, m, l, trials, seed):
    # blocks broadcast until every receiver decodes, no erasures
    f = GaloisField(l)
    out = np.empty(trials, dtype=np.int64)
    for t in range(trials):
        msgs = [SourceMessage(s, np.zeros(m * l, dtype=int), m, f) for s in range(Y)]
        streams = [CoefficientStream(s, rng_mod.hash_words(seed, t, s), m, f) for s in range(Y)]
        rx = [ReceiverState(s, Y, msgs[s]) for s in range(Y)]
        b = 0
        while not all(r.decodable for r in rx):
            sup = relay(f, msgs, streams, b)
            for r in rx:
                if not r.decodable:
                    r.ingest(b, sup, streams)
            b += 1
        out[t] = b
    return out


GRID = list(itertools.product((2, 3), (1, 2, 4), (1, 2, 4)))


@pytest.mark.slow
@pytest.mark.parametrize("Y,m,l", GRID)
def test_joint_decode_probability_product_form(Y, m, l):
    """All Y receivers decodable after m'+x blocks vs the independent product."""
    q = 2**l
    trials = 4000
    counts = star_decode_counts(Y, m, l, trials, 1234)
    mp = (Y - 1) * m
    for x in range(3):
        p = ovh.p_success_star(m, x, q, Y)
        emp = (counts <= mp + x).mean()
        se = math.sqrt(p * (1 - p) / trials)
        assert abs(emp - p) <= 3 * se + 1e-12, (x, emp, p)


def test_joint_decode_exact_enumeration():
    # Y=3, m=1, q=2, two broadcasts: receivers share coefficients, so the
    # exact joint success is 6/64, not (3/8)^3
    good = 0
    for b1 in itertools.product((0, 1), repeat=3):
        for b2 in itertools.product((0, 1), repeat=3):
            good += all(
                ([b1[j] for j in range(3) if j != i][0] * [b2[j] for j in range(3) if j != i][1]
                 ^ [b1[j] for j in range(3) if j != i][1] * [b2[j] for j in range(3) if j != i][0])
                for i in range(3))
    assert good == 6
    trials = 20_000
    counts = star_decode_counts(3, 1, 1, trials, 99)
    emp = (counts <= 2).mean()
    p = good / 64
    assert abs(emp - p) < 3 * math.sqrt(p * (1 - p) / trials)
