"""Random linear network coding over m data blocks per source.

A source splits its K-bit message into m blocks, views each block as
K/(m*l) symbols of GF(2^l), and emits coded blocks ``sum_j a[j] * D[j]``.
Coefficients come from a counter-based stream keyed by (source seed,
block index), so every node can regenerate any column of the generator
matrix without replaying state. A receiver subtracts its own contribution
from the relayed superposition and collects the coefficients of the other
Y-1 sources as one column of its perceived generator matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConfigurationError, ContractError, DecodeStateError
from .galois import GaloisField, IncrementalSolver
from .rng import hash_words

log = logging.getLogger(__name__)


def bits_to_symbols(bits, l: int) -> np.ndarray:
    """Pack a 0/1 array into l-bit symbols, most significant bit first."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size % l:
        raise ContractError(f"{bits.size} bits do not split into {l}-bit symbols")
    weights = 1 << np.arange(l - 1, -1, -1, dtype=np.int64)
    return bits.reshape(-1, l) @ weights


def symbols_to_bits(symbols, l: int) -> np.ndarray:
    symbols = np.asarray(symbols, dtype=np.int64)
    shifts = np.arange(l - 1, -1, -1, dtype=np.int64)
    return ((symbols[:, None] >> shifts) & 1).reshape(-1)


@dataclass
class SourceMessage:
    """K message bits of one source, split into m blocks.

    ``blocks`` has shape (m, K/(m*l)) and holds GF(q) symbols.
    """

    source_id: int
    bits: np.ndarray
    m: int
    field: GaloisField
    blocks: np.ndarray = dc_field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=np.int64)
        K = self.bits.size
        if self.m < 1 or K % (self.m * self.field.l):
            raise ConfigurationError(f"K={K} is not divisible by m*l={self.m * self.field.l}")
        self.blocks = bits_to_symbols(self.bits, self.field.l).reshape(self.m, -1)

    @property
    def K(self) -> int:
        return self.bits.size

    @property
    def symbols_per_block(self) -> int:
        return self.blocks.shape[1]

    @classmethod
    def random(cls, source_id, K, m, field, rng) -> SourceMessage:
        return cls(source_id, rng.integers(0, 2, size=K), m, field)


class CoefficientStream:
    """Deterministic coefficient vectors for one source.

    ``coefficients(b)`` is a pure function of (seed, b): symbol j is the low
    l bits of ``hash_words(seed, b, j)``.
    """

    def __init__(self, source_id: int, seed: int, m: int, field: GaloisField) -> None:
        self.source_id = source_id
        self.seed = int(seed)
        self.m = int(m)
        self.field = field

    def coefficients(self, b: int) -> np.ndarray:
        mask = self.field.q - 1
        return np.array([hash_words(self.seed, b, j) & mask for j in range(self.m)], dtype=np.int64)


def encode_block(field: GaloisField, blocks, coeffs) -> np.ndarray:
    """Linear combination of the data blocks (rows of ``blocks``) over GF(q)."""
    blocks = blocks.blocks if isinstance(blocks, SourceMessage) else np.asarray(blocks, dtype=np.int64)
    coeffs = np.asarray(coeffs, dtype=np.int64)
    if coeffs.shape != (blocks.shape[0],):
        raise ContractError(f"{coeffs.size} coefficients for {blocks.shape[0]} blocks")
    return field.matmul(coeffs[None, :], blocks)[0]


def superpose(blocks) -> np.ndarray:
    """Bitwise XOR of equal-length blocks (the noiseless adder-channel output)."""
    blocks = [np.asarray(b) for b in blocks]
    if not blocks:
        raise ContractError("superpose needs at least one block")
    n = blocks[0].shape
    out = np.zeros(n, dtype=np.int64)
    for b in blocks:
        if b.shape != n:
            raise ContractError(f"block shapes differ: {b.shape} vs {n}")
        out ^= b
    return out


@dataclass
class ReceiverState:
    """What source ``owner`` knows about the other Y-1 sources.

    Unknowns are ordered source-major: index ``s * m + j`` (skipping the
    owner) is block j of source s.
    """

    owner: int
    Y: int
    own: SourceMessage
    solver: IncrementalSolver = dc_field(init=False, repr=False)
    seen: set = dc_field(default_factory=set, repr=False)
    duplicates: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.owner < self.Y:
            raise ConfigurationError(f"owner {self.owner} outside [0, {self.Y})")
        self.solver = IncrementalSolver(self.own.field, (self.Y - 1) * self.own.m,
                                        self.own.symbols_per_block)

    @property
    def m(self) -> int:
        return self.own.m

    @property
    def rank(self) -> int:
        return self.solver.rank

    @property
    def columns(self) -> int:
        return self.solver.equations

    @property
    def decodable(self) -> bool:
        return self.solver.full_rank

    def others(self):
        return [s for s in range(self.Y) if s != self.owner]

    def ingest(self, b: int, superposed, streams) -> bool:
        """Store block ``b`` of the relayed superposition; return decodability."""
        if b in self.seen:
            self.duplicates += 1
            log.debug("receiver %d: duplicate block %d ignored", self.owner, b)
            return self.decodable
        if len(streams) != self.Y:
            raise ContractError(f"need {self.Y} coefficient streams, got {len(streams)}")
        self.seen.add(b)
        f = self.own.field
        own_part = encode_block(f, self.own, streams[self.owner].coefficients(b))
        residual = np.asarray(superposed, dtype=np.int64) ^ own_part
        column = np.concatenate([streams[s].coefficients(b) for s in self.others()])
        self.solver.add(column, residual)
        return self.decodable

    def decode(self) -> np.ndarray:
        """The (Y-1)*m data blocks of the other sources, source-major."""
        if not self.decodable:
            raise DecodeStateError(
                f"receiver {self.owner} has rank {self.rank} < {(self.Y - 1) * self.m}")
        return self.solver.solve()

    def decode_messages(self) -> dict:
        """Recovered message bits keyed by source index."""
        blocks = self.decode()
        l = self.own.field.l
        out = {}
        for idx, s in enumerate(self.others()):
            part = blocks[idx * self.m:(idx + 1) * self.m]
            out[s] = symbols_to_bits(part.reshape(-1), l)
        return out
