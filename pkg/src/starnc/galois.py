"""Arithmetic and linear algebra over GF(2^l).

Elements are integers in [0, q) whose bits are the coefficients of a
polynomial over GF(2). Multiplication is reduced modulo the
lexicographically least primitive polynomial of degree ``l``:

    l  poly      l  poly
    1  0x3       9  0x211
    2  0x7      10  0x409
    3  0xB      11  0x805
    4  0x13     12  0x1053
    5  0x25     13  0x201B
    6  0x43     14  0x402B
    7  0x83     15  0x8003
    8  0x11D    16  0x1002D

With a primitive polynomial the element ``x`` (integer 2) generates the
multiplicative group, so exp/log tables give O(1) multiply and inverse.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, ContractError

PRIMITIVE_POLYNOMIALS = {
    1: 0x3, 2: 0x7, 3: 0xB, 4: 0x13, 5: 0x25, 6: 0x43, 7: 0x83, 8: 0x11D,
    9: 0x211, 10: 0x409, 11: 0x805, 12: 0x1053, 13: 0x201B, 14: 0x402B,
    15: 0x8003, 16: 0x1002D,
}

MAX_DEGREE = 16


def clmul_mod(a: int, b: int, poly: int, l: int) -> int:
    """Carry-less product of a and b reduced modulo poly (reference path)."""
    top = 1 << l
    result = 0
    while b:
        if b & 1:
            result ^= a
        b >>= 1
        a <<= 1
        if a & top:
            a ^= poly
    return result


class GaloisField:
    """The field GF(2^l); immutable once built.

    Parameters
    ----------
    l : int
        Extension degree, 1 <= l <= 16.
    """

    def __init__(self, l: int) -> None:
        if not isinstance(l, (int, np.integer)) or not 1 <= l <= MAX_DEGREE:
            raise ConfigurationError(f"extension degree must be in [1, {MAX_DEGREE}], got {l!r}")
        self.l = int(l)
        self.q = 1 << self.l
        self.poly = PRIMITIVE_POLYNOMIALS[self.l]
        order = self.q - 1
        exp = np.zeros(2 * self.q, dtype=np.int64)
        log = np.zeros(self.q, dtype=np.int64)
        gen = 2 if self.l > 1 else 1
        val = 1
        for i in range(order):
            exp[i] = val
            log[val] = i
            val = clmul_mod(val, gen, self.poly, self.l)
        exp[order:2 * order] = exp[:order]
        exp.flags.writeable = False
        log.flags.writeable = False
        self.exp = exp
        self.log = log

    def __repr__(self) -> str:
        return f"GaloisField(l={self.l})"

    def __eq__(self, other) -> bool:
        return isinstance(other, GaloisField) and other.l == self.l

    def __hash__(self) -> int:
        return hash(("GF2", self.l))

    @staticmethod
    def add(a: int, b: int) -> int:
        return a ^ b

    sub = add

    def mul(self, a: int, b: int) -> int:
        if a == 0 or b == 0:
            return 0
        return int(self.exp[self.log[a] + self.log[b]])

    def inv(self, a: int) -> int:
        if a == 0:
            raise ZeroDivisionError("zero has no multiplicative inverse")
        return int(self.exp[(self.q - 1 - self.log[a]) % (self.q - 1)])

    def div(self, a: int, b: int) -> int:
        return self.mul(a, self.inv(b))

    def scale(self, c: int, vec: np.ndarray) -> np.ndarray:
        """Multiply every element of ``vec`` by the scalar ``c``."""
        vec = np.asarray(vec, dtype=np.int64)
        if c == 0:
            return np.zeros_like(vec)
        out = self.exp[self.log[vec] + self.log[c]]
        out[vec == 0] = 0
        return out

    def mul_vec(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Elementwise product of two arrays (broadcasting)."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        out = self.exp[self.log[a] + self.log[b]]
        return np.where((a == 0) | (b == 0), 0, out)

    def matmul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Matrix product over GF(q)."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ContractError(f"cannot multiply shapes {a.shape} and {b.shape}")
        if a.shape[1] == 0:
            return np.zeros((a.shape[0], b.shape[1]), dtype=np.int64)
        prod = self.mul_vec(a[:, :, None], b[None, :, :])
        return np.bitwise_xor.reduce(prod, axis=1)

    def random(self, shape, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self.q, size=shape, dtype=np.int64)


def field_new(l: int) -> GaloisField:
    return GaloisField(l)


class GfMatrix:
    """A dense matrix over GF(q), stored as an int64 array."""

    def __init__(self, field: GaloisField, data) -> None:
        data = np.array(data, dtype=np.int64, ndmin=2)
        if data.ndim != 2:
            raise ContractError("GfMatrix needs two-dimensional data")
        if data.size and (data.min() < 0 or data.max() >= field.q):
            raise ContractError(f"entries must lie in [0, {field.q})")
        self.field = field
        self.data = data

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def T(self) -> GfMatrix:
        return GfMatrix(self.field, self.data.T.copy())

    def __matmul__(self, other: GfMatrix) -> GfMatrix:
        return GfMatrix(self.field, self.field.matmul(self.data, other.data))

    def __eq__(self, other) -> bool:
        return (isinstance(other, GfMatrix) and other.field == self.field
                and np.array_equal(other.data, self.data))

    def rank(self) -> int:
        return rank_and_solve(self.field, self)[0]

    @classmethod
    def identity(cls, field: GaloisField, n: int) -> GfMatrix:
        return cls(field, np.eye(n, dtype=np.int64))

    @classmethod
    def random(cls, field: GaloisField, rows: int, cols: int, rng) -> GfMatrix:
        return cls(field, field.random((rows, cols), rng))


class IncrementalSolver:
    """Online Gaussian elimination over GF(q).

    Equations arrive one at a time as (coefficient vector, payload vector)
    pairs and are reduced against stored pivot rows. Row ``c`` of the basis,
    when present, has a 1 in column ``c`` and zeros to its left, so each
    insertion costs O(n_unknowns * (n_unknowns + payload_len)).
    """

    def __init__(self, field: GaloisField, n_unknowns: int, payload_len: int = 0) -> None:
        self.field = field
        self.n = int(n_unknowns)
        self.payload_len = int(payload_len)
        width = self.n + self.payload_len
        self._rows = np.zeros((self.n, width), dtype=np.int64)
        self._has = np.zeros(self.n, dtype=bool)
        self.rank = 0
        self.equations = 0

    @property
    def full_rank(self) -> bool:
        return self.rank == self.n

    def add(self, coeffs, payload=None) -> bool:
        """Insert one equation; return True iff it raised the rank."""
        coeffs = np.asarray(coeffs, dtype=np.int64)
        if coeffs.shape != (self.n,):
            raise ContractError(f"expected {self.n} coefficients, got shape {coeffs.shape}")
        v = np.zeros(self.n + self.payload_len, dtype=np.int64)
        v[:self.n] = coeffs
        if self.payload_len:
            if payload is None:
                raise ContractError("payload required for a solver with payload columns")
            payload = np.asarray(payload, dtype=np.int64)
            if payload.shape != (self.payload_len,):
                raise ContractError(f"expected payload length {self.payload_len}, got {payload.shape}")
            v[self.n:] = payload
        self.equations += 1
        f = self.field
        for c in range(self.n):
            if v[c] == 0:
                continue
            if self._has[c]:
                v ^= f.scale(int(v[c]), self._rows[c])
                continue
            self._rows[c] = f.scale(f.inv(int(v[c])), v)
            self._has[c] = True
            self.rank += 1
            return True
        return False

    def solve(self) -> np.ndarray:
        """Back-substitute; returns an (n_unknowns, payload_len) array."""
        if not self.full_rank:
            raise ContractError(f"system has rank {self.rank} < {self.n} unknowns")
        f = self.field
        rows = self._rows.copy()
        for c in range(self.n - 1, -1, -1):
            for r in range(c):
                if rows[r, c]:
                    rows[r] ^= f.scale(int(rows[r, c]), rows[c])
        return rows[:, self.n:]


def rank_and_solve(field: GaloisField, matrix, rhs=None):
    """Rank of a coefficient matrix and, when determined, the solution.

    ``matrix`` is the coefficient matrix G with one column per received
    equation (rows index unknowns). The system solved is
    ``G.T @ X = rhs`` where ``rhs`` holds one symbol vector per column of G.
    Returns ``(rank, solution)`` with ``solution`` None unless the rank
    equals the number of unknowns and ``rhs`` was given.
    """
    g = matrix.data if isinstance(matrix, GfMatrix) else np.array(matrix, dtype=np.int64, ndmin=2)
    n_unknowns, n_eq = g.shape
    payload_len = 0
    if rhs is not None:
        rhs = rhs.data if isinstance(rhs, GfMatrix) else np.array(rhs, dtype=np.int64, ndmin=2)
        if rhs.shape[0] != n_eq:
            raise ContractError(f"rhs has {rhs.shape[0]} rows, matrix has {n_eq} columns")
        payload_len = rhs.shape[1]
    solver = IncrementalSolver(field, n_unknowns, payload_len)
    for j in range(n_eq):
        solver.add(g[:, j], None if rhs is None else rhs[j])
        if solver.full_rank and rhs is None:
            break
    if rhs is None or not solver.full_rank:
        return solver.rank, None
    return solver.rank, solver.solve()
