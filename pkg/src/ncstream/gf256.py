"""Arithmetic and dense linear algebra over GF(2^8).

Elements are plain ints in [0, 255]; matrices are 2-D ``numpy.uint8`` arrays.
The field uses the AES reduction polynomial x^8 + x^4 + x^3 + x + 1 (0x11B)
with 0x03 as generator for the log/antilog tables.
"""

from __future__ import annotations

import numpy as np

POLY = 0x11B
GENERATOR = 0x03


class ZeroInverse(ZeroDivisionError):
    """Raised when inverting the zero element."""


class SingularMatrix(ValueError):
    """Raised when a linear system has no unique solution."""

    def __init__(self, rank: int, size: int):
        super().__init__(f"matrix rank {rank} < {size}")
        self.rank = rank
        self.size = size


def _xtime_mul(a: int, b: int) -> int:
    # carry-less multiply with on-the-fly reduction; used only to seed the tables
    out = 0
    while b:
        if b & 1:
            out ^= a
        a <<= 1
        if a & 0x100:
            a ^= POLY
        b >>= 1
    return out


def _build_tables():
    exp = np.zeros(512, dtype=np.uint8)
    log = np.zeros(256, dtype=np.int32)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x = _xtime_mul(x, GENERATOR)
    # doubled so that exp[log a + log b] needs no modulo
    exp[255:510] = exp[0:255]
    exp[510:] = exp[0:2]

    table = np.zeros((256, 256), dtype=np.uint8)
    nz = np.arange(1, 256)
    table[1:, 1:] = exp[log[nz][:, None] + log[nz][None, :]]
    inverse = np.zeros(256, dtype=np.uint8)
    inverse[1:] = exp[255 - log[nz]]
    return exp, log, table, inverse


EXP, LOG, MUL_TABLE, INV_TABLE = _build_tables()


def add(a: int, b: int) -> int:
    return a ^ b


sub = add


def mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return int(EXP[LOG[a] + LOG[b]])


def inv(a: int) -> int:
    if a == 0:
        raise ZeroInverse("0 has no multiplicative inverse in GF(256)")
    return int(EXP[255 - LOG[a]])


def div(a: int, b: int) -> int:
    return mul(a, inv(b))


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.uint8)


def as_matrix(rows) -> np.ndarray:
    m = np.asarray(rows, dtype=np.int64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if m.size and (m.min() < 0 or m.max() > 255):
        raise ValueError("field elements must lie in [0, 255]")
    return m.astype(np.uint8)


def scale(row: np.ndarray, c: int) -> np.ndarray:
    """Multiply every element of ``row`` by the scalar ``c``."""
    return MUL_TABLE[c][row]


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product ``a @ b`` over the field."""
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch {a.shape} @ {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.uint8)
    # one outer-product slab per inner index keeps memory at rows x cols
    for k in range(a.shape[1]):
        out ^= MUL_TABLE[a[:, k][:, None], b[k][None, :]]
    return out


def _eliminate(m: np.ndarray, n_cols: int | None = None):
    """Reduce ``m`` to reduced row echelon form in place.

    Only the first ``n_cols`` columns are used for pivot search (the rest ride
    along, as in an augmented system). Returns the list of pivot columns.
    """
    rows, cols = m.shape
    n_cols = cols if n_cols is None else n_cols
    pivots = []
    r = 0
    for c in range(n_cols):
        if r == rows:
            break
        nz = np.flatnonzero(m[r:, c])
        if nz.size == 0:
            continue
        p = r + int(nz[0])
        if p != r:
            m[[r, p]] = m[[p, r]]
        m[r] = MUL_TABLE[INV_TABLE[m[r, c]]][m[r]]
        factors = m[:, c].copy()
        factors[r] = 0
        hit = np.flatnonzero(factors)
        if hit.size:
            m[hit] ^= MUL_TABLE[factors[hit][:, None], m[r][None, :]]
        pivots.append(c)
        r += 1
    return pivots


def rank(m: np.ndarray) -> int:
    m = np.array(m, dtype=np.uint8, copy=True)
    if m.size == 0:
        return 0
    return len(_eliminate(m))


def independent_rows(m: np.ndarray) -> list[int]:
    """Indices of a maximal linearly independent subset of rows, greedy in order."""
    m = np.asarray(m, dtype=np.uint8)
    if m.size == 0:
        return []
    # eliminating the transpose finds the pivot columns of m.T, i.e. the
    # earliest rows of m that extend the span
    return _eliminate(m.T.copy())


def solve(a: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Return ``x`` with ``x @ a == y`` for square, full-rank ``a``.

    ``a`` is K x K and ``y`` is n x K; column j of ``y`` is the combination of
    the rows of ``x`` described by column j of ``a``.
    """
    a = np.asarray(a, dtype=np.uint8)
    y = np.asarray(y, dtype=np.uint8)
    k = a.shape[0]
    if a.shape != (k, k):
        raise ValueError(f"coefficient matrix must be square, got {a.shape}")
    if y.ndim != 2 or y.shape[1] != k:
        raise ValueError(f"right-hand side must have {k} columns, got {y.shape}")
    # x a = y  <=>  a^T x^T = y^T; row-reduce [a^T | y^T]
    aug = np.concatenate([a.T, y.T], axis=1)
    pivots = _eliminate(aug, n_cols=k)
    if len(pivots) < k:
        raise SingularMatrix(len(pivots), k)
    return aug[:, k:].T.copy()
