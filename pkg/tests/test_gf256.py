import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncstream import gf256

byte = st.integers(0, 255)
nonzero = st.integers(1, 255)


# --- independent oracles -------------------------------------------------

def _xtime(a):
    a <<= 1
    return a ^ 0x11B if a & 0x100 else a


def _oracle_tables():
    # antilog by repeated multiplication with the generator 0x03 = x + 1
    exp, log = [0] * 255, {}
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x = _xtime(x) ^ x
    return exp, log


EXP_O, LOG_O = _oracle_tables()


def oracle_mul(a, b):
    if a == 0 or b == 0:
        return 0
    return EXP_O[(LOG_O[a] + LOG_O[b]) % 255]


def oracle_inv(a):
    return next(c for c in range(1, 256) if oracle_mul(a, c) == 1)


def oracle_rank(rows):
    """Elimination with full pivoting (any nonzero entry), pure Python."""
    m = [list(map(int, r)) for r in rows]
    rank = 0
    while m:
        pos = next(((i, j) for i, r in enumerate(m) for j, v in enumerate(r) if v), None)
        if pos is None:
            break
        i, j = pos
        piv = m.pop(i)
        pinv = oracle_inv(piv[j])
        rest = []
        for r in m:
            f = oracle_mul(r[j], pinv)
            rest.append([x ^ oracle_mul(f, y) for x, y in zip(r, piv)])
        m = rest
        rank += 1
    return rank


def oracle_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.uint8)
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0
            for k in range(a.shape[1]):
                acc ^= oracle_mul(int(a[i, k]), int(b[k, j]))
            out[i, j] = acc
    return out


# --- examples -----------------------------------------------------------

def test_add_examples():
    assert gf256.add(0x57, 0x57) == 0x00
    assert gf256.add(0x00, 0xAB) == 0xAB
    assert gf256.add(0x57, 0x83) == 0x57 ^ 0x83 == 0xD4


def test_mul_examples():
    assert gf256.mul(0x01, 0xC3) == 0xC3
    assert gf256.mul(0x00, 0xC3) == 0x00
    assert oracle_mul(0x53, 0xCA) == 0x01
    assert gf256.mul(0x53, 0xCA) == 0x01


def test_mul_table_matches_oracle_everywhere():
    for a in range(256):
        for b in range(256):
            assert gf256.MUL_TABLE[a, b] == oracle_mul(a, b)


def test_inv_examples():
    assert gf256.inv(0x01) == 0x01
    assert oracle_inv(0x53) == 0xCA
    assert gf256.inv(0x53) == 0xCA
    with pytest.raises(gf256.ZeroInverse):
        gf256.inv(0)


def test_inv_all_elements():
    for a in range(1, 256):
        assert gf256.inv(a) == oracle_inv(a)
        assert gf256.INV_TABLE[a] == gf256.inv(a)


def test_rank_examples():
    assert gf256.rank(gf256.identity(4)) == 4
    assert gf256.rank(np.array([[1, 2, 3], [1, 2, 3]], dtype=np.uint8)) == 1
    assert gf256.rank(np.zeros((0, 0), dtype=np.uint8)) == 0
    rng = np.random.default_rng(1234)
    m = rng.integers(0, 256, size=(8, 8), dtype=np.uint8)
    assert gf256.rank(m) == oracle_rank(m)


@pytest.mark.parametrize("seed", range(20))
def test_rank_matches_full_pivot_oracle(seed):
    rng = np.random.default_rng(seed)
    r, c = rng.integers(1, 7, size=2)
    m = rng.integers(0, 256, size=(r, c), dtype=np.uint8)
    # force some dependence in half the cases
    if seed % 2 and r > 2:
        m[-1] = m[0] ^ gf256.scale(m[1], 7)
    assert gf256.rank(m) == oracle_rank(m)


def test_matmul_matches_oracle():
    rng = np.random.default_rng(3)
    a = rng.integers(0, 256, size=(5, 4), dtype=np.uint8)
    b = rng.integers(0, 256, size=(4, 6), dtype=np.uint8)
    assert np.array_equal(gf256.matmul(a, b), oracle_matmul(a, b))


def test_solve_identity():
    y = np.arange(12, dtype=np.uint8).reshape(3, 4)
    assert np.array_equal(gf256.solve(gf256.identity(4), y), y)


@pytest.mark.parametrize("seed", range(5))
def test_solve_round_trip(seed):
    rng = np.random.default_rng(seed)
    k = 6
    while True:
        a = rng.integers(0, 256, size=(k, k), dtype=np.uint8)
        if oracle_rank(a) == k:
            break
    x = rng.integers(0, 256, size=(10, k), dtype=np.uint8)
    assert np.array_equal(gf256.solve(a, gf256.matmul(x, a)), x)


def test_solve_singular():
    a = np.array([[1, 2], [1, 2]], dtype=np.uint8)
    with pytest.raises(gf256.SingularMatrix) as exc:
        gf256.solve(a, np.zeros((3, 2), dtype=np.uint8))
    assert exc.value.rank == 1


def test_independent_rows_prefers_earliest():
    m = np.array([[1, 0], [2, 0], [0, 1], [1, 1]], dtype=np.uint8)
    assert gf256.independent_rows(m) == [0, 2]


# --- properties ---------------------------------------------------------

@given(byte, byte)
def test_add_commutative_self_inverse(a, b):
    assert gf256.add(a, b) == gf256.add(b, a)
    assert gf256.add(a, a) == 0


@given(nonzero, nonzero)
def test_no_zero_divisors(a, b):
    assert gf256.mul(a, b) != 0


@given(byte, byte, byte)
def test_distributive_and_associative(a, b, c):
    assert gf256.mul(a, gf256.add(b, c)) == gf256.add(gf256.mul(a, b), gf256.mul(a, c))
    assert gf256.mul(gf256.mul(a, b), c) == gf256.mul(a, gf256.mul(b, c))
    assert gf256.mul(a, b) == gf256.mul(b, a)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_solve_inverts_matmul(seed, k):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 256, size=(k, k), dtype=np.uint8)
    x = rng.integers(0, 256, size=(3, k), dtype=np.uint8)
    if gf256.rank(a) < k:
        with pytest.raises(gf256.SingularMatrix):
            gf256.solve(a, gf256.matmul(x, a))
    else:
        assert np.array_equal(gf256.solve(a, gf256.matmul(x, a)), x)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), nonzero)
def test_rank_invariant_under_row_ops(seed, c):
    rng = np.random.default_rng(seed)
    m = rng.integers(0, 4, size=(5, 4), dtype=np.uint8)  # small values -> frequent dependence
    r = gf256.rank(m)
    swapped = m[rng.permutation(5)]
    scaled = m.copy()
    scaled[2] = gf256.scale(scaled[2], c)
    assert gf256.rank(swapped) == r
    assert gf256.rank(scaled) == r
