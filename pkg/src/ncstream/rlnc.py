"""Systematic random linear network coding, one generation at a time.

A chunk of ``chunk_size`` bytes is cut into ``m`` slices of ``slice_size``
bytes (the last one zero padded) and the slices are grouped into generations
of at most ``k`` slices. Generation ``g`` with ``k_g`` source slices is sent
as ``n_g = ceil(k_g / rho)`` coded slices: the source slices themselves
followed by ``n_g - k_g`` random combinations (generator matrix ``[I | C]``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gf256

SEED_BYTES = 4


class InvalidRate(ValueError):
    pass


class InvalidSize(ValueError):
    pass


class InvalidPlan(ValueError):
    pass


class InsufficientRank(Exception):
    """Not enough independent slices to decode a generation."""

    def __init__(self, rank: int, needed: int):
        super().__init__(f"received rank {rank} of {needed}")
        self.rank = rank
        self.needed = needed

    @property
    def missing(self) -> int:
        return self.needed - self.rank


@dataclass(frozen=True)
class GenerationPlan:
    entries: tuple[tuple[int, int], ...]
    slice_size: int
    chunk_size: int

    @property
    def num_slices(self) -> int:
        return sum(k for k, _ in self.entries)

    @property
    def num_coded(self) -> int:
        return sum(n for _, n in self.entries)

    def __len__(self):
        return len(self.entries)


@dataclass
class CodedSlice:
    generation_index: int
    coeffs: np.ndarray
    payload: np.ndarray
    is_systematic: bool


@dataclass
class LossPattern:
    """Per-generation receive flags, aligned with a plan's coded slices."""

    received: list[np.ndarray] = field(default_factory=list)

    def matches(self, plan: GenerationPlan) -> bool:
        return len(self.received) == len(plan.entries) and all(
            len(r) == n for r, (_, n) in zip(self.received, plan.entries)
        )


def coded_count(k: int, rho: float) -> int:
    # guard against 16/0.8 = 20.000000000000004 style round-up
    return math.ceil(round(k / rho, 9))


def plan_generations(chunk_size: int, slice_size: int, k: int, rho: float) -> GenerationPlan:
    if not (0.0 < rho <= 1.0):
        raise InvalidRate(f"code rate must be in (0, 1], got {rho}")
    if chunk_size <= 0 or slice_size <= 0:
        raise InvalidSize(f"sizes must be positive (chunk={chunk_size}, slice={slice_size})")
    if k < 1:
        raise InvalidSize(f"generation size must be >= 1, got {k}")
    m = -(-chunk_size // slice_size)
    gens = -(-m // k)
    entries = []
    for g in range(gens):
        k_g = k if g < gens - 1 else m - k * (gens - 1)
        entries.append((k_g, coded_count(k_g, rho)))
    return GenerationPlan(tuple(entries), slice_size, chunk_size)


def repair_coefficients(seed: int, k: int, count: int) -> np.ndarray:
    """``count`` x ``k`` coefficient rows drawn from ``seed``; no all-zero rows."""
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, 256, size=(count, k), dtype=np.uint8)
    bad = ~rows.any(axis=1)
    while bad.any():
        rows[bad] = rng.integers(0, 256, size=(int(bad.sum()), k), dtype=np.uint8)
        bad = ~rows.any(axis=1)
    return rows


def encode_generation(source: np.ndarray, n_g: int, seed: int, generation_index: int = 0) -> list[CodedSlice]:
    """Encode an ``n_s x k_g`` source matrix (one column per slice)."""
    source = np.asarray(source, dtype=np.uint8)
    k_g = source.shape[1]
    if n_g < k_g:
        raise InvalidPlan(f"n_g={n_g} < k_g={k_g}")
    eye = gf256.identity(k_g)
    out = [
        CodedSlice(generation_index, eye[i].copy(), source[:, i].copy(), True)
        for i in range(k_g)
    ]
    if n_g > k_g:
        coeffs = repair_coefficients(seed, k_g, n_g - k_g)
        payloads = gf256.matmul(source, coeffs.T)
        for j in range(n_g - k_g):
            out.append(CodedSlice(generation_index, coeffs[j], payloads[:, j].copy(), False))
    return out


def decode_generation(slices: list[CodedSlice], k_g: int) -> np.ndarray:
    """Recover the ``n_s x k_g`` source matrix from received coded slices."""
    if not slices:
        raise InsufficientRank(0, k_g)
    gens = {s.generation_index for s in slices}
    if len(gens) > 1:
        raise ValueError(f"slices from several generations: {sorted(gens)}")
    if any(len(s.coeffs) != k_g for s in slices):
        raise ValueError(f"coefficient vectors must have length {k_g}")

    systematic = {}
    for s in slices:
        if s.is_systematic:
            systematic.setdefault(int(np.argmax(s.coeffs)), s.payload)
    if len(systematic) == k_g:
        return np.stack([systematic[i] for i in range(k_g)], axis=1)

    coeffs = np.stack([s.coeffs for s in slices])
    pick = gf256.independent_rows(coeffs)
    if len(pick) < k_g:
        raise InsufficientRank(len(pick), k_g)
    a = coeffs[pick].T
    y = np.stack([slices[i].payload for i in pick], axis=1)
    return gf256.solve(a, y)


def split_chunk(data: bytes, plan: GenerationPlan) -> list[np.ndarray]:
    """Cut a chunk into per-generation source matrices, zero padding the tail."""
    if len(data) != plan.chunk_size:
        raise InvalidSize(f"chunk has {len(data)} bytes, plan expects {plan.chunk_size}")
    n_s = plan.slice_size
    padded = np.zeros(plan.num_slices * n_s, dtype=np.uint8)
    padded[: len(data)] = np.frombuffer(data, dtype=np.uint8)
    cols = padded.reshape(plan.num_slices, n_s).T
    out, start = [], 0
    for k_g, _ in plan.entries:
        out.append(np.ascontiguousarray(cols[:, start : start + k_g]))
        start += k_g
    return out


def join_chunk(sources: list[np.ndarray], plan: GenerationPlan) -> bytes:
    flat = np.concatenate([s.T.reshape(-1) for s in sources])
    return flat[: plan.chunk_size].tobytes()


def received_rank(k: int, systematic_received: np.ndarray, repair_coeffs: np.ndarray) -> int:
    """Rank of a systematic generation's received coefficient matrix.

    The received unit rows span their own coordinates, so the rank is their
    count plus the rank of the repair rows restricted to the missing
    coordinates.
    """
    missing = np.flatnonzero(~np.asarray(systematic_received, dtype=bool))
    base = k - missing.size
    if missing.size == 0 or len(repair_coeffs) == 0:
        return base
    return base + gf256.rank(np.asarray(repair_coeffs)[:, missing])


def decode_failure_prob(k: int, n: int, p: float, trials: int, seed: int) -> float:
    """Monte Carlo probability that a (k, n) generation is undecodable at loss ``p``."""
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"loss ratio must be in [0, 1], got {p}")
    if trials <= 0:
        return 0.0
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(trials):
        lost = rng.random(n) < p
        coeff_seed = int(rng.integers(0, 2**32))
        got = ~lost
        if got.sum() < k:
            failures += 1
            continue
        repair = repair_coefficients(coeff_seed, k, n - k)[got[k:]]
        if received_rank(k, got[:k], repair) < k:
            failures += 1
    return failures / trials
