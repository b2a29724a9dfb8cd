"""Chunk-level QoE: quality minus rebuffer penalty minus quality switches."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

LINEAR, LOG, HD = "linear", "log", "hd"

# rebuffer weight per variant
DEFAULT_MU = {LINEAR: 4.3, LOG: 2.66, HD: 8.0}
DEFAULT_HD_SCORES = (1.0, 2.0, 3.0, 12.0, 15.0, 20.0)
VARIANT_BY_NUMBER = {1: LINEAR, 2: LOG, 3: HD}


class UnknownLevel(KeyError):
    pass


class EmptyLog(ValueError):
    pass


@dataclass(frozen=True)
class QoEParams:
    variant: str
    mu: float
    levels_kbps: tuple[float, ...]
    hd_scores: tuple[float, ...] = DEFAULT_HD_SCORES

    def __post_init__(self):
        if self.variant not in DEFAULT_MU:
            raise ValueError(f"unknown QoE variant {self.variant!r}")
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if list(self.hd_scores) != sorted(self.hd_scores):
            raise ValueError("hd_scores must be ascending")
        if self.variant == HD and len(self.hd_scores) != len(self.levels_kbps):
            raise ValueError("need one hd score per ladder level")

    @property
    def r_min(self) -> float:
        return self.levels_kbps[0]

    def level_of(self, r: float) -> int:
        try:
            return self.levels_kbps.index(r)
        except ValueError:
            raise UnknownLevel(r) from None


def make_params(variant: str | int, levels_kbps: Sequence[float], mu: float | None = None,
                hd_scores: Sequence[float] = DEFAULT_HD_SCORES) -> QoEParams:
    """Build params for a variant given by name or by number 1/2/3."""
    if isinstance(variant, int) or str(variant).isdigit():
        variant = VARIANT_BY_NUMBER[int(variant)]
    return QoEParams(
        variant=variant,
        mu=DEFAULT_MU[variant] if mu is None else mu,
        levels_kbps=tuple(float(x) for x in levels_kbps),
        hd_scores=tuple(float(x) for x in hd_scores),
    )


def quality(params: QoEParams, r: float) -> float:
    level = params.level_of(r)
    if params.variant == LINEAR:
        return r / 1000.0
    if params.variant == LOG:
        return math.log(r / params.r_min)
    return params.hd_scores[level]


def chunk_reward(params: QoEParams, prev_r: float | None, r: float, rebuffer: float) -> float:
    q = quality(params, r)
    smooth = 0.0 if prev_r is None else abs(q - quality(params, prev_r))
    return q - params.mu * rebuffer - smooth


@dataclass
class ChunkLog:
    bitrates: list[float] = field(default_factory=list)
    rebuffers: list[float] = field(default_factory=list)

    def append(self, r: float, t: float):
        if t < 0:
            raise ValueError("rebuffer time must be non-negative")
        self.bitrates.append(r)
        self.rebuffers.append(t)

    def __len__(self):
        return len(self.bitrates)

    @classmethod
    def from_pairs(cls, pairs):
        log = cls()
        for r, t in pairs:
            log.append(r, t)
        return log


def session_qoe(params: QoEParams, log: ChunkLog) -> float:
    if len(log) == 0:
        raise EmptyLog("QoE of an empty session is undefined")
    qs = [quality(params, r) for r in log.bitrates]
    total = sum(qs) - params.mu * sum(log.rebuffers)
    total -= sum(abs(b - a) for a, b in zip(qs, qs[1:]))
    return total
