"""Synthetic bandwidth traces: two-state Markov-modulated capacity."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .stream_sim import Trace, save_trace

BW_LOW, BW_HIGH = 0.3, 5.0


def markov_trace(duration: int, rng: np.random.Generator, low: float = BW_LOW, high: float = BW_HIGH,
                 mean_dwell: float = 10.0, step: float = 1.0, noise: float = 0.1, name: str = "") -> Trace:
    """Bandwidth alternating between two levels drawn from [low, high].

    The state switches with probability ``step / mean_dwell`` per sample
    (geometric dwell times), and each sample carries multiplicative gaussian
    noise. Values are clipped to [low, high].
    """
    levels = np.sort(rng.uniform(low, high, size=2))
    n = int(round(duration / step))
    switch = rng.random(n) < step / mean_dwell
    state = int(rng.integers(0, 2))
    bw = np.empty(n)
    for i in range(n):
        if i and switch[i]:
            state ^= 1
        bw[i] = levels[state]
    bw *= 1.0 + noise * rng.standard_normal(n)
    bw = np.round(np.clip(bw, low, high), 4)
    return Trace(np.arange(n) * step, bw, name=name)


def generate(count: int, duration: int, out_dir, seed: int = 0, prefix: str = "trace", **kw) -> list[Path]:
    if count < 1:
        raise ValueError("count must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    width = max(3, len(str(count - 1)))
    for i in range(count):
        name = f"{prefix}_{i:0{width}d}"
        path = out / f"{name}.txt"
        save_trace(markov_trace(duration, rng, name=name, **kw), path)
        paths.append(path)
    return paths
