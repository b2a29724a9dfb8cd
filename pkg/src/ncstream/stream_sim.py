"""Trace-driven chunk download simulator with per-slice loss and NC repair.

Time is in seconds, bandwidth in Mbps, sizes in bytes, bitrates in kbps.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import gf256, qoe, rlnc

DEFAULT_LADDER_KBPS = (300, 750, 1200, 1850, 2850, 4300)
DEFAULT_K_VALUES = (8, 16, 32, 64)
DEFAULT_RHO_VALUES = (1.0, 0.95, 0.9, 0.85, 0.8)
LOSS_SCALE = 0.02
MAX_ROUNDS = 10_000


class ParseError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class EmptyTrace(ValueError):
    pass


class EpisodeFinished(RuntimeError):
    pass


@dataclass(frozen=True)
class BitrateLadder:
    levels_kbps: tuple[float, ...] = DEFAULT_LADDER_KBPS
    chunk_duration: float = 4.0
    hd_threshold_index: int = 3

    def __post_init__(self):
        if not self.levels_kbps:
            raise ValueError("ladder must not be empty")
        if any(b <= a for a, b in zip(self.levels_kbps, self.levels_kbps[1:])):
            raise ValueError("ladder must be strictly ascending")

    def __len__(self):
        return len(self.levels_kbps)


@dataclass
class Trace:
    times: np.ndarray
    bandwidths: np.ndarray
    loss_ratio: float = 0.0
    rtt: float = 0.08
    name: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.bandwidths = np.asarray(self.bandwidths, dtype=float)
        if len(self.times) == 0:
            raise EmptyTrace(self.name or "trace has no samples")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if np.any(self.bandwidths <= 0):
            raise ValueError("bandwidth must be positive")
        if not (0.0 <= self.loss_ratio <= 1.0):
            raise ValueError("loss ratio must be in [0, 1]")
        gaps = np.diff(self.times)
        last = gaps[-1] if len(gaps) else 1.0
        # each sample holds until the next one; the last repeats the final gap
        self.durations = np.append(gaps, last)
        self.offsets = self.times - self.times[0]
        self.period = float(self.durations.sum())

    def with_channel(self, loss_ratio: float, rtt: float | None = None) -> "Trace":
        return Trace(self.times, self.bandwidths, loss_ratio, self.rtt if rtt is None else rtt, self.name)

    def __len__(self):
        return len(self.times)


def load_trace(path, loss_ratio: float = 0.0, rtt: float = 0.08) -> Trace:
    """Read a "seconds bandwidth_Mbps" per line trace file."""
    path = Path(path)
    times, bws = [], []
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(lineno, f"expected 2 fields, got {len(parts)}")
            try:
                t, bw = float(parts[0]), float(parts[1])
            except ValueError:
                raise ParseError(lineno, f"not numeric: {line!r}") from None
            if times and t <= times[-1]:
                raise ParseError(lineno, "timestamps must be strictly increasing")
            if not bw > 0:
                raise ParseError(lineno, "bandwidth must be positive")
            times.append(t)
            bws.append(bw)
    if not times:
        raise EmptyTrace(str(path))
    return Trace(np.array(times), np.array(bws), loss_ratio, rtt, path.stem)


def save_trace(trace: Trace, path):
    with open(path, "w") as f:
        for t, bw in zip(trace.times, trace.bandwidths):
            f.write(f"{t:.1f} {bw:.4f}\n")


def transfer_time(trace: Trace, start_clock: float, nbytes: float) -> float:
    """Seconds needed to push ``nbytes`` through the (looping) trace from ``start_clock``."""
    if nbytes <= 0:
        return 0.0
    remaining = nbytes * 8.0
    pos = start_clock % trace.period
    i = int(np.searchsorted(trace.offsets, pos, side="right")) - 1
    into = pos - float(trace.offsets[i])
    n = len(trace.times)
    elapsed = 0.0
    while True:
        rate = float(trace.bandwidths[i]) * 1e6
        left = float(trace.durations[i]) - into
        capacity = rate * left
        if capacity >= remaining:
            return float(elapsed + remaining / rate)
        remaining -= capacity
        elapsed += left
        i = (i + 1) % n
        into = 0.0


@dataclass
class VideoManifest:
    sizes: np.ndarray  # [chunk][level] bytes

    def __post_init__(self):
        self.sizes = np.asarray(self.sizes, dtype=np.int64)
        if np.any(np.diff(self.sizes, axis=1) <= 0):
            raise ValueError("chunk sizes must increase with level")

    @property
    def chunk_count(self) -> int:
        return self.sizes.shape[0]


def synthesize_manifest(ladder: BitrateLadder, chunk_count: int = 48, seed: int = 0,
                        jitter: float = 0.1) -> VideoManifest:
    rng = np.random.default_rng(seed)
    nominal = np.asarray(ladder.levels_kbps, dtype=float) * 1000 * ladder.chunk_duration / 8
    noise = rng.uniform(1 - jitter, 1 + jitter, size=(chunk_count, len(ladder)))
    return VideoManifest(np.round(nominal[None, :] * noise).astype(np.int64))


def load_manifest(path) -> VideoManifest:
    """Read "chunk_index level_index size_bytes" triples."""
    triples = []
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                c, l, s = (int(x) for x in line.split())
            except ValueError:
                raise ParseError(lineno, f"expected 3 integers: {line!r}") from None
            triples.append((c, l, s))
    if not triples:
        raise ValueError(f"empty manifest {path}")
    chunks = max(t[0] for t in triples) + 1
    levels = max(t[1] for t in triples) + 1
    sizes = np.zeros((chunks, levels), dtype=np.int64)
    for c, l, s in triples:
        sizes[c, l] = s
    if np.any(sizes <= 0):
        raise ValueError("manifest is missing (chunk, level) entries")
    return VideoManifest(sizes)


class Action(NamedTuple):
    bitrate: int
    k_index: int
    rho_index: int


@dataclass(frozen=True)
class SimConfig:
    ladder: BitrateLadder = BitrateLadder()
    buffer_cap: float = 60.0
    slice_size: int = 1024
    header_size: int = 16
    history: int = 8
    k_values: tuple[int, ...] = DEFAULT_K_VALUES
    rho_values: tuple[float, ...] = DEFAULT_RHO_VALUES
    ewma_weight: float = 0.25

    @property
    def obs_dim(self) -> int:
        return 2 * self.history + len(self.ladder) + 7

    def uncoded(self, bitrate: int) -> Action:
        """Action with NC switched off: largest generation, rate 1."""
        return Action(bitrate, len(self.k_values) - 1, self.rho_values.index(1.0))


@dataclass
class SessionState:
    history: int = 8
    clock: float = 0.0
    buffer: float = 0.0
    chunk_index: int = 0
    last_action: Action | None = None
    last_loss: float = 0.0
    ewma_loss: float = 0.0
    throughputs: deque = field(default=None)
    download_times: deque = field(default=None)
    losses: deque = field(default=None)

    def __post_init__(self):
        for name in ("throughputs", "download_times", "losses"):
            if getattr(self, name) is None:
                setattr(self, name, deque(maxlen=self.history))


@dataclass
class DownloadResult:
    source_bytes: int
    sent_bytes: int
    download_time: float
    rebuffer_time: float
    retransmission_rounds: int
    slices_sent: int
    slices_lost: int
    buffer_before: float = 0.0
    buffer_after: float = 0.0
    wait_time: float = 0.0
    bitrate_kbps: float = 0.0
    k: int = 0
    rho: float = 1.0

    @property
    def throughput_mbps(self) -> float:
        return self.source_bytes * 8 / self.download_time / 1e6

    @property
    def loss_ratio(self) -> float:
        return self.slices_lost / self.slices_sent if self.slices_sent else 0.0


def _generation_repair(plan, lost, seeds, rng, p):
    """Resolve every generation; returns (rounds, extra slices, extra lost)."""
    deficient = {}
    start = 0
    for g, (k_g, n_g) in enumerate(plan.entries):
        gl = lost[start : start + n_g]
        start += n_g
        sys_lost = gl[:k_g]
        if not sys_lost.any():
            continue
        missing = np.flatnonzero(sys_lost)
        got_repair = ~gl[k_g:]
        rows = rlnc.repair_coefficients(int(seeds[g]), k_g, n_g - k_g)[got_repair][:, missing]
        r = gf256.rank(rows) if len(rows) else 0
        if r < missing.size:
            deficient[g] = [missing, rows, r]

    rounds = extra_sent = extra_lost = 0
    while deficient:
        rounds += 1
        if rounds > MAX_ROUNDS:
            raise RuntimeError(f"generation still undecodable after {MAX_ROUNDS} rounds (p={p})")
        for g in list(deficient):
            missing, rows, r = deficient[g]
            k_g = plan.entries[g][0]
            need = missing.size - r
            seed = int(rng.integers(0, 2**32))
            fresh_lost = rng.random(need) < p
            extra_sent += need
            extra_lost += int(fresh_lost.sum())
            fresh = rlnc.repair_coefficients(seed, k_g, need)[~fresh_lost][:, missing]
            if len(fresh):
                rows = np.concatenate([rows, fresh]) if len(rows) else fresh
                r = gf256.rank(rows)
            if r == missing.size:
                del deficient[g]
            else:
                deficient[g] = [missing, rows, r]
    return rounds, extra_sent, extra_lost


def download_chunk(state: SessionState, trace: Trace, manifest: VideoManifest, action: Action,
                   rng_seed: int, config: SimConfig = SimConfig()) -> DownloadResult:
    """Simulate fetching the next chunk; does not mutate ``state``."""
    n = state.chunk_index
    if n >= manifest.chunk_count:
        raise EpisodeFinished(f"all {manifest.chunk_count} chunks delivered")
    n_s, h = config.slice_size, config.header_size
    source = int(manifest.sizes[n, action.bitrate])
    k = config.k_values[action.k_index]
    rho = config.rho_values[action.rho_index]
    plan = rlnc.plan_generations(source, n_s, k, rho)
    m = plan.num_slices

    rng = np.random.default_rng(rng_seed)
    p = trace.loss_ratio
    seeds = rng.integers(0, 2**32, size=len(plan))
    lost = rng.random(plan.num_coded) < p
    rounds, extra_sent, extra_lost = _generation_repair(plan, lost, seeds, rng, p)

    repair = plan.num_coded - m + extra_sent
    # source slices go out at their true length; repair slices are always full
    sent_bytes = source + h * m + repair * (n_s + h)
    download_time = transfer_time(trace, state.clock, sent_bytes) + trace.rtt * (1 + rounds)

    rebuffer = max(0.0, download_time - state.buffer)
    buffer_after = max(0.0, state.buffer - download_time) + config.ladder.chunk_duration
    wait = max(0.0, buffer_after - config.buffer_cap)
    buffer_after = min(buffer_after, config.buffer_cap)
    return DownloadResult(
        source_bytes=source,
        sent_bytes=sent_bytes,
        download_time=download_time,
        rebuffer_time=rebuffer,
        retransmission_rounds=rounds,
        slices_sent=plan.num_coded + extra_sent,
        slices_lost=int(lost.sum()) + extra_lost,
        buffer_before=state.buffer,
        buffer_after=buffer_after,
        wait_time=wait,
        bitrate_kbps=float(config.ladder.levels_kbps[action.bitrate]),
        k=k,
        rho=rho,
    )


def apply_result(state: SessionState, action: Action, result: DownloadResult, config: SimConfig):
    state.clock += result.download_time + result.wait_time
    state.buffer = result.buffer_after
    state.chunk_index += 1
    state.last_action = action
    state.throughputs.append(result.throughput_mbps)
    state.download_times.append(result.download_time)
    state.losses.append(result.loss_ratio)
    state.last_loss = result.loss_ratio
    w = config.ewma_weight
    state.ewma_loss = (1 - w) * state.ewma_loss + w * result.loss_ratio


def _padded(values, length):
    out = np.zeros(length)
    vals = list(values)[::-1]  # newest first
    out[: len(vals)] = vals
    return out


def observe(state: SessionState, manifest: VideoManifest, config: SimConfig = SimConfig()) -> np.ndarray:
    H = config.history
    if state.chunk_index < manifest.chunk_count:
        sizes = manifest.sizes[state.chunk_index] / 1e6
    else:
        sizes = np.zeros(len(config.ladder))
    a = state.last_action
    if a is None:
        last = (0.0, 0.0, 0.0)
    else:
        last = (
            config.ladder.levels_kbps[a.bitrate] / config.ladder.levels_kbps[-1],
            config.rho_values[a.rho_index],
            config.k_values[a.k_index] / max(config.k_values),
        )
    tail = [
        state.buffer / 10.0,
        (manifest.chunk_count - state.chunk_index) / manifest.chunk_count,
        *last,
        state.last_loss / LOSS_SCALE,
        state.ewma_loss / LOSS_SCALE,
    ]
    return np.concatenate([
        _padded(state.throughputs, H) / 10.0,
        _padded(state.download_times, H) / 10.0,
        sizes,
        tail,
    ])


def chunk_seed(seed: int, chunk_index: int) -> int:
    return int(np.random.SeedSequence([seed, chunk_index]).generate_state(1)[0])


class StreamingEnv:
    """One playback session over one trace, exposed as an RL environment.

    The first chunk is fetched at the lowest bitrate inside :meth:`reset`;
    every :meth:`step` then downloads one chunk and returns its QoE reward.
    With ``coded=False`` the generation size and code rate in the action are
    ignored and NC is switched off.
    """

    def __init__(self, trace: Trace, manifest: VideoManifest, config: SimConfig = SimConfig(),
                 qoe_params: qoe.QoEParams | None = None, seed: int = 0, coded: bool = True):
        self.trace = trace
        self.manifest = manifest
        self.config = config
        self.qoe_params = qoe_params or qoe.make_params(qoe.LINEAR, config.ladder.levels_kbps)
        self.seed = seed
        self.coded = coded
        self.state = None
        self.log = qoe.ChunkLog()
        self.results: list[DownloadResult] = []
        self.done = False

    @property
    def obs_dim(self) -> int:
        return self.config.obs_dim

    def _resolve(self, action) -> Action:
        if not isinstance(action, Action):
            action = Action(*action) if len(action) == 3 else self.config.uncoded(int(action[0]))
        if not self.coded:
            action = self.config.uncoded(action.bitrate)
        return action

    def _download(self, action: Action) -> DownloadResult:
        seed = chunk_seed(self.seed, self.state.chunk_index)
        result = download_chunk(self.state, self.trace, self.manifest, action, seed, self.config)
        apply_result(self.state, action, result, self.config)
        return result

    def reset(self) -> np.ndarray:
        self.state = SessionState(history=self.config.history)
        self.log = qoe.ChunkLog()
        self.results = []
        self.done = False
        self.startup = self._download(self.config.uncoded(0))
        return self.observation()

    def observation(self) -> np.ndarray:
        return observe(self.state, self.manifest, self.config)

    def step(self, action):
        if self.done or self.state is None:
            raise EpisodeFinished("step() after the episode ended")
        action = self._resolve(action)
        prev = self.log.bitrates[-1] if len(self.log) else None
        result = self._download(action)
        reward = qoe.chunk_reward(self.qoe_params, prev, result.bitrate_kbps, result.rebuffer_time)
        self.log.append(result.bitrate_kbps, result.rebuffer_time)
        self.results.append(result)
        self.done = self.state.chunk_index >= self.manifest.chunk_count
        return self.observation(), reward, self.done, result


class UncodedEnv:
    """Reference session without any coding machinery.

    Every chunk is sent as plain slices with a per-slice header over a
    lossless channel: one RTT plus the transfer time.
    """

    def __init__(self, trace: Trace, manifest: VideoManifest, config: SimConfig = SimConfig()):
        self.trace = trace
        self.manifest = manifest
        self.config = config
        self.clock = 0.0
        self.buffer = 0.0
        self.chunk = 0

    def fetch(self, level: int) -> float:
        size = int(self.manifest.sizes[self.chunk, level])
        slices = math.ceil(size / self.config.slice_size)
        dt = transfer_time(self.trace, self.clock, size + self.config.header_size * slices) + self.trace.rtt
        buf = max(0.0, self.buffer - dt) + self.config.ladder.chunk_duration
        wait = max(0.0, buf - self.config.buffer_cap)
        self.buffer = min(buf, self.config.buffer_cap)
        self.clock += dt + wait
        self.chunk += 1
        return dt


def run_policy(env: StreamingEnv, choose) -> StreamingEnv:
    """Roll out one episode; ``choose(env, obs)`` returns an action."""
    obs = env.reset()
    done = False
    while not done:
        obs, _, done, _ = env.step(choose(env, obs))
    return env


def ladder_from(levels: Sequence[float], chunk_duration: float = 4.0, hd_threshold_index: int = 3) -> BitrateLadder:
    return BitrateLadder(tuple(float(x) for x in levels), chunk_duration, hd_threshold_index)
