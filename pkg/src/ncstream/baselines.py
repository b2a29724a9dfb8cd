"""Classical bitrate selectors: rate-based, buffer-based, BOLA and robustMPC.

All selectors return a ladder index and never touch NC parameters; when run
in the simulator they use the uncoded action (largest generation, rate 1).
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import qoe
from .stream_sim import BitrateLadder, SimConfig, StreamingEnv, VideoManifest

WINDOW = 5
RESERVOIR = 5.0
CUSHION = 10.0
GAMMA_P = 5.0
HORIZON = 5


@dataclass
class PredictorState:
    window: int = WINDOW
    throughputs: deque = field(default=None)
    errors: deque = field(default=None)
    last_prediction: float | None = None

    def __post_init__(self):
        if self.throughputs is None:
            self.throughputs = deque(maxlen=self.window)
        if self.errors is None:
            self.errors = deque(maxlen=self.window)

    @classmethod
    def from_samples(cls, samples, window: int = WINDOW):
        pred = cls(window=window)
        for s in samples:
            pred.throughputs.append(float(s))
        return pred

    def harmonic_mean(self) -> float:
        if not self.throughputs:
            raise ValueError("no throughput samples yet")
        return len(self.throughputs) / sum(1.0 / x for x in self.throughputs)

    def record(self, throughput: float):
        """Add a measured throughput (Mbps) and score the previous forecast."""
        if self.last_prediction is not None:
            self.errors.append(abs(self.last_prediction - throughput) / throughput)
        self.throughputs.append(throughput)
        self.last_prediction = self.harmonic_mean()

    def robust_estimate(self) -> float:
        max_err = max(self.errors) if self.errors else 0.0
        return self.harmonic_mean() / (1.0 + max_err)


def _highest_below(ladder: BitrateLadder, mbps: float) -> int:
    best = 0
    for i, kbps in enumerate(ladder.levels_kbps):
        if kbps / 1000.0 <= mbps:
            best = i
    return best


def rb_select(pred: PredictorState, ladder: BitrateLadder) -> int:
    return _highest_below(ladder, pred.harmonic_mean())


def bb_select(buffer: float, ladder: BitrateLadder, reservoir: float = RESERVOIR,
              cushion: float = CUSHION) -> int:
    top = len(ladder) - 1
    if buffer <= reservoir:
        return 0
    if buffer >= reservoir + cushion:
        return top
    frac = (buffer - reservoir) / cushion
    return min(top, int(math.floor(frac * top)))


def bola_v(buffer_cap: float, chunk_duration: float, sizes, gamma_p: float = GAMMA_P) -> float:
    """Lyapunov weight so that the top level is chosen only near a full buffer."""
    u_max = math.log(sizes[-1] / sizes[0])
    q_max = buffer_cap / chunk_duration
    return (q_max - 1.0) / (u_max + gamma_p)


def bola_objectives(buffer: float, chunk_duration: float, sizes, v: float,
                    gamma_p: float = GAMMA_P) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=float)
    q = buffer / chunk_duration
    util = np.log(sizes / sizes[0])
    return (v * (util + gamma_p) - q) / sizes


def bola_select(buffer: float, ladder: BitrateLadder, v_param: float, gamma_p: float,
                manifest: VideoManifest, chunk_index: int) -> int:
    sizes = manifest.sizes[min(chunk_index, manifest.chunk_count - 1)]
    obj = bola_objectives(buffer, ladder.chunk_duration, sizes, v_param, gamma_p)
    return int(np.argmax(obj))  # first max -> lower index on ties


_SEQ_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _sequences(levels: int, horizon: int) -> np.ndarray:
    key = (levels, horizon)
    if key not in _SEQ_CACHE:
        _SEQ_CACHE[key] = np.array(list(itertools.product(range(levels), repeat=horizon)), dtype=np.int64)
    return _SEQ_CACHE[key]


def mpc_select(pred: PredictorState, buffer: float, last_index: int, manifest: VideoManifest,
               chunk_index: int, horizon: int, params: qoe.QoEParams,
               chunk_duration: float = 4.0, throughput: float | None = None) -> int:
    """Exhaustive lookahead over every bitrate sequence of length ``horizon``.

    ``throughput`` overrides the robust harmonic-mean forecast (Mbps).
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    h = min(horizon, manifest.chunk_count - chunk_index)
    if h <= 0:
        return last_index
    bw = pred.robust_estimate() if throughput is None else throughput
    levels = manifest.sizes.shape[1]
    seqs = _sequences(levels, h)
    q_levels = np.array([qoe.quality(params, r) for r in params.levels_kbps])
    sizes = manifest.sizes[chunk_index : chunk_index + h]

    buf = np.full(len(seqs), float(buffer))
    score = np.zeros(len(seqs))
    prev_q = np.full(len(seqs), q_levels[last_index])
    for j in range(h):
        lv = seqs[:, j]
        dl = sizes[j, lv] * 8.0 / (bw * 1e6)
        rebuf = np.maximum(0.0, dl - buf)
        buf = np.maximum(buf - dl, 0.0) + chunk_duration
        q = q_levels[lv]
        score += q - params.mu * rebuf - np.abs(q - prev_q)
        prev_q = q
    return int(seqs[int(np.argmax(score)), 0])


class Controller:
    """Per-session decision state for one baseline."""

    name = "base"

    def __init__(self, config: SimConfig, params: qoe.QoEParams | None = None):
        self.config = config
        self.params = params or qoe.make_params(qoe.LINEAR, config.ladder.levels_kbps)
        self.pred = PredictorState()
        self.started = False
        self.consumed = 0

    def __call__(self, env: StreamingEnv, obs) -> tuple[int, int, int]:
        if not self.started:
            self.pred.record(env.startup.throughput_mbps)
            self.started = True
        for res in env.results[self.consumed:]:
            self.pred.record(res.throughput_mbps)
        self.consumed = len(env.results)
        return self.config.uncoded(self.select(env))

    def select(self, env: StreamingEnv) -> int:
        raise NotImplementedError


class RateBased(Controller):
    name = "rb"

    def select(self, env):
        return rb_select(self.pred, self.config.ladder)


class BufferBased(Controller):
    name = "bb"

    def __init__(self, config, params=None, reservoir=RESERVOIR, cushion=CUSHION):
        super().__init__(config, params)
        self.reservoir, self.cushion = reservoir, cushion

    def select(self, env):
        return bb_select(env.state.buffer, self.config.ladder, self.reservoir, self.cushion)


class Bola(Controller):
    name = "bola"

    def __init__(self, config, params=None, gamma_p=GAMMA_P):
        super().__init__(config, params)
        self.gamma_p = gamma_p
        # fixed for the session from the nominal ladder
        self.v = bola_v(config.buffer_cap, config.ladder.chunk_duration, config.ladder.levels_kbps, gamma_p)

    def select(self, env):
        return bola_select(env.state.buffer, self.config.ladder, self.v, self.gamma_p,
                           env.manifest, env.state.chunk_index)


class RobustMPC(Controller):
    name = "robustmpc"

    def __init__(self, config, params=None, horizon=HORIZON):
        super().__init__(config, params)
        self.horizon = horizon

    def select(self, env):
        last = env.state.last_action.bitrate if env.state.last_action else 0
        return mpc_select(self.pred, env.state.buffer, last, env.manifest, env.state.chunk_index,
                          self.horizon, self.params, self.config.ladder.chunk_duration)


CONTROLLERS = {c.name: c for c in (RateBased, BufferBased, Bola, RobustMPC)}
