"""Training and paired evaluation of every algorithm over a trace directory."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import agent, baselines, qoe
from .config import RunConfig
from .stream_sim import StreamingEnv, Trace, load_trace, run_policy

log = logging.getLogger(__name__)

RL_ALGOS = ("nancy", "pensieve")
ALGOS = RL_ALGOS + ("robustmpc", "bola", "rb", "bb")
VARIANTS = (1, 2, 3)

CHUNK_COLUMNS = ["trace", "chunk", "bitrate_kbps", "rebuffer_s", "buffer_s", "download_s",
                 "retx_rounds", "rho", "K", "reward"]
TRACE_COLUMNS = ["trace", "loss_ratio", "qoe1", "qoe2", "qoe3"]


class UnknownAlgo(ValueError):
    pass


class MissingCheckpoint(FileNotFoundError):
    pass


def list_traces(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"trace directory {d} does not exist")
    paths = sorted(p for p in d.iterdir() if p.is_file() and not p.name.startswith("."))
    if not paths:
        raise FileNotFoundError(f"no trace files in {d}")
    return paths


def load_traces(directory, rtt: float) -> list[Trace]:
    return [load_trace(p, 0.0, rtt) for p in list_traces(directory)]


def episode_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, 7919, index]).generate_state(1)[0])


def draw_loss_ratios(loss_set, count: int, seed: int) -> list[float]:
    """Per-trace loss ratios; depends only on the seed, so runs are paired."""
    rng = np.random.default_rng(seed)
    return [float(loss_set[i]) for i in rng.integers(0, len(loss_set), size=count)]


def head_sizes_for(algo: str, cfg: RunConfig) -> tuple[int, ...]:
    if algo == "nancy":
        return (len(cfg.ladder_kbps), len(cfg.k_values), len(cfg.rho_values))
    if algo == "pensieve":
        return (len(cfg.ladder_kbps),)
    raise UnknownAlgo(algo)


def qoe_variants(cfg: RunConfig) -> dict[int, qoe.QoEParams]:
    return {v: qoe.make_params(v, cfg.ladder_kbps) for v in VARIANTS}


def train_agent(cfg: RunConfig, algo: str | None = None, progress=None) -> agent.TrainResult:
    algo = algo or cfg.algo
    if algo not in RL_ALGOS:
        raise UnknownAlgo(f"{algo} is not trainable")
    sim = cfg.sim_config()
    manifest = cfg.manifest_for(sim)
    traces = load_traces(cfg.traces, cfg.rtt)
    reward = qoe.make_params(cfg.reward_qoe, cfg.ladder_kbps)
    coded = algo == "nancy"

    def factory(rng: np.random.Generator):
        tr = traces[int(rng.integers(len(traces)))]
        p = float(cfg.loss_set[int(rng.integers(len(cfg.loss_set)))])
        return StreamingEnv(tr.with_channel(p), manifest, sim, reward, int(rng.integers(2**32)), coded)

    validate = None
    if cfg.val_traces:
        def validate(params):
            res = evaluate(cfg, algo, params, traces_dir=cfg.val_traces)
            return res.mean(cfg.reward_qoe)

    return agent.train(factory, cfg.train_config(), head_sizes_for(algo, cfg), sim.obs_dim,
                       validate=validate, progress=progress)


def make_chooser(algo: str, cfg: RunConfig, params: agent.PolicyParams | None, sim):
    if algo in RL_ALGOS:
        if params is None:
            raise MissingCheckpoint(f"{algo} needs a checkpoint")
        if params.head_sizes != head_sizes_for(algo, cfg):
            raise ValueError(f"checkpoint heads {params.head_sizes} do not fit {algo}")
        return lambda env, obs: agent.act_greedy(params, obs)
    if algo not in baselines.CONTROLLERS:
        raise UnknownAlgo(algo)
    params_q = qoe.make_params(cfg.reward_qoe, cfg.ladder_kbps)
    if algo == "robustmpc":
        return baselines.RobustMPC(sim, params_q, horizon=cfg.horizon)
    return baselines.CONTROLLERS[algo](sim, params_q)


@dataclass
class EvalResult:
    algo: str
    chunk_rows: list[dict] = field(default_factory=list)
    trace_rows: list[dict] = field(default_factory=list)

    def mean(self, variant: int) -> float:
        return float(np.mean([r[f"qoe{variant}"] for r in self.trace_rows]))

    def mean_bitrate(self) -> float:
        return float(np.mean([r["bitrate_kbps"] for r in self.chunk_rows]))

    def summary(self) -> dict:
        return {f"qoe{v}": self.mean(v) for v in VARIANTS}


def evaluate(cfg: RunConfig, algo: str, params: agent.PolicyParams | None = None,
             traces_dir: str | None = None) -> EvalResult:
    if algo not in ALGOS:
        raise UnknownAlgo(algo)
    sim = cfg.sim_config()
    manifest = cfg.manifest_for(sim)
    paths = list_traces(traces_dir or cfg.traces)
    losses = draw_loss_ratios(cfg.loss_set, len(paths), cfg.seed)
    variants = qoe_variants(cfg)
    reward_params = variants[cfg.reward_qoe]
    result = EvalResult(algo)
    for i, (path, p) in enumerate(zip(paths, losses)):
        trace = load_trace(path, p, cfg.rtt)
        env = StreamingEnv(trace, manifest, sim, reward_params, episode_seed(cfg.seed, i),
                           coded=(algo == "nancy"))
        chooser = make_chooser(algo, cfg, params, sim)
        run_policy(env, chooser)
        prev = None
        for n, res in enumerate(env.results):
            result.chunk_rows.append({
                "trace": trace.name,
                "chunk": n + 1,  # chunk 0 is the startup fetch
                "bitrate_kbps": res.bitrate_kbps,
                "rebuffer_s": res.rebuffer_time,
                "buffer_s": res.buffer_after,
                "download_s": res.download_time,
                "retx_rounds": res.retransmission_rounds,
                "rho": res.rho,
                "K": res.k,
                "reward": qoe.chunk_reward(reward_params, prev, res.bitrate_kbps, res.rebuffer_time),
            })
            prev = res.bitrate_kbps
        row = {"trace": trace.name, "loss_ratio": p}
        for v, qp in variants.items():
            row[f"qoe{v}"] = qoe.session_qoe(qp, env.log)
        result.trace_rows.append(row)
    return result


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _fmt_kbps(v):
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def write_csv(path, columns, rows, formats=None):
    formats = formats or {}
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([formats[c](r[c]) if c in formats else _fmt(r[c]) for c in columns])


def write_eval(result: EvalResult, out_dir, variants=VARIANTS) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chunks = out / f"{result.algo}_chunks.csv"
    traces = out / f"{result.algo}_traces.csv"
    summary = out / f"{result.algo}_summary.csv"
    write_csv(chunks, CHUNK_COLUMNS, result.chunk_rows, {"bitrate_kbps": _fmt_kbps})
    write_csv(traces, TRACE_COLUMNS, result.trace_rows, {"loss_ratio": lambda p: f"{p:.3f}"})
    rows = [{"algo": result.algo, "variant": f"qoe{v}", "mean_qoe": result.mean(v),
             "mean_bitrate_kbps": result.mean_bitrate()} for v in variants]
    write_csv(summary, ["algo", "variant", "mean_qoe", "mean_bitrate_kbps"], rows)
    return [chunks, traces, summary]


def compare(cfg: RunConfig, algos, checkpoints: dict, reference: str | None = None,
            variants=VARIANTS) -> tuple[list[dict], dict[str, EvalResult]]:
    if len(algos) < 2:
        raise ValueError("compare needs at least two algorithms")
    reference = reference or algos[0]
    if reference not in algos:
        raise ValueError(f"reference {reference} is not among {algos}")
    results = {}
    for algo in algos:
        params = None
        if algo in RL_ALGOS:
            ck = checkpoints.get(algo)
            if not ck or not Path(ck).exists():
                raise MissingCheckpoint(f"no checkpoint for {algo}")
            params, _ = agent.load_checkpoint(ck)
        results[algo] = evaluate(cfg, algo, params)
    rows = []
    for algo in algos:
        for v in variants:
            m = results[algo].mean(v)
            ref = results[reference].mean(v)
            rows.append({
                "algo": algo,
                "variant": f"qoe{v}",
                "mean_qoe": m,
                "mean_bitrate_kbps": results[algo].mean_bitrate(),
                "relative_gain": (m - ref) / abs(ref) if ref else float("nan"),
            })
    return rows, results
