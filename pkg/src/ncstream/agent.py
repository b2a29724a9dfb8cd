"""Actor-critic agent with factored softmax heads, trained by entropy-regularised
policy gradient.

Both networks are small fully connected numpy MLPs with hand-written
backprop. The actor has one softmax head per action component (bitrate,
generation size, code rate); the joint probability of an action triple is the
product of the head probabilities. A single-head actor gives the bitrate-only
ablation.
"""

from __future__ import annotations

import json
import logging
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

LEAK = 0.01
CHECKPOINT_MAGIC = b"NCSTRM01"
CHECKPOINT_VERSION = 1


class ShapeMismatch(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class PolicyParams:
    actor: dict[str, np.ndarray]
    critic: dict[str, np.ndarray]
    head_sizes: tuple[int, ...]

    @property
    def obs_dim(self) -> int:
        return self.actor["w1"].shape[0]

    @property
    def hidden(self) -> tuple[int, int]:
        return self.actor["w1"].shape[1], self.actor["w2"].shape[1]

    @classmethod
    def init(cls, obs_dim: int, head_sizes: Sequence[int], hidden=(128, 128), seed: int = 0):
        """Uniform(+-1/sqrt(fan_in)) weights, zero biases."""
        rng = np.random.default_rng(seed)

        def dense(n_in, n_out):
            bound = 1.0 / np.sqrt(n_in)
            return rng.uniform(-bound, bound, size=(n_in, n_out)), np.zeros(n_out)

        def trunk():
            w1, b1 = dense(obs_dim, hidden[0])
            w2, b2 = dense(hidden[0], hidden[1])
            return {"w1": w1, "b1": b1, "w2": w2, "b2": b2}

        actor = trunk()
        for i, size in enumerate(head_sizes):
            actor[f"wh{i}"], actor[f"bh{i}"] = dense(hidden[1], size)
        critic = trunk()
        critic["wv"], critic["bv"] = dense(hidden[1], 1)
        return cls(actor, critic, tuple(int(s) for s in head_sizes))

    def copy(self) -> "PolicyParams":
        return PolicyParams({k: v.copy() for k, v in self.actor.items()},
                            {k: v.copy() for k, v in self.critic.items()}, self.head_sizes)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for net in (self.actor, self.critic) for v in net.values())


def _lrelu(z):
    return np.where(z > 0, z, LEAK * z)


def _lrelu_grad(z):
    return np.where(z > 0, 1.0, LEAK)


def _trunk(net, x):
    z1 = x @ net["w1"] + net["b1"]
    h1 = _lrelu(z1)
    z2 = h1 @ net["w2"] + net["b2"]
    h2 = _lrelu(z2)
    return z1, h1, z2, h2


def _trunk_backward(net, x, cache, dh2, grads):
    z1, h1, z2, _ = cache
    dz2 = dh2 * _lrelu_grad(z2)
    grads["w2"] = h1.T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    dz1 = (dz2 @ net["w2"].T) * _lrelu_grad(z1)
    grads["w1"] = x.T @ dz1
    grads["b1"] = dz1.sum(axis=0)


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _as_batch(params: PolicyParams, obs):
    x = np.asarray(obs, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[-1] != params.obs_dim:
        raise ShapeMismatch(f"observation has {x.shape[-1]} features, network expects {params.obs_dim}")
    return x, single


def _head_logits(params, h2):
    return [h2 @ params.actor[f"wh{i}"] + params.actor[f"bh{i}"] for i in range(len(params.head_sizes))]


def actor_forward(params: PolicyParams, obs) -> list[np.ndarray]:
    """One probability vector per head (a batch of them for 2-D input)."""
    x, single = _as_batch(params, obs)
    h2 = _trunk(params.actor, x)[3]
    probs = [_softmax(lg) for lg in _head_logits(params, h2)]
    return [p[0] for p in probs] if single else probs


def critic_forward(params: PolicyParams, obs):
    x, single = _as_batch(params, obs)
    h2 = _trunk(params.critic, x)[3]
    v = (h2 @ params.critic["wv"] + params.critic["bv"])[:, 0]
    return float(v[0]) if single else v


def joint_log_prob(params: PolicyParams, obs, action: Sequence[int]) -> float:
    probs = actor_forward(params, obs)
    return float(sum(np.log(p[a]) for p, a in zip(probs, action)))


def entropy(p: np.ndarray) -> np.ndarray:
    return -(p * np.log(np.clip(p, 1e-300, None))).sum(axis=-1)


def actor_objective(params: PolicyParams, obs, actions, advantages, beta: float):
    """Policy-gradient objective and its gradient w.r.t. the actor weights.

    Objective = sum_t A_t * log pi(a_t|s_t) + beta * sum_t sum_heads H(head_t),
    to be *ascended*. Advantages are constants.
    Returns (pg_term, entropy_term, grads).
    """
    x, _ = _as_batch(params, obs)
    actions = np.asarray(actions, dtype=np.int64).reshape(len(x), -1)
    adv = np.asarray(advantages, dtype=float).reshape(-1)
    cache = _trunk(params.actor, x)
    h2 = cache[3]
    rows = np.arange(len(x))
    pg = 0.0
    ent = 0.0
    grads = {}
    dh2 = np.zeros_like(h2)
    for i, logits in enumerate(_head_logits(params, h2)):
        logp = _log_softmax(logits)
        p = np.exp(logp)
        a = actions[:, i]
        pg += float((logp[rows, a] * adv).sum())
        h = -(p * logp).sum(axis=1)
        ent += float(h.sum())
        onehot = np.zeros_like(p)
        onehot[rows, a] = 1.0
        # d log p_a / dz = onehot - p ;  dH/dz = -p (log p + H)
        dlogits = adv[:, None] * (onehot - p) - beta * p * (logp + h[:, None])
        grads[f"wh{i}"] = h2.T @ dlogits
        grads[f"bh{i}"] = dlogits.sum(axis=0)
        dh2 += dlogits @ params.actor[f"wh{i}"].T
    _trunk_backward(params.actor, x, cache, dh2, grads)
    return pg, ent, grads


def critic_loss(params: PolicyParams, obs, returns):
    """0.5 * sum_t (G_t - V(s_t))^2 and its gradient (to be descended)."""
    x, _ = _as_batch(params, obs)
    g = np.asarray(returns, dtype=float).reshape(-1)
    cache = _trunk(params.critic, x)
    h2 = cache[3]
    v = (h2 @ params.critic["wv"] + params.critic["bv"])[:, 0]
    err = v - g
    loss = 0.5 * float((err ** 2).sum())
    dv = err[:, None]
    grads = {"wv": h2.T @ dv, "bv": dv.sum(axis=0)}
    _trunk_backward(params.critic, x, cache, dv @ params.critic["wv"].T, grads)
    return loss, grads


def discounted_returns(rewards: Sequence[float], gamma: float, bootstrap: float = 0.0) -> list[float]:
    out = [0.0] * len(rewards)
    g = bootstrap
    for t in range(len(rewards) - 1, -1, -1):
        g = rewards[t] + gamma * g
        out[t] = g
    return out


@dataclass
class Trajectory:
    observations: list[np.ndarray] = field(default_factory=list)
    actions: list[tuple[int, ...]] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    dones: list[bool] = field(default_factory=list)

    def add(self, obs, action, reward, done):
        self.observations.append(np.asarray(obs, dtype=float))
        self.actions.append(tuple(int(a) for a in action))
        self.rewards.append(float(reward))
        self.dones.append(bool(done))

    def __len__(self):
        return len(self.rewards)

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))


@dataclass
class TrainConfig:
    lr: float = 1e-4
    critic_lr: float | None = None
    gamma: float = 0.99
    beta_start: float = 1.0
    beta_end: float = 0.1
    epochs: int = 1000
    workers: int = 1
    seed: int = 0
    clip_norm: float = 5.0
    hidden: tuple[int, int] = (128, 128)
    asynchronous: bool = False
    validate_every: int = 50

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if self.beta_start < 0 or self.beta_end < 0:
            raise ValueError("entropy weight must be non-negative")

    def beta_at(self, epoch: int) -> float:
        if self.epochs <= 1:
            return self.beta_start
        frac = min(1.0, epoch / (self.epochs - 1))
        return self.beta_start + frac * (self.beta_end - self.beta_start)


def _clip(grads: dict, max_norm: float) -> tuple[dict, float]:
    norm = float(np.sqrt(sum(float((g ** 2).sum()) for g in grads.values())))
    if max_norm and norm > max_norm:
        s = max_norm / norm
        grads = {k: g * s for k, g in grads.items()}
    return grads, norm


def update(params: PolicyParams, batch: Sequence[Trajectory], cfg: TrainConfig,
           beta: float | None = None) -> tuple[PolicyParams, dict]:
    """One synchronous actor-critic step on a batch of trajectories.

    Returns fresh params; ``params`` itself is never modified, so on
    :class:`NonFiniteGradient` the caller still holds the old weights.
    """
    if not batch:
        raise ValueError("empty batch")
    beta = cfg.beta_start if beta is None else beta
    obs, acts, rets = [], [], []
    for traj in batch:
        boot = 0.0 if traj.dones[-1] else critic_forward(params, traj.observations[-1])
        rets.extend(discounted_returns(traj.rewards, cfg.gamma, boot))
        obs.extend(traj.observations)
        acts.extend(traj.actions)
    x = np.stack(obs)
    g = np.asarray(rets)
    adv = g - critic_forward(params, x)

    pg, ent, a_grads = actor_objective(params, x, acts, adv, beta)
    c_loss, c_grads = critic_loss(params, x, g)
    if not all(np.all(np.isfinite(v)) for v in (*a_grads.values(), *c_grads.values())):
        raise NonFiniteGradient("non-finite gradient, update skipped")
    a_grads, a_norm = _clip(a_grads, cfg.clip_norm)
    c_grads, c_norm = _clip(c_grads, cfg.clip_norm)

    new = params.copy()
    clr = cfg.lr if cfg.critic_lr is None else cfg.critic_lr
    for k, gr in a_grads.items():
        new.actor[k] += cfg.lr * gr
    for k, gr in c_grads.items():
        new.critic[k] -= clr * gr
    if not new.all_finite():
        raise NonFiniteGradient("update produced non-finite weights")

    head_ent = [float(entropy(p).mean()) for p in actor_forward(params, x)]
    metrics = {
        "actor_loss": -(pg + beta * ent),
        "critic_loss": c_loss,
        "mean_advantage": float(adv.mean()),
        "head_entropy": head_ent,
        "mean_entropy": float(np.mean(head_ent)),
        "actor_grad_norm": a_norm,
        "critic_grad_norm": c_norm,
        "beta": beta,
    }
    return new, metrics


def act_greedy(params: PolicyParams, obs) -> tuple[int, ...]:
    return tuple(int(np.argmax(p)) for p in actor_forward(params, obs))


def _draw(p: np.ndarray, u: float) -> int:
    idx = int(np.searchsorted(np.cumsum(p), u * p.sum(), side="right"))
    return min(idx, len(p) - 1)


def act_sample(params: PolicyParams, obs, rng: np.random.Generator) -> tuple[int, ...]:
    return tuple(_draw(p, rng.random()) for p in actor_forward(params, obs))


def rollout(params: PolicyParams, env, rng: np.random.Generator | None = None,
            greedy: bool = False) -> Trajectory:
    """Run one episode; samples from the policy unless ``greedy``."""
    traj = Trajectory()
    obs = env.reset()
    done = False
    while not done:
        a = act_greedy(params, obs) if greedy else act_sample(params, obs, rng)
        nxt, r, done, _ = env.step(a)
        traj.add(obs, a, r, done)
        obs = nxt
    return traj


@dataclass
class TrainResult:
    params: PolicyParams
    curve: list[dict]
    best_score: float | None = None


class ParameterStore:
    """Shared weights for asynchronous workers; writes are serialised."""

    def __init__(self, params: PolicyParams):
        self._params = params
        self._lock = threading.Lock()
        self.version = 0

    def snapshot(self) -> PolicyParams:
        return self._params  # never mutated in place, safe to read without the lock

    def apply(self, base: PolicyParams, new: PolicyParams):
        with self._lock:
            cur = self._params.copy()
            for net_cur, net_new, net_base in ((cur.actor, new.actor, base.actor),
                                               (cur.critic, new.critic, base.critic)):
                for k in net_cur:
                    net_cur[k] += net_new[k] - net_base[k]
            self._params = cur
            self.version += 1


EnvFactory = Callable[[np.random.Generator], object]


def train(env_factory: EnvFactory, cfg: TrainConfig, head_sizes: Sequence[int], obs_dim: int,
          validate: Callable[[PolicyParams], float] | None = None,
          init: PolicyParams | None = None, progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Train for ``cfg.epochs`` epochs of ``cfg.workers`` episodes each.

    ``env_factory(rng)`` must return a fresh environment for a randomly drawn
    episode. When ``validate`` is given it is called every
    ``cfg.validate_every`` epochs and at the end; the best-scoring params are
    returned.
    """
    params = init if init is not None else PolicyParams.init(obs_dim, head_sizes, cfg.hidden, cfg.seed)
    if cfg.epochs <= 0:
        return TrainResult(params, [])
    rng = np.random.default_rng(cfg.seed)
    best, best_score = params, None
    curve = []

    def check(epoch, p):
        nonlocal best, best_score
        if validate is None:
            return
        score = validate(p)
        if best_score is None or score > best_score:
            best, best_score = p, score
        log.info("epoch %d validation score %.3f (best %.3f)", epoch, score, best_score)

    if cfg.asynchronous:
        params, curve = _train_async(env_factory, cfg, params, rng)
    else:
        for epoch in range(cfg.epochs):
            beta = cfg.beta_at(epoch)
            batch = [rollout(params, env_factory(rng), rng) for _ in range(cfg.workers)]
            try:
                params, m = update(params, batch, cfg, beta)
            except NonFiniteGradient as e:
                log.warning("epoch %d: %s", epoch, e)
                m = {"mean_entropy": float("nan")}
            row = {"epoch": epoch + 1,
                   "mean_reward": float(np.mean([t.total_reward for t in batch])),
                   "mean_entropy": m["mean_entropy"]}
            curve.append(row)
            if progress:
                progress(row)
            if cfg.validate_every and (epoch + 1) % cfg.validate_every == 0 and epoch + 1 < cfg.epochs:
                check(epoch + 1, params)
    check(cfg.epochs, params)
    if validate is None:
        best = params
    return TrainResult(best, curve, best_score)


def _train_async(env_factory, cfg, params, rng):
    store = ParameterStore(params)
    seeds = rng.integers(0, 2**32, size=cfg.workers)
    per_worker = [cfg.epochs // cfg.workers + (1 if i < cfg.epochs % cfg.workers else 0)
                  for i in range(cfg.workers)]
    curve, curve_lock = [], threading.Lock()

    def work(i):
        wrng = np.random.default_rng(seeds[i])
        for _ in range(per_worker[i]):
            base = store.snapshot()
            traj = rollout(base, env_factory(wrng), wrng)
            try:
                new, m = update(base, [traj], cfg, cfg.beta_at(store.version))
            except NonFiniteGradient as e:
                log.warning("worker %d: %s", i, e)
                continue
            store.apply(base, new)
            with curve_lock:
                curve.append({"epoch": len(curve) + 1, "mean_reward": traj.total_reward,
                              "mean_entropy": m["mean_entropy"]})

    threads = [threading.Thread(target=work, args=(i,)) for i in range(cfg.workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return store.snapshot(), curve


# checkpoint layout: magic(8) | u32 header length | JSON header | float64 LE arrays
def save_checkpoint(params: PolicyParams, path, meta: dict | None = None):
    arrays = [("actor", k, v) for k, v in params.actor.items()] + \
             [("critic", k, v) for k, v in params.critic.items()]
    header = {
        "version": CHECKPOINT_VERSION,
        "head_sizes": list(params.head_sizes),
        "obs_dim": params.obs_dim,
        "hidden": list(params.hidden),
        "arrays": [{"net": net, "name": k, "shape": list(v.shape)} for net, k, v in arrays],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, _, v in arrays:
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[PolicyParams, dict]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12 : 12 + n])
    if header["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['version']}")
    off = 12 + n
    nets = {"actor": {}, "critic": {}}
    for spec in header["arrays"]:
        count = int(np.prod(spec["shape"]))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(spec["shape"])
        nets[spec["net"]][spec["name"]] = arr.astype(float)
        off += count * 8
    params = PolicyParams(nets["actor"], nets["critic"], tuple(header["head_sizes"]))
    return params, header.get("meta", {})
