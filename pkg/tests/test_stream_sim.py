import math

import numpy as np
import pytest

from ncstream import qoe, rlnc
from ncstream import stream_sim as sim
from ncstream.tracegen import markov_trace

CFG = sim.SimConfig()
MANIFEST = sim.synthesize_manifest(CFG.ladder, 48, seed=0)


def const_trace(mbps, loss=0.0, rtt=0.08, seconds=100):
    return sim.Trace(np.arange(float(seconds)), np.full(seconds, float(mbps)), loss, rtt, "const")


# --- trace parsing ------------------------------------------------------

def test_load_trace(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("0.0 1.5\n1.0 2.0\n")
    tr = sim.load_trace(p, 0.01, 0.08)
    assert len(tr) == 2
    assert list(tr.times) == [0.0, 1.0] and list(tr.bandwidths) == [1.5, 2.0]
    assert tr.loss_ratio == 0.01 and tr.rtt == 0.08 and tr.name == "t"


def test_load_empty_trace(tmp_path):
    p = tmp_path / "empty.txt"
    p.write_text("")
    with pytest.raises(sim.EmptyTrace):
        sim.load_trace(p)


def test_load_non_monotonic(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("0 1\n2 1\n1 1\n")
    with pytest.raises(sim.ParseError) as exc:
        sim.load_trace(p)
    assert exc.value.line == 3


def test_load_garbage(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("0 1\nabc 1\n")
    with pytest.raises(sim.ParseError) as exc:
        sim.load_trace(p)
    assert exc.value.line == 2


# --- transfer time ------------------------------------------------------

def test_transfer_zero_bytes():
    assert sim.transfer_time(const_trace(2), 0.0, 0) == 0.0


def test_transfer_constant_rate():
    # 8e6 bits at 2e6 bit/s
    assert sim.transfer_time(const_trace(2, seconds=1), 0.0, 1_000_000) == 4.0


def test_transfer_two_segments():
    tr = sim.Trace(np.array([0.0, 4.0]), np.array([1.0, 3.0]))
    # 4 s at 1 Mbps carry 5e5 B; the other 5e5 B take 4/3 s at 3 Mbps
    assert sim.transfer_time(tr, 0.0, 1_000_000) == 4 + 4 / 3


def test_transfer_wraps_around():
    tr = sim.Trace(np.array([0.0, 1.0]), np.array([1.0, 3.0]))  # period 2 s
    # from t=1.5: 0.5 s at 3 Mbps, loop, 1 s at 1 Mbps, 0.25 s at 3 Mbps = 3.25e6 bits
    got = sim.transfer_time(tr, 1.5, 3.25e6 / 8)
    assert got == pytest.approx(1.75)
    assert sim.transfer_time(tr, 11.5, 1000) == sim.transfer_time(tr, 1.5, 1000)


# --- download mechanics -------------------------------------------------

def _state(buffer=0.0, chunk=0):
    s = sim.SessionState(history=CFG.history)
    s.buffer, s.chunk_index = buffer, chunk
    return s


def test_lossless_uncoded_bytes():
    tr = const_trace(3)
    a = CFG.uncoded(3)
    res = sim.download_chunk(_state(), tr, MANIFEST, a, rng_seed=1, config=CFG)
    src = int(MANIFEST.sizes[0, 3])
    m = math.ceil(src / CFG.slice_size)
    assert res.source_bytes == src
    assert res.sent_bytes == src + CFG.header_size * m
    assert res.retransmission_rounds == 0
    assert res.slices_lost == 0


def test_lossless_coded_sends_repair():
    tr = const_trace(3)
    a = sim.Action(3, CFG.k_values.index(16), CFG.rho_values.index(0.8))
    res = sim.download_chunk(_state(), tr, MANIFEST, a, rng_seed=1, config=CFG)
    plan = rlnc.plan_generations(int(MANIFEST.sizes[0, 3]), CFG.slice_size, 16, 0.8)
    assert res.slices_sent == sum(math.ceil(k / 0.8) for k, _ in plan.entries) == plan.num_coded
    assert res.retransmission_rounds == 0


def test_buffer_recurrence_example():
    # 246144 B + 16 B header on each of 241 slices = 250000 B -> 2 s at 1 Mbps
    manifest = sim.VideoManifest(np.array([[246144, 500000]]))
    cfg = sim.SimConfig(ladder=sim.ladder_from((300, 750)))
    res = sim.download_chunk(_state(buffer=8.0), const_trace(1, rtt=0.0), manifest,
                             cfg.uncoded(0), rng_seed=0, config=cfg)
    assert res.download_time == 2.0
    assert res.rebuffer_time == 0.0
    assert res.buffer_after == 10.0


def test_rebuffer_and_cap():
    manifest = sim.VideoManifest(np.array([[246144, 500000]]))
    cfg = sim.SimConfig(ladder=sim.ladder_from((300, 750)), buffer_cap=9.0)
    res = sim.download_chunk(_state(buffer=0.5), const_trace(1, rtt=0.0), manifest,
                             cfg.uncoded(0), 0, cfg)
    assert res.rebuffer_time == 1.5 and res.buffer_after == 4.0
    res = sim.download_chunk(_state(buffer=8.0), const_trace(1, rtt=0.0), manifest,
                             cfg.uncoded(0), 0, cfg)
    assert res.buffer_after == 9.0 and res.wait_time == 1.0


def test_finished_episode_raises():
    with pytest.raises(sim.EpisodeFinished):
        sim.download_chunk(_state(chunk=48), const_trace(3), MANIFEST, CFG.uncoded(0), 0, CFG)


def test_expansion_bound_without_retransmission():
    tr = const_trace(3)
    for k_i, k in enumerate(CFG.k_values):
        for r_i, rho in enumerate(CFG.rho_values):
            res = sim.download_chunk(_state(), tr, MANIFEST, sim.Action(4, k_i, r_i), 5, CFG)
            src = res.source_bytes
            m = math.ceil(src / CFG.slice_size)
            gens = math.ceil(m / k)
            slack = gens * (CFG.slice_size + CFG.header_size) / src + CFG.header_size * m / src
            assert 1.0 <= res.sent_bytes / src <= 1 / rho + slack


def test_retransmissions_fall_with_redundancy():
    tr = const_trace(3, loss=0.02)
    means = []
    for rho in (1.0, 0.9, 0.8):
        a = sim.Action(3, CFG.k_values.index(16), CFG.rho_values.index(rho))
        rounds = [sim.download_chunk(_state(), tr, MANIFEST, a, s, CFG).retransmission_rounds
                  for s in range(100)]
        means.append(np.mean(rounds))
    assert means[0] > means[1] >= means[2]


def test_download_is_deterministic():
    tr = const_trace(2, loss=0.02)
    a = sim.Action(5, 1, 2)
    r1 = sim.download_chunk(_state(3.0, 4), tr, MANIFEST, a, 99, CFG)
    r2 = sim.download_chunk(_state(3.0, 4), tr, MANIFEST, a, 99, CFG)
    assert r1 == r2


# --- observation --------------------------------------------------------

def test_fresh_observation():
    obs = sim.observe(sim.SessionState(), MANIFEST, CFG)
    H = CFG.history
    assert len(obs) == CFG.obs_dim == 2 * H + len(CFG.ladder) + 7
    assert np.all(obs[: 2 * H] == 0)
    tail = obs[2 * H + len(CFG.ladder):]
    assert tail[0] == 0.0  # buffer
    assert tail[1] == 1.0  # remaining fraction


def test_throughput_slot_normalisation():
    s = sim.SessionState()
    res = sim.DownloadResult(250_000, 260_000, 1.0, 0.0, 0, 10, 0)  # 2 Mbps goodput
    sim.apply_result(s, CFG.uncoded(0), res, CFG)
    obs = sim.observe(s, MANIFEST, CFG)
    assert obs[0] == pytest.approx(0.2)
    assert obs[CFG.history] == pytest.approx(0.1)


def test_observation_shape_constant_over_episode():
    env = sim.StreamingEnv(const_trace(2, 0.01), MANIFEST, CFG, seed=3)
    obs = env.reset()
    shapes = {obs.shape}
    done = False
    while not done:
        obs, _, done, _ = env.step(sim.Action(2, 1, 1))
        shapes.add(obs.shape)
        assert np.all(np.isfinite(obs))
    assert shapes == {(CFG.obs_dim,)}


# --- environment --------------------------------------------------------

def _rollout(env, actions):
    env.reset()
    out = []
    for a in actions:
        obs, r, done, info = env.step(a)
        out.append((obs.tobytes(), r, done, info))
        if done:
            break
    return out


def test_first_reward_has_no_smoothness_penalty():
    env = sim.StreamingEnv(const_trace(5), MANIFEST, CFG, seed=0)
    env.reset()
    _, r, _, info = env.step(sim.Action(5, 3, 0))
    assert r == pytest.approx(4.3 - 4.3 * info.rebuffer_time)


def test_rewards_sum_to_session_qoe():
    rng = np.random.default_rng(0)
    tr = markov_trace(200, rng).with_channel(0.015)
    env = sim.StreamingEnv(tr, MANIFEST, CFG, seed=4)
    env.reset()
    total, done = 0.0, False
    while not done:
        a = sim.Action(int(rng.integers(6)), int(rng.integers(4)), int(rng.integers(5)))
        _, r, done, _ = env.step(a)
        total += r
    assert len(env.log) == MANIFEST.chunk_count - 1
    assert total == pytest.approx(qoe.session_qoe(env.qoe_params, env.log), abs=1e-9)
    with pytest.raises(sim.EpisodeFinished):
        env.step(sim.Action(0, 0, 0))


def test_env_determinism():
    rng = np.random.default_rng(1)
    actions = [sim.Action(int(rng.integers(6)), int(rng.integers(4)), int(rng.integers(5))) for _ in range(47)]
    tr = markov_trace(200, np.random.default_rng(2)).with_channel(0.02)
    a = _rollout(sim.StreamingEnv(tr, MANIFEST, CFG, seed=11), actions)
    b = _rollout(sim.StreamingEnv(tr, MANIFEST, CFG, seed=11), actions)
    assert a == b


def test_uncoded_env_ignores_nc_choice():
    tr = const_trace(2, 0.01)
    a = _rollout(sim.StreamingEnv(tr, MANIFEST, CFG, seed=2, coded=False), [sim.Action(3, 0, 4)] * 47)
    b = _rollout(sim.StreamingEnv(tr, MANIFEST, CFG, seed=2, coded=True), [CFG.uncoded(3)] * 47)
    assert a == b


def test_lossless_degenerates_to_uncoded_reference():
    tr = markov_trace(200, np.random.default_rng(5))
    levels = np.random.default_rng(6).integers(0, 6, size=48)
    env = sim.StreamingEnv(tr, MANIFEST, CFG, seed=0)
    env.reset()
    ref = sim.UncodedEnv(tr, MANIFEST, CFG)
    assert ref.fetch(0) == env.startup.download_time
    for lv in levels[1:]:
        _, _, _, info = env.step(CFG.uncoded(int(lv)))
        assert info.download_time == ref.fetch(int(lv))
