"""Tests for the numpy Q-network stack, DQN pieces, and model container."""

import hashlib
import struct

import numpy as np
import pytest

from chainfolio.errors import ConfigError, DataError
from chainfolio.rlcore import (
    ChecksumMismatchError,
    ContainerFormatError,
    DivergenceError,
    ReplayBuffer,
    Tensor3,
    TrainConfig,
    Transition,
    UnsupportedVersionError,
    build_qnetwork,
    epsilon_at,
    epsilon_greedy,
    load_network,
    q_values,
    read_container,
    save_network,
    sync_target,
    train_step,
    write_container,
)

EAM_SHAPE = (3, 1, 6)
SAM_SHAPE = (2, 2, 5)


def rand_state(rng, shape):
    return rng.normal(size=shape)


# ---------------------------------------------------------------------------
# Tensor and network construction


def test_tensor3_invariants(rng):
    t = Tensor3(rng.normal(size=(4, 2, 8)))
    assert (t.f, t.m, t.n) == (4, 2, 8)
    assert t.shape == (4, 2, 8)
    with pytest.raises(DataError):
        Tensor3(rng.normal(size=(4, 8)))
    bad = rng.normal(size=(2, 1, 5))
    bad[0, 0, 0] = np.nan
    with pytest.raises(DataError):
        Tensor3(bad)


def test_build_qnetwork_validation():
    with pytest.raises(ConfigError):
        build_qnetwork("mystery", (2, 1, 8), 0)
    with pytest.raises(ConfigError):
        build_qnetwork("eam-1d", (2, 1, 2), 0)  # shorter than the kernel
    with pytest.raises(ConfigError):
        build_qnetwork("sam-4layer", (2, 1, 4), 0)  # two stacked kernels need 5
    with pytest.raises(ConfigError):
        build_qnetwork("eam-1d", (0, 1, 8), 0)


def test_network_action_counts_and_seeding():
    eam = build_qnetwork("eam-1d", EAM_SHAPE, seed=7)
    sam = build_qnetwork("sam-4layer", SAM_SHAPE, seed=7)
    assert eam.n_actions == 3 and sam.n_actions == 2
    twin = build_qnetwork("eam-1d", EAM_SHAPE, seed=7)
    assert np.array_equal(eam.params_flat(), twin.params_flat())
    other = build_qnetwork("eam-1d", EAM_SHAPE, seed=8)
    assert not np.array_equal(eam.params_flat(), other.params_flat())


def test_zeroed_head_gives_zero_q(rng):
    net = build_qnetwork("sam-4layer", SAM_SHAPE, seed=1)
    head = net.layers[-1]
    head.w[...] = 0.0
    head.b[...] = 0.0
    q = q_values(net, rand_state(rng, SAM_SHAPE))
    assert np.array_equal(q, np.zeros(2))


def test_batched_forward_matches_single(rng):
    net = build_qnetwork("eam-1d", EAM_SHAPE, seed=3)
    states = rng.normal(size=(6, *EAM_SHAPE))
    batched = net.forward(states)
    for i in range(6):
        assert np.allclose(batched[i], q_values(net, states[i]), atol=1e-12)


def test_q_values_shape_check(rng):
    net = build_qnetwork("eam-1d", EAM_SHAPE, seed=3)
    with pytest.raises(DataError):
        q_values(net, rng.normal(size=(3, 1, 7)))


# ---------------------------------------------------------------------------
# Gradient correctness (finite differences)


def _td_loss_grads(net, states, actions, targets):
    q_all = net.forward(states)
    q_sa = q_all[np.arange(len(actions)), actions]
    err = q_sa - targets
    loss = float(np.mean(err * err))
    d_q = np.zeros_like(q_all)
    d_q[np.arange(len(actions)), actions] = 2.0 * err / len(actions)
    net.zero_grads()
    net.backward(d_q)
    return loss, net.grads_flat().copy()


def _td_loss_only(net, theta, states, actions, targets):
    net.set_params_flat(theta)
    q_all = net.forward(states)
    q_sa = q_all[np.arange(len(actions)), actions]
    err = q_sa - targets
    return float(np.mean(err * err))


@pytest.mark.parametrize("arch,shape", [("eam-1d", (2, 1, 5)), ("sam-4layer", (2, 2, 5))])
def test_backprop_matches_finite_differences(arch, shape, rng):
    net = build_qnetwork(arch, shape, seed=11)
    batch = 3
    states = rng.normal(size=(batch, *shape))
    actions = rng.integers(net.n_actions, size=batch)
    targets = rng.normal(size=batch)
    theta = net.params_flat()
    _, analytic = _td_loss_grads(net, states, actions, targets)
    for j in range(theta.size):
        h = 1e-5 * max(1.0, abs(theta[j]))
        up, dn = theta.copy(), theta.copy()
        up[j] += h
        dn[j] -= h
        numeric = (
            _td_loss_only(net, up, states, actions, targets)
            - _td_loss_only(net, dn, states, actions, targets)
        ) / (2.0 * h)
        assert abs(analytic[j] - numeric) <= 1e-4 * max(abs(analytic[j]), abs(numeric), 1e-3)
    net.set_params_flat(theta)


# ---------------------------------------------------------------------------
# Epsilon schedule and policy


def test_epsilon_at_endpoints_and_midpoint():
    cfg = TrainConfig(eps_start=1.0, eps_end=0.0, eps_decay_steps=100)
    assert epsilon_at(cfg, 0) == 1.0
    assert epsilon_at(cfg, 50) == pytest.approx(0.5, abs=1e-12)
    assert epsilon_at(cfg, 100) == 0.0
    assert epsilon_at(cfg, 10_000) == 0.0


def test_epsilon_greedy_exploit_and_ties(rng):
    assert epsilon_greedy(np.array([1.0, 3.0, 2.0]), 0.0, rng) == 1
    assert epsilon_greedy(np.array([2.0, 2.0]), 0.0, rng) == 0
    assert epsilon_greedy(np.array([5.0, 5.0, 5.0]), 0.0, rng) == 0
    with pytest.raises(DataError):
        epsilon_greedy(np.array([]), 0.0, rng)


def test_epsilon_greedy_explores_uniformly():
    rng = np.random.default_rng(123)
    q = np.array([0.0, 10.0, 0.0])
    counts = np.zeros(3)
    n = 10_000
    for _ in range(n):
        counts[epsilon_greedy(q, 1.0, rng)] += 1
    chi2 = float(np.sum((counts - n / 3) ** 2 / (n / 3)))
    assert chi2 < 13.8  # df=2 at p ~ 0.001


def test_epsilon_greedy_reproducible():
    q = np.array([0.0, 1.0, 2.0])
    a = [epsilon_greedy(q, 0.5, np.random.default_rng(9)) for _ in range(1)]
    seq1 = []
    r1 = np.random.default_rng(9)
    r2 = np.random.default_rng(9)
    for _ in range(50):
        seq1.append((epsilon_greedy(q, 0.5, r1), epsilon_greedy(q, 0.5, r2)))
    assert all(x == y for x, y in seq1)
    assert a[0] == seq1[0][0]


# ---------------------------------------------------------------------------
# Training step


def make_batch(rng, shape, n_actions, size, terminal=False):
    out = []
    for _ in range(size):
        out.append(
            Transition(
                state=rng.normal(size=shape),
                action=int(rng.integers(n_actions)),
                reward=float(rng.normal()),
                next_state=rng.normal(size=shape),
                terminal=terminal,
            )
        )
    return out


def test_train_step_gamma_zero_loss_is_reward_mse(rng):
    net = build_qnetwork("eam-1d", EAM_SHAPE, seed=2)
    target = net.clone()
    batch = make_batch(rng, EAM_SHAPE, 3, 4)
    expect = np.mean(
        [(q_values(net, t.state)[t.action] - t.reward) ** 2 for t in batch]
    )
    cfg = TrainConfig(gamma=0.0, lr=1e-3)
    loss = train_step(net, target, batch, cfg)
    assert loss == pytest.approx(float(expect), rel=1e-12)


def test_train_step_terminal_ignores_next_state(rng):
    cfg = TrainConfig(gamma=0.9, lr=1e-3)
    base = make_batch(rng, EAM_SHAPE, 3, 4, terminal=True)
    swapped = [
        Transition(t.state, t.action, t.reward, rng.normal(size=EAM_SHAPE), True)
        for t in base
    ]
    net1 = build_qnetwork("eam-1d", EAM_SHAPE, seed=5)
    net2 = build_qnetwork("eam-1d", EAM_SHAPE, seed=5)
    l1 = train_step(net1, net1.clone(), base, cfg)
    l2 = train_step(net2, net2.clone(), swapped, cfg)
    assert l1 == l2
    assert np.array_equal(net1.params_flat(), net2.params_flat())


def test_train_step_converges_on_single_transition(rng):
    net = build_qnetwork("eam-1d", (2, 1, 3), seed=4)
    target = net.clone()
    tr = Transition(rng.normal(size=(2, 1, 3)), 0, 1.0, rng.normal(size=(2, 1, 3)), True)
    cfg = TrainConfig(gamma=0.5, lr=0.05)
    loss = None
    for i in range(5000):
        loss = train_step(net, target, [tr], cfg)
        if loss < 1e-6:
            break
    assert loss < 1e-6
    assert q_values(net, tr.state)[0] == pytest.approx(1.0, abs=1e-2)


def test_train_step_clips_global_gradient_norm(rng):
    net = build_qnetwork("eam-1d", EAM_SHAPE, seed=6)
    target = net.clone()
    # enormous rewards force the unclipped gradient norm far above the cap
    batch = [
        Transition(rng.normal(size=EAM_SHAPE), 0, 1e6, rng.normal(size=EAM_SHAPE), True)
        for _ in range(4)
    ]
    cfg = TrainConfig(gamma=0.9, lr=1e-3, grad_clip=10.0)
    before = net.params_flat()
    train_step(net, target, batch, cfg)
    step_norm = float(np.linalg.norm(net.params_flat() - before))
    assert step_norm == pytest.approx(cfg.lr * cfg.grad_clip, rel=1e-9)


def test_train_step_empty_batch(rng):
    net = build_qnetwork("eam-1d", EAM_SHAPE, seed=6)
    with pytest.raises(DataError):
        train_step(net, net.clone(), [], TrainConfig())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_step_divergence_error(rng):
    net = build_qnetwork("eam-1d", EAM_SHAPE, seed=6)
    net.set_params_flat(np.full(net.n_params, 1e200))
    batch = make_batch(rng, EAM_SHAPE, 3, 2)
    with pytest.raises(DivergenceError):
        train_step(net, net.clone(), batch, TrainConfig())


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(gamma=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(eps_start=0.2, eps_end=0.5)
    with pytest.raises(ConfigError):
        TrainConfig(grad_clip=0.0)


# ---------------------------------------------------------------------------
# Target network


def test_sync_target_copies_bit_exact(rng):
    net = build_qnetwork("sam-4layer", SAM_SHAPE, seed=1)
    target = build_qnetwork("sam-4layer", SAM_SHAPE, seed=2)
    states = [rand_state(rng, SAM_SHAPE) for _ in range(10)]
    assert any(not np.array_equal(q_values(net, s), q_values(target, s)) for s in states)
    sync_target(net, target)
    for s in states:
        assert np.array_equal(q_values(net, s), q_values(target, s))
    snapshot = target.params_flat()
    sync_target(net, target)
    assert np.array_equal(snapshot, target.params_flat())
    # a later online update must not leak through
    net.layers[-1].b[...] += 1.0
    assert np.array_equal(snapshot, target.params_flat())


def test_sync_target_arch_mismatch():
    a = build_qnetwork("eam-1d", EAM_SHAPE, seed=0)
    b = build_qnetwork("sam-4layer", SAM_SHAPE, seed=0)
    with pytest.raises(DataError):
        sync_target(a, b)
    c = build_qnetwork("eam-1d", (3, 1, 8), seed=0)
    with pytest.raises(DataError):
        sync_target(a, c)


# ---------------------------------------------------------------------------
# Replay buffer


def _tr(tag: float) -> Transition:
    s = np.full((1, 1, 3), tag)
    return Transition(s, 0, tag, s, False)


def test_replay_fifo_eviction():
    buf = ReplayBuffer(capacity=3, seed=0)
    for tag in range(1, 6):
        buf.push(_tr(float(tag)))
    assert len(buf) == 3
    assert [t.reward for t in buf] == [3.0, 4.0, 5.0]


def test_replay_sampling_rules():
    buf = ReplayBuffer(capacity=8, seed=1)
    for tag in range(4):
        buf.push(_tr(float(tag)))
    full = buf.sample(4)
    assert sorted(t.reward for t in full) == [0.0, 1.0, 2.0, 3.0]
    over = buf.sample(6)
    assert len(over) == 6 and {t.reward for t in over} <= {0.0, 1.0, 2.0, 3.0}


def test_replay_seeded_reproducibility():
    def drive(seed):
        buf = ReplayBuffer(capacity=16, seed=seed)
        for tag in range(10):
            buf.push(_tr(float(tag)))
        return [tuple(t.reward for t in buf.sample(3)) for _ in range(5)]

    assert drive(42) == drive(42)
    assert drive(42) != drive(43)


def test_replay_validation():
    with pytest.raises(ConfigError):
        ReplayBuffer(capacity=0)
    with pytest.raises(DataError):
        ReplayBuffer(capacity=4).sample(1)


# ---------------------------------------------------------------------------
# Container serialization


def test_network_container_round_trip(tmp_path, rng):
    net = build_qnetwork("sam-4layer", SAM_SHAPE, seed=3)
    path = tmp_path / "net.crlm"
    save_network(net, path)
    loaded = load_network(path)
    assert loaded.arch == net.arch
    assert loaded.input_shape == net.input_shape
    assert np.array_equal(loaded.params_flat(), net.params_flat())
    for _ in range(5):
        s = rand_state(rng, SAM_SHAPE)
        assert np.array_equal(q_values(net, s), q_values(loaded, s))


def test_container_writing_is_deterministic(tmp_path):
    net = build_qnetwork("eam-1d", EAM_SHAPE, seed=9)
    p1, p2 = tmp_path / "a.crlm", tmp_path / "b.crlm"
    save_network(net, p1)
    save_network(net, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_container_detects_corruption(tmp_path):
    net = build_qnetwork("eam-1d", EAM_SHAPE, seed=9)
    path = tmp_path / "net.crlm"
    save_network(net, path)
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(ChecksumMismatchError):
        load_network(path)


def test_container_rejects_future_version(tmp_path):
    net = build_qnetwork("eam-1d", EAM_SHAPE, seed=9)
    path = tmp_path / "net.crlm"
    save_network(net, path)
    prefix = bytearray(path.read_bytes()[:-32])
    struct.pack_into("<H", prefix, 4, 2)  # bump the version field
    path.write_bytes(bytes(prefix) + hashlib.sha256(bytes(prefix)).digest())
    with pytest.raises(UnsupportedVersionError):
        load_network(path)


def test_container_kind_and_structure_checks(tmp_path):
    path = tmp_path / "box.crlm"
    write_container(path, "M", {"note": 1}, {"blob": b"\x01\x02"})
    kind, meta, sections = read_container(path)
    assert kind == "M" and meta == {"note": 1} and sections == {"blob": b"\x01\x02"}
    with pytest.raises(ContainerFormatError):
        read_container(path, expected_kind="N")
    (tmp_path / "junk.crlm").write_bytes(b"JUNKJUNKJUNK")
    with pytest.raises(ContainerFormatError):
        read_container(tmp_path / "junk.crlm")
    truncated = path.read_bytes()[:-1]
    (tmp_path / "trunc.crlm").write_bytes(truncated)
    with pytest.raises(ChecksumMismatchError):
        read_container(tmp_path / "trunc.crlm")
    # extra body byte with a fixed-up digest breaks the section table
    prefix = path.read_bytes()[:-32] + b"x"
    (tmp_path / "extra.crlm").write_bytes(prefix + hashlib.sha256(prefix).digest())
    with pytest.raises(ContainerFormatError):
        read_container(tmp_path / "extra.crlm")
