"""Per-asset trading modules: a signal agent plus an allocation agent.

A trained module bundles two seeded Q-networks with the feature-pipeline
state needed to rebuild its observations from raw bars and metrics alone:

* the optional signal agent (``eam-1d`` net) emits buy/sell/hold signals
  from windowed OHLCV plus refined metric features;
* the allocation agent (``sam-4layer`` net) picks the binary cash-vs-
  crypto split for its asset from a (features x {crypto, cash} x window)
  tensor, optionally extended with the frozen signal channel.

Observation tensor layout: asset row 0 is the crypto, row 1 is cash;
feature channels are open, high, low, close, volume, then the padded
principal components, then (if enabled) the encoded signal.  Prices are
expressed as ratios to the window's last close, volume as a ratio to the
window's mean volume.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .datastore import AlignedFrame, AssetId, CsvStore, DEFAULT_BAR_INTERVAL, DEFAULT_FILL_LIMIT
from .errors import ConfigError, DataError
from .refinery import (
    DEFAULT_EPSILON,
    DEFAULT_NORM_WINDOW,
    DEFAULT_PCA_WINDOW,
    DEFAULT_VARIANCE_TARGET,
    HorizonConfig,
    RefinedFeatureFrame,
    refine_features,
    select_valid_metrics,
)
from .rlcore import (
    QNetwork,
    ReplayBuffer,
    Tensor3,
    TrainConfig,
    Transition,
    build_qnetwork,
    epsilon_at,
    epsilon_greedy,
    sync_target,
    train_step,
)
from .rlcore.container import (
    KIND_MODULE,
    network_from_parts,
    network_meta,
    params_from_bytes,
    params_to_bytes,
    read_container,
    write_container,
)

log = logging.getLogger(__name__)

#: Signal-agent actions in index order; epsilon-greedy ties resolve to "buy".
SIGNAL_ACTIONS = ("buy", "sell", "hold")

#: Signal channel encoding used in allocation-agent observations.
SIGNAL_VALUES = {"buy": 1.0, "hold": 0.0, "sell": -1.0}

DEFAULT_OBS_WINDOW = 32

_VOLUME_EPS = 1e-8

CM_FORMAT_VERSION = 1


class WarmupError(DataError):
    """A decision index that still falls inside a rolling warm-up."""


@dataclass(frozen=True)
class TradingSignal:
    ts: int
    action: str

    def __post_init__(self):
        if self.action not in SIGNAL_ACTIONS:
            raise DataError(f"unknown signal action {self.action!r}")


@dataclass(frozen=True)
class AllocationAction:
    """Binary allocation over (cash, crypto): exactly [1,0] or [0,1]."""

    weights: tuple[float, float]

    def __post_init__(self):
        if self.weights not in ((1.0, 0.0), (0.0, 1.0)):
            raise DataError(f"allocation must be (1,0) or (0,1), got {self.weights}")

    @property
    def cash(self) -> float:
        return self.weights[0]

    @property
    def crypto(self) -> float:
        return self.weights[1]

    @property
    def index(self) -> int:
        return int(self.weights[1])

    @classmethod
    def all_cash(cls) -> "AllocationAction":
        return cls((1.0, 0.0))

    @classmethod
    def all_crypto(cls) -> "AllocationAction":
        return cls((0.0, 1.0))

    @classmethod
    def from_index(cls, index: int) -> "AllocationAction":
        # action index 0 is cash so that argmax tie-breaking prefers cash
        return cls.all_cash() if index == 0 else cls.all_crypto()


@dataclass(frozen=True)
class RewardConfig:
    fee_rate: float = 0.001
    eam_hold_reward: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.fee_rate < 0.1:
            raise ConfigError("fee_rate must be in [0, 0.1)")


@dataclass(frozen=True)
class EamObservation:
    """Windowed inputs for the signal agent (single asset row)."""

    ohlcv_window: np.ndarray     # (n, 5), normalized
    metrics_window: np.ndarray   # (n, c_max) padded principal components
    metrics_count: np.ndarray    # (n,) real component count per row

    def tensor(self) -> Tensor3:
        stacked = np.concatenate([self.ohlcv_window, self.metrics_window], axis=1)
        return Tensor3(stacked.T[:, None, :])


@dataclass(frozen=True)
class SamObservation:
    """State tensor for the allocation agent: m=2 (crypto row, cash row)."""

    tensor: Tensor3

    def __post_init__(self):
        if self.tensor.m != 2:
            raise DataError(f"allocation state needs m=2 asset rows, got {self.tensor.m}")


@dataclass(frozen=True)
class DataRanges:
    """Inclusive [start, end] timestamp bounds for training and validation."""

    train: tuple[int, int]
    validation: tuple[int, int]

    def __post_init__(self):
        if not (self.train[0] < self.train[1] < self.validation[0] < self.validation[1]):
            raise ConfigError(f"ranges must be ordered: train {self.train}, validation {self.validation}")


@dataclass(frozen=True)
class CmSettings:
    """Everything needed to refit features and train both agents."""

    horizon: HorizonConfig = HorizonConfig()
    norm_window: int = DEFAULT_NORM_WINDOW
    pca_window: int = DEFAULT_PCA_WINDOW
    variance_target: float = DEFAULT_VARIANCE_TARGET
    epsilon: float = DEFAULT_EPSILON
    window: int = DEFAULT_OBS_WINDOW
    buffer_capacity: int = 10_000
    eval_interval: int = 500
    train: TrainConfig = field(default_factory=TrainConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self):
        if self.window < 5:
            raise ConfigError("observation window must be >= 5 intervals")
        if self.norm_window < 2 or self.pca_window < 2:
            raise ConfigError("rolling windows must be >= 2 bars")
        if self.eval_interval <= 0 or self.buffer_capacity <= 0:
            raise ConfigError("eval_interval and buffer_capacity must be positive")


# ---------------------------------------------------------------------------
# Observations


def _window_ohlcv_features(frame: AlignedFrame, t: int, n: int) -> np.ndarray:
    rows = frame.ohlcv[t - n + 1 : t + 1]
    last_close = rows[-1, 3]
    out = np.empty((n, 5))
    out[:, :4] = rows[:, :4] / last_close
    out[:, 4] = rows[:, 4] / (rows[:, 4].mean() + _VOLUME_EPS)
    return out


def _check_window(frame: AlignedFrame, refined: RefinedFeatureFrame, t: int, n: int) -> None:
    if t >= len(frame):
        raise DataError(f"index {t} beyond frame of length {len(frame)}")
    if t < n - 1:
        raise WarmupError(f"index {t} inside the {n}-bar observation window warm-up")
    if not refined.valid[t - n + 1 : t + 1].all():
        raise WarmupError(f"refined features not yet valid over window ending at index {t}")


def build_eam_state(frame: AlignedFrame, refined: RefinedFeatureFrame, t: int, n: int) -> EamObservation:
    """Signal-agent observation for the window ending at row t."""
    _check_window(frame, refined, t, n)
    sl = slice(t - n + 1, t + 1)
    return EamObservation(
        ohlcv_window=_window_ohlcv_features(frame, t, n),
        metrics_window=refined.components[sl].copy(),
        metrics_count=refined.n_components[sl].copy(),
    )


def build_sam_state(
    frame: AlignedFrame,
    refined: RefinedFeatureFrame,
    t: int,
    n: int,
    signals: Sequence[TradingSignal] | np.ndarray | None = None,
) -> SamObservation:
    """Allocation-agent observation for the window ending at row t.

    With ``signals`` the tensor gains one channel encoding buy=1, hold=0,
    sell=-1 over the window, so f = 5 + c_max + 1; otherwise f = 5 + c_max.
    """
    _check_window(frame, refined, t, n)
    sl = slice(t - n + 1, t + 1)
    channels = [_window_ohlcv_features(frame, t, n).T, refined.components[sl].T]
    if signals is not None:
        encoded = signals if isinstance(signals, np.ndarray) else encode_signals(signals, frame)
        window_sig = encoded[sl]
        if np.isnan(window_sig).any():
            raise WarmupError(f"missing trading signals inside window ending at index {t}")
        channels.append(window_sig[None, :])
    crypto_row = np.concatenate(channels, axis=0)  # (f, n)
    f = crypto_row.shape[0]
    cash_row = np.zeros((f, n))
    cash_row[:4] = 1.0  # price channels of the riskless leg
    return SamObservation(Tensor3(np.stack([crypto_row, cash_row], axis=1)))


def encode_signals(signals: Sequence[TradingSignal], frame: AlignedFrame) -> np.ndarray:
    """Map a signal series onto frame rows; NaN where no signal exists."""
    out = np.full(len(frame), np.nan)
    seen: set[int] = set()
    for sig in signals:
        if sig.ts in seen:
            raise DataError(f"duplicate trading signal at ts={sig.ts}")
        seen.add(sig.ts)
        out[frame.index_of(sig.ts)] = SIGNAL_VALUES[sig.action]
    return out


# ---------------------------------------------------------------------------
# Rewards


def eam_reward(action: str, log_return: float, cfg: RewardConfig) -> float:
    """Signal-aligned log return: buy earns it, sell earns its negative."""
    if not math.isfinite(log_return):
        raise DataError(f"non-finite log return {log_return}")
    if action == "buy":
        return log_return
    if action == "sell":
        return -log_return
    if action == "hold":
        return cfg.eam_hold_reward
    raise DataError(f"unknown signal action {action!r}")


def sam_step(
    prev_weights: Sequence[float],
    action: AllocationAction,
    price_ratio: float,
    cfg: RewardConfig,
) -> tuple[float, float]:
    """Log wealth growth of one allocation step net of proportional fees.

    Returns (reward, growth factor g) with
    g = (1 - fee_rate * |turnover|) * (w_cash + w_crypto * price_ratio).
    """
    if price_ratio <= 0:
        raise DataError(f"price ratio must be positive, got {price_ratio}")
    prev_crypto = float(prev_weights[1])
    turnover = abs(action.crypto - prev_crypto)
    growth = (1.0 - cfg.fee_rate * turnover) * (action.cash + action.crypto * price_ratio)
    if growth <= 0:
        raise DataError(f"non-positive wealth growth {growth}")
    return math.log(growth), growth


# ---------------------------------------------------------------------------
# The trained module


@dataclass
class CmContext:
    """Per-frame inference context: features (and signals) rebuilt from raw data."""

    frame: AlignedFrame
    refined: RefinedFeatureFrame
    signals: np.ndarray | None

    def first_decision(self, window: int, use_eam: bool) -> int:
        first = self.refined.first_valid_index + window - 1
        if use_eam:
            first += window - 1
        return first


@dataclass
class CryptoModule:
    """The reusable, pluggable unit: trained nets plus feature-pipeline state."""

    asset: AssetId
    sam_net: QNetwork
    eam_net: QNetwork | None
    selected_metrics: list[str]
    settings: CmSettings
    ranges: DataRanges
    interval: int
    use_eam: bool
    format_version: int = CM_FORMAT_VERSION

    @property
    def warmup_bars(self) -> int:
        """Leading bars consumed before the first valid decision."""
        n = self.settings.window
        warm = (self.settings.norm_window - 1) + (self.settings.pca_window - 1) + (n - 1)
        if self.use_eam:
            warm += n - 1
        return warm

    def prepare(self, frame: AlignedFrame) -> CmContext:
        """Rebuild observation inputs for a frame (trailing transforms only)."""
        refined = refine_features(
            frame,
            self.selected_metrics,
            self.settings.norm_window,
            self.settings.pca_window,
            self.settings.variance_target,
            self.settings.epsilon,
        )
        signals = None
        if self.use_eam:
            signals = _greedy_signal_array(self.eam_net, frame, refined, self.settings.window)
        return CmContext(frame, refined, signals)

    def allocate(self, ctx: CmContext, t: int) -> AllocationAction:
        """Greedy allocation at frame index t; Q-value ties go to cash."""
        obs = build_sam_state(ctx.frame, ctx.refined, t, self.settings.window, ctx.signals)
        q = self.sam_net.forward(obs.tensor.data[None])[0]
        return AllocationAction.from_index(int(np.argmax(q)))


def infer_allocation(cm: CryptoModule, ctx: CmContext, t: int) -> AllocationAction:
    return cm.allocate(ctx, t)


def _greedy_signal_array(
    eam_net: QNetwork, frame: AlignedFrame, refined: RefinedFeatureFrame, window: int
) -> np.ndarray:
    """Frozen greedy signals of the trained signal agent, one per valid bar."""
    out = np.full(len(frame), np.nan)
    first = refined.first_valid_index + window - 1
    states = []
    index = []
    for t in range(first, len(frame)):
        if not refined.valid[t - window + 1 : t + 1].all():
            continue
        states.append(build_eam_state(frame, refined, t, window).tensor().data)
        index.append(t)
    if states:
        q = eam_net.forward(np.stack(states))
        actions = np.argmax(q, axis=1)
        for t, a in zip(index, actions):
            out[t] = SIGNAL_VALUES[SIGNAL_ACTIONS[int(a)]]
    return out


# ---------------------------------------------------------------------------
# Training


def _derive_seeds(seed: int, count: int) -> list[int]:
    root = np.random.SeedSequence(seed)
    return [int(child.generate_state(1)[0]) for child in root.spawn(count)]


def _decision_indices(
    ctx: CmContext, frame: AlignedFrame, window: int, use_eam: bool, start_ts: int, end_ts: int
) -> list[int]:
    first = ctx.first_decision(window, use_eam)
    return [
        t
        for t in range(first, len(frame))
        if start_ts <= int(frame.timestamps[t]) <= end_ts
    ]


class _EpisodeEnv:
    """Sequential decisions over precomputed states with log-return rewards."""

    def __init__(self, states: list[np.ndarray], ratios: np.ndarray, reward_fn):
        if len(states) != len(ratios) + 1:
            raise DataError("need one more state than price ratios")
        if len(ratios) == 0:
            raise DataError("not enough decision bars to form a single step")
        self.states = states
        self.ratios = ratios
        self.reward_fn = reward_fn
        self.cursor = 0
        self.carry = AllocationAction.all_cash()

    def reset(self) -> np.ndarray:
        self.cursor = 0
        self.carry = AllocationAction.all_cash()
        return self.states[0]

    def step(self, action_index: int) -> tuple[float, np.ndarray, bool]:
        reward, self.carry = self.reward_fn(self.cursor, action_index, self.carry)
        self.cursor += 1
        terminal = self.cursor == len(self.ratios)
        return reward, self.states[self.cursor], terminal


def _sam_reward_fn(ratios: np.ndarray, cfg: RewardConfig):
    def fn(j: int, action_index: int, carry: AllocationAction):
        action = AllocationAction.from_index(action_index)
        reward, _ = sam_step(carry.weights, action, float(ratios[j]), cfg)
        return reward, action
    return fn


def _eam_reward_fn(ratios: np.ndarray, cfg: RewardConfig):
    def fn(j: int, action_index: int, carry):
        reward = eam_reward(SIGNAL_ACTIONS[action_index], math.log(float(ratios[j])), cfg)
        return reward, carry
    return fn


def _greedy_log_wealth(net: QNetwork, states: list[np.ndarray], ratios: np.ndarray, cfg: RewardConfig) -> float:
    """Validation score: log wealth of the greedy allocation policy."""
    if len(ratios) == 0:
        return 0.0
    q = net.forward(np.stack(states[:-1]))
    total = 0.0
    prev = AllocationAction.all_cash()
    for j in range(len(ratios)):
        action = AllocationAction.from_index(int(np.argmax(q[j])))
        reward, _ = sam_step(prev.weights, action, float(ratios[j]), cfg)
        total += reward
        prev = action
    return total


def _greedy_signal_score(net: QNetwork, states: list[np.ndarray], ratios: np.ndarray, cfg: RewardConfig) -> float:
    """Validation score for the signal agent: summed signal-aligned log return."""
    if len(ratios) == 0:
        return 0.0
    q = net.forward(np.stack(states[:-1]))
    total = 0.0
    for j in range(len(ratios)):
        action = SIGNAL_ACTIONS[int(np.argmax(q[j]))]
        total += eam_reward(action, math.log(float(ratios[j])), cfg)
    return total


def _run_dqn(
    arch: str,
    train_states: list[np.ndarray],
    train_ratios: np.ndarray,
    val_states: list[np.ndarray],
    val_ratios: np.ndarray,
    settings: CmSettings,
    reward_factory,
    score_fn,
    seeds: tuple[int, int, int],
) -> QNetwork:
    """Train one agent and return the checkpoint with the best validation score."""
    cfg = settings.train
    net_seed, action_seed, buffer_seed = seeds
    shape = tuple(train_states[0].shape)
    net = build_qnetwork(arch, shape, net_seed)
    target = net.clone()
    buffer = ReplayBuffer(settings.buffer_capacity, seed=buffer_seed)
    rng = np.random.default_rng(action_seed)
    env = _EpisodeEnv(train_states, train_ratios, reward_factory(train_ratios, settings.reward))

    best_params: np.ndarray | None = None
    best_score = -np.inf

    def checkpoint():
        nonlocal best_params, best_score
        score = score_fn(net, val_states, val_ratios, settings.reward)
        if score > best_score:
            best_score = score
            best_params = net.params_flat().copy()

    state = env.reset()
    for step in range(cfg.max_steps):
        q = net.forward(state[None])[0]
        action = epsilon_greedy(q, epsilon_at(cfg, step), rng)
        reward, next_state, terminal = env.step(action)
        buffer.push(Transition(state, action, reward, next_state, terminal))
        state = env.reset() if terminal else next_state
        if len(buffer) >= cfg.batch:
            train_step(net, target, buffer.sample(cfg.batch), cfg)
        if (step + 1) % cfg.target_sync == 0:
            sync_target(net, target)
        if (step + 1) % settings.eval_interval == 0:
            checkpoint()
    checkpoint()
    net.set_params_flat(best_params)
    log.info("trained %s for %d steps; best validation score %.6f", arch, cfg.max_steps, best_score)
    return net


def train_cm_from_frame(
    frame: AlignedFrame,
    ranges: DataRanges,
    settings: CmSettings,
    use_eam: bool = False,
) -> CryptoModule:
    """Select metrics, refine features, and train the agent pair on one frame."""
    train_frame = frame.slice(*ranges.train)
    selected = select_valid_metrics(train_frame, settings.horizon)
    refined = refine_features(
        frame,
        selected.names,
        settings.norm_window,
        settings.pca_window,
        settings.variance_target,
        settings.epsilon,
    )
    seeds = _derive_seeds(settings.train.seed, 6)
    ctx = CmContext(frame, refined, None)
    closes = frame.close

    eam_net = None
    signals = None
    if use_eam:
        idx_train = _decision_indices(ctx, frame, settings.window, False, *ranges.train)
        idx_val = _decision_indices(ctx, frame, settings.window, False, *ranges.validation)
        _require_steps(idx_train, idx_val, "signal agent")
        eam_states = [build_eam_state(frame, refined, t, settings.window).tensor().data for t in idx_train]
        eam_val = [build_eam_state(frame, refined, t, settings.window).tensor().data for t in idx_val]
        eam_net = _run_dqn(
            "eam-1d",
            eam_states,
            _step_ratios(closes, idx_train),
            eam_val,
            _step_ratios(closes, idx_val),
            settings,
            _eam_reward_fn,
            _greedy_signal_score,
            (seeds[0], seeds[1], seeds[2]),
        )
        signals = _greedy_signal_array(eam_net, frame, refined, settings.window)

    ctx = CmContext(frame, refined, signals)
    idx_train = _decision_indices(ctx, frame, settings.window, use_eam, *ranges.train)
    idx_val = _decision_indices(ctx, frame, settings.window, use_eam, *ranges.validation)
    _require_steps(idx_train, idx_val, "allocation agent")
    sam_states = [
        build_sam_state(frame, refined, t, settings.window, signals).tensor.data for t in idx_train
    ]
    sam_val = [
        build_sam_state(frame, refined, t, settings.window, signals).tensor.data for t in idx_val
    ]
    sam_net = _run_dqn(
        "sam-4layer",
        sam_states,
        _step_ratios(closes, idx_train),
        sam_val,
        _step_ratios(closes, idx_val),
        settings,
        _sam_reward_fn,
        _greedy_log_wealth,
        (seeds[3], seeds[4], seeds[5]),
    )
    return CryptoModule(
        asset=frame.asset,
        sam_net=sam_net,
        eam_net=eam_net,
        selected_metrics=list(selected.names),
        settings=settings,
        ranges=ranges,
        interval=frame.interval,
        use_eam=use_eam,
    )


def train_cm(
    store: CsvStore,
    asset: AssetId,
    ranges: DataRanges,
    settings: CmSettings,
    use_eam: bool = False,
    interval: int = DEFAULT_BAR_INTERVAL,
    fill_limit: int = DEFAULT_FILL_LIMIT,
) -> CryptoModule:
    """Align the training span from the store and train a module for one asset."""
    frame = store.align(asset, ranges.train[0], ranges.validation[1], interval, fill_limit)
    return train_cm_from_frame(frame, ranges, settings, use_eam)


def _step_ratios(closes: np.ndarray, indices: list[int]) -> np.ndarray:
    """Price relatives between consecutive decision bars."""
    idx = np.asarray(indices)
    return closes[idx[1:]] / closes[idx[:-1]]


def _require_steps(idx_train: list[int], idx_val: list[int], who: str) -> None:
    if len(idx_train) < 2:
        raise DataError(f"{who}: training range leaves {len(idx_train)} decision bars after warm-up")
    if len(idx_val) < 2:
        raise DataError(f"{who}: validation range leaves {len(idx_val)} decision bars after warm-up")


# ---------------------------------------------------------------------------
# Serialization


def save_cm(cm: CryptoModule, path: str | Path) -> None:
    """Write the module as a single checksummed container."""
    meta = {
        "cm_version": cm.format_version,
        "asset": {"symbol": cm.asset.symbol, "quote": cm.asset.quote},
        "interval": cm.interval,
        "use_eam": cm.use_eam,
        "selected_metrics": list(cm.selected_metrics),
        "ranges": {"train": list(cm.ranges.train), "validation": list(cm.ranges.validation)},
        "settings": _settings_to_doc(cm.settings),
        "sam": network_meta(cm.sam_net),
        "eam": network_meta(cm.eam_net) if cm.eam_net is not None else None,
    }
    sections = {"sam_params": params_to_bytes(cm.sam_net.params_flat())}
    if cm.eam_net is not None:
        sections["eam_params"] = params_to_bytes(cm.eam_net.params_flat())
    write_container(path, KIND_MODULE, meta, sections)


def load_cm(path: str | Path) -> CryptoModule:
    """Load a module; raises on bad magic, version, or checksum."""
    _, meta, sections = read_container(path, expected_kind=KIND_MODULE)
    if meta["cm_version"] != CM_FORMAT_VERSION:
        from .rlcore.container import UnsupportedVersionError

        raise UnsupportedVersionError(
            f"module version {meta['cm_version']} unsupported (expected {CM_FORMAT_VERSION})"
        )
    sam_net = network_from_parts(meta["sam"], params_from_bytes(sections["sam_params"]))
    eam_net = None
    if meta["eam"] is not None:
        eam_net = network_from_parts(meta["eam"], params_from_bytes(sections["eam_params"]))
    return CryptoModule(
        asset=AssetId(meta["asset"]["symbol"], meta["asset"]["quote"]),
        sam_net=sam_net,
        eam_net=eam_net,
        selected_metrics=list(meta["selected_metrics"]),
        settings=_settings_from_doc(meta["settings"]),
        ranges=DataRanges(tuple(meta["ranges"]["train"]), tuple(meta["ranges"]["validation"])),
        interval=meta["interval"],
        use_eam=meta["use_eam"],
        format_version=meta["cm_version"],
    )


def _settings_to_doc(s: CmSettings) -> dict:
    return {
        "horizon": {
            "horizons": list(s.horizon.horizons),
            "top_per_group": s.horizon.top_per_group,
            "final_count": s.horizon.final_count,
            "forward_returns": s.horizon.forward_returns,
        },
        "norm_window": s.norm_window,
        "pca_window": s.pca_window,
        "variance_target": s.variance_target,
        "epsilon": s.epsilon,
        "window": s.window,
        "buffer_capacity": s.buffer_capacity,
        "eval_interval": s.eval_interval,
        "train": {
            "gamma": s.train.gamma,
            "lr": s.train.lr,
            "batch": s.train.batch,
            "target_sync": s.train.target_sync,
            "eps_start": s.train.eps_start,
            "eps_end": s.train.eps_end,
            "eps_decay_steps": s.train.eps_decay_steps,
            "max_steps": s.train.max_steps,
            "seed": s.train.seed,
            "grad_clip": s.train.grad_clip,
        },
        "reward": {"fee_rate": s.reward.fee_rate, "eam_hold_reward": s.reward.eam_hold_reward},
    }


def _settings_from_doc(doc: dict) -> CmSettings:
    return CmSettings(
        horizon=HorizonConfig(
            horizons=tuple(doc["horizon"]["horizons"]),
            top_per_group=doc["horizon"]["top_per_group"],
            final_count=doc["horizon"]["final_count"],
            forward_returns=doc["horizon"]["forward_returns"],
        ),
        norm_window=doc["norm_window"],
        pca_window=doc["pca_window"],
        variance_target=doc["variance_target"],
        epsilon=doc["epsilon"],
        window=doc["window"],
        buffer_capacity=doc["buffer_capacity"],
        eval_interval=doc["eval_interval"],
        train=TrainConfig(**doc["train"]),
        reward=RewardConfig(**doc["reward"]),
    )


def with_seed(settings: CmSettings, seed: int) -> CmSettings:
    """Copy of the settings with a different training seed."""
    return replace(settings, train=replace(settings.train, seed=seed))
