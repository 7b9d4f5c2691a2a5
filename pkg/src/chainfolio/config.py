"""Run configuration: plain-text key=value files with CLI overrides.

Format: one `key = value` pair per line, `#` starts a comment, blank
lines ignored.  Keys are dotted (section.field).  Values are parsed per
key: integers, floats, booleans (true/false), comma-separated integer
lists, or date ranges `START:END` where each side is an epoch second,
a UTC date `YYYY-MM-DD`, or a full ISO timestamp (end exclusive).

The default splits follow the usual experiment layout: train from
2020-10-01 through 2021-12-31, validation January-February 2022, and
backtest March through September 2022, all UTC.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping

from .cryptomodule import CmSettings, DataRanges, RewardConfig
from .datastore import DEFAULT_BAR_INTERVAL, DEFAULT_FILL_LIMIT
from .errors import ConfigError
from .portfolio import BacktestConfig
from .refinery import (
    DEFAULT_EPSILON,
    DEFAULT_NORM_WINDOW,
    DEFAULT_PCA_WINDOW,
    DEFAULT_VARIANCE_TARGET,
    HorizonConfig,
)
from .rlcore import TrainConfig

ENV_DATA_DIR = "CHAINFOLIO_DATA_DIR"

DEFAULT_SPLITS = {
    "train": ("2020-10-01", "2022-01-01"),
    "validation": ("2022-01-01", "2022-03-01"),
    "backtest": ("2022-03-01", "2022-10-01"),
}


def parse_ts(value: str | int) -> int:
    """Epoch seconds from an int, a UTC date, or an ISO timestamp."""
    if isinstance(value, int):
        return value
    text = value.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        if len(text) == 10:
            dt = datetime.strptime(text, "%Y-%m-%d").replace(tzinfo=timezone.utc)
        else:
            dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
            if dt.tzinfo is None:
                dt = dt.replace(tzinfo=timezone.utc)
    except ValueError as exc:
        raise ConfigError(f"cannot parse timestamp {value!r}: {exc}") from None
    return int(dt.timestamp())


def _parse_range(value: str) -> tuple[int, int]:
    parts = value.split(":", 1)
    if len(parts) != 2:
        raise ConfigError(f"range must be START:END, got {value!r}")
    start, end = parse_ts(parts[0]), parse_ts(parts[1])
    if start >= end:
        raise ConfigError(f"range start must precede end in {value!r}")
    return start, end


@dataclass
class RunConfig:
    """Everything a pipeline run needs; every field has a documented key."""

    data_dir: str = "data"
    interval: int = DEFAULT_BAR_INTERVAL
    fill_limit: int = DEFAULT_FILL_LIMIT
    seed: int = 0
    use_eam: bool = False

    horizons: tuple[int, ...] = (12, 24, 48)
    top_per_group: int = 5
    final_count: int = 10
    forward_returns: bool = True

    norm_window: int = DEFAULT_NORM_WINDOW
    pca_window: int = DEFAULT_PCA_WINDOW
    variance_target: float = DEFAULT_VARIANCE_TARGET
    epsilon: float = DEFAULT_EPSILON

    window: int = 32
    buffer_capacity: int = 10_000
    eval_interval: int = 500

    gamma: float = 0.99
    lr: float = 1e-3
    batch: int = 32
    target_sync: int = 200
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 5_000
    max_steps: int = 20_000
    grad_clip: float = 10.0

    fee_rate: float = 0.001
    eam_hold_reward: float = 0.0

    initial_capital: float = 10_000.0
    rebalance_interval: int = 1
    retrain_days: int = 0

    # split ranges, end-exclusive epoch seconds
    split_train: tuple[int, int] = field(default_factory=lambda: _default_split("train"))
    split_validation: tuple[int, int] = field(default_factory=lambda: _default_split("validation"))
    split_backtest: tuple[int, int] = field(default_factory=lambda: _default_split("backtest"))

    # -- builders ----------------------------------------------------------

    def horizon_config(self) -> HorizonConfig:
        return HorizonConfig(
            horizons=self.horizons,
            top_per_group=self.top_per_group,
            final_count=self.final_count,
            forward_returns=self.forward_returns,
        )

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            gamma=self.gamma,
            lr=self.lr,
            batch=self.batch,
            target_sync=self.target_sync,
            eps_start=self.eps_start,
            eps_end=self.eps_end,
            eps_decay_steps=self.eps_decay_steps,
            max_steps=self.max_steps,
            seed=self.seed if seed is None else seed,
            grad_clip=self.grad_clip,
        )

    def reward_config(self) -> RewardConfig:
        return RewardConfig(fee_rate=self.fee_rate, eam_hold_reward=self.eam_hold_reward)

    def cm_settings(self, seed: int | None = None) -> CmSettings:
        return CmSettings(
            horizon=self.horizon_config(),
            norm_window=self.norm_window,
            pca_window=self.pca_window,
            variance_target=self.variance_target,
            epsilon=self.epsilon,
            window=self.window,
            buffer_capacity=self.buffer_capacity,
            eval_interval=self.eval_interval,
            train=self.train_config(seed),
            reward=self.reward_config(),
        )

    def _inclusive(self, split: tuple[int, int]) -> tuple[int, int]:
        return split[0], split[1] - self.interval

    def data_ranges(self) -> DataRanges:
        return DataRanges(
            train=self._inclusive(self.split_train),
            validation=self._inclusive(self.split_validation),
        )

    def backtest_config(
        self,
        assets: tuple[str, ...],
        start_ts: int | None = None,
        end_ts: int | None = None,
        fee_rate: float | None = None,
        rebalance_interval: int | None = None,
        retrain_days: int | None = None,
    ) -> BacktestConfig:
        lo, hi = self._inclusive(self.split_backtest)
        return BacktestConfig(
            assets=assets,
            start_ts=lo if start_ts is None else start_ts,
            end_ts=hi if end_ts is None else end_ts,
            initial_capital=self.initial_capital,
            fee_rate=self.fee_rate if fee_rate is None else fee_rate,
            rebalance_interval=self.rebalance_interval if rebalance_interval is None else rebalance_interval,
            retrain_days=self.retrain_days if retrain_days is None else retrain_days,
            interval=self.interval,
            fill_limit=self.fill_limit,
        )

    def to_doc(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out


def _default_split(name: str) -> tuple[int, int]:
    start, end = DEFAULT_SPLITS[name]
    return parse_ts(start), parse_ts(end)


# ---------------------------------------------------------------------------
# Parsing

def _as_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _as_int_tuple(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p.strip()) for p in text.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


#: dotted config key -> (RunConfig field, parser)
CONFIG_KEYS: dict[str, tuple[str, object]] = {
    "data_dir": ("data_dir", str),
    "interval": ("interval", int),
    "fill_limit": ("fill_limit", int),
    "seed": ("seed", int),
    "cm.use_eam": ("use_eam", _as_bool),
    "horizon.horizons": ("horizons", _as_int_tuple),
    "horizon.top_per_group": ("top_per_group", int),
    "horizon.final_count": ("final_count", int),
    "horizon.forward_returns": ("forward_returns", _as_bool),
    "refine.norm_window": ("norm_window", int),
    "refine.pca_window": ("pca_window", int),
    "refine.variance_target": ("variance_target", float),
    "refine.epsilon": ("epsilon", float),
    "cm.window": ("window", int),
    "cm.buffer_capacity": ("buffer_capacity", int),
    "cm.eval_interval": ("eval_interval", int),
    "train.gamma": ("gamma", float),
    "train.lr": ("lr", float),
    "train.batch": ("batch", int),
    "train.target_sync": ("target_sync", int),
    "train.eps_start": ("eps_start", float),
    "train.eps_end": ("eps_end", float),
    "train.eps_decay_steps": ("eps_decay_steps", int),
    "train.max_steps": ("max_steps", int),
    "train.grad_clip": ("grad_clip", float),
    "reward.fee_rate": ("fee_rate", float),
    "reward.eam_hold_reward": ("eam_hold_reward", float),
    "backtest.initial_capital": ("initial_capital", float),
    "backtest.rebalance_interval": ("rebalance_interval", int),
    "backtest.retrain_days": ("retrain_days", int),
    "split.train": ("split_train", _parse_range),
    "split.validation": ("split_validation", _parse_range),
    "split.backtest": ("split_backtest", _parse_range),
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    """Raw `key = value` pairs as typed RunConfig field assignments."""
    assignments: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        field_name, parser = CONFIG_KEYS[key]
        try:
            assignments[field_name] = parser(value)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return assignments


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, object] | None = None,
    env: Mapping[str, str] | None = None,
) -> RunConfig:
    """Layer a RunConfig: defaults, then file, then environment, then overrides."""
    assignments: dict[str, object] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        assignments.update(parse_config_text(p.read_text(), source=str(p)))
    if env and env.get(ENV_DATA_DIR):
        assignments["data_dir"] = env[ENV_DATA_DIR]
    if overrides:
        assignments.update({k: v for k, v in overrides.items() if v is not None})
    cfg = replace(RunConfig(), **assignments)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.interval <= 0:
        raise ConfigError("interval must be positive")
    if cfg.seed < 0:
        raise ConfigError("seed must be nonnegative")
    for name in ("split_train", "split_validation", "split_backtest"):
        lo, hi = getattr(cfg, name)
        if hi - cfg.interval < lo:
            raise ConfigError(f"{name} is shorter than one bar interval")
    # constructing the derived configs runs their own domain checks
    cfg.cm_settings()
    cfg.data_ranges()
