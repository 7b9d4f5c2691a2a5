"""Portfolio composition, fee-aware backtesting, and scheduled retraining.

The engine composes per-asset trading modules by vote averaging: each
module contributes a binary cash/crypto allocation, asset i's portfolio
weight is its module's crypto entry divided by the module count m, and
the residual mass stays in cash.  Weight vectors are kept in rational
arithmetic so they sum to 1 exactly.

Backtest loop: per rebalance interval query every module, average the
votes, rebalance at current closes paying proportional fees on turnover
(crypto entries only); between rebalances holdings drift with prices.
A retrain cadence in days optionally re-fits every module on an
expanding window at each boundary inside the range.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import shutil
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import metrics as metrics_mod
from .cryptomodule import AllocationAction, CryptoModule, DataRanges, load_cm, with_seed
from .datastore import (
    AssetId,
    CsvStore,
    DEFAULT_BAR_INTERVAL,
    DEFAULT_FILL_LIMIT,
)
from .errors import ChainfolioError, ConfigError, DataError
from .metrics import SummaryStats
from .rlcore import DivergenceError

log = logging.getLogger(__name__)

REPORT_VERSION = 1
REPORT_FILE = "report.json"
CURVES_FILE = "curves.csv"

_ACTION_NAMES = ("cash", "crypto")


@dataclass(frozen=True)
class VoteSet:
    """One binary allocation per module, in portfolio order."""

    assets: tuple[str, ...]
    actions: tuple[AllocationAction, ...]

    def __post_init__(self):
        if len(self.assets) != len(self.actions):
            raise DataError("one action per asset required")
        if len(self.assets) == 0:
            raise DataError("a vote set needs at least one module")
        if len(set(self.assets)) != len(self.assets):
            raise DataError("duplicate assets in vote set")

    @property
    def m(self) -> int:
        return len(self.assets)


@dataclass(frozen=True)
class PortfolioWeights:
    """(m+1)-vector [crypto_1..crypto_m, cash]; exact rational sum of 1."""

    assets: tuple[str, ...]
    values: tuple[Fraction, ...]

    def __post_init__(self):
        if len(self.values) != len(self.assets) + 1:
            raise DataError("need one weight per asset plus cash")
        if any(v < 0 for v in self.values):
            raise DataError("weights must be nonnegative")
        if sum(self.values) != 1:
            raise DataError(f"weights must sum to 1 exactly, got {sum(self.values)}")

    @property
    def crypto(self) -> tuple[Fraction, ...]:
        return self.values[:-1]

    @property
    def cash(self) -> Fraction:
        return self.values[-1]

    def to_floats(self) -> np.ndarray:
        return np.array([float(v) for v in self.values])


def vote_weights(votes: VoteSet) -> PortfolioWeights:
    """Average the crypto-side votes; residual mass is cash."""
    m = votes.m
    crypto = tuple(Fraction(int(a.crypto), m) for a in votes.actions)
    cash = Fraction(1) - sum(crypto)
    return PortfolioWeights(votes.assets, crypto + (cash,))


@dataclass(frozen=True)
class Holdings:
    """Positions in units: crypto units per asset plus quote-currency cash."""

    assets: tuple[str, ...]
    units: tuple[float, ...]
    cash: float

    def __post_init__(self):
        if len(self.units) != len(self.assets):
            raise DataError("one unit entry per asset required")
        if self.cash < 0 or any(u < 0 for u in self.units):
            raise DataError("short positions are out of scope")

    def value(self, prices: Sequence[float]) -> float:
        return self.cash + float(np.dot(self.units, prices))

    def weights(self, prices: Sequence[float]) -> np.ndarray:
        """Current (m+1) weight vector [crypto_1..m, cash] at given prices."""
        v = self.value(prices)
        if v <= 0:
            raise DataError("portfolio value must be positive")
        crypto = np.multiply(self.units, prices) / v
        return np.append(crypto, self.cash / v)


@dataclass(frozen=True)
class RebalanceEvent:
    ts: int
    pre_value: float
    pre_weights: tuple[float, ...]
    target_weights: tuple[float, ...]
    turnover: float
    fee: float
    post_value: float


def rebalance(
    value: float,
    current_weights: Sequence[float],
    target: PortfolioWeights,
    prices: Sequence[float],
    fee_rate: float,
    ts: int = 0,
) -> tuple[Holdings, RebalanceEvent]:
    """Re-split value to the target weights, paying fees on crypto turnover.

    turnover = sum_i |target_i - current_i| over crypto entries only;
    fee = fee_rate * turnover * value; holdings are re-split on the
    post-fee value.
    """
    if value <= 0:
        raise DataError(f"portfolio value must be positive, got {value}")
    prices = np.asarray(prices, dtype=np.float64)
    if prices.shape != (len(target.assets),) or (prices <= 0).any():
        raise DataError("need one positive price per asset")
    current = np.asarray(current_weights, dtype=np.float64)
    if current.shape != (len(target.assets) + 1,):
        raise DataError("current weights must be an (m+1)-vector")
    target_f = target.to_floats()
    turnover = float(np.abs(target_f[:-1] - current[:-1]).sum())
    fee = fee_rate * turnover * value
    if fee >= value:
        raise ConfigError(f"fee {fee} would consume the whole portfolio value {value}")
    post = value - fee
    units = tuple(float(target_f[i]) * post / float(prices[i]) for i in range(len(prices)))
    holdings = Holdings(target.assets, units, float(target_f[-1]) * post)
    event = RebalanceEvent(
        ts=ts,
        pre_value=float(value),
        pre_weights=tuple(float(w) for w in current),
        target_weights=tuple(float(w) for w in target_f),
        turnover=turnover,
        fee=float(fee),
        post_value=float(post),
    )
    return holdings, event


# ---------------------------------------------------------------------------
# Module registry


class CmRegistry:
    """Directory of trained modules, one checksummed file per asset.

    Layout: `<root>/registry.json` listing entries, plus one `<asset>.cm`
    file per registered module.  Adding validates the file fully (magic,
    version, checksum) before it is copied in.
    """

    VERSION = 1

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._entries: dict[str, dict] = {}
        index = self.root / "registry.json"
        if index.exists():
            doc = json.loads(index.read_text())
            if doc.get("version") != self.VERSION:
                raise ConfigError(f"unsupported registry version {doc.get('version')}")
            self._entries = doc["entries"]

    def _save(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        doc = {"version": self.VERSION, "entries": self._entries}
        (self.root / "registry.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def assets(self) -> list[str]:
        return sorted(self._entries)

    def __contains__(self, asset: str) -> bool:
        return asset in self._entries

    def add(self, path: str | Path, asset: str | None = None) -> str:
        """Register a module file; returns the asset key it now serves."""
        cm = load_cm(path)  # full validation: magic, version, checksum
        key = cm.asset.key
        if asset is not None and AssetId.parse(asset).key != key:
            raise ConfigError(f"module file is for {key}, not {asset}")
        if key in self._entries:
            raise ConfigError(f"a module for {key} is already registered")
        self.root.mkdir(parents=True, exist_ok=True)
        dest = self.root / f"{key}.cm"
        if Path(path).resolve() != dest.resolve():
            shutil.copyfile(path, dest)
        digest = hashlib.sha256(dest.read_bytes()).hexdigest()
        self._entries[key] = {"file": dest.name, "sha256": digest}
        self._save()
        return key

    def remove(self, asset: str) -> None:
        key = AssetId.parse(asset).key
        entry = self._entries.pop(key, None)
        if entry is None:
            raise ConfigError(f"no module registered for {key}")
        target = self.root / entry["file"]
        if target.exists():
            target.unlink()
        self._save()

    def load(self, asset: str) -> CryptoModule:
        key = AssetId.parse(asset).key
        entry = self._entries.get(key)
        if entry is None:
            raise ConfigError(f"no module registered for {key}")
        path = self.root / entry["file"]
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        if digest != entry["sha256"]:
            raise DataError(f"module file for {key} changed since registration")
        return load_cm(path)

    def status(self) -> list[tuple[str, str, str]]:
        """(asset, file, status) rows; status is 'ok' or the load error."""
        rows = []
        for key in self.assets():
            entry = self._entries[key]
            try:
                self.load(key)
                state = "ok"
            except (ChainfolioError, OSError) as exc:
                state = f"error: {exc}"
            rows.append((key, entry["file"], state))
        return rows


def add_cm(registry: CmRegistry, asset: str, path: str | Path) -> CmRegistry:
    registry.add(path, asset)
    return registry


def remove_cm(registry: CmRegistry, asset: str) -> CmRegistry:
    registry.remove(asset)
    return registry


# ---------------------------------------------------------------------------
# Backtest


@dataclass(frozen=True)
class BacktestConfig:
    assets: tuple[str, ...]
    start_ts: int
    end_ts: int
    initial_capital: float = 10_000.0
    fee_rate: float = 0.001
    rebalance_interval: int = 1      # bars between reallocation decisions
    retrain_days: int = 0            # 0 disables scheduled retraining
    interval: int = DEFAULT_BAR_INTERVAL
    fill_limit: int = DEFAULT_FILL_LIMIT

    def __post_init__(self):
        object.__setattr__(self, "assets", tuple(AssetId.parse(a).key for a in self.assets))
        if len(self.assets) == 0 or len(set(self.assets)) != len(self.assets):
            raise ConfigError("portfolio assets must be nonempty and unique")
        if self.start_ts >= self.end_ts:
            raise ConfigError("backtest range must have positive length")
        if self.initial_capital <= 0:
            raise ConfigError("initial capital must be positive")
        if not 0.0 <= self.fee_rate < 0.1:
            raise ConfigError("fee_rate must be in [0, 0.1)")
        if self.rebalance_interval < 1:
            raise ConfigError("rebalance interval must be >= 1 bar")
        if self.retrain_days < 0:
            raise ConfigError("retrain cadence must be >= 0 days")
        if self.interval <= 0 or self.fill_limit < 0:
            raise ConfigError("interval must be positive and fill_limit nonnegative")

    def to_doc(self) -> dict:
        return {
            "assets": list(self.assets),
            "start_ts": self.start_ts,
            "end_ts": self.end_ts,
            "initial_capital": self.initial_capital,
            "fee_rate": self.fee_rate,
            "rebalance_interval": self.rebalance_interval,
            "retrain_days": self.retrain_days,
            "interval": self.interval,
            "fill_limit": self.fill_limit,
        }


@dataclass
class BacktestReport:
    """Versioned backtest output: curves, events, logs, and summary stats."""

    version: int
    config: dict
    timestamps: np.ndarray
    curves: dict[str, np.ndarray]             # strategy first, then baselines
    returns: np.ndarray                       # strategy per-bar simple returns
    events: list[RebalanceEvent]
    action_logs: dict[str, list[tuple[int, str]]]
    retrain_events: list[dict] = field(default_factory=list)
    summary: dict[str, SummaryStats] = field(default_factory=dict)

    def table(self) -> str:
        return metrics_mod.render_table(self.summary)

    def to_doc(self) -> dict:
        return {
            "version": self.version,
            "config": self.config,
            "curve_order": list(self.curves),
            "timestamps": [int(t) for t in self.timestamps],
            "curves": {k: [float(x) for x in v] for k, v in self.curves.items()},
            "returns": [float(x) for x in self.returns],
            "events": [
                {
                    "ts": e.ts,
                    "pre_value": e.pre_value,
                    "pre_weights": list(e.pre_weights),
                    "target_weights": list(e.target_weights),
                    "turnover": e.turnover,
                    "fee": e.fee,
                    "post_value": e.post_value,
                }
                for e in self.events
            ],
            "action_logs": {k: [[int(t), a] for t, a in v] for k, v in self.action_logs.items()},
            "retrain_events": self.retrain_events,
            "summary": {
                name: {
                    "arr": s.arr,
                    "drr": s.drr,
                    "sortino": "+inf" if math.isinf(s.sortino) else s.sortino,
                }
                for name, s in self.summary.items()
            },
        }

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        doc = json.dumps(self.to_doc(), indent=2, sort_keys=True) + "\n"
        (out / REPORT_FILE).write_text(doc)
        metrics_mod.write_curves_csv(out / CURVES_FILE, self.timestamps, self.curves)

    @classmethod
    def load(cls, out_dir: str | Path) -> "BacktestReport":
        doc = json.loads((Path(out_dir) / REPORT_FILE).read_text())
        if doc["version"] != REPORT_VERSION:
            raise ConfigError(f"unsupported report version {doc['version']}")
        curves = {name: np.asarray(doc["curves"][name]) for name in doc["curve_order"]}
        summary = {
            name: SummaryStats(
                arr=s["arr"],
                drr=s["drr"],
                sortino=math.inf if s["sortino"] == "+inf" else s["sortino"],
            )
            for name, s in doc["summary"].items()
        }
        summary = {name: summary[name] for name in doc["curve_order"] if name in summary}
        return cls(
            version=doc["version"],
            config=doc["config"],
            timestamps=np.asarray(doc["timestamps"], dtype=np.int64),
            curves=curves,
            returns=np.asarray(doc["returns"]),
            events=[
                RebalanceEvent(
                    ts=e["ts"],
                    pre_value=e["pre_value"],
                    pre_weights=tuple(e["pre_weights"]),
                    target_weights=tuple(e["target_weights"]),
                    turnover=e["turnover"],
                    fee=e["fee"],
                    post_value=e["post_value"],
                )
                for e in doc["events"]
            ],
            action_logs={k: [(int(t), a) for t, a in v] for k, v in doc["action_logs"].items()},
            retrain_events=doc["retrain_events"],
            summary=summary,
        )


def _resolve_modules(source, assets: Sequence[str]) -> dict[str, CryptoModule]:
    if isinstance(source, CmRegistry):
        missing = [a for a in assets if a not in source]
        if missing:
            raise ConfigError(f"no module registered for: {', '.join(missing)}")
        return {a: source.load(a) for a in assets}
    modules = dict(source)
    missing = [a for a in assets if a not in modules]
    if missing:
        raise ConfigError(f"no module supplied for: {', '.join(missing)}")
    return {a: modules[a] for a in assets}


def retrain_boundaries(start_ts: int, end_ts: int, cadence_days: int) -> list[int]:
    """Boundary timestamps strictly inside (start, end) at the day cadence."""
    if cadence_days <= 0:
        return []
    step = cadence_days * metrics_mod.SECONDS_PER_DAY
    return list(range(start_ts + step, end_ts, step))


def _retrain_seed(seed: int, asset: str, boundary_ts: int) -> int:
    digest = hashlib.sha256(f"{seed}:{asset}:{boundary_ts}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def retrain_module(
    cm: CryptoModule, store: CsvStore, boundary_ts: int, fill_limit: int = DEFAULT_FILL_LIMIT
) -> CryptoModule:
    """Re-fit one module on an expanding window ending at the boundary.

    The training window keeps its original start; the validation window
    keeps its original duration, shifted to end at the boundary.
    Selection and rolling transforms are refit on data <= boundary only.
    """
    from .cryptomodule import train_cm

    val_span = cm.ranges.validation[1] - cm.ranges.validation[0]
    new_ranges = DataRanges(
        train=(cm.ranges.train[0], boundary_ts - val_span - cm.interval),
        validation=(boundary_ts - val_span, boundary_ts),
    )
    seed = _retrain_seed(cm.settings.train.seed, cm.asset.key, boundary_ts)
    settings = with_seed(cm.settings, seed)
    fresh = train_cm(store, cm.asset, new_ranges, settings, cm.use_eam, cm.interval, fill_limit)
    return replace(fresh, settings=cm.settings)  # keep the original seed for future boundaries


def retrain_schedule(
    modules, cadence_days: int, store: CsvStore, start_ts: int, end_ts: int,
    fill_limit: int = DEFAULT_FILL_LIMIT,
) -> tuple[dict[str, CryptoModule], list[dict]]:
    """Run every retrain boundary in order; returns (final modules, event log).

    A module whose retraining diverges is kept as-is and the event is
    logged; nothing else aborts the schedule.
    """
    if isinstance(modules, CmRegistry):
        modules = {a: modules.load(a) for a in modules.assets()}
    else:
        modules = dict(modules)
    events: list[dict] = []
    for boundary in retrain_boundaries(start_ts, end_ts, cadence_days):
        for asset in modules:
            modules[asset], event = _retrain_step(modules[asset], store, boundary, fill_limit)
            events.append(event)
    return modules, events


def _retrain_step(
    cm: CryptoModule, store: CsvStore, boundary: int, fill_limit: int
) -> tuple[CryptoModule, dict]:
    try:
        fresh = retrain_module(cm, store, boundary, fill_limit)
    except DivergenceError as exc:
        log.warning("retraining %s at ts=%d diverged, keeping previous module: %s", cm.asset.key, boundary, exc)
        return cm, {"ts": boundary, "asset": cm.asset.key, "status": "diverged-kept-previous"}
    log.info("retrained %s at ts=%d", cm.asset.key, boundary)
    return fresh, {"ts": boundary, "asset": cm.asset.key, "status": "retrained"}


def run_backtest(modules, cfg: BacktestConfig, store: CsvStore) -> BacktestReport:
    """Fee-aware portfolio backtest over aligned bars.

    `modules` is a CmRegistry or a mapping asset key -> trained module.
    Every bar is marked to market; every `rebalance_interval` bars the
    modules are queried, their votes averaged, and holdings re-split at
    the bar's close.  The value curve records post-rebalance values on
    decision bars.
    """
    active = _resolve_modules(modules, cfg.assets)
    n_bars = (cfg.end_ts - cfg.start_ts) // cfg.interval + 1
    grid = cfg.start_ts + cfg.interval * np.arange(n_bars, dtype=np.int64)

    frames = {}
    contexts = {}
    offsets = {}
    for asset in cfg.assets:
        cm = active[asset]
        if getattr(cm, "interval", cfg.interval) != cfg.interval:
            raise ConfigError(f"module for {asset} was trained at a different bar interval")
        lead = cm.warmup_bars * cfg.interval
        frame = store.align(AssetId.parse(asset), cfg.start_ts - lead, cfg.end_ts, cfg.interval, cfg.fill_limit)
        frames[asset] = frame
        contexts[asset] = cm.prepare(frame)
        offsets[asset] = frame.index_of(cfg.start_ts)

    closes = {a: frames[a].close for a in cfg.assets}
    boundaries = retrain_boundaries(cfg.start_ts, cfg.end_ts, cfg.retrain_days)
    pending = list(boundaries)

    holdings = Holdings(cfg.assets, tuple(0.0 for _ in cfg.assets), float(cfg.initial_capital))
    curve = np.empty(n_bars)
    events: list[RebalanceEvent] = []
    retrain_events: list[dict] = []
    action_logs: dict[str, list[tuple[int, str]]] = {a: [] for a in cfg.assets}

    for k in range(n_bars):
        ts = int(grid[k])
        prices = np.array([closes[a][offsets[a] + k] for a in cfg.assets])
        value = holdings.value(prices)
        if k % cfg.rebalance_interval == 0:
            while pending and ts >= pending[0]:
                boundary = pending.pop(0)
                for asset in cfg.assets:
                    active[asset], ev = _retrain_step(active[asset], store, boundary, cfg.fill_limit)
                    retrain_events.append(ev)
                    if ev["status"] == "retrained":
                        contexts[asset] = active[asset].prepare(frames[asset])
            actions = []
            for asset in cfg.assets:
                action = active[asset].allocate(contexts[asset], offsets[asset] + k)
                actions.append(action)
                action_logs[asset].append((ts, _ACTION_NAMES[action.index]))
            target = vote_weights(VoteSet(cfg.assets, tuple(actions)))
            holdings, event = rebalance(value, holdings.weights(prices), target, prices, cfg.fee_rate, ts)
            events.append(event)
            value = event.post_value
        curve[k] = value

    curves: dict[str, np.ndarray] = {"strategy": curve}
    for asset in cfg.assets:
        o = offsets[asset]
        name = _baseline_name(asset, cfg.assets)
        curves[name] = cfg.initial_capital * (closes[asset][o : o + n_bars] / closes[asset][o])

    summary = {name: metrics_mod.summarize(grid, vals) for name, vals in curves.items()}
    return BacktestReport(
        version=REPORT_VERSION,
        config=cfg.to_doc(),
        timestamps=grid,
        curves=curves,
        returns=curve[1:] / curve[:-1] - 1.0,
        events=events,
        action_logs=action_logs,
        retrain_events=retrain_events,
        summary=summary,
    )


def _baseline_name(asset: str, assets: Sequence[str]) -> str:
    """baseline_<sym>, falling back to the full key on symbol collisions."""
    sym = AssetId.parse(asset).symbol
    collisions = [a for a in assets if AssetId.parse(a).symbol == sym]
    return f"baseline_{sym}" if len(collisions) == 1 else f"baseline_{asset}"
