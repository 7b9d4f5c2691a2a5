"""chainfolio: an offline, deterministic crypto portfolio pipeline.

Per-asset on-chain metrics are screened by correlation with future
returns, compressed by rolling normalization and rolling PCA, fed to
per-asset reinforcement-learning trading modules, and composed into a
portfolio by vote averaging inside a fee-aware backtester that reports
ARR, DRR, and Sortino against buy-and-hold baselines.
"""

from .config import RunConfig, load_config, parse_ts
from .cryptomodule import (
    AllocationAction,
    CmSettings,
    CryptoModule,
    DataRanges,
    RewardConfig,
    TradingSignal,
    build_eam_state,
    build_sam_state,
    eam_reward,
    infer_allocation,
    load_cm,
    sam_step,
    save_cm,
    train_cm,
    train_cm_from_frame,
)
from .datastore import AlignedFrame, AssetId, Bar, CsvStore, LocalFileSource, MetricPoint
from .errors import ChainfolioError, ConfigError, DataError, SerializationError
from .metrics import ReturnSeries, SummaryStats, arr, drr, emit_report, sortino, summarize
from .portfolio import (
    BacktestConfig,
    BacktestReport,
    CmRegistry,
    Holdings,
    PortfolioWeights,
    RebalanceEvent,
    VoteSet,
    add_cm,
    rebalance,
    remove_cm,
    retrain_schedule,
    run_backtest,
    vote_weights,
)
from .refinery import (
    CorrelationTable,
    HorizonConfig,
    RefinedFeatureFrame,
    SelectedMetricSet,
    correlation_table,
    k_period_returns,
    pearson,
    refine_features,
    rolling_normalize,
    rolling_pca,
    select_valid_metrics,
)
from .rlcore import QNetwork, ReplayBuffer, TrainConfig, Transition, build_qnetwork

__version__ = "0.1.0"

__all__ = [
    "AlignedFrame",
    "AllocationAction",
    "AssetId",
    "BacktestConfig",
    "BacktestReport",
    "Bar",
    "ChainfolioError",
    "CmRegistry",
    "CmSettings",
    "ConfigError",
    "CorrelationTable",
    "CryptoModule",
    "CsvStore",
    "DataError",
    "DataRanges",
    "Holdings",
    "HorizonConfig",
    "LocalFileSource",
    "MetricPoint",
    "PortfolioWeights",
    "QNetwork",
    "RebalanceEvent",
    "RefinedFeatureFrame",
    "ReplayBuffer",
    "ReturnSeries",
    "RewardConfig",
    "RunConfig",
    "SelectedMetricSet",
    "SerializationError",
    "SummaryStats",
    "TradingSignal",
    "TrainConfig",
    "Transition",
    "VoteSet",
    "add_cm",
    "arr",
    "build_eam_state",
    "build_qnetwork",
    "build_sam_state",
    "correlation_table",
    "drr",
    "eam_reward",
    "emit_report",
    "infer_allocation",
    "k_period_returns",
    "load_cm",
    "load_config",
    "parse_ts",
    "pearson",
    "rebalance",
    "refine_features",
    "remove_cm",
    "retrain_schedule",
    "rolling_normalize",
    "rolling_pca",
    "run_backtest",
    "sam_step",
    "save_cm",
    "select_valid_metrics",
    "sortino",
    "summarize",
    "train_cm",
    "train_cm_from_frame",
    "vote_weights",
]
