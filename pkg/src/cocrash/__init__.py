"""Co-jump detection and systemic flash-crash analysis for minute-bar panels."""
__version__ = "0.1.0"

from .cojump import CoCrashEvent, CrashFrequencyTable, build_frequency_table, group_events
from .jumps import DetectorConfig, JumpEvent, detect_jumps, detect_panel
from .marketdata import PricePanel, ReturnSeries, SessionConfig, align, ingest_csv, load_panel
from .nullmodel import NullDistribution, ShuffleWeights, build_null, significance
from .ranks import RankVector, correlation_curves, rank_assets, spearman, steady_state

__all__ = [
    "CoCrashEvent", "CrashFrequencyTable", "DetectorConfig", "JumpEvent", "NullDistribution",
    "PricePanel", "RankVector", "ReturnSeries", "SessionConfig", "ShuffleWeights", "align",
    "build_frequency_table", "build_null", "correlation_curves", "detect_jumps", "detect_panel",
    "group_events", "ingest_csv", "load_panel", "rank_assets", "significance", "spearman",
    "steady_state",
]
