"""Multi-zone VNF orchestration and HSS front-end isolation experiments."""

from .analysis import candlestick, dominance_report, ecdf, grubbs_filter
from .discovery import DiscoveryEngine
from .orchestrator import Orchestrator, decompose, recompose
from .sim import Engine, RngStream
from .template import lifecycle_order, parse, serialize, validate

__version__ = "0.1.0"

__all__ = [
    "DiscoveryEngine", "Engine", "Orchestrator", "RngStream", "candlestick", "decompose",
    "dominance_report", "ecdf", "grubbs_filter", "lifecycle_order", "parse", "recompose",
    "serialize", "validate",
]
