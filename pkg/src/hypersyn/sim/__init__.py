"""Deterministic discrete-event simulation of Hypersyn networks."""

from .config import ScenarioConfig
from .metrics import MetricsFrame, snapshot_metrics, write_outputs
from .world import World, build, consumer_quote

__all__ = ["ScenarioConfig", "MetricsFrame", "World", "build", "consumer_quote", "snapshot_metrics", "write_outputs"]
