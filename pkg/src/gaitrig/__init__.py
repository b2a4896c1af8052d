"""gaitrig: multi-view skeleton fusion and skeleton-based gait recognition."""

__version__ = "0.1.0"
