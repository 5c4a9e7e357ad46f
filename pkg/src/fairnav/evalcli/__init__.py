from .metrics import MetricsReport, evaluate
from .plotting import render_trace

__all__ = ["MetricsReport", "evaluate", "render_trace"]
