"""Fair-delay multi-robot navigation: simulation, cooperation protocol,
reinforcement learning pipeline, and evaluation tooling."""

__version__ = "0.1.0"
