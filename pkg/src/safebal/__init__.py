"""safebal: safety prediction on imbalanced flight telemetry via
uncertainty-guided label rebalancing."""

__version__ = "0.1.0"
