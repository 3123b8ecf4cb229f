"""Per-AP load derivation, feature-based clustering, and selective LSTM forecaster deployment."""

__version__ = "0.1.0"
