"""Look-back horizon selection for federated time-series forecasting."""

__version__ = "0.1.0"
