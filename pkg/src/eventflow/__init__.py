"""Event-aware traffic flow forecasting with text context."""

__version__ = "0.1.0"
