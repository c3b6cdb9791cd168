"""ProtoEHR - hierarchical prototype learning for EHR-based healthcare prediction."""

__version__ = "0.3.0"
