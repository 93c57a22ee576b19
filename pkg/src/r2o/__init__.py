"""Right-to-Override gating engine and urban control simulators."""

__version__ = "0.1.0"
