"""chainlens: Bitcoin chain parsing, graph construction and forensic analytics."""

__version__ = "0.1.0"
