"""Cross-modal face/voice embedding alignment and cross-lingual evaluation."""

__version__ = "0.1.0"
