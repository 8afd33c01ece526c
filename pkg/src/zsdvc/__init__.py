"""Zero-shot dense video captioning by test-time optimization of soft moment masks."""

__version__ = "0.1.0"
