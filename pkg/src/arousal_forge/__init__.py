"""arousal-forge: arousal models learned from the pixels and sounds of gameplay footage."""

__version__ = "0.1.0"
