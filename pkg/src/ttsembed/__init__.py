"""Speaker embeddings learned by multi-speaker TTS reconstruction."""

__version__ = "0.1.0"
