"""meme-embed: batch image/text embedding into the toolkit's file formats."""

__version__ = "0.1.0"

from .encoders import EncoderConfig, build_encoder  # noqa: F401
from .pipeline import embed_images, embed_texts  # noqa: F401
