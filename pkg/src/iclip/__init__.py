"""Zero-shot person action detection from frozen image/text embeddings.

Person features are enriched by attention over other persons, nearby
objects, the frame context and neighbouring frames; each label embedding is
then conditioned on the person it is scored against, and the final decision
is a temperature-scaled cosine similarity.
"""

from .errors import DimensionError, FixtureParseError, FormatError, ICLIPError, NumericError, UsageError
from .model import ICLIPModel

__all__ = ["ICLIPModel", "ICLIPError", "UsageError", "DimensionError", "FixtureParseError",
           "FormatError", "NumericError"]
__version__ = "0.1.0"
