"""Bounding-box trajectory forecasting from box geometry alone.

The package observes k consecutive bounding boxes of a tracked pedestrian
and forecasts the next p boxes on the image plane. It is numpy-only: the
LSTM forward and backward passes, the optimizer, data handling, training,
evaluation and the command line all live here with no deep-learning
framework underneath.
"""

from .errors import (
    BoxcastError,
    ConfigError,
    DataError,
    NumericError,
    ParseError,
    ShapeError,
)

__version__ = "0.1.0"

__all__ = [
    "BoxcastError",
    "ConfigError",
    "DataError",
    "NumericError",
    "ParseError",
    "ShapeError",
    "__version__",
]
