"""Python access to the fsrel command surface and a few numerical helpers."""

import json

from ._fsrel import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_NUMERICAL,
    EXIT_OK,
    ConfigError,
    ContractViolation,
    FsrelError,
    IntegrityError,
    ParseError,
    VocabularyError,
    average_metric,
    reweighted_metric,
    run,
    support_weights,
)
from . import _fsrel

__all__ = [
    "EXIT_CONFIG",
    "EXIT_DATA",
    "EXIT_NUMERICAL",
    "EXIT_OK",
    "ConfigError",
    "ContractViolation",
    "FsrelError",
    "IntegrityError",
    "ParseError",
    "VocabularyError",
    "average_metric",
    "generate_world",
    "reweighted_metric",
    "run",
    "support_weights",
    "validate_dataset",
]


def generate_world(world_config=None, seed=1):
    """Returns (dataset, metadata) dicts for a synthetic world."""
    ds, meta = _fsrel.generate_world(json.dumps(world_config or {}), seed)
    return json.loads(ds), json.loads(meta)


def validate_dataset(dataset):
    """Parses and validates a dataset dict; returns its sizes."""
    return _fsrel.validate_dataset(json.dumps(dataset))
