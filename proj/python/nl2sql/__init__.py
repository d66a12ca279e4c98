"""Sketch-based natural-language-to-SQL parser.

Sketches are WikiSQL "sql" dicts: {"sel": int, "agg": int, "conds": [[col, op, value], ...]}.
"""

import json
import os

from ._core import (
    CheckpointError,
    ConfigError,
    ContractError,
    DimensionError,
    Examples,
    ExecutionError,
    LoadError,
    Model,
    SchemaError,
    Tables,
    TrainingError,
    gradcheck,
    tokenize,
    where_column_loss,
    write_synthetic_dataset,
)
from . import _core

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DimensionError",
    "Examples",
    "ExecutionError",
    "LoadError",
    "Model",
    "SchemaError",
    "Tables",
    "TrainingError",
    "canonical_string",
    "evaluate",
    "evaluate_predictions",
    "execute",
    "gradcheck",
    "predict",
    "sketches_match",
    "tokenize",
    "train",
    "where_column_loss",
    "write_synthetic_dataset",
]


def _dump(sketch):
    return sketch if isinstance(sketch, str) else json.dumps(sketch)


def predict(model, question, tables, table_id):
    """Returns {"sql": sketch, "query": canonical string, "truncated": bool}."""
    sketch_json, truncated = model.predict_json(question, tables, table_id)
    return {
        "sql": json.loads(sketch_json),
        "query": _core.canonical_string(sketch_json, tables, table_id),
        "truncated": truncated,
    }


def evaluate(model, examples, tables):
    return json.loads(model.evaluate_json(examples, tables))


def evaluate_predictions(predictions, examples, tables):
    return json.loads(_core.evaluate_predictions_json([_dump(p) for p in predictions], examples, tables))


def execute(sketch, tables, table_id):
    return _core.execute(_dump(sketch), tables, table_id)


def canonical_string(sketch, tables, table_id):
    return _core.canonical_string(_dump(sketch), tables, table_id)


def sketches_match(a, b, tables, table_id):
    return _core.sketches_match(_dump(a), _dump(b), tables, table_id)


def train(config, on_epoch=None):
    """Trains from a config dict or a path to a JSON config file."""
    if isinstance(config, (str, os.PathLike)):
        with open(config) as f:
            text = f.read()
    else:
        text = json.dumps(config)
    summary = _core.train_json(text, on_epoch)
    for epoch in summary["epochs"]:
        if epoch["dev"] is not None:
            epoch["dev"] = json.loads(epoch["dev"])
    if summary["best_dev"] is not None:
        summary["best_dev"] = json.loads(summary["best_dev"])
    return summary
