"""Python bindings for the dcasr pipeline."""

import json as _json
import os as _os

from . import _core
from ._core import Error, SrModel, arp, mrr_at_k, recall_at_k, select_response, simulate_log, stages

__all__ = [
    "Error",
    "SrModel",
    "arp",
    "config_fingerprint",
    "effective_config",
    "mrr_at_k",
    "recall_at_k",
    "run_stage",
    "select_response",
    "simulate_log",
    "stages",
]


def _config_text(config):
    if config is None:
        return "{}"
    if isinstance(config, dict):
        return _json.dumps(config)
    if isinstance(config, (str, _os.PathLike)) and _os.path.exists(config):
        with open(config, encoding="utf-8") as f:
            return f.read()
    raise ValueError("config must be a dict, a path to a JSON file, or None")


def run_stage(stage, config=None, seed=None, out=None):
    """Run a pipeline stage and return its report as a dict."""
    return _json.loads(_core.run_stage(_config_text(config), stage, seed, None if out is None else str(out)))


def effective_config(config=None):
    return _json.loads(_core.effective_config(_config_text(config)))


def config_fingerprint(config=None):
    return _core.fingerprint(_config_text(config))
