"""Python front end for the cnx compression core."""

import json

from . import _cnx
from ._cnx import CnxError, Model, deserialize, load, quantize_model, quantize_weights, l1_prune, random_prune, count_groups

__all__ = [
    "CnxError", "Model", "build", "load", "deserialize", "profile", "compare", "quantize_model",
    "quantize_weights", "l1_prune", "random_prune", "count_groups", "run_pipeline",
]


def build(config="micro", seed=0):
    """Build a ConvNeXt from a preset name or a config dict."""
    cfg = {"preset": config} if isinstance(config, str) else config
    return _cnx.build_convnext(json.dumps(cfg), seed)


def profile(model, convention="fp32_only", data=""):
    return json.loads(_cnx.profile(model, convention, data))


def compare(before, after):
    return json.loads(_cnx.compare(json.dumps(before), json.dumps(after)))


def run_pipeline(spec, model, data="synthetic:500:0"):
    """Returns (report dict without timing, compressed model)."""
    text, out = _cnx.run_pipeline(json.dumps(spec), model, data)
    return json.loads(text), out
