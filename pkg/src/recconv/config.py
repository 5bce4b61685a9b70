"""JSON config files describing either a bare RecConv or a whole model.

Grammar (one JSON object, no other keys allowed)::

    {"kind": "recconv", "channels": int, "kernel": odd int, "levels": int,
     "aggregation": "parallel"|"recurrent", "upsample": "bilinear"|"nearest"|
     "transposed_dwconv", "seed": uint64}

    {"kind": "model", "channels": [int]*S, "depths": [int]*S,
     "kernel": odd int | [odd int]*S, "levels": [int]*S, "expansion": int,
     "aggregation": ..., "upsample": ..., "seed": uint64}

``kind``, ``channels`` and ``levels`` are required (plus ``depths`` for a
model); everything else has a default.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

from .blocks import ModelConfig
from .errors import ConfigError
from .recursive import RecConvConfig

_COMMON = {"kind", "channels", "kernel", "levels", "aggregation", "upsample", "seed"}
KEYS = {"recconv": _COMMON, "model": _COMMON | {"depths", "expansion"}}
REQUIRED = {"recconv": {"channels", "levels"}, "model": {"channels", "depths", "levels"}}


@dataclass(frozen=True)
class LoadedConfig:
    kind: str
    cfg: Union[RecConvConfig, ModelConfig]
    seed: int


def _int(doc, key, default=None):
    v = doc.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"key {key!r} must be an integer, got {v!r}")
    return v


def _int_list(doc, key):
    v = doc[key]
    if not isinstance(v, list) or any(isinstance(e, bool) or not isinstance(e, int) for e in v):
        raise ConfigError(f"key {key!r} must be a list of integers, got {v!r}")
    return v


def _str(doc, key, default):
    v = doc.get(key, default)
    if not isinstance(v, str):
        raise ConfigError(f"key {key!r} must be a string, got {v!r}")
    return v


def parse_config(text: str) -> LoadedConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    kind = doc.get("kind")
    if kind not in KEYS:
        raise ConfigError(f"key 'kind' must be 'recconv' or 'model', got {kind!r}")
    unknown = sorted(set(doc) - KEYS[kind])
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} for kind {kind!r}")
    missing = sorted(REQUIRED[kind] - set(doc))
    if missing:
        raise ConfigError(f"missing required key {missing[0]!r}")

    seed = _int(doc, "seed", 0)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("key 'seed' must be a 64-bit unsigned integer")
    aggregation = _str(doc, "aggregation", "parallel")
    upsample = _str(doc, "upsample", "bilinear")
    if kind == "recconv":
        cfg = RecConvConfig(
            _int(doc, "channels"), _int(doc, "kernel", 5), _int(doc, "levels"), aggregation, upsample
        )
    else:
        kernel = doc.get("kernel", 5)
        kernel = _int_list(doc, "kernel") if isinstance(kernel, list) else _int(doc, "kernel", 5)
        cfg = ModelConfig.from_lists(
            _int_list(doc, "channels"), _int_list(doc, "depths"), kernel, _int_list(doc, "levels"),
            expansion=_int(doc, "expansion", 2), seed=seed,
            aggregation=aggregation, upsample=upsample,
        )
    return LoadedConfig(kind, cfg, seed)


def load_config(path) -> LoadedConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)
