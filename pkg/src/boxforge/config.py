"""Pipeline configuration file: one JSON document, every field optional.

Missing sections or fields fall back to the recipe defaults (score floor
0.03, NMS 0.7/0.5/0.5, T=2, decay 0.6, small sides 67/57/57, theta0 0.5,
canonical size 76).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import jsonschema

from .evaluation import EvalConfig
from .fusion import CalibrationConfig, EnsembleConfig, ScaleAwareConfig
from .pyramid import LevelAssignConfig
from .suppression import SuppressionConfig

_unit = {"type": "number", "exclusiveMinimum": 0, "maximum": 1}
_per_class_unit = {
    "type": "object",
    "properties": {c: _unit for c in ("vehicle", "pedestrian", "cyclist")},
    "additionalProperties": False,
}
_per_class_pos = {
    "type": "object",
    "properties": {c: {"type": "number", "exclusiveMinimum": 0} for c in ("vehicle", "pedestrian", "cyclist")},
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "suppression": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "nms_iou": _per_class_unit,
                "vote_iou": _per_class_unit,
                "score_floor": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "soft_mode": {"enum": ["linear", "gaussian"]},
                "soft_sigma": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "scale_aware": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "small_side": _per_class_pos,
                "small_pass_decay": _unit,
                "large_pass_decay": _unit,
                "small_pass_tag": {"type": "string"},
                "large_pass_tag": {"type": "string"},
            },
        },
        "calibration": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"temperature": {"type": "number", "exclusiveMinimum": 0}},
        },
        "ensemble": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "theta0": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "per_class": {"type": "boolean"},
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "match_iou": _per_class_unit,
                "level": {"enum": [1, 2]},
                "ap_mode": {"enum": ["interp101", "exact"]},
            },
        },
        "level_assign": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k0": {"type": "integer"},
                "canonical": {"type": "number", "exclusiveMinimum": 0},
                "min_level": {"type": "integer"},
                "max_level": {"type": "integer"},
            },
        },
    },
}


@dataclass(frozen=True)
class PipelineConfig:
    suppression: SuppressionConfig = field(default_factory=SuppressionConfig)
    scale_aware: ScaleAwareConfig = field(default_factory=ScaleAwareConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    level_assign: LevelAssignConfig = field(default_factory=LevelAssignConfig)


def _merge(defaults: dict, given: dict | None) -> dict:
    out = dict(defaults)
    for k, v in (given or {}).items():
        out[k] = {**out[k], **v} if isinstance(out.get(k), dict) and isinstance(v, dict) else v
    return out


def config_from_dict(doc: dict) -> PipelineConfig:
    jsonschema.validate(doc, SCHEMA)
    sup = SuppressionConfig()
    sup_doc = doc.get("suppression", {})
    sup_kw = _merge({"nms_iou": dict(sup.nms_iou)}, sup_doc)
    if "vote_iou" in sup_doc:
        # partial vote maps fill in from the (merged) NMS thresholds
        sup_kw["vote_iou"] = {**sup_kw["nms_iou"], **sup_doc["vote_iou"]}
    sa = _merge({"small_side": dict(ScaleAwareConfig().small_side)}, doc.get("scale_aware"))
    ev = _merge({"match_iou": dict(EvalConfig().match_iou)}, doc.get("eval"))
    return PipelineConfig(
        suppression=SuppressionConfig(**sup_kw),
        scale_aware=ScaleAwareConfig(**sa),
        calibration=CalibrationConfig(**doc.get("calibration", {})),
        ensemble=EnsembleConfig(**doc.get("ensemble", {})),
        eval=EvalConfig(**ev),
        level_assign=LevelAssignConfig(**doc.get("level_assign", {})),
    )


def load_config(path) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def config_to_dict(cfg: PipelineConfig) -> dict:
    s, a, e, lv = cfg.suppression, cfg.scale_aware, cfg.eval, cfg.level_assign
    return {
        "suppression": {
            "nms_iou": dict(s.nms_iou),
            "vote_iou": dict(s.vote_iou),
            "score_floor": s.score_floor,
            "soft_mode": s.soft_mode,
            "soft_sigma": s.soft_sigma,
        },
        "scale_aware": {
            "small_side": dict(a.small_side),
            "small_pass_decay": a.small_pass_decay,
            "large_pass_decay": a.large_pass_decay,
            "small_pass_tag": a.small_pass_tag,
            "large_pass_tag": a.large_pass_tag,
        },
        "calibration": {"temperature": cfg.calibration.temperature},
        "ensemble": {"theta0": cfg.ensemble.theta0, "per_class": cfg.ensemble.per_class},
        "eval": {"match_iou": dict(e.match_iou), "level": e.level, "ap_mode": e.ap_mode},
        "level_assign": {
            "k0": lv.k0,
            "canonical": lv.canonical,
            "min_level": lv.min_level,
            "max_level": lv.max_level,
        },
    }
