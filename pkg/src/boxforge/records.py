"""JSON Lines records for detections, ground truth and image metadata,
plus a one-shot COCO-style converter.

Parsing is strict: a malformed line raises :class:`RecordError` carrying
its line number. Numbers round-trip exactly (floats are written with
``repr``, which Python parses back to the same value).
"""
from __future__ import annotations

import json
import math
from typing import Any, Iterable, Iterator, Sequence, TextIO

from .geometry import BBox, ImageShape
from .evaluation import GroundTruthBox
from .sampling import ImageRecord
from .suppression import CLASSES, Detection

_DET_KEYS = ("image_id", "class", "x1", "y1", "x2", "y2", "score", "model_id", "scale_tag", "class_probs")
_GT_KEYS = ("image_id", "class", "x1", "y1", "x2", "y2", "difficulty")


class RecordError(ValueError):
    def __init__(self, msg, lineno=None, source=None):
        self.lineno = lineno
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if lineno is not None:
            where += f"{lineno}: "
        elif where:
            where += " "
        super().__init__(where + msg)


def _num(obj, key, required=True):
    if key not in obj:
        if required:
            raise ValueError(f"missing field {key!r}")
        return None
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"field {key!r} must be a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"field {key!r} must be finite")
    return v


def _str(obj, key, required=True):
    if key not in obj or obj[key] is None:
        if required:
            raise ValueError(f"missing field {key!r}")
        return None
    v = obj[key]
    if not isinstance(v, str):
        raise ValueError(f"field {key!r} must be a string, got {v!r}")
    return v


def _class(obj):
    c = _str(obj, "class")
    if c not in CLASSES:
        raise ValueError(f"unknown class {c!r}; expected one of {list(CLASSES)}")
    return c


def _box(obj):
    return BBox(_num(obj, "x1"), _num(obj, "y1"), _num(obj, "x2"), _num(obj, "y2"))


def detection_from_dict(obj: dict) -> Detection:
    if not isinstance(obj, dict):
        raise ValueError("record must be a JSON object")
    probs = obj.get("class_probs")
    if probs is not None:
        if not isinstance(probs, list) or any(
            isinstance(p, bool) or not isinstance(p, (int, float)) for p in probs
        ):
            raise ValueError("class_probs must be an array of numbers")
        probs = tuple(float(p) for p in probs)
    return Detection(
        box=_box(obj),
        score=_num(obj, "score"),
        class_id=_class(obj),
        image_id=_str(obj, "image_id"),
        model_id=_str(obj, "model_id", required=False),
        scale_tag=_str(obj, "scale_tag", required=False),
        class_probs=probs,
        extra={k: v for k, v in obj.items() if k not in _DET_KEYS},
    )


def detection_to_dict(d: Detection) -> dict:
    out = {
        "image_id": d.image_id,
        "class": d.class_id,
        "x1": d.box.x1,
        "y1": d.box.y1,
        "x2": d.box.x2,
        "y2": d.box.y2,
        "score": d.score,
    }
    if d.model_id is not None:
        out["model_id"] = d.model_id
    if d.scale_tag is not None:
        out["scale_tag"] = d.scale_tag
    if d.class_probs is not None:
        out["class_probs"] = list(d.class_probs)
    for k in sorted(d.extra):
        out[k] = d.extra[k]
    return out


def gt_from_dict(obj: dict) -> GroundTruthBox:
    if not isinstance(obj, dict):
        raise ValueError("record must be a JSON object")
    diff = obj.get("difficulty", 2)
    if isinstance(diff, bool) or diff not in (1, 2):
        raise ValueError(f"difficulty must be 1 or 2, got {diff!r}")
    return GroundTruthBox(_box(obj), _class(obj), _str(obj, "image_id"), int(diff))


def gt_to_dict(g: GroundTruthBox) -> dict:
    return {
        "image_id": g.image_id,
        "class": g.class_id,
        "x1": g.box.x1,
        "y1": g.box.y1,
        "x2": g.box.x2,
        "y2": g.box.y2,
        "difficulty": g.difficulty,
    }


def image_record_from_dict(obj: dict) -> ImageRecord:
    if not isinstance(obj, dict):
        raise ValueError("record must be a JSON object")
    w, h = _num(obj, "width"), _num(obj, "height")
    if w != int(w) or h != int(h):
        raise ValueError("width and height must be integers")
    anns = obj.get("annotations", [])
    if not isinstance(anns, list):
        raise ValueError("annotations must be an array")
    return ImageRecord(
        _str(obj, "image_id"),
        ImageShape(int(w), int(h)),
        tuple((_box(a), _class(a)) for a in anns),
    )


def dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, allow_nan=False)


def iter_json_lines(stream: TextIO, source: str | None = None) -> Iterator[tuple[int, Any]]:
    for lineno, line in enumerate(stream, 1):
        if not line.strip():
            continue
        try:
            yield lineno, json.loads(line)
        except json.JSONDecodeError as exc:
            raise RecordError(f"invalid JSON ({exc.msg})", lineno, source) from None


def _read(stream, parse, source):
    out = []
    for lineno, obj in iter_json_lines(stream, source):
        try:
            out.append(parse(obj))
        except (ValueError, TypeError) as exc:
            raise RecordError(str(exc), lineno, source) from None
    return out


def read_detections(stream: TextIO, source: str | None = None) -> list[Detection]:
    return _read(stream, detection_from_dict, source)


def read_ground_truth(stream: TextIO, source: str | None = None) -> list[GroundTruthBox]:
    return _read(stream, gt_from_dict, source)


def read_image_records(stream: TextIO, source: str | None = None) -> list[ImageRecord]:
    return _read(stream, image_record_from_dict, source)


def write_lines(stream: TextIO, objs: Iterable[dict]) -> None:
    for obj in objs:
        stream.write(dumps(obj))
        stream.write("\n")


def write_detections(stream: TextIO, dets: Iterable[Detection]) -> None:
    write_lines(stream, (detection_to_dict(d) for d in dets))


# COCO-style single-document interop. Category ids follow CLASSES order, 1-based.

def _cat_id(cls):
    return CLASSES.index(cls) + 1


def _cat_name(cat_id):
    if not (1 <= cat_id <= len(CLASSES)):
        raise ValueError(f"unknown category id {cat_id!r}")
    return CLASSES[cat_id - 1]


def detections_to_coco(dets: Sequence[Detection]) -> list[dict]:
    """COCO results list: ``bbox`` is ``[x, y, w, h]``."""
    return [
        {
            "image_id": d.image_id,
            "category_id": _cat_id(d.class_id),
            "bbox": [d.box.x1, d.box.y1, d.box.x2 - d.box.x1, d.box.y2 - d.box.y1],
            "score": d.score,
        }
        for d in dets
    ]


def detections_from_coco(results: Sequence[dict]) -> list[Detection]:
    out = []
    for r in results:
        x, y, w, h = (float(v) for v in r["bbox"])
        out.append(
            Detection(
                box=BBox(x, y, x + w, y + h),
                score=float(r["score"]),
                class_id=_cat_name(int(r["category_id"])),
                image_id=str(r["image_id"]),
            )
        )
    return out


def ground_truth_to_coco(gts: Sequence[GroundTruthBox]) -> dict:
    images = sorted({g.image_id for g in gts})
    return {
        "images": [{"id": i} for i in images],
        "categories": [{"id": _cat_id(c), "name": c} for c in CLASSES],
        "annotations": [
            {
                "id": k + 1,
                "image_id": g.image_id,
                "category_id": _cat_id(g.class_id),
                "bbox": [g.box.x1, g.box.y1, g.box.x2 - g.box.x1, g.box.y2 - g.box.y1],
                "difficulty": g.difficulty,
            }
            for k, g in enumerate(gts)
        ],
    }


def ground_truth_from_coco(doc: dict) -> list[GroundTruthBox]:
    names = {c["id"]: c["name"] for c in doc.get("categories", [])}
    out = []
    for a in doc["annotations"]:
        x, y, w, h = (float(v) for v in a["bbox"])
        cls = names.get(a["category_id"]) or _cat_name(int(a["category_id"]))
        out.append(GroundTruthBox(BBox(x, y, x + w, y + h), cls, str(a["image_id"]), int(a.get("difficulty", 2))))
    return out
