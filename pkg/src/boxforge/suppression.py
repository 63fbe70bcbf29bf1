"""Duplicate removal and box refinement: score floor, greedy NMS, Soft-NMS
and score-weighted bounding-box voting, all with per-class thresholds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .geometry import BBox

CLASSES = ("vehicle", "pedestrian", "cyclist")


@dataclass(frozen=True, slots=True)
class Detection:
    box: BBox
    score: float
    class_id: str
    image_id: str
    model_id: Optional[str] = None
    scale_tag: Optional[str] = None
    class_probs: Optional[tuple[float, ...]] = None
    # unknown JSON keys, carried through untouched
    extra: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must lie in [0, 1], got {self.score!r}")
        if self.class_id not in CLASSES:
            raise ValueError(f"unknown class {self.class_id!r}; expected one of {CLASSES}")


def _per_class(mapping, name, lo_open=True):
    out = dict(mapping)
    missing = [c for c in CLASSES if c not in out]
    if missing:
        raise ValueError(f"{name} is missing classes {missing}")
    for c, v in out.items():
        if c not in CLASSES:
            raise ValueError(f"{name}: unknown class {c!r}")
        if not (0.0 < v <= 1.0):
            raise ValueError(f"{name}[{c}] must lie in (0, 1], got {v!r}")
    return out


@dataclass(frozen=True)
class SuppressionConfig:
    """Per-class NMS/voting thresholds plus Soft-NMS settings.

    ``vote_iou`` defaults to ``nms_iou``. ``score_floor`` is applied by
    :func:`score_filter` and as the final cut of :func:`soft_nms`.
    """

    nms_iou: Mapping[str, float] = field(
        default_factory=lambda: {"vehicle": 0.7, "pedestrian": 0.5, "cyclist": 0.5}
    )
    vote_iou: Optional[Mapping[str, float]] = None
    score_floor: float = 0.03
    soft_mode: str = "linear"
    soft_sigma: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "nms_iou", _per_class(self.nms_iou, "nms_iou"))
        vote = self.nms_iou if self.vote_iou is None else self.vote_iou
        object.__setattr__(self, "vote_iou", _per_class(vote, "vote_iou"))
        if not (0.0 <= self.score_floor < 1.0):
            raise ValueError(f"score_floor must lie in [0, 1), got {self.score_floor!r}")
        if self.soft_mode not in ("linear", "gaussian"):
            raise ValueError(f"soft_mode must be 'linear' or 'gaussian', got {self.soft_mode!r}")
        if not (self.soft_sigma > 0.0 and math.isfinite(self.soft_sigma)):
            raise ValueError(f"soft_sigma must be positive, got {self.soft_sigma!r}")


def score_filter(dets: Sequence[Detection], floor: float) -> list[Detection]:
    return [d for d in dets if d.score >= floor]


def _check_single_image(dets):
    ids = {d.image_id for d in dets}
    if len(ids) > 1:
        raise ValueError(f"expected detections from one image, got {len(ids)} image ids")


def _group_by_class(dets):
    groups = {}
    for idx, d in enumerate(dets):
        groups.setdefault(d.class_id, []).append(idx)
    return groups


def _arrays(dets, idxs):
    boxes = np.array([dets[i].box.as_tuple() for i in idxs], dtype=np.float64).reshape(-1, 4)
    scores = np.array([dets[i].score for i in idxs], dtype=np.float64)
    return boxes, scores


def _rank(dets, picks):
    """Sort (input_index, detection) pairs by score desc, ties by input index."""
    picks.sort(key=lambda p: (-p[1].score, p[0]))
    return [d for _, d in picks]


def nms(dets: Sequence[Detection], cfg: SuppressionConfig) -> list[Detection]:
    """Greedy per-class NMS for the detections of one image.

    Within a class the highest-scoring remaining box is kept and every box
    with IoU ``>=`` the class threshold against it is discarded. Score ties
    are visited in input order. The result is sorted by score descending.
    """
    dets = list(dets)
    _check_single_image(dets)
    if not dets:
        return []
    boxes, scores = _arrays(dets, range(len(dets)))
    kept = []
    for cls, idxs in _group_by_class(dets).items():
        idx = np.asarray(idxs, dtype=np.int64)
        order = idx[np.argsort(-scores[idx], kind="stable")]
        kept.append(kernels.nms_keep(boxes, order, cfg.nms_iou[cls]))
    keep = np.concatenate(kept)
    # score descending, ties by input index
    keep = keep[np.lexsort((keep, -scores[keep]))]
    return [dets[i] for i in keep.tolist()]


def soft_nms(dets: Sequence[Detection], cfg: SuppressionConfig) -> list[Detection]:
    """Per-class Soft-NMS.

    Linear mode multiplies a neighbour's score by ``1 - iou`` when the IoU
    reaches the class threshold; gaussian mode multiplies every neighbour by
    ``exp(-iou**2 / sigma)``. Boxes whose decayed score ends below
    ``cfg.score_floor`` are dropped.
    """
    dets = list(dets)
    _check_single_image(dets)
    mode = kernels.LINEAR if cfg.soft_mode == "linear" else kernels.GAUSSIAN
    picks = []
    for cls, idxs in _group_by_class(dets).items():
        boxes, scores = _arrays(dets, idxs)
        selected, new_scores = kernels.soft_nms(
            boxes, scores, cfg.nms_iou[cls], mode, cfg.soft_sigma, cfg.score_floor
        )
        for k in selected.tolist():
            d = dets[idxs[k]]
            picks.append((idxs[k], replace(d, score=float(new_scores[k]))))
    return _rank(dets, picks)


def box_voting(
    kept: Sequence[Detection], pool: Sequence[Detection], cfg: SuppressionConfig
) -> list[Detection]:
    """Replace each kept box by the score-weighted mean of its voters.

    Voters are the same-image, same-class pool detections whose IoU with
    the kept box reaches the class voting threshold (a coordinate-identical
    pool box always votes). Scores and list order are left untouched.
    """
    kept = list(kept)
    out = list(kept)
    pool_groups = {}
    for p in pool:
        pool_groups.setdefault((p.image_id, p.class_id), []).append(p)
    kept_groups = {}
    for i, d in enumerate(kept):
        kept_groups.setdefault((d.image_id, d.class_id), []).append(i)

    for key, idxs in kept_groups.items():
        voters = pool_groups.get(key, [])
        kboxes = np.array([kept[i].box.as_tuple() for i in idxs], dtype=np.float64)
        pboxes = np.array([p.box.as_tuple() for p in voters], dtype=np.float64).reshape(-1, 4)
        pscores = np.array([p.score for p in voters], dtype=np.float64)
        voted, counts = kernels.box_vote(kboxes, pboxes, pscores, cfg.vote_iou[key[1]])
        for row, i in enumerate(idxs):
            if counts[row] == 0:
                raise ValueError(
                    f"kept detection {kept[i].box} in image {key[0]!r} has no voters in the pool"
                )
            out[i] = replace(kept[i], box=BBox(*voted[row].tolist()))
    return out
