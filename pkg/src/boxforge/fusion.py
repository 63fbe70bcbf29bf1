"""Score manipulation across test-time passes and models.

Recommended order for a full recipe: calibrate -> scale-aware decay /
merge passes -> rank weights -> pool -> NMS -> voting. Nothing here
enforces that order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .geometry import BBox, ImageShape, area, hflip
from .suppression import CLASSES, Detection, SuppressionConfig, box_voting, nms


@dataclass(frozen=True)
class CalibrationConfig:
    temperature: float = 2.0

    def __post_init__(self):
        if not (self.temperature > 0.0 and math.isfinite(self.temperature)):
            raise ValueError(f"temperature must be positive and finite, got {self.temperature!r}")


@dataclass(frozen=True)
class ScaleAwareConfig:
    small_side: Mapping[str, float] = field(
        default_factory=lambda: {"vehicle": 67.0, "pedestrian": 57.0, "cyclist": 57.0}
    )
    small_pass_decay: float = 0.6
    large_pass_decay: float = 0.6
    small_pass_tag: str = "s1280"
    large_pass_tag: str = "s2240"

    def __post_init__(self):
        sides = dict(self.small_side)
        for c in CLASSES:
            if c not in sides:
                raise ValueError(f"small_side is missing class {c!r}")
            if not sides[c] > 0:
                raise ValueError(f"small_side[{c}] must be positive, got {sides[c]!r}")
        object.__setattr__(self, "small_side", sides)
        for name in ("small_pass_decay", "large_pass_decay"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1], got {v!r}")


@dataclass(frozen=True)
class ModelRun:
    model_id: str
    detections: Sequence[Detection]
    ap: Mapping[str, float]

    def __post_init__(self):
        for c, v in self.ap.items():
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"AP for {c!r} of model {self.model_id!r} outside [0, 1]: {v!r}")
        for d in self.detections:
            if d.model_id != self.model_id:
                raise ValueError(
                    f"detection model_id {d.model_id!r} does not match run {self.model_id!r}"
                )


@dataclass(frozen=True)
class EnsembleConfig:
    theta0: float = 0.5
    per_class: bool = True

    def __post_init__(self):
        if not (0.0 <= self.theta0 < 1.0):
            raise ValueError(f"theta0 must lie in [0, 1), got {self.theta0!r}")


def calibrate_scores(class_probs, cfg: CalibrationConfig) -> np.ndarray:
    """Temperature-soften a probability vector: ``p**(1/T)`` renormalised.

    Equivalent to a softmax over ``log(p) / T``. Zero entries stay zero.
    """
    p = np.asarray(class_probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("class_probs must be a non-empty vector")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("class_probs must be finite and non-negative")
    if not np.any(p > 0):
        raise ValueError("class_probs must have a positive entry")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"class_probs must sum to 1, got {p.sum()!r}")
    if cfg.temperature == 1.0:
        return p.copy()
    # divide by the max first so huge temperatures do not underflow
    q = (p / p.max()) ** (1.0 / cfg.temperature)
    return q / q.sum()


def calibrate_detection(d: Detection, cfg: CalibrationConfig) -> Detection:
    """Calibrate one detection's score.

    With ``class_probs`` (ordered like ``CLASSES``, optionally followed by
    extra entries such as background) the whole vector is softened and the
    score becomes the entry of the detection's class. Without it the score
    is treated as the two-way distribution ``(p, 1 - p)``.
    """
    if d.class_probs is not None:
        if len(d.class_probs) < len(CLASSES):
            raise ValueError(
                f"class_probs needs at least {len(CLASSES)} entries, got {len(d.class_probs)}"
            )
        q = calibrate_scores(d.class_probs, cfg)
        score = float(q[CLASSES.index(d.class_id)])
        return replace(d, score=min(score, 1.0), class_probs=tuple(q.tolist()))
    q = calibrate_scores([d.score, 1.0 - d.score], cfg)
    return replace(d, score=min(float(q[0]), 1.0))


def is_small(d: Detection, cfg: ScaleAwareConfig) -> bool:
    return math.sqrt(area(d.box)) < cfg.small_side[d.class_id]


def scale_aware_decay(dets: Sequence[Detection], cfg: ScaleAwareConfig) -> list[Detection]:
    """Down-weight each pass where the other pass is known to be better.

    Small objects from the small-scale pass and large objects from the
    large-scale pass get their scores multiplied by the respective factor.
    Boxes must already be in the original image frame.
    """
    out = []
    for d in dets:
        if d.scale_tag == cfg.small_pass_tag and is_small(d, cfg):
            d = replace(d, score=d.score * cfg.small_pass_decay)
        elif d.scale_tag == cfg.large_pass_tag and not is_small(d, cfg):
            d = replace(d, score=d.score * cfg.large_pass_decay)
        out.append(d)
    return out


def merge_flip(
    normal: Sequence[Detection], flipped: Sequence[Detection], shape: ImageShape
) -> list[Detection]:
    return list(normal) + [replace(d, box=hflip(d.box, shape)) for d in flipped]


def merge_scales(passes, cfg: ScaleAwareConfig) -> list[Detection]:
    """Bring every test pass back to the original frame, decay, concatenate.

    ``passes`` is a sequence of ``(scale_tag, sx, sy, detections)`` where
    ``sx``/``sy`` are the resize factors of that pass relative to the
    original image. Each detection is re-tagged with its pass tag.
    """
    merged = []
    for tag, sx, sy, dets in passes:
        if not (sx > 0 and sy > 0):
            raise ValueError(f"pass {tag!r}: resize factors must be positive, got {sx}, {sy}")
        for d in dets:
            box = d.box
            # division (not multiplication by 1/s) keeps 175/1.75 == 100 exact
            orig = BBox(box.x1 / sx, box.y1 / sy, box.x2 / sx, box.y2 / sy)
            merged.append(replace(d, box=orig, scale_tag=tag))
    return scale_aware_decay(merged, cfg)


def _competition_ranks(values):
    # rank = 1 + number of strictly better entries; ties share the better rank
    return [1 + sum(1 for w in values if w > v) for v in values]


def linear_reweight(runs: Sequence[ModelRun], cfg: EnsembleConfig) -> dict:
    """Rank-based model weights: ``theta0 + (n - k) * (1 - theta0) / (n - 1)``.

    ``k`` is the model's AP rank (1 = best). Ranks are taken per class by
    default, or from the mean AP over classes when ``cfg.per_class`` is off.
    Returns ``{(model_id, class): weight}``.
    """
    n = len(runs)
    if n < 2:
        raise ValueError(f"linear_reweight needs at least 2 models, got {n}")
    ids = [r.model_id for r in runs]
    if len(set(ids)) != n:
        raise ValueError(f"duplicate model ids: {ids}")
    for r in runs:
        missing = [c for c in CLASSES if c not in r.ap]
        if missing:
            raise ValueError(f"model {r.model_id!r} has no validation AP for {missing}")

    step = (1.0 - cfg.theta0) / (n - 1)
    weights = {}
    if cfg.per_class:
        for c in CLASSES:
            ranks = _competition_ranks([r.ap[c] for r in runs])
            for r, k in zip(runs, ranks):
                weights[(r.model_id, c)] = cfg.theta0 + (n - k) * step
    else:
        ranks = _competition_ranks([sum(r.ap[c] for c in CLASSES) / len(CLASSES) for r in runs])
        for r, k in zip(runs, ranks):
            for c in CLASSES:
                weights[(r.model_id, c)] = cfg.theta0 + (n - k) * step
    return weights


def ensemble(
    runs: Sequence[ModelRun], ens_cfg: EnsembleConfig, sup_cfg: SuppressionConfig
) -> list[Detection]:
    """Weight, pool, then NMS + voting per image.

    A single run bypasses weighting (weight 1). Output is ordered by
    image id, then score descending.
    """
    if not runs:
        return []
    if len(runs) == 1:
        weights = {(runs[0].model_id, c): 1.0 for c in CLASSES}
    else:
        weights = linear_reweight(runs, ens_cfg)

    by_image = {}
    for run in runs:
        for d in run.detections:
            w = weights[(run.model_id, d.class_id)]
            by_image.setdefault(d.image_id, []).append(replace(d, score=min(d.score * w, 1.0)))

    out = []
    for image_id in sorted(by_image):
        pool = by_image[image_id]
        out.extend(box_voting(nms(pool, sup_cfg), pool, sup_cfg))
    return out
