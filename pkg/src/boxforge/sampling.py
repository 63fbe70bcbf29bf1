"""Deterministic planning for the training data pipeline.

Nothing here touches pixels: crop plans and sample plans are small records
that an external training loop can replay.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import BBox, ImageShape, area

BUCKETS = ("cyclist", "pedestrian", "vehicle", "background")
# rarest class first; an image goes to the first bucket it has an object for
_BUCKET_PRIORITY = ("cyclist", "pedestrian", "vehicle")


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    shape: ImageShape
    annotations: Sequence[tuple[BBox, str]] = ()


@dataclass(frozen=True)
class MultiScaleCropConfig:
    scales: Sequence[int] = (512, 640, 960, 1280)
    long_cap: float = 2000
    crop_height: int = 640
    crop_width: int = 960
    jitter: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ValueError("scales must be a non-empty list of positive sizes")
        if self.long_cap <= 0 or self.crop_height <= 0 or self.crop_width <= 0:
            raise ValueError("long_cap and crop dimensions must be positive")
        if not (0.0 <= self.jitter <= 0.5):
            raise ValueError(f"jitter must lie in [0, 0.5], got {self.jitter!r}")


EXTENDED_SCALES = (640, 960, 1280, 1600, 1920, 2240, 2560)
EXTENDED_LONG_CAP = 3840


@dataclass(frozen=True)
class CropPlan:
    image_id: str
    scale: int
    factor: float
    window: BBox
    annotations: list[tuple[BBox, str]]

    @property
    def sx(self) -> float:
        return self.factor

    @property
    def sy(self) -> float:
        return self.factor

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "scale": self.scale,
            "sx": self.factor,
            "sy": self.factor,
            "window": list(self.window.as_tuple()),
            "annotations": [
                {"class": c, "x1": b.x1, "y1": b.y1, "x2": b.x2, "y2": b.y2}
                for b, c in self.annotations
            ],
        }


def _image_rng(seed: int, image_id: str) -> np.random.Generator:
    # crc32 is stable across processes, unlike hash()
    return np.random.default_rng([seed, zlib.crc32(image_id.encode("utf-8"))])


def _place(center: float, size: float, extent: float) -> float:
    lo = center - size / 2.0
    if extent >= size:
        return min(max(lo, 0.0), extent - size)
    # image narrower than the crop: anchor at 0 and pad the far side
    return 0.0


def plan_crop(record: ImageRecord, cfg: MultiScaleCropConfig) -> CropPlan:
    """Multi-scale resize plus an object-centred crop window.

    The short side is resized to a scale drawn from ``cfg.scales`` unless
    that pushes the long side past ``cfg.long_cap``. With annotations the
    crop is centred on one random object (plus uniform jitter of up to
    ``cfg.jitter`` times the crop size); otherwise the centre is uniform
    over the resized image. Annotations come back in crop coordinates,
    clipped, with emptied boxes dropped.
    """
    rng = _image_rng(cfg.seed, record.image_id)
    w, h = record.shape.width, record.shape.height
    scale = int(cfg.scales[int(rng.integers(len(cfg.scales)))])
    f = min(scale / min(w, h), cfg.long_cap / max(w, h))
    rw, rh = w * f, h * f
    cw, ch = float(cfg.crop_width), float(cfg.crop_height)

    if record.annotations:
        box, _ = record.annotations[int(rng.integers(len(record.annotations)))]
        cx = (box.x1 + box.x2) / 2.0 * f
        cy = (box.y1 + box.y2) / 2.0 * f
        jx, jy = rng.uniform(-cfg.jitter, cfg.jitter, size=2).tolist()
        cx += jx * cw
        cy += jy * ch
    else:
        cx, cy = rng.uniform(0.0, 1.0, size=2).tolist()
        cx *= rw
        cy *= rh

    x0 = _place(cx, cw, rw)
    y0 = _place(cy, ch, rh)
    window = BBox(x0, y0, x0 + cw, y0 + ch)

    # visible area: the crop window intersected with the resized image
    vx2, vy2 = min(window.x2, rw), min(window.y2, rh)
    mapped = []
    for b, cls in record.annotations:
        bx1 = min(max(b.x1 * f, x0), vx2) - x0
        by1 = min(max(b.y1 * f, y0), vy2) - y0
        bx2 = min(max(b.x2 * f, x0), vx2) - x0
        by2 = min(max(b.y2 * f, y0), vy2) - y0
        nb = BBox(bx1, by1, max(bx2, bx1), max(by2, by1))
        if area(nb) > 0:
            mapped.append((nb, cls))
    return CropPlan(record.image_id, scale, f, window, mapped)


@dataclass(frozen=True)
class SamplePlanConfig:
    images_per_epoch: int = 120_000
    ratio: Mapping[str, float] = field(
        default_factory=lambda: {"cyclist": 1.0, "pedestrian": 1.0, "vehicle": 1.0, "background": 0.3}
    )
    seed: int = 0

    def __post_init__(self):
        r = dict(self.ratio)
        unknown = set(r) - set(BUCKETS)
        if unknown:
            raise ValueError(f"unknown buckets in ratio: {sorted(unknown)}")
        r = {b: float(r.get(b, 0.0)) for b in BUCKETS}
        if any(v < 0 for v in r.values()) or not any(v > 0 for v in r.values()):
            raise ValueError("ratio values must be >= 0 and not all zero")
        if self.images_per_epoch < 1:
            raise ValueError("images_per_epoch must be positive")
        object.__setattr__(self, "ratio", r)


def bucket_of(record: ImageRecord) -> str:
    present = {c for _, c in record.annotations}
    for c in _BUCKET_PRIORITY:
        if c in present:
            return c
    return "background"


def bucket_targets(total: int, ratio: Mapping[str, float]) -> dict[str, int]:
    """Largest-remainder apportionment of ``total`` draws over the buckets.

    Remainder ties go to the earlier bucket in ``BUCKETS`` order.
    """
    s = sum(ratio[b] for b in BUCKETS)
    quotas = {b: total * ratio[b] / s for b in BUCKETS}
    counts = {b: int(math.floor(q)) for b, q in quotas.items()}
    left = total - sum(counts.values())
    order = sorted(BUCKETS, key=lambda b: (-(quotas[b] - counts[b]), BUCKETS.index(b)))
    for b in order[:left]:
        counts[b] += 1
    return counts


def build_sample_plan(corpus: Sequence[ImageRecord], cfg: SamplePlanConfig) -> list[str]:
    """Image ids for one epoch, drawn with replacement to hit the bucket ratio."""
    if not corpus:
        raise ValueError("corpus is empty")
    members = {b: [] for b in BUCKETS}
    for rec in corpus:
        members[bucket_of(rec)].append(rec.image_id)
    for b in BUCKETS:
        if cfg.ratio[b] > 0 and not members[b]:
            raise ValueError(f"bucket {b!r} has a positive target ratio but no images")

    rng = np.random.default_rng(cfg.seed)
    plan = []
    for b, n in bucket_targets(cfg.images_per_epoch, cfg.ratio).items():
        if n == 0:
            continue
        picks = rng.integers(len(members[b]), size=n)
        plan.extend(members[b][i] for i in picks.tolist())
    order = rng.permutation(len(plan))
    return [plan[i] for i in order.tolist()]


@dataclass(frozen=True)
class LrScheduleConfig:
    base_lr: float = 0.02
    base_batch: int = 16
    batch: int = 64
    warmup_iters: int = 500
    total_iters: int = 10_000
    min_lr: float = 0.0

    def __post_init__(self):
        if self.base_batch < 1 or self.batch < 1 or self.total_iters < 1 or self.warmup_iters < 0:
            raise ValueError("batch sizes and iteration counts must be positive")
        if self.warmup_iters > self.total_iters:
            raise ValueError("warmup_iters cannot exceed total_iters")

    @property
    def peak_lr(self) -> float:
        # linear scaling rule
        return self.base_lr * (self.batch / self.base_batch)


def lr_at(iteration: int, cfg: LrScheduleConfig) -> float:
    """Linear warmup to the scaled peak, then cosine decay to ``min_lr``."""
    if not (0 <= iteration <= cfg.total_iters):
        raise ValueError(f"iteration {iteration} outside [0, {cfg.total_iters}]")
    peak = cfg.peak_lr
    if iteration < cfg.warmup_iters:
        return peak * (iteration + 1) / cfg.warmup_iters
    span = cfg.total_iters - cfg.warmup_iters
    progress = 1.0 if span == 0 else (iteration - cfg.warmup_iters) / span
    return cfg.min_lr + 0.5 * (peak - cfg.min_lr) * (1.0 + math.cos(math.pi * progress))
