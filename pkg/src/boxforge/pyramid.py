"""Feature-pyramid arithmetic: anchors per level, RoI-to-level assignment,
and relative-scale statistics of a box collection.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import BBox, ImageShape, area

# sqrt(32*32 / (400*600)): the COCO "small" cut expressed as relative scale
SMALL_RELATIVE_SCALE = math.sqrt(32 * 32 / 400 / 600)


def _level(level) -> int:
    if isinstance(level, str):
        if not (level[:1] in "Pp" and level[1:].isdigit()):
            raise ValueError(f"bad level name {level!r}")
        return int(level[1:])
    return int(level)


@dataclass(frozen=True)
class AnchorSpec:
    areas: Mapping[int, float] = field(
        default_factory=lambda: {2: 12.0**2, 3: 24.0**2, 4: 48.0**2, 5: 96.0**2, 6: 192.0**2}
    )
    strides: Mapping[int, float] = field(
        default_factory=lambda: {2: 4.0, 3: 8.0, 4: 16.0, 5: 32.0, 6: 64.0}
    )
    ratios: Sequence[float] = (0.5, 1.0, 2.0)

    def __post_init__(self):
        areas = {_level(k): float(v) for k, v in self.areas.items()}
        strides = {_level(k): float(v) for k, v in self.strides.items()}
        if set(areas) != set(strides):
            raise ValueError("areas and strides must cover the same levels")
        levels = sorted(areas)
        for lo, hi in zip(levels, levels[1:]):
            if not (areas[lo] < areas[hi] and strides[lo] < strides[hi]):
                raise ValueError("anchor areas and strides must increase with level")
        if any(v <= 0 for v in list(areas.values()) + list(strides.values())):
            raise ValueError("anchor areas and strides must be positive")
        if not self.ratios or any(r <= 0 for r in self.ratios):
            raise ValueError("aspect ratios must be positive")
        object.__setattr__(self, "areas", areas)
        object.__setattr__(self, "strides", strides)
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))


@dataclass(frozen=True)
class LevelAssignConfig:
    k0: int = 4
    canonical: float = 76.0
    min_level: int = 2
    max_level: int = 5

    def __post_init__(self):
        if not (self.min_level <= self.k0 <= self.max_level):
            raise ValueError("need min_level <= k0 <= max_level")
        if not self.canonical > 0:
            raise ValueError("canonical size must be positive")


def anchor_array(spec: AnchorSpec, level, feature_width: int, feature_height: int) -> np.ndarray:
    """Anchors of one level as an ``(H*W*R, 4)`` array, row-major over cells."""
    lvl = _level(level)
    if lvl not in spec.areas:
        raise ValueError(f"level P{lvl} not in anchor spec (have {sorted(spec.areas)})")
    if feature_width < 1 or feature_height < 1:
        raise ValueError("feature map dimensions must be positive")
    a = spec.areas[lvl]
    stride = spec.strides[lvl]
    ratios = np.asarray(spec.ratios)
    ws = np.sqrt(a * ratios)
    hs = np.sqrt(a / ratios)
    cx = (np.arange(feature_width) + 0.5) * stride
    cy = (np.arange(feature_height) + 0.5) * stride
    gy, gx = np.meshgrid(cy, cx, indexing="ij")
    gx = gx.reshape(-1, 1)
    gy = gy.reshape(-1, 1)
    out = np.stack([gx - ws / 2, gy - hs / 2, gx + ws / 2, gy + hs / 2], axis=-1)
    return out.reshape(-1, 4)


def generate_anchors(spec: AnchorSpec, level, feature_width: int, feature_height: int) -> list[BBox]:
    return [BBox(*row) for row in anchor_array(spec, level, feature_width, feature_height).tolist()]


def assign_level(box: BBox, cfg: LevelAssignConfig = LevelAssignConfig()) -> int:
    """Pyramid level for an RoI: ``floor(k0 + log2(sqrt(w*h) / canonical))``, clamped."""
    a = area(box)
    if not a > 0:
        raise ValueError(f"cannot assign a level to zero-area box {box}")
    k = math.floor(cfg.k0 + math.log2(math.sqrt(a) / cfg.canonical))
    return min(max(k, cfg.min_level), cfg.max_level)


def relative_scale(box: BBox, shape: ImageShape) -> float:
    return math.sqrt(area(box) / shape.area)


@dataclass
class ScaleStats:
    scales: np.ndarray
    bin_edges: np.ndarray
    fractions: np.ndarray
    threshold: float
    small_fraction: float

    def rows(self) -> list[tuple[float, float, float]]:
        return [
            (float(lo), float(hi), float(f))
            for lo, hi, f in zip(self.bin_edges[:-1], self.bin_edges[1:], self.fractions)
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "fraction"])
        for lo, hi, f in self.rows():
            w.writerow([repr(lo), repr(hi), repr(f)])
        return buf.getvalue()


def scale_report(
    items: Iterable[tuple[BBox, ImageShape]],
    bin_edges=None,
    threshold: float = SMALL_RELATIVE_SCALE,
) -> ScaleStats:
    """Histogram of relative box scales plus the fraction below ``threshold``.

    Bins are half-open ``[lo, hi)`` except the last, which is closed. Every
    scale must fall inside the edges. Default edges: 20 equal bins on [0, 1].
    """
    scales = np.array([relative_scale(b, s) for b, s in items], dtype=np.float64)
    if scales.size == 0:
        raise ValueError("scale_report needs at least one box")
    edges = np.linspace(0.0, 1.0, 21) if bin_edges is None else np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be a strictly increasing sequence of >= 2 values")
    if scales.min() < edges[0] or scales.max() > edges[-1]:
        raise ValueError(
            f"relative scales span [{scales.min()}, {scales.max()}], outside bin edges "
            f"[{edges[0]}, {edges[-1]}]"
        )
    counts, _ = np.histogram(scales, bins=edges)
    fractions = counts / scales.size
    small = float(np.count_nonzero(scales < threshold)) / scales.size
    return ScaleStats(scales, edges, fractions, float(threshold), small)
