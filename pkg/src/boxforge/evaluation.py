"""Detection metrics: greedy score-ordered matching, PR curves, AP per class
at LEVEL 1 / LEVEL 2, and the ALL_NS mean over vehicle, pedestrian and
cyclist.

LEVEL 2 counts every ground truth box. LEVEL 1 treats difficulty-2 boxes
as ignore regions: they can absorb any number of detections (labelled
IGNORED, neither TP nor FP) and never count as misses.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import BBox
from . import kernels
from .suppression import CLASSES, Detection

TP, FP, IGNORED = "TP", "FP", "IGNORED"
AP_MODES = ("interp101", "exact")
_DISPLAY = {"vehicle": "Vehicle", "pedestrian": "Pedestrian", "cyclist": "Cyclist"}


@dataclass(frozen=True, slots=True)
class GroundTruthBox:
    box: BBox
    class_id: str
    image_id: str
    difficulty: int = 2

    def __post_init__(self):
        if self.difficulty not in (1, 2):
            raise ValueError(f"difficulty must be 1 or 2, got {self.difficulty!r}")
        if self.class_id not in CLASSES:
            raise ValueError(f"unknown class {self.class_id!r}")


@dataclass(frozen=True)
class EvalConfig:
    match_iou: Mapping[str, float] = field(
        default_factory=lambda: {"vehicle": 0.7, "pedestrian": 0.5, "cyclist": 0.5}
    )
    level: int = 2
    ap_mode: str = "interp101"

    def __post_init__(self):
        ious = dict(self.match_iou)
        for c in CLASSES:
            if not (0.0 < ious.get(c, -1.0) <= 1.0):
                raise ValueError(f"match_iou[{c}] must lie in (0, 1]")
        object.__setattr__(self, "match_iou", ious)
        if self.level not in (1, 2):
            raise ValueError(f"level must be 1 or 2, got {self.level!r}")
        if self.ap_mode not in AP_MODES:
            raise ValueError(f"ap_mode must be one of {AP_MODES}, got {self.ap_mode!r}")


@dataclass
class MatchResult:
    labels: list[str]
    missed: int
    positives: int


def _score_order(dets):
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))


def match(dets: Sequence[Detection], gts: Sequence[GroundTruthBox], cfg: EvalConfig) -> MatchResult:
    """Label the detections of one image as TP / FP / IGNORED.

    Detections are visited by descending score (ties in input order). Each
    takes the highest-IoU unused same-class counted GT with IoU at or above
    the class threshold (ties to the earlier GT). Failing that, under
    LEVEL 1 a detection overlapping an ignore region that much is IGNORED.
    ``labels`` is aligned with the input order.
    """
    labels = [FP] * len(dets)
    positives = 0
    missed = 0
    for cls in CLASSES:
        di = [i for i, d in enumerate(dets) if d.class_id == cls]
        gi = [j for j, g in enumerate(gts) if g.class_id == cls]
        counted = [j for j in gi if cfg.level == 2 or gts[j].difficulty == 1]
        ignore = [j for j in gi if cfg.level == 1 and gts[j].difficulty == 2]
        positives += len(counted)
        if not di:
            missed += len(counted)
            continue
        thr = cfg.match_iou[cls]
        dsub = [dets[i] for i in di]
        dboxes = np.array([d.box.as_tuple() for d in dsub]).reshape(-1, 4)
        cious = kernels.iou_matrix(dboxes, np.array([gts[j].box.as_tuple() for j in counted]).reshape(-1, 4))
        iious = kernels.iou_matrix(dboxes, np.array([gts[j].box.as_tuple() for j in ignore]).reshape(-1, 4))
        used = np.zeros(len(counted), dtype=bool)
        for r in _score_order(dsub):
            row = np.where(used, -1.0, cious[r])
            if row.size and row.max() >= thr:
                used[int(np.argmax(row))] = True
                labels[di[r]] = TP
            elif iious.shape[1] and iious[r].max() >= thr:
                labels[di[r]] = IGNORED
        missed += int((~used).sum())
    return MatchResult(labels, missed, positives)


def pr_curve(labels: Sequence[str], positives: int) -> list[tuple[float, float]]:
    """Cumulative (recall, precision) per non-ignored label, in the given order."""
    curve = []
    tp = fp = 0
    for lab in labels:
        if lab == IGNORED:
            continue
        if lab == TP:
            tp += 1
        else:
            fp += 1
        recall = tp / positives if positives > 0 else 0.0
        curve.append((recall, tp / (tp + fp)))
    return curve


def average_precision(curve: Sequence[tuple[float, float]], mode: str = "interp101") -> float:
    """Area under a PR curve.

    ``interp101`` averages, over recall thresholds 0, 0.01, ..., 1, the best
    precision reached at or beyond each threshold. ``exact`` sums recall
    increments times that same envelope.
    """
    if mode not in AP_MODES:
        raise ValueError(f"unknown AP mode {mode!r}")
    if not curve:
        return 0.0
    rec = np.array([r for r, _ in curve], dtype=np.float64)
    prec = np.array([p for _, p in curve], dtype=np.float64)
    # envelope[i] = max precision over samples i.. (recall is non-decreasing)
    env = np.maximum.accumulate(prec[::-1])[::-1]
    if mode == "interp101":
        grid = np.arange(101) / 100.0
        idx = np.searchsorted(rec, grid, side="left")
        vals = np.where(idx < len(rec), env[np.minimum(idx, len(rec) - 1)], 0.0)
        return float(vals.sum() / 101.0)
    steps = np.diff(np.concatenate([[0.0], rec]))
    return float(np.sum(steps * env))


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    ignored: int = 0


@dataclass
class EvalReport:
    level: int
    ap_mode: str
    ap: dict[str, float]
    all_ns: float
    pr: dict[str, list[tuple[float, float]]]
    counts: dict[str, ClassCounts]

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "ap_mode": self.ap_mode,
            "ap": {c: self.ap[c] for c in CLASSES},
            "ALL_NS": self.all_ns,
            "counts": {
                c: {"tp": k.tp, "fp": k.fp, "fn": k.fn, "ignored": k.ignored}
                for c, k in ((c, self.counts[c]) for c in CLASSES)
            },
            "pr": {c: [list(p) for p in self.pr[c]] for c in CLASSES},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def table(self, title: str = "Method") -> str:
        """Fixed-width AP table: one row per class plus ALL_NS, percent with two decimals."""
        lines = [f"{title:<12}{'AP L' + str(self.level):>10}", "-" * 22]
        for c in CLASSES:
            lines.append(f"{_DISPLAY[c]:<12}{100.0 * self.ap[c]:>10.2f}")
        lines.append(f"{'ALL_NS':<12}{100.0 * self.all_ns:>10.2f}")
        return "\n".join(lines) + "\n"


def evaluate(
    dets: Sequence[Detection], gts: Sequence[GroundTruthBox], cfg: EvalConfig
) -> EvalReport:
    """Match per image, pool per class, then PR curve and AP per class.

    The pooled label stream is ordered by score descending; equal scores
    keep input order. A class without positives scores AP 0.
    """
    dets = list(dets)
    det_by_image = {}
    for i, d in enumerate(dets):
        det_by_image.setdefault(d.image_id, []).append(i)
    gt_by_image = {}
    for g in gts:
        gt_by_image.setdefault(g.image_id, []).append(g)

    label_of = [FP] * len(dets)
    positives = dict.fromkeys(CLASSES, 0)
    counts = {c: ClassCounts() for c in CLASSES}
    for image_id in sorted(set(det_by_image) | set(gt_by_image)):
        idxs = det_by_image.get(image_id, [])
        img_gts = gt_by_image.get(image_id, [])
        img_dets = [dets[i] for i in idxs]
        for cls in CLASSES:
            sub = [k for k, d in enumerate(img_dets) if d.class_id == cls]
            res = match(
                [img_dets[k] for k in sub], [g for g in img_gts if g.class_id == cls], cfg
            )
            for k, lab in zip(sub, res.labels):
                label_of[idxs[k]] = lab
            positives[cls] += res.positives
            counts[cls].fn += res.missed

    ap, pr = {}, {}
    for cls in CLASSES:
        order = sorted(
            (i for i, d in enumerate(dets) if d.class_id == cls), key=lambda i: (-dets[i].score, i)
        )
        labels = [label_of[i] for i in order]
        counts[cls].tp = labels.count(TP)
        counts[cls].fp = labels.count(FP)
        counts[cls].ignored = labels.count(IGNORED)
        curve = pr_curve(labels, positives[cls])
        pr[cls] = curve
        ap[cls] = average_precision(curve, cfg.ap_mode) if positives[cls] > 0 else 0.0
    all_ns = (ap["vehicle"] + ap["pedestrian"] + ap["cyclist"]) / 3.0
    return EvalReport(cfg.level, cfg.ap_mode, ap, all_ns, pr, counts)
