"""Pure numpy kernels; the fallback when the compiled extension is absent.

Every function here has a twin in ``_ckernels.pyx`` with the same
signature and bit-identical results. IoU is always evaluated as
``inter / ((area_a + area_b) - inter)`` so both backends round alike.
"""
import numpy as np

LINEAR = 0
GAUSSIAN = 1


def _areas(boxes):
    return (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])


def _iou_one_to_many(box, area, boxes, areas):
    iw = np.minimum(box[2], boxes[:, 2]) - np.maximum(box[0], boxes[:, 0])
    ih = np.minimum(box[3], boxes[:, 3]) - np.maximum(box[1], boxes[:, 1])
    ok = (iw > 0.0) & (ih > 0.0)
    inter = np.where(ok, iw * ih, 0.0)
    union = (area + areas) - inter
    out = np.zeros(len(boxes))
    np.divide(inter, union, out=out, where=ok & (union > 0.0))
    return out


def iou_matrix(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    out = np.zeros((len(a), len(b)))
    if len(a) == 0 or len(b) == 0:
        return out
    areas_a = _areas(a)
    areas_b = _areas(b)
    for i in range(len(a)):
        out[i] = _iou_one_to_many(a[i], areas_a[i], b, areas_b)
    return out


def reach(thresh):
    """Centre-distance bound for suppression, in units of the candidate size.

    If ``IoU(k, b) >= t`` then ``|cx_k - cx_b| <= reach(t) * w_b`` (and the
    same for y with ``h_b``). Proof sketch: the intersection is at least
    ``t * max(area_k, area_b)``, so its width is at least ``t * max(w_k, w_b)``
    and ``w_k <= w_b / t``; the width is also at most
    ``(w_k + w_b) / 2 - |dcx|``. Maximising over ``w_k`` gives
    ``max(1 - t, (1/t - 1) / 2)``.
    """
    return max(1.0 - thresh, (1.0 / thresh - 1.0) / 2.0)


def nms_keep(boxes, order, thresh):
    """Greedy NMS over ``boxes`` visited in ``order``.

    Returns the kept indices (into ``boxes``) in visiting order. A box is
    dropped when its IoU with an already kept box is ``>= thresh``. Kept
    boxes are bucketed by centre so a candidate is only compared against
    kept boxes close enough to reach the threshold.
    """
    if not thresh > 0.0:
        raise ValueError("thresh must be > 0")
    boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    order = np.asarray(order, dtype=np.int64)
    if thresh > 1.0 or len(order) == 0:
        return order.copy()
    areas = _areas(boxes)
    sub = boxes[order]
    pos = areas[order] > 0.0
    if not pos.any():
        return order.copy()
    r = reach(thresh)
    wh = sub[pos, 2:] - sub[pos, :2]
    centres = (boxes[:, :2] + boxes[:, 2:]) * 0.5
    lo = centres[order[pos]].min(axis=0)
    span = centres[order[pos]].max(axis=0) - lo
    cell = r * wh.mean(axis=0)
    cap = np.sqrt(4.0 * pos.sum() + 16.0)
    g = [1, 1]
    for d in range(2):
        if cell[d] > 0.0:
            k = int(span[d] / cell[d]) + 1
            g[d] = max(1, int(cap) if not k <= cap else k)
    inv = np.array([g[d] / span[d] if span[d] > 0.0 else 0.0 for d in range(2)])
    hi_cell = np.array([g[0] - 1, g[1] - 1], dtype=np.float64)

    def cells(pts):
        return np.clip(np.floor((pts - lo) * inv), 0, hi_cell).astype(np.int64)

    # generous slack so float rounding can never hide a suppressor
    size = boxes[:, 2:] - boxes[:, :2]
    rad = r * size + 1e-6 * (size + np.abs(centres)) + 1e-9
    lo_c = cells(centres - rad).tolist()
    hi_c = cells(centres + rad).tolist()
    home = cells(centres).tolist()
    area_list = areas.tolist()

    grid = {}
    indexed = []
    keep = []
    for i in order.tolist():
        ai = area_list[i]
        if ai > 0.0 and indexed:
            cx0, cy0 = lo_c[i]
            cx1, cy1 = hi_c[i]
            if (cx1 - cx0 + 1) * (cy1 - cy0 + 1) > len(indexed):
                near = indexed
            else:
                near = []
                for row in range(cy0, cy1 + 1):
                    for col in range(cx0, cx1 + 1):
                        near.extend(grid.get((row, col), ()))
            if near:
                idx = np.asarray(near, dtype=np.int64)
                if (_iou_one_to_many(boxes[i], ai, boxes[idx], areas[idx]) >= thresh).any():
                    continue
        keep.append(i)
        if ai > 0.0:
            # zero-area boxes never suppress anything
            cx, cy = home[i]
            grid.setdefault((cy, cx), []).append(i)
            indexed.append(i)
    return np.asarray(keep, dtype=np.int64)


def soft_nms(boxes, scores, thresh, mode, sigma, floor):
    """Soft-NMS rescoring.

    Returns ``(selected, new_scores)``: indices in selection order whose
    decayed score is ``>= floor``, and the decayed score of every box.
    """
    boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    s = np.array(scores, dtype=np.float64)
    areas = _areas(boxes)
    remaining = np.arange(len(boxes), dtype=np.int64)
    selected = []
    while remaining.size > 0:
        # first maximum wins, i.e. the lowest input index on ties
        j = int(np.argmax(s[remaining]))
        i = remaining[j]
        if s[i] < floor:
            # everything left is <= s[i], so it would be dropped anyway
            break
        selected.append(i)
        remaining = np.delete(remaining, j)
        if remaining.size == 0:
            break
        ovr = _iou_one_to_many(boxes[i], areas[i], boxes[remaining], areas[remaining])
        if mode == LINEAR:
            hit = ovr >= thresh
            s[remaining[hit]] *= 1.0 - ovr[hit]
        else:
            s[remaining] *= np.exp(-(ovr * ovr) / sigma)
    return np.asarray(selected, dtype=np.int64), s


def box_vote(kept, pool, pool_scores, thresh):
    """Score-weighted mean of the pool boxes overlapping each kept box.

    A pool box votes when its IoU with the kept box is ``>= thresh`` or it
    is coordinate-identical to it. The mean is computed as
    ``kept + sum(w * (pool - kept)) / sum(w)`` so coincident voters give
    back the kept box exactly. Returns ``(voted, counts)``; rows with
    ``counts == 0`` had no voters and are returned unchanged.
    """
    kept = np.ascontiguousarray(kept, dtype=np.float64).reshape(-1, 4)
    pool = np.ascontiguousarray(pool, dtype=np.float64).reshape(-1, 4)
    w = np.asarray(pool_scores, dtype=np.float64)
    voted = kept.copy()
    counts = np.zeros(len(kept), dtype=np.int64)
    if len(pool) == 0:
        return voted, counts
    pool_areas = _areas(pool)
    kept_areas = _areas(kept)
    for r in range(len(kept)):
        ovr = _iou_one_to_many(kept[r], kept_areas[r], pool, pool_areas)
        mask = (ovr >= thresh) | np.all(pool == kept[r], axis=1)
        counts[r] = int(mask.sum())
        if counts[r] == 0:
            continue
        k = kept[r].tolist()
        total = 0.0
        acc = [0.0, 0.0, 0.0, 0.0]
        # sequential sums so the compiled twin matches bit for bit
        for wt, box in zip(w[mask].tolist(), pool[mask].tolist()):
            total += wt
            for c in range(4):
                acc[c] += wt * (box[c] - k[c])
        if total > 0.0:
            voted[r] = [k[c] + acc[c] / total for c in range(4)]
    return voted, counts
