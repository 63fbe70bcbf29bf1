# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels, bit-compatible with ``_pykernels``.

``nms_keep`` indexes kept boxes by centre in a uniform grid. A candidate
only meets kept boxes whose centre lies within the distance at which IoU
can still reach the threshold, so the result equals plain greedy NMS.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, floor, sqrt
from libc.stdlib cimport free, malloc, realloc

cnp.import_array()

cdef enum:
    LINEAR = 0


cdef inline double _area(const double[:, ::1] b, Py_ssize_t i) noexcept nogil:
    return (b[i, 2] - b[i, 0]) * (b[i, 3] - b[i, 1])


cdef inline double _iou(double ax1, double ay1, double ax2, double ay2, double aa,
                        double bx1, double by1, double bx2, double by2, double ba) noexcept nogil:
    cdef double iw = (ax2 if ax2 < bx2 else bx2) - (ax1 if ax1 > bx1 else bx1)
    cdef double ih = (ay2 if ay2 < by2 else by2) - (ay1 if ay1 > by1 else by1)
    cdef double inter, union
    if not (iw > 0.0 and ih > 0.0):
        return 0.0
    inter = iw * ih
    union = (aa + ba) - inter
    if not (union > 0.0):
        return 0.0
    return inter / union


def iou_matrix(a, b):
    cdef const double[:, ::1] A = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    cdef const double[:, ::1] B = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n = A.shape[0], m = B.shape[0], i, j
    out = np.zeros((n, m))
    cdef double[:, ::1] O = out
    cdef double aa
    with nogil:
        for i in range(n):
            aa = _area(A, i)
            for j in range(m):
                O[i, j] = _iou(A[i, 0], A[i, 1], A[i, 2], A[i, 3], aa,
                               B[j, 0], B[j, 1], B[j, 2], B[j, 3], _area(B, j))
    return out


cdef inline Py_ssize_t _cell(double v, double lo, double inv, Py_ssize_t n) noexcept nogil:
    cdef double c = floor((v - lo) * inv)
    if not (c >= 0.0):
        return 0
    if c >= n:
        return n - 1
    return <Py_ssize_t>c


cdef inline double _reach(double thresh) noexcept nogil:
    # IoU >= t forces |dcx| <= reach(t) * w and |dcy| <= reach(t) * h,
    # with w, h the candidate's size (see _pykernels.reach)
    cdef double a = 1.0 - thresh, b = (1.0 / thresh - 1.0) / 2.0
    return a if a > b else b


def nms_keep(boxes, order, double thresh):
    if not thresh > 0.0:
        raise ValueError("thresh must be > 0")
    cdef const double[:, ::1] B = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    cdef const cnp.int64_t[::1] O = np.ascontiguousarray(order, dtype=np.int64)
    cdef Py_ssize_t n = O.shape[0]
    if thresh > 1.0:
        return np.array(O, dtype=np.int64)
    keep_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] K = keep_arr
    if n == 0:
        return keep_arr

    cdef double reach = _reach(thresh)
    cdef Py_ssize_t i, t, r, c, gx, gy, cx0, cx1, cy0, cy1, e, nkeep = 0, nidx = 0
    cdef double lox = 0.0, loy = 0.0, hix = 0.0, hiy = 0.0, sw = 0.0, sh = 0.0
    cdef double ai, ov, w, h, mx, my, rx, ry
    cdef Py_ssize_t t2
    cdef Py_ssize_t npos = 0
    cdef bint dead
    for t in range(n):
        i = O[t]
        w = B[i, 2] - B[i, 0]
        h = B[i, 3] - B[i, 1]
        if not (w * h > 0.0):
            continue
        mx = (B[i, 0] + B[i, 2]) * 0.5
        my = (B[i, 1] + B[i, 3]) * 0.5
        if npos == 0 or mx < lox: lox = mx
        if npos == 0 or my < loy: loy = my
        if npos == 0 or mx > hix: hix = mx
        if npos == 0 or my > hiy: hiy = my
        sw += w
        sh += h
        npos += 1
    if npos == 0:
        # nothing has positive area, so nothing can be suppressed
        return np.array(O, dtype=np.int64)

    # cells about one search radius wide, at most ~4n cells overall
    cdef double cell_w = reach * sw / npos, cell_h = reach * sh / npos
    cdef double spanx = hix - lox, spany = hiy - loy
    cdef double cap = sqrt(4.0 * npos + 16.0)
    gx = <Py_ssize_t>(spanx / cell_w) + 1 if cell_w > 0.0 else 1
    gy = <Py_ssize_t>(spany / cell_h) + 1 if cell_h > 0.0 else 1
    if not (gx <= cap): gx = <Py_ssize_t>cap
    if not (gy <= cap): gy = <Py_ssize_t>cap
    if gx < 1: gx = 1
    if gy < 1: gy = 1
    cdef double invx = gx / spanx if spanx > 0.0 else 0.0
    cdef double invy = gy / spany if spany > 0.0 else 0.0

    cdef Py_ssize_t ncell = gx * gy
    cdef Py_ssize_t *head = <Py_ssize_t *> malloc(ncell * sizeof(Py_ssize_t))
    cdef Py_ssize_t *nxt = <Py_ssize_t *> malloc(n * sizeof(Py_ssize_t))
    cdef Py_ssize_t *who = <Py_ssize_t *> malloc(n * sizeof(Py_ssize_t))
    if head == NULL or nxt == NULL or who == NULL:
        free(head); free(nxt); free(who)
        raise MemoryError()
    with nogil:
        for c in range(ncell):
            head[c] = -1
        for t in range(n):
            i = O[t]
            ai = _area(B, i)
            dead = False
            if ai > 0.0:
                w = B[i, 2] - B[i, 0]
                h = B[i, 3] - B[i, 1]
                mx = (B[i, 0] + B[i, 2]) * 0.5
                my = (B[i, 1] + B[i, 3]) * 0.5
                # generous slack so float rounding can never hide a suppressor
                rx = reach * w + 1e-6 * (w + fabs(mx)) + 1e-9
                ry = reach * h + 1e-6 * (h + fabs(my)) + 1e-9
                cx0 = _cell(mx - rx, lox, invx, gx)
                cx1 = _cell(mx + rx, lox, invx, gx)
                cy0 = _cell(my - ry, loy, invy, gy)
                cy1 = _cell(my + ry, loy, invy, gy)
                if (cx1 - cx0 + 1) * (cy1 - cy0 + 1) > nidx:
                    # the window covers more cells than there are kept boxes
                    for e in range(nidx):
                        r = K[who[e]]
                        ov = _iou(B[i, 0], B[i, 1], B[i, 2], B[i, 3], ai,
                                  B[r, 0], B[r, 1], B[r, 2], B[r, 3], _area(B, r))
                        if ov >= thresh:
                            dead = True
                            break
                else:
                    r = cy0
                    while r <= cy1 and not dead:
                        c = cx0
                        while c <= cx1 and not dead:
                            e = head[r * gx + c]
                            while e != -1:
                                t2 = K[who[e]]
                                if (fabs((B[t2, 0] + B[t2, 2]) * 0.5 - mx) <= rx
                                        and fabs((B[t2, 1] + B[t2, 3]) * 0.5 - my) <= ry):
                                    ov = _iou(B[i, 0], B[i, 1], B[i, 2], B[i, 3], ai,
                                              B[t2, 0], B[t2, 1], B[t2, 2], B[t2, 3], _area(B, t2))
                                    if ov >= thresh:
                                        dead = True
                                        break
                                e = nxt[e]
                            c += 1
                        r += 1
            if dead:
                continue
            K[nkeep] = i
            # zero-area boxes never suppress anything, so they are not indexed
            if ai > 0.0:
                c = (_cell((B[i, 1] + B[i, 3]) * 0.5, loy, invy, gy) * gx
                     + _cell((B[i, 0] + B[i, 2]) * 0.5, lox, invx, gx))
                who[nidx] = nkeep
                nxt[nidx] = head[c]
                head[c] = nidx
                nidx += 1
            nkeep += 1
    free(head); free(nxt); free(who)
    return keep_arr[:nkeep].copy()


def soft_nms(boxes, scores, double thresh, int mode, double sigma, double floor_):
    cdef const double[:, ::1] B = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    s_arr = np.array(scores, dtype=np.float64)
    cdef double[::1] S = s_arr
    cdef Py_ssize_t n = B.shape[0]
    sel_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] SEL = sel_arr
    rem_arr = np.arange(n, dtype=np.int64)
    cdef cnp.int64_t[::1] R = rem_arr
    cdef Py_ssize_t m = n, nsel = 0, j, best, k, i, e
    cdef double ai, ov
    with nogil:
        while m > 0:
            # remaining indices stay sorted, so strict > keeps the lowest index on ties
            best = 0
            for j in range(1, m):
                if S[R[j]] > S[R[best]]:
                    best = j
            i = R[best]
            if S[i] < floor_:
                break
            SEL[nsel] = i
            nsel += 1
            for j in range(best, m - 1):
                R[j] = R[j + 1]
            m -= 1
            ai = _area(B, i)
            for k in range(m):
                e = R[k]
                ov = _iou(B[i, 0], B[i, 1], B[i, 2], B[i, 3], ai,
                          B[e, 0], B[e, 1], B[e, 2], B[e, 3], _area(B, e))
                if mode == LINEAR:
                    if ov >= thresh:
                        S[e] *= 1.0 - ov
                else:
                    S[e] *= exp(-(ov * ov) / sigma)
    return sel_arr[:nsel].copy(), s_arr


def box_vote(kept, pool, pool_scores, double thresh):
    cdef const double[:, ::1] KB = np.ascontiguousarray(kept, dtype=np.float64).reshape(-1, 4)
    cdef const double[:, ::1] P = np.ascontiguousarray(pool, dtype=np.float64).reshape(-1, 4)
    cdef const double[::1] W = np.ascontiguousarray(pool_scores, dtype=np.float64)
    voted_arr = np.array(KB, dtype=np.float64).reshape(-1, 4)
    counts_arr = np.zeros(KB.shape[0], dtype=np.int64)
    cdef double[:, ::1] V = voted_arr
    cdef cnp.int64_t[::1] C = counts_arr
    cdef Py_ssize_t nk = KB.shape[0], npool = P.shape[0], r, j
    cdef double ka, ov, total, a0, a1, a2, a3, wt
    cdef bint same
    with nogil:
        for r in range(nk):
            ka = _area(KB, r)
            total = 0.0
            a0 = 0.0; a1 = 0.0; a2 = 0.0; a3 = 0.0
            for j in range(npool):
                same = (P[j, 0] == KB[r, 0] and P[j, 1] == KB[r, 1]
                        and P[j, 2] == KB[r, 2] and P[j, 3] == KB[r, 3])
                if not same:
                    ov = _iou(KB[r, 0], KB[r, 1], KB[r, 2], KB[r, 3], ka,
                              P[j, 0], P[j, 1], P[j, 2], P[j, 3], _area(P, j))
                    if not (ov >= thresh):
                        continue
                wt = W[j]
                C[r] += 1
                total += wt
                a0 += wt * (P[j, 0] - KB[r, 0])
                a1 += wt * (P[j, 1] - KB[r, 1])
                a2 += wt * (P[j, 2] - KB[r, 2])
                a3 += wt * (P[j, 3] - KB[r, 3])
            if C[r] > 0 and total > 0.0:
                V[r, 0] = KB[r, 0] + a0 / total
                V[r, 1] = KB[r, 1] + a1 / total
                V[r, 2] = KB[r, 2] + a2 / total
                V[r, 3] = KB[r, 3] + a3 / total
    return voted_arr, counts_arr
