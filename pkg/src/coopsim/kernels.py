"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import from ``COOPSIM_JIT`` ("0"/"false"/"off"
selects numpy; anything else selects numba when it is importable).  Both paths
evaluate the same floating-point expressions in the same order, so results are
bit-identical across backends.  ``set_backend`` switches at runtime for tests
and benchmarks.

Grid arguments are passed as plain scalars ``(x_min, y_min, res)`` plus the
array shape; arrays are row-major ``[row, col]`` with row following y.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

JIT_OPTIONS = {"cache": True, "nogil": True}


def _env_wants_jit() -> bool:
    flag = os.environ.get("COOPSIM_JIT", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


# ---------------------------------------------------------------------------
# Hungarian (shortest augmenting path with potentials), square matrices.
# ---------------------------------------------------------------------------

def _hungarian_np(cost):
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            upd = free & (cur < minv[1:])
            minv[1:][upd] = cur[upd]
            way[1:][upd] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    ans = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        ans[p[j] - 1] = j - 1
    return ans, u[1:].copy(), v[1:].copy()


def _hungarian_loops(cost):
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    ans = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        ans[p[j] - 1] = j - 1
    return ans, u[1:].copy(), v[1:].copy()


# ---------------------------------------------------------------------------
# Grid resampling through a 2D rigid map (bilinear or nearest).
# ---------------------------------------------------------------------------

def _sample_grid_np(src, sx0, sy0, sres, dh, dw, dx0, dy0, dres,
                    r00, r01, r10, r11, tx, ty, nearest):
    h, w = src.shape
    cols = np.arange(dw, dtype=np.float64)
    rows = np.arange(dh, dtype=np.float64)
    x = dx0 + (cols + 0.5) * dres
    y = dy0 + (rows + 0.5) * dres
    xx, yy = np.meshgrid(x, y)
    xs = r00 * xx + r01 * yy + tx
    ys = r10 * xx + r11 * yy + ty
    fx = (xs - sx0) / sres
    fy = (ys - sy0) / sres
    inside = (fx >= 0.0) & (fy >= 0.0) & (fx <= w) & (fy <= h)
    out = np.zeros((dh, dw))
    if not inside.any():
        return out
    fx = fx[inside]
    fy = fy[inside]
    if nearest:
        c = np.minimum(np.floor(fx).astype(np.int64), w - 1)
        r = np.minimum(np.floor(fy).astype(np.int64), h - 1)
        out[inside] = src[r, c]
        return out
    uu = np.minimum(np.maximum(fx - 0.5, 0.0), w - 1.0)
    vv = np.minimum(np.maximum(fy - 0.5, 0.0), h - 1.0)
    c0 = np.floor(uu).astype(np.int64)
    r0 = np.floor(vv).astype(np.int64)
    a = uu - c0
    b = vv - r0
    c1 = np.minimum(c0 + 1, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    top = (1.0 - a) * src[r0, c0] + a * src[r0, c1]
    bot = (1.0 - a) * src[r1, c0] + a * src[r1, c1]
    out[inside] = (1.0 - b) * top + b * bot
    return out


def _sample_grid_loops(src, sx0, sy0, sres, dh, dw, dx0, dy0, dres,
                       r00, r01, r10, r11, tx, ty, nearest):
    h, w = src.shape
    out = np.zeros((dh, dw))
    for row in range(dh):
        y = dy0 + (row + 0.5) * dres
        for col in range(dw):
            x = dx0 + (col + 0.5) * dres
            xs = r00 * x + r01 * y + tx
            ys = r10 * x + r11 * y + ty
            fx = (xs - sx0) / sres
            fy = (ys - sy0) / sres
            if fx < 0.0 or fy < 0.0 or fx > w or fy > h:
                continue
            if nearest:
                c = min(int(math.floor(fx)), w - 1)
                r = min(int(math.floor(fy)), h - 1)
                out[row, col] = src[r, c]
                continue
            uu = min(max(fx - 0.5, 0.0), w - 1.0)
            vv = min(max(fy - 0.5, 0.0), h - 1.0)
            c0 = int(math.floor(uu))
            r0 = int(math.floor(vv))
            a = uu - c0
            b = vv - r0
            c1 = min(c0 + 1, w - 1)
            r1 = min(r0 + 1, h - 1)
            top = (1.0 - a) * src[r0, c0] + a * src[r0, c1]
            bot = (1.0 - a) * src[r1, c0] + a * src[r1, c1]
            out[row, col] = (1.0 - b) * top + b * bot
    return out


# ---------------------------------------------------------------------------
# Oriented rectangles: rasterize, and count mask cells inside.
# boxes are (n, 5): cx, cy, yaw, length, width.
# ---------------------------------------------------------------------------

def _box_window(cx, cy, yaw, length, width, x0, y0, res, h, w):
    c = abs(math.cos(yaw))
    s = abs(math.sin(yaw))
    ex = 0.5 * (length * c + width * s)
    ey = 0.5 * (length * s + width * c)
    c_lo = max(int(math.floor((cx - ex - x0) / res)) - 1, 0)
    c_hi = min(int(math.floor((cx + ex - x0) / res)) + 1, w - 1)
    r_lo = max(int(math.floor((cy - ey - y0) / res)) - 1, 0)
    r_hi = min(int(math.floor((cy + ey - y0) / res)) + 1, h - 1)
    return r_lo, r_hi, c_lo, c_hi


def _rasterize_boxes_np(boxes, x0, y0, res, h, w):
    out = np.zeros((h, w), dtype=np.bool_)
    for k in range(boxes.shape[0]):
        cx, cy, yaw, length, width = boxes[k]
        r_lo, r_hi, c_lo, c_hi = _box_window(cx, cy, yaw, length, width, x0, y0, res, h, w)
        if r_lo > r_hi or c_lo > c_hi:
            continue
        xs = x0 + (np.arange(c_lo, c_hi + 1) + 0.5) * res
        ys = y0 + (np.arange(r_lo, r_hi + 1) + 0.5) * res
        dx = xs[None, :] - cx
        dy = ys[:, None] - cy
        c = math.cos(yaw)
        s = math.sin(yaw)
        lx = c * dx + s * dy
        ly = -s * dx + c * dy
        hit = (np.abs(lx) <= 0.5 * length) & (np.abs(ly) <= 0.5 * width)
        out[r_lo:r_hi + 1, c_lo:c_hi + 1] |= hit
    return out


def _rasterize_boxes_loops(boxes, x0, y0, res, h, w):
    out = np.zeros((h, w), dtype=np.bool_)
    for k in range(boxes.shape[0]):
        cx = boxes[k, 0]
        cy = boxes[k, 1]
        yaw = boxes[k, 2]
        length = boxes[k, 3]
        width = boxes[k, 4]
        r_lo, r_hi, c_lo, c_hi = _box_window(cx, cy, yaw, length, width, x0, y0, res, h, w)
        c = math.cos(yaw)
        s = math.sin(yaw)
        for r in range(r_lo, r_hi + 1):
            dy = (y0 + (r + 0.5) * res) - cy
            for col in range(c_lo, c_hi + 1):
                dx = (x0 + (col + 0.5) * res) - cx
                lx = c * dx + s * dy
                ly = -s * dx + c * dy
                if abs(lx) <= 0.5 * length and abs(ly) <= 0.5 * width:
                    out[r, col] = True
    return out


def _box_hits_np(mask, boxes, x0, y0, res):
    h, w = mask.shape
    counts = np.zeros(boxes.shape[0], dtype=np.int64)
    for k in range(boxes.shape[0]):
        cx, cy, yaw, length, width = boxes[k]
        r_lo, r_hi, c_lo, c_hi = _box_window(cx, cy, yaw, length, width, x0, y0, res, h, w)
        if r_lo > r_hi or c_lo > c_hi:
            continue
        sub = mask[r_lo:r_hi + 1, c_lo:c_hi + 1]
        if not sub.any():
            continue
        xs = x0 + (np.arange(c_lo, c_hi + 1) + 0.5) * res
        ys = y0 + (np.arange(r_lo, r_hi + 1) + 0.5) * res
        dx = xs[None, :] - cx
        dy = ys[:, None] - cy
        c = math.cos(yaw)
        s = math.sin(yaw)
        lx = c * dx + s * dy
        ly = -s * dx + c * dy
        hit = (np.abs(lx) <= 0.5 * length) & (np.abs(ly) <= 0.5 * width)
        counts[k] = int(np.count_nonzero(hit & sub))
    return counts


def _box_hits_loops(mask, boxes, x0, y0, res):
    h, w = mask.shape
    counts = np.zeros(boxes.shape[0], dtype=np.int64)
    for k in range(boxes.shape[0]):
        cx = boxes[k, 0]
        cy = boxes[k, 1]
        yaw = boxes[k, 2]
        length = boxes[k, 3]
        width = boxes[k, 4]
        r_lo, r_hi, c_lo, c_hi = _box_window(cx, cy, yaw, length, width, x0, y0, res, h, w)
        c = math.cos(yaw)
        s = math.sin(yaw)
        n = 0
        for r in range(r_lo, r_hi + 1):
            dy = (y0 + (r + 0.5) * res) - cy
            for col in range(c_lo, c_hi + 1):
                if not mask[r, col]:
                    continue
                dx = (x0 + (col + 0.5) * res) - cx
                lx = c * dx + s * dy
                ly = -s * dx + c * dy
                if abs(lx) <= 0.5 * length and abs(ly) <= 0.5 * width:
                    n += 1
        counts[k] = n
    return counts


# ---------------------------------------------------------------------------
# Thick polyline segments. segments are (m, 4): x0, y0, x1, y1.
# ---------------------------------------------------------------------------

def _seg_window(ax, ay, bx, by, hw, x0, y0, res, h, w):
    c_lo = max(int(math.floor((min(ax, bx) - hw - x0) / res)) - 1, 0)
    c_hi = min(int(math.floor((max(ax, bx) + hw - x0) / res)) + 1, w - 1)
    r_lo = max(int(math.floor((min(ay, by) - hw - y0) / res)) - 1, 0)
    r_hi = min(int(math.floor((max(ay, by) + hw - y0) / res)) + 1, h - 1)
    return r_lo, r_hi, c_lo, c_hi


def _rasterize_segments_np(segments, half_width, x0, y0, res, h, w):
    out = np.zeros((h, w), dtype=np.bool_)
    hw2 = half_width * half_width
    for k in range(segments.shape[0]):
        ax, ay, bx, by = segments[k]
        r_lo, r_hi, c_lo, c_hi = _seg_window(ax, ay, bx, by, half_width, x0, y0, res, h, w)
        if r_lo > r_hi or c_lo > c_hi:
            continue
        px = (x0 + (np.arange(c_lo, c_hi + 1) + 0.5) * res)[None, :]
        py = (y0 + (np.arange(r_lo, r_hi + 1) + 0.5) * res)[:, None]
        ex = bx - ax
        ey = by - ay
        ll = ex * ex + ey * ey
        if ll > 0.0:
            t = ((px - ax) * ex + (py - ay) * ey) / ll
            t = np.minimum(np.maximum(t, 0.0), 1.0)
        else:
            t = np.zeros((py.shape[0], px.shape[1]))
        qx = px - (ax + t * ex)
        qy = py - (ay + t * ey)
        out[r_lo:r_hi + 1, c_lo:c_hi + 1] |= (qx * qx + qy * qy) <= hw2
    return out


def _rasterize_segments_loops(segments, half_width, x0, y0, res, h, w):
    out = np.zeros((h, w), dtype=np.bool_)
    hw2 = half_width * half_width
    for k in range(segments.shape[0]):
        ax = segments[k, 0]
        ay = segments[k, 1]
        bx = segments[k, 2]
        by = segments[k, 3]
        r_lo, r_hi, c_lo, c_hi = _seg_window(ax, ay, bx, by, half_width, x0, y0, res, h, w)
        ex = bx - ax
        ey = by - ay
        ll = ex * ex + ey * ey
        for r in range(r_lo, r_hi + 1):
            py = y0 + (r + 0.5) * res
            for col in range(c_lo, c_hi + 1):
                px = x0 + (col + 0.5) * res
                if ll > 0.0:
                    t = ((px - ax) * ex + (py - ay) * ey) / ll
                    t = min(max(t, 0.0), 1.0)
                else:
                    t = 0.0
                qx = px - (ax + t * ex)
                qy = py - (ay + t * ey)
                if qx * qx + qy * qy <= hw2:
                    out[r, col] = True
    return out


# ---------------------------------------------------------------------------
# Backend selection
# ---------------------------------------------------------------------------

_NUMPY_IMPL = {
    "hungarian": _hungarian_np,
    "sample_grid": _sample_grid_np,
    "rasterize_boxes": _rasterize_boxes_np,
    "box_hits": _box_hits_np,
    "rasterize_segments": _rasterize_segments_np,
}

_LOOP_IMPL = {
    "hungarian": _hungarian_loops,
    "sample_grid": _sample_grid_loops,
    "rasterize_boxes": _rasterize_boxes_loops,
    "box_hits": _box_hits_loops,
    "rasterize_segments": _rasterize_segments_loops,
}

_NUMBA_IMPL: dict | None = None
_active: dict = _NUMPY_IMPL
BACKEND = "numpy"


def _build_numba() -> dict:
    global _box_window, _seg_window
    jit = njit(**JIT_OPTIONS)
    # helpers must be jitted before the kernels that call them are compiled
    _box_window = jit(_box_window)
    _seg_window = jit(_seg_window)
    return {name: jit(fn) for name, fn in _LOOP_IMPL.items()}


def set_backend(name: str) -> str:
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend name."""
    global _active, BACKEND, _NUMBA_IMPL
    previous = BACKEND
    if name == "numba":
        if not NUMBA_AVAILABLE:
            raise RuntimeError("numba backend requested but numba is not importable")
        if _NUMBA_IMPL is None:
            _NUMBA_IMPL = _build_numba()
        _active = _NUMBA_IMPL
    elif name == "numpy":
        _active = _NUMPY_IMPL
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name
    return previous


def implementation(kernel: str, backend: str):
    """Return one kernel's raw implementation for a given backend (benchmarks)."""
    if backend == "numba":
        global _NUMBA_IMPL
        if _NUMBA_IMPL is None:
            _NUMBA_IMPL = _build_numba()
        return _NUMBA_IMPL[kernel]
    return _NUMPY_IMPL[kernel]


if NUMBA_AVAILABLE and _env_wants_jit():
    set_backend("numba")


# ---------------------------------------------------------------------------
# Public entry points (validate + coerce, then dispatch)
# ---------------------------------------------------------------------------

def hungarian_square(cost: np.ndarray):
    """Optimal assignment for a finite square cost matrix.

    Returns ``(row_to_col, u, v)`` where ``u``/``v`` are optimal dual
    potentials: ``cost[i, j] - u[i] - v[j] >= 0`` with equality on the
    assignment.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.shape[0] == 0:
        return np.empty(0, dtype=np.int64), np.empty(0), np.empty(0)
    return _active["hungarian"](cost)


def sample_grid(src: np.ndarray, src_origin, src_res: float, dst_shape, dst_origin,
                dst_res: float, rotation2: np.ndarray, translation2, nearest: bool = False):
    """Resample ``src`` at the cell centers of a destination grid.

    A destination point ``x`` is looked up at ``rotation2 @ x + translation2``
    in source coordinates.  Points outside the source extent read 0; points
    inside the extent but past the outermost cell centers replicate the edge.
    """
    src = np.ascontiguousarray(src, dtype=np.float64)
    r = np.asarray(rotation2, dtype=np.float64)
    return _active["sample_grid"](
        src, float(src_origin[0]), float(src_origin[1]), float(src_res),
        int(dst_shape[0]), int(dst_shape[1]), float(dst_origin[0]), float(dst_origin[1]),
        float(dst_res), float(r[0, 0]), float(r[0, 1]), float(r[1, 0]), float(r[1, 1]),
        float(translation2[0]), float(translation2[1]), bool(nearest),
    )


def rasterize_boxes(boxes: np.ndarray, origin, res: float, shape) -> np.ndarray:
    """Boolean grid: cell centers inside any oriented box ``(cx, cy, yaw, l, w)``."""
    boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 5)
    return _active["rasterize_boxes"](boxes, float(origin[0]), float(origin[1]), float(res),
                                      int(shape[0]), int(shape[1]))


def box_hits(mask: np.ndarray, boxes: np.ndarray, origin, res: float) -> np.ndarray:
    """Per box, the number of true mask cells whose centers lie inside it."""
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 5)
    return _active["box_hits"](mask, boxes, float(origin[0]), float(origin[1]), float(res))


def rasterize_segments(segments: np.ndarray, half_width: float, origin, res: float,
                       shape) -> np.ndarray:
    """Boolean grid: cell centers within ``half_width`` of any segment."""
    segments = np.ascontiguousarray(segments, dtype=np.float64).reshape(-1, 4)
    return _active["rasterize_segments"](segments, float(half_width), float(origin[0]),
                                         float(origin[1]), float(res), int(shape[0]),
                                         int(shape[1]))
