"""Low-level tracer kernels: slab occlusion tests and image-method path enumeration.

These inner loops dominate the wall-clock time of a simulation run, so they
exist in two interchangeable flavours: numba ``@njit`` kernels and a
vectorized pure-numpy fallback. The active backend is chosen once at import
from the ``SKYCELL_BACKEND`` environment variable ("numba" or "numpy",
default numba when importable) and can be switched at runtime with
:func:`set_backend`. Both backends evaluate the same expressions per
candidate path, so their outputs agree bit-for-bit.
"""

from __future__ import annotations

import os

import numpy as np

ENV_BACKEND = "SKYCELL_BACKEND"

# open-segment clip: endpoints sitting on a face do not count as occlusion
_T_EPS = 1e-9
# |direction component| below this is treated as parallel to the slab
_PAR_EPS = 1e-12
# inclusive tolerance for reflection points on face rectangles
_FACE_EPS = 1e-9

try:
    from numba import njit

    _NUMBA_OK = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _NUMBA_OK = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]


def _resolve_backend() -> str:
    choice = os.environ.get(ENV_BACKEND, "").strip().lower()
    if choice == "numpy":
        return "numpy"
    if choice in ("", "numba"):
        if _NUMBA_OK:
            return "numba"
        if choice == "numba":
            raise RuntimeError("SKYCELL_BACKEND=numba but numba is not importable")
        return "numpy"
    raise ValueError(f"unknown {ENV_BACKEND}={choice!r} (expected 'numba' or 'numpy')")


_ACTIVE = _resolve_backend()


def active_backend() -> str:
    return _ACTIVE


def available_backends() -> tuple[str, ...]:
    return ("numba", "numpy") if _NUMBA_OK else ("numpy",)


def set_backend(name: str) -> None:
    """Switch kernel backend at runtime (used by tests and the benchmark)."""
    global _ACTIVE
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _NUMBA_OK:
        raise RuntimeError("numba backend requested but numba is not importable")
    _ACTIVE = name


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------


@njit(cache=True)
def _seg_blocked_nb(px, py, pz, qx, qy, qz, boxes):
    dx = qx - px
    dy = qy - py
    dz = qz - pz
    for b in range(boxes.shape[0]):
        t0 = _T_EPS
        t1 = 1.0 - _T_EPS
        hit = True
        for axis in range(3):
            if axis == 0:
                p, d = px, dx
            elif axis == 1:
                p, d = py, dy
            else:
                p, d = pz, dz
            lo = boxes[b, axis]
            hi = boxes[b, axis + 3]
            if d > _PAR_EPS or d < -_PAR_EPS:
                ta = (lo - p) / d
                tb = (hi - p) / d
                if ta > tb:
                    ta, tb = tb, ta
                if ta > t0:
                    t0 = ta
                if tb < t1:
                    t1 = tb
                if t0 >= t1:
                    hit = False
                    break
            else:
                if p < lo or p > hi:
                    hit = False
                    break
        if hit and t1 > t0:
            return True
    return False


@njit(cache=True)
def _plane_hit_nb(ax, ay, az, bx, by, bz, axis, coord):
    # crossing point of segment a->b with the axis-aligned plane; t or -1
    if axis == 0:
        pa, pb = ax, bx
    elif axis == 1:
        pa, pb = ay, by
    else:
        pa, pb = az, bz
    denom = pb - pa
    if denom < _PAR_EPS and denom > -_PAR_EPS:
        return -1.0
    t = (coord - pa) / denom
    if t <= 0.0 or t >= 1.0:
        return -1.0
    return t


@njit(cache=True)
def _on_face_nb(hx, hy, hz, axis, uv):
    if axis == 0:
        u, v = hy, hz
    elif axis == 1:
        u, v = hz, hx
    else:
        u, v = hx, hy
    return (
        u >= uv[0] - _FACE_EPS
        and u <= uv[1] + _FACE_EPS
        and v >= uv[2] - _FACE_EPS
        and v <= uv[3] + _FACE_EPS
    )


@njit(cache=True)
def _trace_nb(
    tx,
    rx,
    boxes,
    f_axis,
    f_coord,
    f_sign,
    f_uv,
    f_refl,
    max_order,
    out_kind,
    out_verts,
    out_len,
    out_aod,
    out_aoa,
    out_refl,
):
    n = 0
    nf = f_axis.shape[0]

    # LOS
    if not _seg_blocked_nb(tx[0], tx[1], tx[2], rx[0], rx[1], rx[2], boxes):
        dx = rx[0] - tx[0]
        dy = rx[1] - tx[1]
        dz = rx[2] - tx[2]
        length = np.sqrt(dx * dx + dy * dy + dz * dz)
        out_kind[n] = 0
        out_len[n] = length
        out_aod[n, 0] = dx / length
        out_aod[n, 1] = dy / length
        out_aod[n, 2] = dz / length
        out_aoa[n, 0] = -dx / length
        out_aoa[n, 1] = -dy / length
        out_aoa[n, 2] = -dz / length
        out_refl[n] = 1.0
        n += 1

    if max_order < 1:
        return n

    img1 = np.empty(3)
    img2 = np.empty(3)
    h1 = np.empty(3)
    h2 = np.empty(3)

    for i in range(nf):
        ai = f_axis[i]
        ci = f_coord[i]
        si = f_sign[i]
        if si * (tx[ai] - ci) <= _FACE_EPS:
            continue
        img1[0] = tx[0]
        img1[1] = tx[1]
        img1[2] = tx[2]
        img1[ai] = 2.0 * ci - tx[ai]

        # first-order bounce off face i
        if si * (rx[ai] - ci) > _FACE_EPS:
            t = _plane_hit_nb(img1[0], img1[1], img1[2], rx[0], rx[1], rx[2], ai, ci)
            if t > 0.0:
                h1[0] = img1[0] + t * (rx[0] - img1[0])
                h1[1] = img1[1] + t * (rx[1] - img1[1])
                h1[2] = img1[2] + t * (rx[2] - img1[2])
                if _on_face_nb(h1[0], h1[1], h1[2], ai, f_uv[i]):
                    if not _seg_blocked_nb(
                        tx[0], tx[1], tx[2], h1[0], h1[1], h1[2], boxes
                    ) and not _seg_blocked_nb(
                        h1[0], h1[1], h1[2], rx[0], rx[1], rx[2], boxes
                    ):
                        ix = img1[0] - rx[0]
                        iy = img1[1] - rx[1]
                        iz = img1[2] - rx[2]
                        length = np.sqrt(ix * ix + iy * iy + iz * iz)
                        dx = h1[0] - tx[0]
                        dy = h1[1] - tx[1]
                        dz = h1[2] - tx[2]
                        dn = np.sqrt(dx * dx + dy * dy + dz * dz)
                        ex = h1[0] - rx[0]
                        ey = h1[1] - rx[1]
                        ez = h1[2] - rx[2]
                        en = np.sqrt(ex * ex + ey * ey + ez * ez)
                        out_kind[n] = 1
                        out_verts[n, 0, 0] = h1[0]
                        out_verts[n, 0, 1] = h1[1]
                        out_verts[n, 0, 2] = h1[2]
                        out_len[n] = length
                        out_aod[n, 0] = dx / dn
                        out_aod[n, 1] = dy / dn
                        out_aod[n, 2] = dz / dn
                        out_aoa[n, 0] = ex / en
                        out_aoa[n, 1] = ey / en
                        out_aoa[n, 2] = ez / en
                        out_refl[n] = f_refl[i]
                        n += 1

        if max_order < 2:
            continue

        # second-order: bounce off face i then face j
        for j in range(nf):
            if j == i:
                continue
            aj = f_axis[j]
            cj = f_coord[j]
            sj = f_sign[j]
            if sj * (rx[aj] - cj) <= _FACE_EPS:
                continue
            img2[0] = img1[0]
            img2[1] = img1[1]
            img2[2] = img1[2]
            img2[aj] = 2.0 * cj - img1[aj]
            t2 = _plane_hit_nb(rx[0], rx[1], rx[2], img2[0], img2[1], img2[2], aj, cj)
            if t2 < 0.0:
                continue
            h2[0] = rx[0] + t2 * (img2[0] - rx[0])
            h2[1] = rx[1] + t2 * (img2[1] - rx[1])
            h2[2] = rx[2] + t2 * (img2[2] - rx[2])
            if not _on_face_nb(h2[0], h2[1], h2[2], aj, f_uv[j]):
                continue
            if si * (h2[ai] - ci) <= _FACE_EPS:
                continue
            t1 = _plane_hit_nb(h2[0], h2[1], h2[2], img1[0], img1[1], img1[2], ai, ci)
            if t1 < 0.0:
                continue
            h1[0] = h2[0] + t1 * (img1[0] - h2[0])
            h1[1] = h2[1] + t1 * (img1[1] - h2[1])
            h1[2] = h2[2] + t1 * (img1[2] - h2[2])
            if not _on_face_nb(h1[0], h1[1], h1[2], ai, f_uv[i]):
                continue
            if sj * (h1[aj] - cj) <= _FACE_EPS:
                continue
            if _seg_blocked_nb(tx[0], tx[1], tx[2], h1[0], h1[1], h1[2], boxes):
                continue
            if _seg_blocked_nb(h1[0], h1[1], h1[2], h2[0], h2[1], h2[2], boxes):
                continue
            if _seg_blocked_nb(h2[0], h2[1], h2[2], rx[0], rx[1], rx[2], boxes):
                continue
            ix = img2[0] - rx[0]
            iy = img2[1] - rx[1]
            iz = img2[2] - rx[2]
            length = np.sqrt(ix * ix + iy * iy + iz * iz)
            dx = h1[0] - tx[0]
            dy = h1[1] - tx[1]
            dz = h1[2] - tx[2]
            dn = np.sqrt(dx * dx + dy * dy + dz * dz)
            ex = h2[0] - rx[0]
            ey = h2[1] - rx[1]
            ez = h2[2] - rx[2]
            en = np.sqrt(ex * ex + ey * ey + ez * ez)
            out_kind[n] = 2
            out_verts[n, 0, 0] = h1[0]
            out_verts[n, 0, 1] = h1[1]
            out_verts[n, 0, 2] = h1[2]
            out_verts[n, 1, 0] = h2[0]
            out_verts[n, 1, 1] = h2[1]
            out_verts[n, 1, 2] = h2[2]
            out_len[n] = length
            out_aod[n, 0] = dx / dn
            out_aod[n, 1] = dy / dn
            out_aod[n, 2] = dz / dn
            out_aoa[n, 0] = ex / en
            out_aoa[n, 1] = ey / en
            out_aoa[n, 2] = ez / en
            out_refl[n] = f_refl[i] * f_refl[j]
            n += 1

    return n


# ---------------------------------------------------------------------------
# pure-numpy backend
# ---------------------------------------------------------------------------


def _seg_blocked_np_many(p, q, boxes):
    """Occlusion test for M segments against B boxes; returns (M,) bool."""
    p = np.atleast_2d(p)
    q = np.atleast_2d(q)
    if boxes.shape[0] == 0:
        return np.zeros(p.shape[0], dtype=bool)
    d = (q - p)[:, None, :]  # (M,1,3)
    pp = p[:, None, :]
    lo = boxes[None, :, :3]
    hi = boxes[None, :, 3:]
    par = np.abs(d) <= _PAR_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo - pp) / d
        tb = (hi - pp) / d
    t_enter = np.minimum(ta, tb)
    t_exit = np.maximum(ta, tb)
    # parallel axes: inside the slab leaves t unconstrained, outside kills the box
    inside = (pp >= lo) & (pp <= hi)
    t_enter = np.where(par, np.where(inside, -np.inf, np.inf), t_enter)
    t_exit = np.where(par, np.where(inside, np.inf, -np.inf), t_exit)
    t0 = np.maximum(t_enter.max(axis=2), _T_EPS)
    t1 = np.minimum(t_exit.min(axis=2), 1.0 - _T_EPS)
    return (t1 > t0).any(axis=1)


def _norm_rows(v):
    return np.sqrt(v[:, 0] ** 2 + v[:, 1] ** 2 + v[:, 2] ** 2)


def _mirror_rows(points, axes, coords):
    out = points.copy()
    rows = np.arange(points.shape[0])
    out[rows, axes] = 2.0 * coords - points[rows, axes]
    return out


def _on_face_rows(hits, axes, uv):
    rows = np.arange(hits.shape[0])
    u = hits[rows, (axes + 1) % 3]
    v = hits[rows, (axes + 2) % 3]
    # face uv convention: axis 0 -> (y,z), axis 1 -> (z,x), axis 2 -> (x,y)
    return (
        (u >= uv[:, 0] - _FACE_EPS)
        & (u <= uv[:, 1] + _FACE_EPS)
        & (v >= uv[:, 2] - _FACE_EPS)
        & (v <= uv[:, 3] + _FACE_EPS)
    )


def _plane_hit_rows(a, b, axes, coords):
    rows = np.arange(a.shape[0])
    pa = a[rows, axes]
    pb = b[rows, axes]
    denom = pb - pa
    ok = np.abs(denom) > _PAR_EPS
    t = np.where(ok, (coords - pa) / np.where(ok, denom, 1.0), -1.0)
    ok &= (t > 0.0) & (t < 1.0)
    return t, ok


def _emit_np(tx, rx, h1, h2, img_last, refl, kind, sink):
    ivec = img_last - rx[None, :]
    length = _norm_rows(ivec)
    dvec = h1 - tx[None, :]
    dn = _norm_rows(dvec)
    evec = (h2 if h2 is not None else h1) - rx[None, :]
    en = _norm_rows(evec)
    for k in range(h1.shape[0]):
        sink.append(
            (
                kind,
                h1[k],
                None if h2 is None else h2[k],
                length[k],
                dvec[k] / dn[k],
                evec[k] / en[k],
                refl[k],
            )
        )


def _trace_np(tx, rx, boxes, f_axis, f_coord, f_sign, f_uv, f_refl, max_order):
    paths = []
    if not bool(_seg_blocked_np_many(tx[None, :], rx[None, :], boxes)[0]):
        d = rx - tx
        length = float(np.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2))
        paths.append((0, None, None, length, d / length, -d / length, 1.0))
    if max_order < 1 or f_axis.shape[0] == 0:
        return paths

    nf = f_axis.shape[0]
    tx_side = f_sign * (tx[f_axis] - f_coord) > _FACE_EPS
    rx_side = f_sign * (rx[f_axis] - f_coord) > _FACE_EPS
    img1_all = _mirror_rows(np.broadcast_to(tx, (nf, 3)).copy(), f_axis, f_coord)

    # first order
    cand = np.where(tx_side & rx_side)[0]
    if cand.size:
        img1 = img1_all[cand]
        t, ok = _plane_hit_rows(img1, np.broadcast_to(rx, (cand.size, 3)), f_axis[cand], f_coord[cand])
        cand, img1, t = cand[ok], img1[ok], t[ok]
        if cand.size:
            h1 = img1 + t[:, None] * (rx[None, :] - img1)
            ok = _on_face_rows(h1, f_axis[cand], f_uv[cand])
            cand, img1, h1 = cand[ok], img1[ok], h1[ok]
        if cand.size:
            ok = ~_seg_blocked_np_many(np.broadcast_to(tx, (cand.size, 3)), h1, boxes)
            ok &= ~_seg_blocked_np_many(h1, np.broadcast_to(rx, (cand.size, 3)), boxes)
            cand, img1, h1 = cand[ok], img1[ok], h1[ok]
        if cand.size:
            _emit_np(tx, rx, h1, None, img1, f_refl[cand], 1, paths)

    if max_order < 2:
        return paths

    # second order: all ordered pairs (i, j), i != j
    I, J = np.meshgrid(np.arange(nf), np.arange(nf), indexing="ij")
    I, J = I.ravel(), J.ravel()
    keep = (I != J) & tx_side[I] & rx_side[J]
    I, J = I[keep], J[keep]
    if I.size == 0:
        return paths
    img1 = img1_all[I]
    img2 = _mirror_rows(img1, f_axis[J], f_coord[J])
    t2, ok = _plane_hit_rows(np.broadcast_to(rx, (I.size, 3)), img2, f_axis[J], f_coord[J])
    I, J, img1, img2, t2 = I[ok], J[ok], img1[ok], img2[ok], t2[ok]
    if I.size == 0:
        return paths
    h2 = rx[None, :] + t2[:, None] * (img2 - rx[None, :])
    ok = _on_face_rows(h2, f_axis[J], f_uv[J])
    rows = np.arange(h2.shape[0])
    ok &= f_sign[I] * (h2[rows, f_axis[I]] - f_coord[I]) > _FACE_EPS
    I, J, img1, img2, h2 = I[ok], J[ok], img1[ok], img2[ok], h2[ok]
    if I.size == 0:
        return paths
    t1, ok = _plane_hit_rows(h2, img1, f_axis[I], f_coord[I])
    I, J, img1, img2, h2, t1 = I[ok], J[ok], img1[ok], img2[ok], h2[ok], t1[ok]
    if I.size == 0:
        return paths
    h1 = h2 + t1[:, None] * (img1 - h2)
    ok = _on_face_rows(h1, f_axis[I], f_uv[I])
    rows = np.arange(h1.shape[0])
    ok &= f_sign[J] * (h1[rows, f_axis[J]] - f_coord[J]) > _FACE_EPS
    I, J, img2, h1, h2 = I[ok], J[ok], img2[ok], h1[ok], h2[ok]
    if I.size == 0:
        return paths
    m = I.size
    ok = ~_seg_blocked_np_many(np.broadcast_to(tx, (m, 3)), h1, boxes)
    ok &= ~_seg_blocked_np_many(h1, h2, boxes)
    ok &= ~_seg_blocked_np_many(h2, np.broadcast_to(rx, (m, 3)), boxes)
    I, J, img2, h1, h2 = I[ok], J[ok], img2[ok], h1[ok], h2[ok]
    if I.size:
        _emit_np(tx, rx, h1, h2, img2, f_refl[I] * f_refl[J], 2, paths)
    return paths


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def segment_blocked(p, q, boxes) -> bool:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 6)
    if _ACTIVE == "numba":
        return bool(_seg_blocked_nb(p[0], p[1], p[2], q[0], q[1], q[2], boxes))
    return bool(_seg_blocked_np_many(p[None, :], q[None, :], boxes)[0])


def trace_candidates(tx, rx, boxes, f_axis, f_coord, f_sign, f_uv, f_refl, max_order):
    """Enumerate valid LOS/R1/R2 paths.

    Returns a list of tuples (kind, h1|None, h2|None, length, aod_dir, aoa_dir,
    reflection_product) in enumeration order; callers apply gains and sorting.
    """
    tx = np.asarray(tx, dtype=np.float64)
    rx = np.asarray(rx, dtype=np.float64)
    if _ACTIVE == "numpy":
        return _trace_np(tx, rx, boxes, f_axis, f_coord, f_sign, f_uv, f_refl, max_order)

    nf = f_axis.shape[0]
    cap = 1 + nf + nf * nf if max_order >= 2 else 1 + nf
    out_kind = np.empty(cap, dtype=np.int64)
    out_verts = np.empty((cap, 2, 3), dtype=np.float64)
    out_len = np.empty(cap, dtype=np.float64)
    out_aod = np.empty((cap, 3), dtype=np.float64)
    out_aoa = np.empty((cap, 3), dtype=np.float64)
    out_refl = np.empty(cap, dtype=np.float64)
    n = _trace_nb(
        tx, rx, boxes, f_axis, f_coord, f_sign, f_uv, f_refl, max_order,
        out_kind, out_verts, out_len, out_aod, out_aoa, out_refl,
    )
    paths = []
    for k in range(n):
        kind = int(out_kind[k])
        h1 = out_verts[k, 0].copy() if kind >= 1 else None
        h2 = out_verts[k, 1].copy() if kind >= 2 else None
        paths.append(
            (kind, h1, h2, float(out_len[k]), out_aod[k].copy(), out_aoa[k].copy(), float(out_refl[k]))
        )
    return paths
