"""Interpolation baselines: barycentric, spherical harmonics, HRTF selection.

Both interpolators work on dB magnitudes. Output phase is copied from the
nearest source position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import sh
from .data import HrtfSet, as_positions
from .errors import DataError
from .metrics import lsd_error

_EPS = 1e-12


@dataclass(frozen=True)
class SphericalTriangulation:
    vertices: np.ndarray     # (P, 3) unit vectors
    triangles: np.ndarray    # (K, 3) vertex indices


def triangulate(positions):
    """Convex-hull triangulation of the source directions."""
    v = sh.unit_vectors(positions)
    if v.shape[0] < 3:
        raise DataError("barycentric interpolation needs at least 3 positions")
    if np.linalg.matrix_rank(v, tol=1e-9) < 3:
        raise DataError("positions lie on one great circle")
    if v.shape[0] == 3:
        tris = np.array([[0, 1, 2]])
    else:
        try:
            tris = ConvexHull(v).simplices
        except QhullError:
            tris = ConvexHull(v, qhull_options="QJ").simplices
    tris = np.sort(tris, axis=1)
    tris = tris[np.lexsort(tris.T[::-1])]
    dets = np.abs(np.linalg.det(v[tris]))
    tris = tris[dets > 1e-12]
    return SphericalTriangulation(v, tris)


def _raw_weights(m_inv, u):
    """Unnormalised cone coordinates w with u = M w, for every triangle."""
    return np.einsum("kij,pj->pki", m_inv, u)


def barycentric_weights(target, triangle):
    """Weights of ``target`` with respect to a spherical triangle.

    The target ray is intersected with the plane through the three vertices
    (gnomonic projection) and the planar barycentric coordinates returned.
    Targets outside the triangle get clamped, renormalised weights.
    """
    u = sh.unit_vectors(as_positions(target))[0]
    m = sh.unit_vectors(as_positions(triangle)).T
    if abs(np.linalg.det(m)) < 1e-12:
        raise DataError("degenerate triangle")
    w = np.linalg.solve(m, u)
    return _normalise(w)


def _normalise(w):
    s = w.sum()
    b = w / s if abs(s) > _EPS else np.full(3, 1.0 / 3.0)
    if np.any(b < 0):
        b = np.clip(b, 0.0, None)
        b = b / b.sum() if b.sum() > 0 else np.full(3, 1.0 / 3.0)
    return b


def barycentric_matrix(source_positions, target_positions):
    """Sparse-in-spirit (Pt, Ps) interpolation matrix; rows sum to one."""
    tri = triangulate(source_positions)
    v, tris = tri.vertices, tri.triangles
    u = sh.unit_vectors(target_positions)
    m = np.transpose(v[tris], (0, 2, 1))          # columns are the vertices
    w = _raw_weights(np.linalg.inv(m), u)         # (Pt, K, 3)
    s = w.sum(axis=2)
    inside = (s > _EPS) & np.all(w >= -1e-12 * np.maximum(s, 1.0)[..., None], axis=2)
    out = np.zeros((u.shape[0], v.shape[0]))
    for p in range(u.shape[0]):
        hits = np.flatnonzero(inside[p])
        if hits.size:
            k = hits[0]
            b = np.clip(w[p, k] / s[p, k], 0.0, None)
            b /= b.sum()
        else:
            k, b = _nearest_triangle(v, tris, w[p], u[p])
        out[p, tris[k]] += b
    return out


def _nearest_triangle(v, tris, w, u):
    best = None
    for k in range(tris.shape[0]):
        b = _normalise(w[k])
        point = b @ v[tris[k]]
        norm = np.linalg.norm(point)
        cos = point @ u / norm if norm > 0 else -1.0
        if best is None or cos > best[0] + 1e-15:
            best = (cos, k, b)
    return best[1], best[2]


def nearest_indices(source_positions, target_positions):
    return np.argmax(sh.unit_vectors(target_positions) @ sh.unit_vectors(source_positions).T, axis=1)


def _assemble(sparse, target_positions, db_field):
    target = as_positions(target_positions)
    phase = sparse.phase[nearest_indices(sparse.positions, target)]
    mag = np.transpose(sh.from_db(db_field), (0, 2, 1))
    return HrtfSet(target, sparse.frequencies, mag, phase, sparse.sample_rate)


def barycentric_upsample(sparse, target_grid):
    w = barycentric_matrix(sparse.positions, target_grid)
    db = np.tensordot(w, sparse.db_field(), axes=(1, 0))
    return _assemble(sparse, target_grid, db)


def sh_upsample(sparse, target_grid, order=None, lam=None):
    """Fit the sparse dB field at ``order`` (default: highest supported) and
    evaluate it on ``target_grid``."""
    if order is None:
        order = sh.max_order_for_points(sparse.num_positions)
    coeffs = sh.sht_fit(sparse.db_field(), sparse.positions, order, lam)
    return _assemble(sparse, target_grid, sh.sht_eval(coeffs, target_grid))


def lsd_matrix(dataset, **metric_kw):
    n = len(dataset)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = lsd_error(dataset[i], dataset[j], **metric_kw)
    return d


def select_hrtf(dataset, mode="generic", **metric_kw):
    """Index of the most generic (min mean LSD to the others) or most distinct
    (max) subject. Ties resolve to the lowest index."""
    if len(dataset) < 2:
        raise DataError("selection needs at least two subjects")
    ref = dataset[0]
    for other in dataset[1:]:
        if other.magnitude.shape != ref.magnitude.shape or not np.allclose(
            other.positions[:, :2], ref.positions[:, :2]
        ):
            raise DataError("subjects are on different grids")
    mean = lsd_matrix(dataset, **metric_kw).sum(axis=1) / (len(dataset) - 1)
    if mode == "generic":
        return int(np.argmin(mean))
    if mode == "distinct":
        return int(np.argmax(mean))
    raise ValueError(f"unknown selection mode {mode!r}")
