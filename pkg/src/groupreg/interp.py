"""Catmull-Rom cubic interpolation of lattice maps at arbitrary locations.

Used for Y_i evaluated at reverse-transformed sites and for inverse warping.
2D interpolation is separable: the 1D kernel is applied per axis over a 4x4
stencil. Boundary policy: "zero" treats values outside the lattice as 0 (the
default; activation maps decay to baseline outside the region of interest),
"clamp" replicates the edge value.
"""

from __future__ import annotations

import numpy as np

BOUNDARY_POLICIES = ("zero", "clamp")


def _catmull_rom_weights(t):
    """Weights for samples p_{-1}, p_0, p_1, p_2 at fractional offset t from p_0."""
    t2 = t * t
    t3 = t2 * t
    w0 = 0.5 * (-t3 + 2.0 * t2 - t)
    w1 = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0)
    w2 = 0.5 * (-3.0 * t3 + 4.0 * t2 + t)
    w3 = 0.5 * (t3 - t2)
    return np.stack([w0, w1, w2, w3], axis=-1)


def _axis_stencil(u, n, policy):
    """Stencil indices (q, 4), in-range mask and weights along one axis."""
    base = np.floor(u).astype(int)
    t = u - base
    idx = base[:, None] + np.arange(-1, 3)[None, :]
    weights = _catmull_rom_weights(t)
    if policy == "clamp":
        return np.clip(idx, 0, n - 1), np.ones_like(idx, dtype=bool), weights
    valid = (idx >= 0) & (idx < n)
    return np.clip(idx, 0, n - 1), valid, weights


def interpolate(amap, points, boundary="zero"):
    """Cubic interpolation of an activation map at query points.

    points: (q, d) array (or (d,) for a single point). Returns values (q,)
    (or a scalar). The lattice needs at least 4 sites per axis; queries may
    be anywhere, with out-of-domain stencil values handled by the boundary
    policy.
    """
    if boundary not in BOUNDARY_POLICIES:
        raise ValueError(f"boundary must be one of {BOUNDARY_POLICIES}")
    lat = amap.lattice
    if any(n < 4 for n in lat.shape):
        raise ValueError("cubic interpolation needs >= 4 sites per axis")
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    u = lat.to_index_coords(pts)

    if lat.dim == 1:
        idx, valid, w = _axis_stencil(u[:, 0], lat.shape[0], boundary)
        vals = amap.values[idx] * valid
        out = np.einsum("qk,qk->q", w, vals)
    else:
        idx0, valid0, w0 = _axis_stencil(u[:, 0], lat.shape[0], boundary)
        idx1, valid1, w1 = _axis_stencil(u[:, 1], lat.shape[1], boundary)
        grid = amap.grid
        patch = grid[idx0[:, :, None], idx1[:, None, :]]
        patch = patch * (valid0[:, :, None] & valid1[:, None, :])
        out = np.einsum("qj,qk,qjk->q", w0, w1, patch)
    return float(out[0]) if single else out


def resample(amap, transform, boundary="zero"):
    """Map with values amap(T(s)) on amap's own lattice (pull-back by T)."""
    from .transforms import affine_apply

    pts = affine_apply(transform, amap.lattice.locations())
    return amap.with_values(interpolate(amap, pts, boundary=boundary))
