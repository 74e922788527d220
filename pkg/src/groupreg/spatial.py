"""Exponential-kernel Gaussian-process machinery.

Dense Kriging (the exact oracle), ordered-predecessor NNGP weights for the
template sites, and the dynamic neighbor library that resolves m-nearest
template neighbors of arbitrary (moving) locations in constant time.

Conventions fixed here: site ordering is row-major lattice order; neighbor
ties break toward the smaller linear index; covariance diagonals carry a
jitter of 1e-10 * alpha and conditional variances are clamped at
1e-12 * alpha from below. Neighbor sets of transformed sites condition on
template sites only.

Everything is immutable after construction / pure, hence thread-safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IllConditioned, OutOfLibraryBounds
from .grids import Lattice

JITTER = 1e-10
VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class CovarianceParams:
    """Exponential kernel C(s,t) = alpha * exp(-rho * ||s - t||)."""

    alpha: float
    rho: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.rho > 0):
            raise ValueError(f"alpha and rho must be > 0, got {self.alpha}, {self.rho}")


def exp_cov(s, t, params):
    """Covariance between two locations (or broadcastable stacks of them)."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    t = np.atleast_2d(np.asarray(t, dtype=float))
    dist = np.linalg.norm(s - t, axis=-1)
    out = params.alpha * np.exp(-params.rho * dist)
    return float(out[0]) if out.size == 1 else out


def cov_matrix(a, b, params):
    """Cross-covariance matrix between location stacks a (n,d) and b (m,d)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    dist = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    return params.alpha * np.exp(-params.rho * dist)


def dense_kriging(source, target, params):
    """Exact GP conditional of target sites given source sites.

    Returns (P, S): conditional mean is P @ x_source, conditional covariance
    is S (symmetric PSD up to jitter). This is the dense oracle the NNGP
    approximations are tested against.
    """
    source = np.atleast_2d(np.asarray(source, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    sigma = cov_matrix(source, source, params)
    sigma[np.diag_indices_from(sigma)] += JITTER * params.alpha
    c_ts = cov_matrix(target, source, params)
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise IllConditioned("source covariance not PD after jitter") from exc
    p = np.linalg.solve(chol.T, np.linalg.solve(chol, c_ts.T)).T
    s = cov_matrix(target, target, params) - p @ c_ts.T
    return p, 0.5 * (s + s.T)


def dense_gp_log_density(values, locations, params):
    """Log density of a mean-zero GP with the exponential kernel (oracle)."""
    values = np.asarray(values, dtype=float)
    sigma = cov_matrix(locations, locations, params)
    sigma[np.diag_indices_from(sigma)] += JITTER * params.alpha
    chol = np.linalg.cholesky(sigma)
    half = np.linalg.solve(chol, values.T if values.ndim == 2 else values)
    quad = np.sum(half * half, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    n = sigma.shape[0]
    out = -0.5 * (n * np.log(2.0 * np.pi) + logdet + quad)
    return float(out) if np.ndim(out) == 0 else out


def build_ordered_neighbor_sets(locations, m):
    """m-nearest predecessors of each site in row-major order.

    Returns an (V, m) int array padded with -1: row l holds the indices of
    the min(m, l) nearest sites among {0, ..., l-1}, ties broken by smaller
    index (stable sort).
    """
    locs = np.atleast_2d(np.asarray(locations, dtype=float))
    v = locs.shape[0]
    out = np.full((v, m), -1, dtype=int)
    for l in range(1, v):
        k = min(m, l)
        d = np.linalg.norm(locs[:l] - locs[l], axis=1)
        order = np.argsort(d, kind="stable")[:k]
        out[l, :k] = order
    return out


@dataclass(frozen=True, eq=False)
class NeighborLibrary:
    """Precomputed m-nearest-in-template sets over an enlarged lattice.

    The enlarged lattice extends the template lattice by `margin` grid steps
    on every side. Lookup maps a continuous point to its nearest enlarged
    lattice site (half-up rounding per axis) and returns that site's
    precomputed neighbor set. Immutable after construction.
    """

    template: Lattice
    enlarged: Lattice
    margin: int
    m: int
    neighbor_indices: np.ndarray = field(repr=False)  # (n_lib, min(m, V)) int

    @property
    def n_entries(self):
        return self.enlarged.n_sites


def build_neighbor_library(lattice, margin, m):
    margin = int(margin)
    if margin < 0:
        raise ValueError("margin must be >= 0")
    enlarged = Lattice(
        shape=tuple(n + 2 * margin for n in lattice.shape),
        spacing=lattice.spacing,
        origin=lattice.origin - margin * lattice.spacing,
    )
    template_locs = lattice.locations()
    lib_locs = enlarged.locations()
    k = min(m, lattice.n_sites)
    d = np.linalg.norm(lib_locs[:, None, :] - template_locs[None, :, :], axis=-1)
    neighbor_indices = np.argsort(d, axis=1, kind="stable")[:, :k]
    return NeighborLibrary(template=lattice, enlarged=enlarged, margin=margin,
                           m=m, neighbor_indices=np.ascontiguousarray(neighbor_indices))


def lookup_neighbors(points, library):
    """Neighbor sets for continuous points via the library.

    points: (q, d) or (d,). Returns (q, k) int indices into the template
    site list ((k,) for a single point). Raises OutOfLibraryBounds if any
    point rounds outside the enlarged lattice — the caller should treat the
    move that produced it as rejected.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    u = library.enlarged.to_index_coords(pts)
    idx = np.floor(u + 0.5).astype(int)  # round half-up per axis
    shape = library.enlarged.shape
    for a, n in enumerate(shape):
        if np.any(idx[:, a] < 0) or np.any(idx[:, a] >= n):
            raise OutOfLibraryBounds(
                "point outside the neighbor library (increase margin or reject the move)")
    flat = np.ravel_multi_index(tuple(idx[:, a] for a in range(len(shape))), shape)
    sets = library.neighbor_indices[flat]
    return sets[0] if single else sets


def nngp_weights(target, neighbors, params):
    """Kriging weights B and conditional variance F for one target location.

    neighbors: (k, d) locations (k may be 0, giving B empty and F = alpha).
    F = C(t,t) - B C_N B^T, clamped below at 1e-12 * alpha.
    """
    target = np.asarray(target, dtype=float).reshape(1, -1)
    neighbors = np.atleast_2d(np.asarray(neighbors, dtype=float))
    if neighbors.size == 0:
        return np.empty(0), float(params.alpha)
    c_n = cov_matrix(neighbors, neighbors, params)
    c_n[np.diag_indices_from(c_n)] += JITTER * params.alpha
    c_t = cov_matrix(target, neighbors, params)[0]
    try:
        b = np.linalg.solve(c_n, c_t)
    except np.linalg.LinAlgError as exc:
        raise IllConditioned("neighbor covariance not invertible after jitter") from exc
    f = params.alpha - float(b @ c_t)
    return b, max(f, VAR_FLOOR * params.alpha)


def batched_nngp_weights(targets, neighbor_idx, source_locations, params):
    """Vectorized (B, F) for many targets with padded neighbor index rows.

    targets: (q, d); neighbor_idx: (q, k) int, -1-padded for rows with fewer
    neighbors. Padded slots get B = 0 and do not affect F. Rows with no
    neighbors at all get F = alpha (the marginal variance).
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    neighbor_idx = np.atleast_2d(neighbor_idx)
    q, k = neighbor_idx.shape
    if k == 0:
        return np.zeros((q, 0)), np.full(q, params.alpha)
    has_pad = bool(np.any(neighbor_idx[:, -1] < 0))
    safe_idx = np.where(neighbor_idx < 0, 0, neighbor_idx) if has_pad else neighbor_idx
    nbr = source_locations[safe_idx]  # (q, k, d)

    gram = np.einsum("qkd,qjd->qkj", nbr, nbr)
    sq = np.einsum("qkd,qkd->qk", nbr, nbr)
    d2 = sq[:, :, None] + sq[:, None, :] - 2.0 * gram
    np.maximum(d2, 0.0, out=d2)
    c_n = params.alpha * np.exp(-params.rho * np.sqrt(d2))

    dt = nbr - targets[:, None, :]
    c_t = params.alpha * np.exp(-params.rho * np.sqrt(np.einsum("qkd,qkd->qk", dt, dt)))

    if has_pad:
        # Neutralize padded rows/columns: identity there keeps the solve exact.
        mask = neighbor_idx >= 0
        pair = mask[:, :, None] & mask[:, None, :]
        c_n = np.where(pair, c_n, 0.0)
        eye = np.broadcast_to(np.eye(k), (q, k, k))
        c_n = c_n + np.where(pair, JITTER * params.alpha * eye, (~pair) * eye)
        c_t = np.where(mask, c_t, 0.0)
    else:
        idx = np.arange(k)
        c_n[:, idx, idx] += JITTER * params.alpha

    try:
        b = np.linalg.solve(c_n, c_t[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError as exc:
        raise IllConditioned("neighbor covariance not invertible after jitter") from exc
    f = params.alpha - np.einsum("qk,qk->q", b, c_t)
    return b, np.maximum(f, VAR_FLOOR * params.alpha)


def conditional_means(values, neighbor_idx, weights):
    """B_l . x(N_l) for each row, honoring -1 padding."""
    if neighbor_idx.size and np.any(neighbor_idx[:, -1] < 0):
        mask = neighbor_idx >= 0
        safe_idx = np.where(mask, neighbor_idx, 0)
        return np.einsum("qk,qk->q", weights, values[safe_idx] * mask)
    return np.einsum("qk,qk->q", weights, values[neighbor_idx])


def nngp_log_density_from_weights(values, target_values, neighbor_idx, weights, f):
    """Sum of per-site normal log densities N(x_l | B_l x(N_l), F_l)."""
    means = conditional_means(values, neighbor_idx, weights)
    resid = target_values - means
    return float(-0.5 * np.sum(np.log(2.0 * np.pi * f) + resid * resid / f))


def nngp_log_density(values, neighbor_idx, locations, params):
    """Joint NNGP log density of `values` on `locations` with the given sets."""
    values = np.asarray(values, dtype=float)
    locations = np.atleast_2d(np.asarray(locations, dtype=float))
    b, f = batched_nngp_weights(locations, neighbor_idx, locations, params)
    return nngp_log_density_from_weights(values, values, neighbor_idx, b, f)
