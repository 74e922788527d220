"""Affine transform algebra on homogeneous matrices.

A d-dimensional affine map s -> A s + b is stored canonically as its
(d+1)x(d+1) homogeneous matrix [[A, b], [0, 1]]; (A, b) is a derived view.
Lie-algebra coordinates are the top d rows of the matrix logarithm of the
homogeneous matrix, flattened row-major: length d(d+1), i.e. 6 entries in 2D
and 2 in 1D.

All operations are pure functions on value types and thread-safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import exprel

from .errors import NoConvergence, NoRealLogarithm, SingularTransform

DET_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class AffineTransform:
    """Invertible affine map; `matrix` is the homogeneous-matrix view."""

    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        h = np.asarray(self.matrix, dtype=float)
        if h.ndim != 2 or h.shape[0] != h.shape[1] or h.shape[0] not in (2, 3):
            raise ValueError(f"homogeneous matrix must be 2x2 or 3x3, got {h.shape}")
        bottom = np.zeros(h.shape[0])
        bottom[-1] = 1.0
        if not np.allclose(h[-1], bottom, atol=1e-12):
            raise ValueError("last row of a homogeneous affine matrix must be (0,...,0,1)")
        h = h.copy()
        h[-1] = bottom
        if abs(np.linalg.det(h[:-1, :-1])) <= DET_EPS:
            raise SingularTransform(
                f"|det A| = {abs(np.linalg.det(h[:-1, :-1])):.3e} <= {DET_EPS}")
        h.setflags(write=False)
        object.__setattr__(self, "matrix", h)

    @property
    def dim(self):
        return self.matrix.shape[0] - 1

    @property
    def A(self):
        return self.matrix[:-1, :-1]

    @property
    def b(self):
        return self.matrix[:-1, -1]

    @classmethod
    def from_parts(cls, A, b):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        d = A.shape[0]
        h = np.eye(d + 1)
        h[:d, :d] = A
        h[:d, d] = b
        return cls(h)

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim + 1))

    @classmethod
    def translation(cls, b):
        b = np.atleast_1d(np.asarray(b, dtype=float))
        return cls.from_parts(np.eye(b.size), b)

    @classmethod
    def rotation(cls, theta):
        """2D rotation about the origin by `theta` radians."""
        c, s = np.cos(theta), np.sin(theta)
        return cls.from_parts(np.array([[c, -s], [s, c]]), np.zeros(2))

    @classmethod
    def scaling(cls, factors):
        f = np.atleast_1d(np.asarray(factors, dtype=float))
        return cls.from_parts(np.diag(f), np.zeros(f.size))


def affine_apply(transform, points):
    """Apply T(s) = A s + b to one point (d,) or a stack (n, d)."""
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != transform.dim:
        raise ValueError(f"points have dim {pts.shape[1]}, transform has dim {transform.dim}")
    out = pts @ transform.A.T + transform.b
    return out[0] if single else out


def affine_compose(t1, t2):
    """Composition s -> t1(t2(s)); homogeneous matrices multiply."""
    if t1.dim != t2.dim:
        raise ValueError("cannot compose transforms of different dimension")
    return AffineTransform(t1.matrix @ t2.matrix)


def affine_inverse(transform):
    a_inv = np.linalg.inv(transform.A)
    return AffineTransform.from_parts(a_inv, -a_inv @ transform.b)


def generator_from_vector(delta):
    """Reshape lie coordinates into the (d+1)x(d+1) generator (zero last row)."""
    delta = np.asarray(delta, dtype=float).ravel()
    if delta.size == 2:
        d = 1
    elif delta.size == 6:
        d = 2
    else:
        raise ValueError(f"lie vector must have length 2 or 6, got {delta.size}")
    g = np.zeros((d + 1, d + 1))
    g[:d, :] = delta.reshape(d, d + 1)
    return g


def vector_from_generator(gen):
    d = gen.shape[0] - 1
    return gen[:d, :].ravel().copy()


# Closed-form 2x2 spectral calculus. For a real 2x2 matrix with eigenvalues
# mu1, mu2 and any analytic f, f(A) = f(mu2) I + f[mu1, mu2] (A - mu2 I) with
# the divided difference f[.,.]; complex pairs a +/- bi use A = aI + bJ with
# J^2 = -I. scipy's general logm/expm cost milliseconds per 3x3 call, which
# the sampler cannot afford.

def _logm2(a):
    """Principal log of a real 2x2 matrix; NoRealLogarithm off the domain."""
    tr = a[0, 0] + a[1, 1]
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    disc = tr * tr - 4.0 * det
    if disc < 0.0:
        re = 0.5 * tr
        im = 0.5 * np.sqrt(-disc)
        j = (a - re * np.eye(2)) / im
        theta = np.arctan2(im, re)
        return 0.5 * np.log(re * re + im * im) * np.eye(2) + theta * j
    root = np.sqrt(disc)
    lam2 = 0.5 * (tr - root)
    lam1 = 0.5 * (tr + root)
    if lam2 <= 0.0:
        raise NoRealLogarithm("eigenvalue on the closed negative real axis")
    d = lam1 - lam2
    # f[lam1, lam2] = log(lam1/lam2)/(lam1-lam2), stable as d -> 0
    slope = 1.0 / lam2 if d == 0.0 else np.log1p(d / lam2) / d
    return np.log(lam2) * np.eye(2) + slope * (a - lam2 * np.eye(2))


def _expm2(ell):
    """Exponential of a real 2x2 matrix."""
    tr = ell[0, 0] + ell[1, 1]
    det = ell[0, 0] * ell[1, 1] - ell[0, 1] * ell[1, 0]
    disc = tr * tr - 4.0 * det
    if disc < 0.0:
        re = 0.5 * tr
        im = 0.5 * np.sqrt(-disc)
        j = (ell - re * np.eye(2)) / im
        return np.exp(re) * (np.cos(im) * np.eye(2) + np.sin(im) * j)
    root = np.sqrt(disc)
    mu2 = 0.5 * (tr - root)
    mu1 = 0.5 * (tr + root)
    d = mu1 - mu2
    # f[mu1, mu2] = e^{mu2} (e^d - 1)/d, stable via exprel
    slope = np.exp(mu2) * exprel(d)
    return np.exp(mu2) * np.eye(2) + slope * (ell - mu2 * np.eye(2))


def _phi1_2(ell):
    """phi1(L) = (e^L - I) L^{-1} = sum L^k/(k+1)! for a real 2x2 matrix."""
    norm = np.linalg.norm(ell)
    squarings = 0
    work = ell
    while norm > 0.8:
        work = work * 0.5
        norm *= 0.5
        squarings += 1
    acc = np.eye(2)
    term = np.eye(2)
    for k in range(1, 17):
        term = term @ work / (k + 1.0)
        acc = acc + term
    # phi1(2M) = (e^M + I) phi1(M) / 2
    for _ in range(squarings):
        acc = 0.5 * (_expm2(work) + np.eye(2)) @ acc
        work = 2.0 * work
    return acc


def lie_log(transform):
    """Principal matrix logarithm of the homogeneous matrix, flattened.

    Requires that no eigenvalue lies on the closed negative real axis;
    otherwise no real principal logarithm exists and NoRealLogarithm is
    raised (such proposals are rejected by the sampler).
    """
    h = transform.matrix
    d = transform.dim
    if d == 1:
        a = h[0, 0]
        if a <= 0:
            raise NoRealLogarithm(f"1D linear part {a} <= 0 has no real logarithm")
        ell = np.log(a)
        # b = u * (e^l - 1)/l  =>  u = b / exprel(l)
        u = h[0, 1] / exprel(ell)
        return np.array([ell, u])
    ell = _logm2(h[:2, :2])
    u = np.linalg.solve(_phi1_2(ell), h[:2, 2])
    g = np.zeros((3, 3))
    g[:2, :2] = ell
    g[:2, 2] = u
    return vector_from_generator(g)


def lie_exp(delta):
    """Matrix exponential of the reshaped generator."""
    g = generator_from_vector(delta)
    d = g.shape[0] - 1
    if d == 1:
        ell, u = g[0, 0], g[0, 1]
        h = np.array([[np.exp(ell), u * exprel(ell)], [0.0, 1.0]])
        return AffineTransform(h)
    h = np.eye(3)
    h[:2, :2] = _expm2(g[:2, :2])
    h[:2, 2] = _phi1_2(g[:2, :2]) @ g[:2, 2]
    return AffineTransform(h)


def adjoint_matrix(delta):
    """Matrix of ad_delta = [delta, .] on the affine algebra, in lie coordinates."""
    g = generator_from_vector(delta)
    d = g.shape[0] - 1
    n = d * (d + 1)
    ad = np.empty((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        basis = generator_from_vector(e)
        ad[:, k] = vector_from_generator(g @ basis - basis @ g)
    return ad


def proposal_jacobian(delta):
    """Volume correction J(delta) for the proposal T' = exp(delta) T.

    Product of lam / (1 - exp(-lam)) over the nonzero eigenvalues of the
    adjoint representation of delta. Complex eigenvalues come in conjugate
    pairs, so the product is real and positive; the empty product (delta = 0)
    is 1.
    """
    ad = adjoint_matrix(delta)
    lam = np.linalg.eigvals(ad)
    scale = max(1.0, float(np.max(np.abs(lam))) if lam.size else 1.0)
    nonzero = lam[np.abs(lam) > 1e-12 * scale]
    if nonzero.size == 0:
        return 1.0
    prod = np.prod(nonzero / -np.expm1(-nonzero))
    if abs(prod.imag) > 1e-9 * max(1.0, abs(prod.real)):
        raise FloatingPointError("adjoint spectrum product is not real")
    return float(prod.real)


def composition_identity_gap(t1, t2):
    """Frobenius norm of (H_{t1} H_{t2} - I): zero iff t2 = t1^{-1}."""
    h = t1.matrix @ t2.matrix
    return float(np.linalg.norm(h - np.eye(h.shape[0])))


def karcher_mean(transforms, tol=1e-10, max_iter=100):
    """Intrinsic (Karcher/Frechet) mean via the iterative log-domain update.

    Repeats T_bar <- T_bar * exp(mean_i log(T_bar^{-1} T_i)) until the mean
    log-step norm drops below tol. NoRealLogarithm from any T_bar^{-1} T_i
    propagates.
    """
    transforms = list(transforms)
    if not transforms:
        raise ValueError("karcher_mean needs at least one transform")
    mean = AffineTransform.identity(transforms[0].dim)
    for _ in range(max_iter):
        mean_inv = affine_inverse(mean)
        logs = np.stack([lie_log(affine_compose(mean_inv, t)) for t in transforms])
        step = logs.mean(axis=0)
        if np.linalg.norm(step) < tol:
            return mean
        mean = affine_compose(mean, lie_exp(step))
    raise NoConvergence(f"karcher_mean did not converge in {max_iter} iterations")


def standardize(transforms, tol=1e-10, max_iter=100):
    """Right-translate all transforms by the inverse Karcher mean.

    The result has Karcher mean identity, and relative geometry is preserved
    exactly: Ti' (Tj')^{-1} = Ti Tj^{-1}.
    """
    mean_inv = affine_inverse(karcher_mean(transforms, tol=tol, max_iter=max_iter))
    return [affine_compose(t, mean_inv) for t in transforms]
