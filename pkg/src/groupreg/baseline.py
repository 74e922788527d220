"""Conventional one-directional kernel-template model, for comparison.

Generative model: Y_i(s_v) = X(T_i(s_v)) + sigma_i eps with the template
parameterized as X(s) = sum_p K(s, s_p~) w(p), K a Gaussian kernel of width
tau, landmarks on a (possibly coarser) sub-lattice, and priors
w ~ N(0, K_gram), sigma_i^2 ~ InvGamma(a0, a1). Transforms use the same
affine class and marginal-t prior as the symmetric model so the comparison
isolates the symmetric-GP contribution. No reverse transforms, no intensity
scale beta, no inverse-consistency penalty.

Sampling: conjugate Gibbs for w and sigma_i^2, the same Lie-algebra
Metropolis (with J(delta) correction and Robbins-Monro adaptation) for T_i.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import IllConditioned
from .grids import ActivationMap
from .interp import interpolate
from .model import sigma_s_matrix, transform_log_prior
from .sampler import (AdaptiveProposal, _draw_delta, lie_mh_log_acceptance,
                      fit_affine, substream)
from .store import SampleStore
from .transforms import (AffineTransform, affine_apply, affine_compose,
                         affine_inverse, lie_exp, lie_log)
from .errors import NoRealLogarithm

KERNEL_JITTER = 1e-8


@dataclass(frozen=True, eq=False)
class KernelTemplate:
    """Landmark locations, kernel width and weights of the template expansion."""

    landmarks: np.ndarray = field(repr=False)   # (P, d)
    tau: float = 1.0
    weights: np.ndarray = field(default=None, repr=False)  # (P,)

    def __post_init__(self):
        lm = np.atleast_2d(np.asarray(self.landmarks, dtype=float))
        object.__setattr__(self, "landmarks", lm)
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        w = self.weights
        if w is None:
            w = np.zeros(lm.shape[0])
        w = np.asarray(w, dtype=float).ravel()
        if w.size != lm.shape[0]:
            raise ValueError("weights must have one entry per landmark")
        object.__setattr__(self, "weights", w)


def gauss_kernel(a, b, tau):
    """K(s, t) = exp(-||s - t||^2 / tau^2) between location stacks."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    return np.exp(-d2 / tau ** 2)


def kernel_template_eval(template, points):
    """Template values sum_p K(s, landmark_p) w(p) at the given points."""
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    phi = gauss_kernel(np.atleast_2d(pts), template.landmarks, template.tau)
    out = phi @ template.weights
    return float(out[0]) if single else out


def landmark_lattice(lattice, stride):
    """Landmarks on every `stride`-th lattice site per axis."""
    locs = lattice.locations().reshape(lattice.shape + (lattice.dim,))
    if lattice.dim == 1:
        return locs[::stride].reshape(-1, 1)
    return locs[::stride, ::stride].reshape(-1, 2)


def _chol_gram(landmarks, tau):
    k = gauss_kernel(landmarks, landmarks, tau)
    k[np.diag_indices_from(k)] += KERNEL_JITTER
    try:
        return k, np.linalg.cholesky(k)
    except np.linalg.LinAlgError as exc:
        raise IllConditioned("kernel Gram matrix not PD after jitter") from exc


def conventional_w_conditional(phis, ys, sigma2s, gram_chol):
    """Precision and mean of w | rest: K^{-1} + sum Phi^T Phi / sigma^2."""
    p = gram_chol.shape[0]
    eye = np.eye(p)
    k_inv = np.linalg.solve(gram_chol.T, np.linalg.solve(gram_chol, eye))
    prec = k_inv.copy()
    lin = np.zeros(p)
    for phi, y, s2 in zip(phis, ys, sigma2s):
        prec += phi.T @ phi / s2
        lin += phi.T @ y / s2
    chol = np.linalg.cholesky(0.5 * (prec + prec.T))
    mean = np.linalg.solve(chol.T, np.linalg.solve(chol, lin))
    return prec, chol, mean


def _phi_at(transform, locations, landmarks, tau):
    return gauss_kernel(affine_apply(transform, locations), landmarks, tau)


def fit_conventional(maps, config):
    """MCMC for the conventional model; returns (SampleStore, diagnostics).

    The store shares the symmetric model's record layout: the template is
    evaluated on the map lattice and stored as X, reverse transforms are
    identity and beta is 1; records are tagged with the model id in the
    header.
    """
    config.validate()
    hp = config.hyperparams()
    lattice = maps[0].lattice
    locs = lattice.locations()
    v = lattice.n_sites
    n = len(maps)
    d = lattice.dim
    seed = config.seed

    landmarks = landmark_lattice(lattice, config.landmark_stride)
    gram, gram_chol = _chol_gram(landmarks, config.tau)
    sigma_s = sigma_s_matrix(locs)

    # Initialization: coarse-fit transforms against the mean map, ridge w.
    mean_map = ActivationMap(lattice, np.mean([m.values for m in maps], axis=0))
    ts = [fit_affine(maps[i], mean_map, 1.0, AffineTransform.identity(d), coarse=True)
          for i in range(n)]
    phis = [_phi_at(t, locs, landmarks, config.tau) for t in ts]
    sigma2s = [1.0] * n
    _, chol, w = conventional_w_conditional(phis, [m.values for m in maps],
                                            sigma2s, gram_chol)
    for i in range(n):
        resid = maps[i].values - phis[i] @ w
        sigma2s[i] = max(float(np.mean(resid ** 2)), 1e-12)

    adapt = [AdaptiveProposal(d * (d + 1)) for _ in range(n)]
    ident = np.eye(d + 1)

    kept_x, kept_h, kept_s2, kept_w = [], [], [], []
    t_start = time.perf_counter()
    for it in range(config.total):
        if it >= config.burn_in:
            for rec in adapt:
                rec.frozen = True
        # w | rest: conjugate multivariate normal.
        rng = substream(seed, it, 0)
        _, chol, mean = conventional_w_conditional(
            phis, [m.values for m in maps], sigma2s, gram_chol)
        w = mean + np.linalg.solve(chol.T, rng.standard_normal(w.size))
        # sigma_i^2 | rest.
        for i in range(n):
            rng_i = substream(seed, it, 1, i)
            resid = maps[i].values - phis[i] @ w
            rate = hp.a1_sigma + 0.5 * float(resid @ resid)
            sigma2s[i] = 1.0 / rng_i.gamma(shape=hp.a0_sigma + v / 2.0,
                                           scale=1.0 / rate)
        # T_i | rest: Lie-MH against the kernel-template likelihood.
        for i in range(n):
            rng_i = substream(seed, it, 2, i)
            delta, prop_cov = _draw_delta(adapt[i], rng_i)
            accept_draw = np.log(rng_i.uniform())
            t_new = affine_compose(lie_exp(delta), ts[i])
            try:
                lie_log(t_new)
                delta_rev = lie_log(affine_compose(ts[i], affine_inverse(t_new)))
            except NoRealLogarithm:
                adapt[i].rejected_nolog += 1
                adapt[i].record(False)
                continue
            phi_new = _phi_at(t_new, locs, landmarks, config.tau)
            y = maps[i].values
            def loglik(phi, s2=sigma2s[i]):
                r = y - phi @ w
                return -0.5 * float(r @ r) / s2
            log_new = (transform_log_prior(t_new, hp.a_T, hp.b_T, sigma_s)
                       + loglik(phi_new))
            log_old = (transform_log_prior(ts[i], hp.a_T, hp.b_T, sigma_s)
                       + loglik(phis[i]))
            log_acc = lie_mh_log_acceptance(log_old, log_new, delta, delta_rev,
                                            prop_cov)
            accepted = accept_draw < log_acc
            if accepted:
                ts[i] = t_new
                phis[i] = phi_new
            adapt[i].record(accepted, delta)

        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            kept_x.append(gauss_kernel(locs, landmarks, config.tau) @ w)
            kept_h.append(np.stack([t.matrix for t in ts]))
            kept_s2.append(list(sigma2s))
            kept_w.append(w.copy())
    runtime = time.perf_counter() - t_start

    s = len(kept_x)
    meta = {
        "model": "conventional",
        "seed": seed,
        "config_hash": config.config_hash(),
        "lambda_r": 0.0,
        "dim": d,
        "shape": list(lattice.shape),
        "spacing": [float(x) for x in lattice.spacing],
        "origin": [float(x) for x in lattice.origin],
        "n_subjects": n,
    }
    store = SampleStore(
        meta=meta,
        X=np.asarray(kept_x),
        H_fwd=np.asarray(kept_h),
        H_rev=np.broadcast_to(ident, (s, n, d + 1, d + 1)).copy(),
        beta=np.ones((s, n)),
        sigma2=np.asarray(kept_s2, dtype=float),
        alpha=np.full(s, np.nan),
        rho=np.full(s, np.nan),
    )
    diagnostics = {
        "runtime_seconds": runtime,
        "n_samples": s,
        "forward_acceptance": [r.acceptance_rate() for r in adapt],
        "forward_acceptance_post_burnin": [r.acceptance_rate(post_only=True)
                                           for r in adapt],
        "sigma2_last": list(sigma2s),
        "n_landmarks": int(landmarks.shape[0]),
    }
    return store, diagnostics


def inverse_warp(maps, transforms):
    """Pull each subject map back to template space with T_i^{-1}.

    Given the model convention Y_i ~ X(T_i(.)), the template-space version of
    Y_i is Y_i(T_i^{-1}(.)); each output map is Y_i resampled at the
    inverse-transformed sites. Returns (warped maps, across-subject mean map).
    """
    warped = []
    for amap, t in zip(maps, transforms):
        pts = affine_apply(affine_inverse(t), amap.lattice.locations())
        warped.append(amap.with_values(interpolate(amap, pts)))
    mean = warped[0].with_values(np.mean([m.values for m in warped], axis=0))
    return warped, mean
