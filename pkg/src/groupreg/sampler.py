"""MCMC engine for the symmetric registration model.

Per-iteration sweep order (the template conditionals consume the freshest
transformed-template values):

    {X(T_i)} for all i  ->  X  ->  {T_i}  ->  {T_i^r}
      ->  standardize({T_i})  ->  {beta_i, sigma_i^2}  ->  alpha  ->  rho

Forward transforms are Karcher-standardized after every sweep; the stored
X(T_i) values are carried over and re-bound to the relabeled locations'
neighbor sets. Reverse transforms are never standardized (their anchoring
comes through the penalty terms).

Randomness is drawn from counter-based streams keyed by
(seed, iteration, phase, subject), so per-subject updates can run on a
thread pool without changing results. GROUPREG_THREADS (or config.threads)
caps the pool; the template sweep is intrinsically sequential.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import (DegenerateInput, GroupregError, InsufficientSamples,
                     NoRealLogarithm, OutOfLibraryBounds)
from .grids import ActivationMap
from .interp import interpolate
from .model import (Hyperparams, ModelGeometry, SubjectBlock, backward_values,
                    build_geometry, penalty_terms, pointwise_log_lik,
                    transform_log_prior, waic)
from .spatial import (CovarianceParams, batched_nngp_weights,
                      conditional_means, lookup_neighbors,
                      nngp_log_density_from_weights)
from .store import SampleStore
from .transforms import (AffineTransform, affine_apply, affine_compose,
                         affine_inverse, karcher_mean, lie_exp, lie_log,
                         proposal_jacobian)

ADAPT_TARGET_RATE = 0.234

# Phase tags for the counter-based random streams.
_PH_XT, _PH_X, _PH_TFWD, _PH_TREV, _PH_BETA, _PH_ALPHA, _PH_RHO = range(7)
_PH_INIT = 99


def substream(seed, iteration, phase, subject=0):
    """Deterministic per-(iteration, phase, subject) generator."""
    ss = np.random.SeedSequence(entropy=int(seed),
                                spawn_key=(int(iteration), int(phase), int(subject)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class AdaptiveProposal:
    """Robbins-Monro step-size and empirical covariance for one Lie-MH chain.

    log lambda moves by k^{-0.6} * (accept - 0.234) per proposal during
    burn-in; the proposal covariance is lambda * (cov of accepted deltas
    + 1e-8 I). Both freeze at the end of burn-in so the post-burn-in chain
    is Markov.
    """

    dim: int
    log_lambda: float = np.log(1e-4)
    k: int = 0
    frozen: bool = False
    _mean: np.ndarray = None
    _m2: np.ndarray = None
    n_accepted_cov: int = 0
    proposals: int = 0
    accepts: int = 0
    post_proposals: int = 0
    post_accepts: int = 0
    rejected_oob: int = 0
    rejected_nolog: int = 0

    def __post_init__(self):
        if self._mean is None:
            self._mean = np.zeros(self.dim)
        if self._m2 is None:
            self._m2 = np.zeros((self.dim, self.dim))

    def proposal_cov(self):
        if self.n_accepted_cov >= 5:
            base = self._m2 / (self.n_accepted_cov - 1)
        else:
            base = np.eye(self.dim)
        return np.exp(self.log_lambda) * (base + 1e-8 * np.eye(self.dim))

    def record(self, accepted, delta=None):
        self.proposals += 1
        self.accepts += int(accepted)
        if self.frozen:
            self.post_proposals += 1
            self.post_accepts += int(accepted)
            return
        self.k += 1
        gamma = self.k ** -0.6
        self.log_lambda += gamma * ((1.0 if accepted else 0.0) - ADAPT_TARGET_RATE)
        if accepted and delta is not None:
            self.n_accepted_cov += 1
            d = np.asarray(delta, dtype=float) - self._mean
            self._mean += d / self.n_accepted_cov
            self._m2 += np.outer(d, np.asarray(delta, dtype=float) - self._mean)

    def acceptance_rate(self, post_only=False):
        num, den = ((self.post_accepts, self.post_proposals) if post_only
                    else (self.accepts, self.proposals))
        return num / den if den else float("nan")


@dataclass
class SubjectState(SubjectBlock):
    """SubjectBlock plus NNGP caches for the current forward transform."""

    locs: np.ndarray = field(default=None, repr=False)   # T(S), (V, d)
    nbr: np.ndarray = field(default=None, repr=False)    # library neighbor sets
    B: np.ndarray = field(default=None, repr=False)
    F: np.ndarray = field(default=None, repr=False)


@dataclass
class ChainState:
    X: np.ndarray
    blocks: list
    alpha: float
    rho: float
    tB: np.ndarray = field(default=None, repr=False)     # template NNGP weights
    tF: np.ndarray = field(default=None, repr=False)
    adapt_fwd: list = None
    adapt_rev: list = None
    iteration: int = 0
    rho_proposals: int = 0
    rho_accepts: int = 0

    @property
    def cov(self):
        return CovarianceParams(self.alpha, self.rho)


def refresh_template_weights(state, geom):
    state.tB, state.tF = batched_nngp_weights(
        geom.locations, geom.neighbor_sets, geom.locations, state.cov)


def refresh_subject_geometry(blk, geom, cov):
    """Recompute T(S), library neighbor sets and (B, F) for one subject."""
    blk.locs = affine_apply(blk.T, geom.locations)
    blk.nbr = lookup_neighbors(blk.locs, geom.library)
    blk.B, blk.F = batched_nngp_weights(blk.locs, blk.nbr, geom.locations, cov)


# ---------------------------------------------------------------------------
# Gibbs conditionals
# ---------------------------------------------------------------------------

def transformed_template_conditional(blk, x):
    """Mean and variance vectors of X(T_i(s_l)) | rest for all l.

    Precision beta^2/sigma^2 + 1/F, mean term beta*Y_l/sigma^2 + B x(N)/F:
    the beta-consistent form, reducing to the flat-scale formula at beta=1.
    """
    prec = blk.beta ** 2 / blk.sigma2 + 1.0 / blk.F
    lin = blk.beta * blk.Y.values / blk.sigma2 + conditional_means(x, blk.nbr, blk.B) / blk.F
    var = 1.0 / prec
    return lin * var, var


def update_transformed_template(blk, x, rng):
    mean, var = transformed_template_conditional(blk, x)
    return mean + np.sqrt(var) * rng.standard_normal(mean.size)


@dataclass
class _SweepStructure:
    """CSC-like reverse-dependency structure used by the sequential X sweep."""

    col_ptr: np.ndarray
    rows: np.ndarray       # flat row index: [0, V) template, V + i*V + t subjects
    w: np.ndarray          # B coefficient of the (row, column-site) pair
    finv: np.ndarray       # 1 / F of the owning row
    prec: np.ndarray       # full conditional precision per site (X-independent)
    lin_data: np.ndarray   # backward data term sum_i beta_i Y_bw_i / sigma_i^2
    r_flat: np.ndarray     # residuals x(t) - B_t x(N_t) per row, maintained in-sweep


def build_sweep_structure(state, geom):
    v = state.X.size
    cols, rows, w, finv = [], [], [], []

    def add(nbr, b, f, row_offset):
        mask = nbr >= 0
        r, c = np.nonzero(mask)
        cols.append(nbr[r, c])
        rows.append(row_offset + r)
        w.append(b[r, c])
        finv.append(1.0 / f[r])

    add(geom.neighbor_sets, state.tB, state.tF, 0)
    for i, blk in enumerate(state.blocks):
        add(blk.nbr, blk.B, blk.F, v * (i + 1))
    cols = np.concatenate(cols)
    rows = np.concatenate(rows)
    w = np.concatenate(w)
    finv = np.concatenate(finv)

    order = np.argsort(cols, kind="stable")
    cols, rows, w, finv = cols[order], rows[order], w[order], finv[order]
    counts = np.bincount(cols, minlength=v)
    col_ptr = np.concatenate([[0], np.cumsum(counts)])

    beta_prec = sum(blk.beta ** 2 / blk.sigma2 for blk in state.blocks)
    prec = 1.0 / state.tF + np.bincount(cols, weights=w * w * finv, minlength=v) + beta_prec
    lin_data = np.zeros(v)
    for blk in state.blocks:
        lin_data += blk.beta / blk.sigma2 * blk.Y_bw

    r_flat = np.concatenate(
        [state.X - conditional_means(state.X, geom.neighbor_sets, state.tB)]
        + [blk.XT - conditional_means(state.X, blk.nbr, blk.B) for blk in state.blocks])
    return _SweepStructure(col_ptr, rows, w, finv, prec, lin_data, r_flat)


def template_site_conditional(l, x, state, geom, structure=None):
    """Mean and variance of X(s_l) | rest, for the audit and the sweep."""
    st = structure if structure is not None else build_sweep_structure(state, geom)
    s, e = st.col_ptr[l], st.col_ptr[l + 1]
    rs, ws, fi = st.rows[s:e], st.w[s:e], st.finv[s:e]
    a = st.r_flat[rs] + ws * x[l]
    nbr = geom.neighbor_sets[l]
    kn = int(np.sum(nbr >= 0))
    own = (state.tB[l, :kn] @ x[nbr[:kn]]) / state.tF[l] if kn else 0.0
    mu = own + float(ws @ (a * fi)) + st.lin_data[l]
    var = 1.0 / st.prec[l]
    return var * mu, var


def update_template(state, geom, rng):
    """Sequential Gibbs sweep of X in site order, residuals kept current."""
    x = state.X
    v = x.size
    st = build_sweep_structure(state, geom)
    z = rng.standard_normal(v)
    nsets = geom.neighbor_sets
    ncounts = np.sum(nsets >= 0, axis=1)
    col_ptr, rows, w, finv = st.col_ptr, st.rows, st.w, st.finv
    r_flat, prec, lin_data = st.r_flat, st.prec, st.lin_data
    tB, tF = state.tB, state.tF
    for l in range(v):
        s, e = col_ptr[l], col_ptr[l + 1]
        rs = rows[s:e]
        ws = w[s:e]
        fi = finv[s:e]
        xl = x[l]
        a = r_flat[rs] + ws * xl
        kn = ncounts[l]
        own = (tB[l, :kn] @ x[nsets[l, :kn]]) / tF[l] if kn else 0.0
        mu = own + ws @ (a * fi) + lin_data[l]
        var = 1.0 / prec[l]
        x_new = var * mu + np.sqrt(var) * z[l]
        delta = x_new - xl
        r_flat[rs] -= ws * delta
        r_flat[l] += delta
        x[l] = x_new
    return x


def update_beta_sigma(blk, x, hp, rng):
    """Draw sigma^2 from its beta-marginalized conditional, then beta | sigma^2."""
    xt, y, ybw = blk.XT, blk.Y.values, blk.Y_bw
    v = y.size
    lam_n = 1.0 / (float(xt @ xt) + float(x @ x) + hp.lambda0)
    mu_n = lam_n * (hp.mu0 * hp.lambda0 + float(xt @ y) + float(x @ ybw))
    rate = hp.a1_sigma + 0.5 * (float(y @ y) + float(ybw @ ybw)
                                + hp.mu0 ** 2 * hp.lambda0 - mu_n ** 2 / lam_n)
    rate = max(rate, 1e-12)  # NonPositiveScale guard
    sigma2 = 1.0 / rng.gamma(shape=hp.a0_sigma + v, scale=1.0 / rate)
    beta = rng.normal(mu_n, np.sqrt(lam_n * sigma2))
    return beta, sigma2


def alpha_conditional(state, geom, hp):
    """Shape and rate of the conjugate inverse-gamma conditional for alpha."""
    x = state.X
    v = x.size
    n = len(state.blocks)
    resid_t = x - conditional_means(x, geom.neighbor_sets, state.tB)
    quad = float(np.sum(resid_t ** 2 * state.alpha / state.tF))
    for blk in state.blocks:
        resid = blk.XT - conditional_means(x, blk.nbr, blk.B)
        quad += float(np.sum(resid ** 2 * state.alpha / blk.F))
    shape = hp.a0_alpha + v * (n + 1) / 2.0
    rate = hp.b0_alpha + 0.5 * quad
    return shape, rate


def update_alpha(state, geom, hp, rng):
    shape, rate = alpha_conditional(state, geom, hp)
    new_alpha = 1.0 / rng.gamma(shape=shape, scale=1.0 / rate)
    ratio = new_alpha / state.alpha
    state.tF = state.tF * ratio
    for blk in state.blocks:
        blk.F = blk.F * ratio
    state.alpha = new_alpha
    return new_alpha


def update_rho(state, geom, hp, rng, step):
    """Random-walk Metropolis on rho; proposals outside (L, U) are rejected."""
    state.rho_proposals += 1
    prop = state.rho + step * rng.standard_normal()
    accept_draw = np.log(rng.uniform())
    if not (hp.rho_lower < prop < hp.rho_upper):
        return False
    cov_new = CovarianceParams(state.alpha, prop)
    x = state.X
    tB_new, tF_new = batched_nngp_weights(
        geom.locations, geom.neighbor_sets, geom.locations, cov_new)
    log_new = nngp_log_density_from_weights(x, x, geom.neighbor_sets, tB_new, tF_new)
    log_old = nngp_log_density_from_weights(x, x, geom.neighbor_sets, state.tB, state.tF)
    new_weights = []
    for blk in state.blocks:
        b_new, f_new = batched_nngp_weights(blk.locs, blk.nbr, geom.locations, cov_new)
        log_new += nngp_log_density_from_weights(x, blk.XT, blk.nbr, b_new, f_new)
        log_old += nngp_log_density_from_weights(x, blk.XT, blk.nbr, blk.B, blk.F)
        new_weights.append((b_new, f_new))
    if accept_draw < log_new - log_old:
        state.rho = prop
        state.tB, state.tF = tB_new, tF_new
        for blk, (b_new, f_new) in zip(state.blocks, new_weights):
            blk.B, blk.F = b_new, f_new
        state.rho_accepts += 1
        return True
    return False


# ---------------------------------------------------------------------------
# Lie-group Metropolis-Hastings for the transforms
# ---------------------------------------------------------------------------

def mvn_logpdf(x, cov):
    x = np.asarray(x, dtype=float)
    chol = np.linalg.cholesky(cov)
    half = np.linalg.solve(chol, x)
    return float(-0.5 * (x.size * np.log(2.0 * np.pi) + float(half @ half))
                 - np.sum(np.log(np.diag(chol))))


def lie_mh_log_acceptance(log_target_x, log_target_y, delta_fwd, delta_rev, prop_cov):
    """log acceptance for y = exp(delta_fwd) x under q(y|x) = p(delta) |J(delta)|^-1."""
    lq_fwd = mvn_logpdf(delta_fwd, prop_cov) - np.log(proposal_jacobian(delta_fwd))
    lq_rev = mvn_logpdf(delta_rev, prop_cov) - np.log(proposal_jacobian(delta_rev))
    return min(0.0, (log_target_y + lq_rev) - (log_target_x + lq_fwd))


def forward_transform_log_target(t, t_r, x, xt, geom, hp, cov):
    """T-dependent part of the joint: prior, NNGP terms of X(T), both penalties.

    Raises OutOfLibraryBounds when T moves a template site past the margin.
    """
    locs = affine_apply(t, geom.locations)
    nbr = lookup_neighbors(locs, geom.library)
    b, f = batched_nngp_weights(locs, nbr, geom.locations, cov)
    p1, p2 = penalty_terms(t, t_r)
    return (transform_log_prior(t, hp.a_T, hp.b_T, geom.sigma_s)
            + nngp_log_density_from_weights(x, xt, nbr, b, f)
            - hp.lambda_r * (p1 + p2)), (locs, nbr, b, f)


def reverse_transform_log_target(t_r, t, x, y_map, beta, sigma2, geom, hp):
    """T^r-dependent part: prior, backward SSD (1/2 weighted), both penalties."""
    pts = affine_apply(t_r, geom.locations)
    y_bw = interpolate(y_map, pts)
    ssd = float(np.sum((y_bw - beta * x) ** 2))
    p1, p2 = penalty_terms(t, t_r)
    return (transform_log_prior(t_r, hp.a_Tr, hp.b_Tr, geom.sigma_s)
            - 0.5 * ssd / sigma2 - hp.lambda_r * (p1 + p2)), y_bw


def _draw_delta(adapt, rng):
    cov = adapt.proposal_cov()
    delta = np.linalg.cholesky(cov) @ rng.standard_normal(adapt.dim)
    return delta, cov


def update_forward_transform(blk, state, geom, hp, adapt, rng):
    delta, prop_cov = _draw_delta(adapt, rng)
    accept_draw = np.log(rng.uniform())
    t_new = affine_compose(lie_exp(delta), blk.T)
    try:
        lie_log(t_new)  # proposals without a real logarithm are rejected
        delta_rev = lie_log(affine_compose(blk.T, affine_inverse(t_new)))
    except NoRealLogarithm:
        adapt.rejected_nolog += 1
        adapt.record(False)
        return False
    try:
        log_new, caches = forward_transform_log_target(
            t_new, blk.T_r, state.X, blk.XT, geom, hp, state.cov)
    except OutOfLibraryBounds:
        adapt.rejected_oob += 1
        adapt.record(False)
        return False
    p1, p2 = penalty_terms(blk.T, blk.T_r)
    log_old = (transform_log_prior(blk.T, hp.a_T, hp.b_T, geom.sigma_s)
               + nngp_log_density_from_weights(state.X, blk.XT, blk.nbr, blk.B, blk.F)
               - hp.lambda_r * (p1 + p2))
    log_acc = lie_mh_log_acceptance(log_old, log_new, delta, delta_rev, prop_cov)
    accepted = accept_draw < log_acc
    if accepted:
        blk.T = t_new
        blk.locs, blk.nbr, blk.B, blk.F = caches
    adapt.record(accepted, delta)
    return accepted


def update_reverse_transform(blk, state, geom, hp, adapt, rng):
    delta, prop_cov = _draw_delta(adapt, rng)
    accept_draw = np.log(rng.uniform())
    t_new = affine_compose(lie_exp(delta), blk.T_r)
    try:
        lie_log(t_new)
        delta_rev = lie_log(affine_compose(blk.T_r, affine_inverse(t_new)))
    except NoRealLogarithm:
        adapt.rejected_nolog += 1
        adapt.record(False)
        return False
    log_new, y_bw_new = reverse_transform_log_target(
        t_new, blk.T, state.X, blk.Y, blk.beta, blk.sigma2, geom, hp)
    ssd_old = float(np.sum((blk.Y_bw - blk.beta * state.X) ** 2))
    p1, p2 = penalty_terms(blk.T, blk.T_r)
    log_old = (transform_log_prior(blk.T_r, hp.a_Tr, hp.b_Tr, geom.sigma_s)
               - 0.5 * ssd_old / blk.sigma2 - hp.lambda_r * (p1 + p2))
    log_acc = lie_mh_log_acceptance(log_old, log_new, delta, delta_rev, prop_cov)
    accepted = accept_draw < log_acc
    if accepted:
        blk.T_r = t_new
        blk.Y_bw = y_bw_new
    adapt.record(accepted, delta)
    return accepted


def standardize_forward_transforms(state, geom, karcher_tol=1e-10):
    """Right-translate {T_i} by the inverse Karcher mean; re-bind X(T_i) sets.

    Standardization is a relabeling: the stored X(T_i) values are carried
    over, only the site locations (and hence neighbor sets / weights) move.
    """
    if not state.blocks:
        return
    mean = karcher_mean([blk.T for blk in state.blocks], tol=karcher_tol)
    mean_inv = affine_inverse(mean)
    cov = state.cov
    for blk in state.blocks:
        blk.T = affine_compose(blk.T, mean_inv)
        refresh_subject_geometry(blk, geom, cov)


def standardize_scales(state):
    """Rescale so mean(beta) = 1, moving the scale into the template.

    The products beta_i * X and beta_i * X(T_i) are invariant: beta_i is
    divided by the mean while X and the stored X(T_i) are multiplied by it.
    Like the transform standardization, this pins the scale direction of the
    (beta, X) non-identifiability; the alpha draw that follows re-equilibrates
    the GP amplitude to the rescaled template.
    """
    if not state.blocks:
        return
    bar = float(np.mean([blk.beta for blk in state.blocks]))
    if not np.isfinite(bar) or bar <= 1e-8:
        return
    for blk in state.blocks:
        blk.beta /= bar
        blk.XT = blk.XT * bar
    state.X = state.X * bar


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def fit_scale(y_values, xt_values):
    """No-intercept regression coefficient of Y onto X(T)."""
    den = float(np.dot(xt_values, xt_values))
    if den <= 0.0:
        raise DegenerateInput("scale regression undefined: X(T) is identically zero")
    return float(np.dot(xt_values, y_values)) / den


def _coarse_grid(lattice):
    """Deterministic coarse search grid over the affine group."""
    lower, upper = lattice.bounds()
    extent = upper - lower
    center = 0.5 * (lower + upper)
    out = []
    if lattice.dim == 1:
        shifts = np.linspace(-0.25 * extent[0], 0.25 * extent[0], 21)
        scales = np.linspace(0.8, 1.25, 10)
        for c in scales:
            for u in shifts:
                a = np.array([[c]])
                b = np.array([u]) + center - a @ center
                out.append(AffineTransform.from_parts(a, b))
    else:
        shifts0 = np.linspace(-0.25 * extent[0], 0.25 * extent[0], 5)
        shifts1 = np.linspace(-0.25 * extent[1], 0.25 * extent[1], 5)
        angles = np.linspace(-np.pi / 6.0, np.pi / 6.0, 7)
        scales = (0.9, 1.0, 1.1)
        for c in scales:
            for th in angles:
                rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
                a = c * rot
                for u0 in shifts0:
                    for u1 in shifts1:
                        b = np.array([u0, u1]) + center - a @ center
                        out.append(AffineTransform.from_parts(a, b))
    return out


def fit_affine(y_map, x_map, beta, start, coarse=False):
    """Affine transform minimizing ||Y - beta X(T)||^2, coarse grid + Nelder-Mead."""
    pts = y_map.lattice.locations()
    y = y_map.values

    def objective(t):
        xt = interpolate(x_map, affine_apply(t, pts))
        r = y - beta * xt
        return float(r @ r)

    candidates = [start] + (_coarse_grid(y_map.lattice) if coarse else [])
    objs = [objective(t) for t in candidates]
    best = candidates[int(np.argmin(objs))]

    x0 = lie_log(best)
    res = minimize(lambda dv: objective(lie_exp(dv)), x0, method="Nelder-Mead",
                   options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": 400 * x0.size})
    if res.fun <= min(objs):
        return lie_exp(res.x)
    return best


def initialize(maps, hp, config, geom):
    """Alternating template/transform initialization (deterministic).

    Repeats: fit each T_i by warping beta_i X to Y_i (coarse grid on the
    first pass, Nelder-Mead refinement thereafter), re-fit beta_i by
    no-intercept regression, standardize T at identity and beta at 1, then
    re-estimate X as the mean of back-warped maps Y_i(T_i^{-1})/beta_i.
    Stops after config.init_iters passes or when the template change drops
    below 1e-4 relative.
    """
    if not maps:
        raise DegenerateInput("need at least one subject map")
    lattice = maps[0].lattice
    for amap in maps:
        if np.ptp(amap.values) == 0.0:
            raise DegenerateInput("constant map: scale regression undefined")

    pts = geom.locations
    x = np.mean([amap.values for amap in maps], axis=0)
    n = len(maps)
    ts = [AffineTransform.identity(lattice.dim) for _ in range(n)]
    betas = np.ones(n)

    for it in range(config.init_iters):
        x_map = ActivationMap(lattice, x)
        ts = [fit_affine(maps[i], x_map, betas[i], ts[i], coarse=(it == 0))
              for i in range(n)]
        for i in range(n):
            xt = interpolate(x_map, affine_apply(ts[i], pts))
            betas[i] = fit_scale(maps[i].values, xt)
        mean = karcher_mean(ts, tol=config.karcher_tol)
        mean_inv = affine_inverse(mean)
        ts = [affine_compose(t, mean_inv) for t in ts]
        betas = betas / np.mean(betas)
        x_new = np.mean(
            [interpolate(maps[i], affine_apply(affine_inverse(ts[i]), pts)) / betas[i]
             for i in range(n)], axis=0)
        rel = np.linalg.norm(x_new - x) / max(np.linalg.norm(x), 1e-12)
        x = x_new
        if rel < 1e-4:
            break

    return _finalize_initial_state(maps, hp, config, geom, x, ts, betas)


def _finalize_initial_state(maps, hp, config, geom, x, ts, betas):
    lattice = maps[0].lattice
    x_map = ActivationMap(lattice, x)
    pts = geom.locations
    blocks = []
    for i, amap in enumerate(maps):
        t = ts[i]
        t_r = affine_inverse(t)
        xt = interpolate(x_map, affine_apply(t, pts))
        resid = amap.values - betas[i] * xt
        sigma2 = max(float(np.mean(resid ** 2)), 1e-12)
        y_bw = interpolate(amap, affine_apply(t_r, pts))
        blocks.append(SubjectState(Y=amap, T=t, T_r=t_r, beta=float(betas[i]),
                                   sigma2=sigma2, XT=xt, Y_bw=y_bw))
    alpha = max(float(np.var(x)), 1e-12)
    rho = 0.5 * (hp.rho_lower + hp.rho_upper)
    state = ChainState(X=x.copy(), blocks=blocks, alpha=alpha, rho=rho)
    return state


# ---------------------------------------------------------------------------
# Chain orchestration
# ---------------------------------------------------------------------------

class ChainAborted(GroupregError):
    """A sweep failed; carries a diagnostic snapshot of the chain state."""

    def __init__(self, message, snapshot):
        super().__init__(message)
        self.snapshot = snapshot


class Chain:
    """The full Gibbs/Metropolis sweep over one dataset."""

    def __init__(self, maps, config, initial_state=None):
        config.validate()
        self.config = config
        self.hp = config.hyperparams()
        lattice = maps[0].lattice
        for amap in maps[1:]:
            if amap.lattice.shape != lattice.shape or not (
                    np.allclose(amap.lattice.spacing, lattice.spacing)
                    and np.allclose(amap.lattice.origin, lattice.origin)):
                raise DegenerateInput("all subject maps must share one lattice")
        self.maps = list(maps)
        self.geom = build_geometry(lattice, config.m, config.margin)
        self.seed = config.seed
        if initial_state is None:
            initial_state = initialize(self.maps, self.hp, config, self.geom)
        self.state = initial_state
        n = len(self.state.blocks)
        dim_lie = lattice.dim * (lattice.dim + 1)
        if self.state.adapt_fwd is None:
            self.state.adapt_fwd = [AdaptiveProposal(dim_lie) for _ in range(n)]
        if self.state.adapt_rev is None:
            self.state.adapt_rev = [AdaptiveProposal(dim_lie) for _ in range(n)]
        refresh_template_weights(self.state, self.geom)
        for blk in self.state.blocks:
            refresh_subject_geometry(blk, self.geom, self.state.cov)
            if blk.Y_bw is None:
                blk.Y_bw = backward_values(blk)
        self.threads = config.effective_threads()

    def _map_subjects(self, fn):
        blocks = self.state.blocks
        workers = min(self.threads, len(blocks))
        if workers <= 1 or len(blocks) <= 1:
            for i, blk in enumerate(blocks):
                fn(i, blk)
            return
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda ib: fn(*ib), enumerate(blocks)))

    def sweep(self):
        state, geom, hp = self.state, self.geom, self.hp
        it, seed = state.iteration, self.seed
        if it >= self.config.burn_in:
            for rec in state.adapt_fwd + state.adapt_rev:
                rec.frozen = True
        try:
            self._map_subjects(lambda i, blk: setattr(
                blk, "XT", update_transformed_template(
                    blk, state.X, substream(seed, it, _PH_XT, i))))
            update_template(state, geom, substream(seed, it, _PH_X))
            self._map_subjects(lambda i, blk: update_forward_transform(
                blk, state, geom, hp, state.adapt_fwd[i],
                substream(seed, it, _PH_TFWD, i)))
            self._map_subjects(lambda i, blk: update_reverse_transform(
                blk, state, geom, hp, state.adapt_rev[i],
                substream(seed, it, _PH_TREV, i)))
            standardize_forward_transforms(state, geom, self.config.karcher_tol)

            def beta_sigma(i, blk):
                blk.beta, blk.sigma2 = update_beta_sigma(
                    blk, state.X, hp, substream(seed, it, _PH_BETA, i))
            self._map_subjects(beta_sigma)
            standardize_scales(state)
            update_alpha(state, geom, hp, substream(seed, it, _PH_ALPHA))
            update_rho(state, geom, hp, substream(seed, it, _PH_RHO),
                       self.config.rho_step)
        except GroupregError as exc:
            raise ChainAborted(f"sweep {it} failed: {exc}", self.snapshot()) from exc
        state.iteration += 1

    def snapshot(self):
        state = self.state
        return {
            "iteration": state.iteration,
            "alpha": state.alpha,
            "rho": state.rho,
            "beta": [blk.beta for blk in state.blocks],
            "sigma2": [blk.sigma2 for blk in state.blocks],
            "transforms": [blk.T.matrix.tolist() for blk in state.blocks],
            "reverse_transforms": [blk.T_r.matrix.tolist() for blk in state.blocks],
        }

    def inverse_consistency_error(self):
        """Mean over subjects of ||H_T H_Tr - I||_F at the current state."""
        gaps = [penalty_terms(blk.T, blk.T_r)[0] for blk in self.state.blocks]
        return float(np.mean(gaps)) if gaps else 0.0

    def run(self):
        """Run the configured chain; returns (SampleStore, diagnostics dict)."""
        cfg = self.config
        t_start = time.perf_counter()
        kept_x, kept_hf, kept_hr = [], [], []
        kept_beta, kept_s2, kept_alpha, kept_rho = [], [], [], []
        kept_ll, kept_ic = [], []
        for it in range(cfg.total):
            self.sweep()
            if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
                st = self.state
                kept_x.append(st.X.copy())
                kept_hf.append(np.stack([blk.T.matrix for blk in st.blocks])
                               if st.blocks else np.zeros((0, 0, 0)))
                kept_hr.append(np.stack([blk.T_r.matrix for blk in st.blocks])
                               if st.blocks else np.zeros((0, 0, 0)))
                kept_beta.append([blk.beta for blk in st.blocks])
                kept_s2.append([blk.sigma2 for blk in st.blocks])
                kept_alpha.append(st.alpha)
                kept_rho.append(st.rho)
                if st.blocks:
                    kept_ll.append(pointwise_log_lik(st.X, st.blocks))
                kept_ic.append(self.inverse_consistency_error())
        runtime = time.perf_counter() - t_start

        lattice = self.geom.lattice
        meta = {
            "model": cfg.model,
            "seed": cfg.seed,
            "config_hash": cfg.config_hash(),
            "lambda_r": cfg.lambda_r,
            "dim": lattice.dim,
            "shape": list(lattice.shape),
            "spacing": [float(s) for s in lattice.spacing],
            "origin": [float(o) for o in lattice.origin],
            "n_subjects": len(self.state.blocks),
        }
        store = SampleStore(
            meta=meta,
            X=np.asarray(kept_x),
            H_fwd=np.asarray(kept_hf),
            H_rev=np.asarray(kept_hr),
            beta=np.asarray(kept_beta, dtype=float),
            sigma2=np.asarray(kept_s2, dtype=float),
            alpha=np.asarray(kept_alpha, dtype=float),
            rho=np.asarray(kept_rho, dtype=float),
        )
        diagnostics = self._diagnostics(kept_ll, kept_ic, runtime)
        return store, diagnostics

    def _diagnostics(self, kept_ll, kept_ic, runtime):
        st = self.state
        diag = {
            "runtime_seconds": runtime,
            "iterations": st.iteration,
            "n_samples": len(kept_ic),
            "rho_acceptance": (st.rho_accepts / st.rho_proposals
                               if st.rho_proposals else float("nan")),
            "alpha_last": st.alpha,
            "rho_last": st.rho,
            "mean_ic_error": float(np.mean(kept_ic)) if kept_ic else float("nan"),
            "forward_acceptance": [r.acceptance_rate() for r in st.adapt_fwd],
            "forward_acceptance_post_burnin": [r.acceptance_rate(post_only=True)
                                               for r in st.adapt_fwd],
            "reverse_acceptance": [r.acceptance_rate() for r in st.adapt_rev],
            "reverse_acceptance_post_burnin": [r.acceptance_rate(post_only=True)
                                               for r in st.adapt_rev],
            "rejected_out_of_library": [r.rejected_oob for r in st.adapt_fwd],
            "rejected_no_real_log": [r.rejected_nolog + rr.rejected_nolog
                                     for r, rr in zip(st.adapt_fwd, st.adapt_rev)],
            "beta_last": [blk.beta for blk in st.blocks],
            "sigma2_last": [blk.sigma2 for blk in st.blocks],
        }
        if len(kept_ll) >= 2:
            ll = np.asarray(kept_ll)
            diag["waic"] = waic(ll)
        else:
            diag["waic"] = float("nan")
        return diag


def run_chain(maps, config, initial_state=None):
    """Fit the symmetric model; deterministic given config + seed."""
    return Chain(maps, config, initial_state=initial_state).run()


# ---------------------------------------------------------------------------
# Posterior summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PosteriorSummary:
    mean: np.ndarray
    sd: np.ndarray
    ratio: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    mean_forward: list
    mean_reverse: list


def summarize(store, level=0.95):
    """Location-wise mean/sd/ratio and equal-tailed credible intervals.

    The ratio is reported as 0 where sd < 1e-12. Posterior-mean transforms
    are Karcher means of the sampled transforms, per subject and direction.
    """
    x = np.asarray(store.X, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientSamples("summaries need at least 2 samples")
    mean = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1)
    ratio = np.where(sd < 1e-12, 0.0, mean / np.where(sd < 1e-12, 1.0, sd))
    tail = 0.5 * (1.0 - level)
    lower = np.quantile(x, tail, axis=0)
    upper = np.quantile(x, 1.0 - tail, axis=0)
    mean_fwd, mean_rev = [], []
    n = store.H_fwd.shape[1] if store.H_fwd.ndim == 4 else 0
    for i in range(n):
        mean_fwd.append(karcher_mean(
            [AffineTransform(h) for h in store.H_fwd[:, i]]))
        mean_rev.append(karcher_mean(
            [AffineTransform(h) for h in store.H_rev[:, i]]))
    return PosteriorSummary(mean=mean, sd=sd, ratio=ratio, lower=lower,
                            upper=upper, level=level,
                            mean_forward=mean_fwd, mean_reverse=mean_rev)
