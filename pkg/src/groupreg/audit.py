"""Invariant audits: conjugacy, detailed balance, NNGP oracles, geometry.

Each audit returns a list of {name, value, tol, passed} dicts; the CLI's
`audit` subcommand prints one line per check and exits 4 on any failure.
The same functions back the acceptance test suite.
"""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .grids import ActivationMap, Lattice, make_lattice_1d
from .model import (Hyperparams, build_geometry, gibbs_log_posterior,
                    invgamma_logpdf, normal_logpdf)
from .sampler import (Chain, ChainState, SubjectState, alpha_conditional,
                      build_sweep_structure, forward_transform_log_target,
                      lie_mh_log_acceptance, mvn_logpdf, refresh_subject_geometry,
                      refresh_template_weights, template_site_conditional,
                      transformed_template_conditional)
from .spatial import (CovarianceParams, batched_nngp_weights, cov_matrix,
                      dense_gp_log_density, dense_kriging, lookup_neighbors,
                      nngp_log_density, conditional_means,
                      build_ordered_neighbor_sets)
from .synth import ScenarioSpec, gen_indicator_curves
from .transforms import (AffineTransform, affine_apply, affine_compose,
                         affine_inverse, karcher_mean, lie_exp, lie_log,
                         proposal_jacobian)

_check = lambda name, value, tol: {"name": name, "value": float(value),
                                   "tol": float(tol), "passed": bool(value < tol)}


def _toy_state(seed=0, n_subjects=2):
    """V=4, N=2 1D instance with everything in general position."""
    rng = np.random.default_rng(seed)
    lattice = Lattice(shape=(4,), spacing=np.array([1.0]), origin=np.array([0.0]))
    hp = Hyperparams(lambda_r=1.2, m=2)
    geom = build_geometry(lattice, m=hp.m, margin=4)
    cov = CovarianceParams(alpha=1.3, rho=0.8)

    x = rng.normal(size=4)
    params = [(1.05, 0.3), (0.95, -0.2)][:n_subjects]
    blocks = []
    for scale, shift in params:
        t = AffineTransform.from_parts(np.array([[scale]]), np.array([shift]))
        t_r = affine_compose(affine_inverse(t),
                             AffineTransform.from_parts(np.array([[1.0]]),
                                                        np.array([rng.normal() * 0.05])))
        y = ActivationMap(lattice, rng.normal(size=4) + 1.0)
        blk = SubjectState(Y=y, T=t, T_r=t_r, beta=float(rng.uniform(0.8, 1.2)),
                           sigma2=float(rng.uniform(0.4, 0.9)),
                           XT=rng.normal(size=4))
        blocks.append(blk)
    state = ChainState(X=x, blocks=blocks, alpha=cov.alpha, rho=cov.rho)
    refresh_template_weights(state, geom)
    from .model import backward_values
    for blk in blocks:
        refresh_subject_geometry(blk, geom, cov)
        blk.Y_bw = backward_values(blk)
    return state, geom, hp


def _joint(state, geom, hp):
    return gibbs_log_posterior(state.X, state.blocks, state.cov, hp, geom)


def conjugacy_audit(seed=0, tol=1e-8):
    """Closed-form conditional log-ratios vs joint log-ratios, all five updates."""
    results = []
    state, geom, hp = _toy_state(seed)
    base = _joint(state, geom, hp)

    # X(T_i) element.
    blk = state.blocks[0]
    mean, var = transformed_template_conditional(blk, state.X)
    l = 2
    new_val = blk.XT[l] + 0.7
    closed = (normal_logpdf(new_val, mean[l], var[l])
              - normal_logpdf(blk.XT[l], mean[l], var[l]))
    old = blk.XT[l]
    blk.XT[l] = new_val
    joint = _joint(state, geom, hp) - base
    blk.XT[l] = old
    results.append(_check("conjugacy.XT_element", abs(closed - joint), tol))

    # X element.
    l = 1
    mean_l, var_l = template_site_conditional(l, state.X, state, geom)
    new_val = state.X[l] - 0.5
    closed = (normal_logpdf(new_val, mean_l, var_l)
              - normal_logpdf(state.X[l], mean_l, var_l))
    old = state.X[l]
    state.X[l] = new_val
    joint = _joint(state, geom, hp) - base
    state.X[l] = old
    results.append(_check("conjugacy.X_element", abs(closed - joint), tol))

    # beta (sigma^2 held fixed).
    blk = state.blocks[1]
    xt, y, ybw, x = blk.XT, blk.Y.values, blk.Y_bw, state.X
    lam_n = 1.0 / (float(xt @ xt) + float(x @ x) + hp.lambda0)
    mu_n = lam_n * (hp.mu0 * hp.lambda0 + float(xt @ y) + float(x @ ybw))
    new_beta = blk.beta + 0.3
    closed = (normal_logpdf(new_beta, mu_n, lam_n * blk.sigma2)
              - normal_logpdf(blk.beta, mu_n, lam_n * blk.sigma2))
    old = blk.beta
    blk.beta = new_beta
    joint = _joint(state, geom, hp) - base
    blk.beta = old
    results.append(_check("conjugacy.beta", abs(closed - joint), tol))

    # sigma^2 (given beta): shape a0 + V + 1/2, rate includes the beta prior term.
    v = y.size
    ssd_f = float(np.sum((y - blk.beta * xt) ** 2))
    ssd_b = float(np.sum((ybw - blk.beta * x) ** 2))
    shape = hp.a0_sigma + v + 0.5
    rate = hp.a1_sigma + 0.5 * (ssd_f + ssd_b + hp.lambda0 * (blk.beta - hp.mu0) ** 2)
    new_s2 = blk.sigma2 * 1.7
    closed = (invgamma_logpdf(new_s2, shape, rate)
              - invgamma_logpdf(blk.sigma2, shape, rate))
    old = blk.sigma2
    blk.sigma2 = new_s2
    joint = _joint(state, geom, hp) - base
    blk.sigma2 = old
    results.append(_check("conjugacy.sigma2", abs(closed - joint), tol))

    # alpha.
    shape, rate = alpha_conditional(state, geom, hp)
    new_alpha = state.alpha * 1.4
    closed = (invgamma_logpdf(new_alpha, shape, rate)
              - invgamma_logpdf(state.alpha, shape, rate))
    old_alpha = state.alpha
    state.alpha = new_alpha
    joint = _joint(state, geom, hp) - base
    state.alpha = old_alpha
    results.append(_check("conjugacy.alpha", abs(closed - joint), tol))
    return results


def detailed_balance_audit(n_pairs=100, seed=0, tol=1e-10):
    """Both sides of alpha(x->y) pi(x) q(y|x) = alpha(y->x) pi(y) q(x|y)."""
    state, geom, hp = _toy_state(seed, n_subjects=1)
    blk = state.blocks[0]
    rng = np.random.default_rng(seed + 1)
    prop_cov = 0.02 * np.eye(2)
    worst = 0.0
    done = 0
    while done < n_pairs:
        scale = float(rng.uniform(0.85, 1.15))
        shift = float(rng.uniform(-0.5, 0.5))
        t_x = AffineTransform.from_parts(np.array([[scale]]), np.array([shift]))
        delta = 0.15 * rng.standard_normal(2)
        t_y = affine_compose(lie_exp(delta), t_x)
        try:
            lt_x, _ = forward_transform_log_target(
                t_x, blk.T_r, state.X, blk.XT, geom, hp, state.cov)
            lt_y, _ = forward_transform_log_target(
                t_y, blk.T_r, state.X, blk.XT, geom, hp, state.cov)
        except Exception:
            continue  # out of library: not a valid pair, draw another
        d_fwd = lie_log(affine_compose(t_y, affine_inverse(t_x)))
        d_rev = lie_log(affine_compose(t_x, affine_inverse(t_y)))
        la_xy = lie_mh_log_acceptance(lt_x, lt_y, d_fwd, d_rev, prop_cov)
        la_yx = lie_mh_log_acceptance(lt_y, lt_x, d_rev, d_fwd, prop_cov)
        lq_xy = mvn_logpdf(d_fwd, prop_cov) - np.log(proposal_jacobian(d_fwd))
        lq_yx = mvn_logpdf(d_rev, prop_cov) - np.log(proposal_jacobian(d_rev))
        lhs = la_xy + lt_x + lq_xy
        rhs = la_yx + lt_y + lq_yx
        worst = max(worst, abs(lhs - rhs))
        done += 1
    return [_check("detailed_balance.max_gap", worst, tol)]


def nngp_oracle_audit(seed=0):
    """NNGP joint density vs dense GP; NNGP conditional means vs dense Kriging."""
    results = []
    rng = np.random.default_rng(seed)

    # Full-neighborhood NNGP equals the dense joint density (V <= 64).
    worst = 0.0
    cases = [
        make_lattice_1d(0.0, 24.0, 1.0),                                # V = 25
        Lattice(shape=(6, 6), spacing=np.array([1.0, 1.0]), origin=np.zeros(2)),
        Lattice(shape=(8, 8), spacing=np.array([1.0, 1.0]), origin=np.zeros(2)),
    ]
    for lattice in cases:
        locs = lattice.locations()
        v = locs.shape[0]
        params = CovarianceParams(alpha=1.7, rho=0.6)
        nsets = build_ordered_neighbor_sets(locs, v - 1)
        x = rng.normal(size=v)
        dense = dense_gp_log_density(x, locs, params)
        nngp = nngp_log_density(x, nsets, locs, params)
        worst = max(worst, abs(nngp - dense))
    results.append(_check("oracle.full_neighborhood_joint", worst, 1e-8))

    # m=10 on a 12x12 lattice: transformed-site conditional means vs dense
    # Kriging. rho pinned at the decay prior's upper bound (strongest
    # screening the model can reach); the bound is scale-free in alpha.
    lattice = Lattice(shape=(12, 12), spacing=np.array([1.0, 1.0]), origin=np.zeros(2))
    locs = lattice.locations()
    params = CovarianceParams(alpha=1.0, rho=3.0)
    chol = np.linalg.cholesky(cov_matrix(locs, locs, params)
                              + 1e-10 * np.eye(locs.shape[0]))
    x = chol @ rng.standard_normal(locs.shape[0])
    t = affine_compose(AffineTransform.translation([0.37, -0.21]),
                       AffineTransform.rotation(0.05))
    targets = affine_apply(t, locs)
    from .spatial import build_neighbor_library
    lib = build_neighbor_library(lattice, margin=3, m=10)
    nbr = lookup_neighbors(targets, lib)
    b, f = batched_nngp_weights(targets, nbr, locs, params)
    nngp_means = conditional_means(x, nbr, b)
    p, _ = dense_kriging(locs, targets, params)
    dense_means = p @ x
    rel = np.max(np.abs(nngp_means - dense_means)) / np.max(np.abs(dense_means))
    results.append(_check("oracle.m10_conditional_means_rel", rel, 1e-3))
    return results


def _fd_jacobian_oracle(delta, h=1e-5):
    """Finite-difference determinant of d' -> log(exp(-delta) exp(d')) at delta."""
    n = delta.size
    jac = np.empty((n, n))
    inv = lie_exp(-delta)
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        up = lie_log(affine_compose(inv, lie_exp(delta + e)))
        dn = lie_log(affine_compose(inv, lie_exp(delta - e)))
        jac[:, j] = (up - dn) / (2.0 * h)
    return 1.0 / abs(np.linalg.det(jac))


def geometry_audit(seed=0):
    results = []
    rng = np.random.default_rng(seed)

    # exp/log roundtrip: 1000 random deltas with ||delta|| <= 1.
    worst = 0.0
    for _ in range(1000):
        dim = 2 if rng.uniform() < 0.7 else 1
        n = dim * (dim + 1)
        delta = rng.standard_normal(n)
        delta *= rng.uniform(0, 1) / max(np.linalg.norm(delta), 1e-12)
        worst = max(worst, float(np.max(np.abs(lie_log(lie_exp(delta)) - delta))))
    results.append(_check("geometry.exp_log_roundtrip", worst, 1e-9))

    # Karcher fixed points.
    t = affine_compose(AffineTransform.rotation(0.2), AffineTransform.translation([0.5, -0.3]))
    gap_single = float(np.linalg.norm(karcher_mean([t]).matrix - t.matrix))
    pair = [AffineTransform.translation([1.0, 0.0]), AffineTransform.translation([-1.0, 0.0])]
    gap_pair = float(np.linalg.norm(karcher_mean(pair).matrix - np.eye(3)))
    results.append(_check("geometry.karcher_fixed_points", max(gap_single, gap_pair), 1e-10))

    # Proposal Jacobian vs finite-difference volume oracle (2% relative).
    worst = 0.0
    for _ in range(20):
        dim = 2 if rng.uniform() < 0.5 else 1
        delta = 0.4 * rng.standard_normal(dim * (dim + 1))
        j_formula = proposal_jacobian(delta)
        j_fd = _fd_jacobian_oracle(delta)
        worst = max(worst, abs(j_formula - j_fd) / abs(j_fd))
    results.append(_check("geometry.jacobian_vs_fd_oracle", worst, 0.02))

    # Standardization invariant over a short real chain.
    spec = ScenarioSpec(scenario="indicator", n_subjects=3, seed=3)
    maps, _ = gen_indicator_curves(spec)
    cfg = RunConfig(total=6, burn_in=5, thin=1, margin=40, seed=5,
                    a0_alpha=0.2, b0_alpha=0.1, init_iters=3)
    chain = Chain(maps, cfg)
    worst = 0.0
    for _ in range(cfg.total):
        chain.sweep()
        mean = karcher_mean([blk.T for blk in chain.state.blocks])
        worst = max(worst, float(np.linalg.norm(lie_log(mean))))
    results.append(_check("geometry.post_sweep_mean_identity", worst, 1e-8))
    return results


def run_all_audits(seed=0):
    results = []
    results.extend(conjugacy_audit(seed))
    results.extend(detailed_balance_audit(100, seed))
    results.extend(nngp_oracle_audit(seed))
    results.extend(geometry_audit(seed))
    return results, all(r["passed"] for r in results)
