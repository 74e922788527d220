import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from groupreg.errors import NoRealLogarithm, SingularTransform
from groupreg.transforms import (AffineTransform, adjoint_matrix, affine_apply,
                                 affine_compose, affine_inverse,
                                 composition_identity_gap, generator_from_vector,
                                 karcher_mean, lie_exp, lie_log,
                                 proposal_jacobian, standardize)


def translation(*b):
    return AffineTransform.translation(list(b))


class TestApply:
    def test_identity(self):
        assert np.allclose(affine_apply(AffineTransform.identity(2), [1.0, 2.0]), [1, 2])

    def test_pure_scaling(self):
        t = AffineTransform.scaling([2.0, 2.0])
        assert np.allclose(affine_apply(t, [1.0, 1.0]), [2, 2])

    def test_exact_rotation(self):
        t = AffineTransform.rotation(np.pi / 2)
        assert np.allclose(affine_apply(t, [1.0, 0.0]), [0, 1], atol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            affine_apply(AffineTransform.identity(2), [1.0])

    def test_stack_of_points(self):
        t = AffineTransform.from_parts([[2.0, 0.0], [0.0, 1.0]], [1.0, -1.0])
        pts = np.array([[0.0, 0.0], [1.0, 1.0]])
        assert np.allclose(affine_apply(t, pts), [[1, -1], [3, 0]])


class TestCompose:
    def test_inverse_pair_gives_identity(self):
        t = AffineTransform.from_parts([[1.2, 0.3], [-0.1, 0.9]], [0.5, -2.0])
        assert np.allclose(affine_compose(t, affine_inverse(t)).matrix, np.eye(3),
                           atol=1e-12)

    def test_translations_abelian(self):
        got = affine_compose(translation(1.0, 2.0), translation(-3.0, 0.5))
        assert np.allclose(got.b, [-2.0, 2.5])
        assert np.allclose(got.A, np.eye(2))

    def test_noncommutative_vs_raw_matrix_product(self):
        # oracle: plain 3x3 products, computed independently
        s = AffineTransform.from_parts(np.diag([2.0, 1.0]), [0.0, 0.0])
        r = AffineTransform.rotation(np.pi / 2)
        ab = s.matrix @ r.matrix
        ba = r.matrix @ s.matrix
        assert np.allclose(affine_compose(s, r).matrix, ab)
        assert np.allclose(affine_compose(r, s).matrix, ba)
        assert not np.allclose(ab, ba)

    def test_associativity(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            ts = [AffineTransform.from_parts(np.eye(2) + 0.3 * rng.standard_normal((2, 2)),
                                             rng.standard_normal(2)) for _ in range(3)]
            left = affine_compose(affine_compose(ts[0], ts[1]), ts[2])
            right = affine_compose(ts[0], affine_compose(ts[1], ts[2]))
            assert np.max(np.abs(left.matrix - right.matrix)) < 1e-12


class TestInverse:
    def test_identity(self):
        assert np.allclose(affine_inverse(AffineTransform.identity(2)).matrix, np.eye(3))

    def test_closed_form(self):
        t = AffineTransform.from_parts(2.0 * np.eye(2), [1.0, 1.0])
        inv = affine_inverse(t)
        assert np.allclose(inv.A, 0.5 * np.eye(2))
        assert np.allclose(inv.b, [-0.5, -0.5])

    def test_random_roundtrip(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            t = AffineTransform.from_parts(np.eye(2) + 0.4 * rng.standard_normal((2, 2)),
                                           rng.standard_normal(2))
            gap = composition_identity_gap(t, affine_inverse(t))
            assert gap < 1e-10

    def test_singular_rejected(self):
        with pytest.raises(SingularTransform):
            AffineTransform.from_parts([[1.0, 1.0], [1.0, 1.0]], [0.0, 0.0])


class TestLieLogExp:
    def test_log_identity_is_zero(self):
        assert np.allclose(lie_log(AffineTransform.identity(2)), np.zeros(6))
        assert np.allclose(lie_log(AffineTransform.identity(1)), np.zeros(2))

    def test_log_pure_translation_is_nilpotent(self):
        delta = lie_log(translation(1.5, -2.0))
        gen = generator_from_vector(delta)
        assert np.allclose(gen[:2, :2], 0.0, atol=1e-14)
        assert np.allclose(gen[:2, 2], [1.5, -2.0])

    def test_log_rotation_is_skew_generator(self):
        delta = lie_log(AffineTransform.rotation(0.3))
        gen = generator_from_vector(delta)
        assert np.allclose(gen[:2, :2], [[0.0, -0.3], [0.3, 0.0]], atol=1e-14)
        assert np.allclose(gen[:2, 2], 0.0, atol=1e-14)

    def test_exp_zero_is_identity(self):
        assert np.allclose(lie_exp(np.zeros(6)).matrix, np.eye(3))

    def test_exp_log_roundtrip_rotation_translation(self):
        t = affine_compose(AffineTransform.rotation(0.3), translation(1.0, 2.0))
        back = lie_exp(lie_log(t))
        assert np.max(np.abs(back.matrix - t.matrix)) < 1e-10

    def test_exp_group_inverse(self):
        delta = np.array([0.1, -0.2, 0.4, 0.3, -0.1, 0.25])
        gap = composition_identity_gap(lie_exp(delta), lie_exp(-delta))
        assert gap < 1e-12

    def test_negative_linear_part_has_no_real_log(self):
        t = AffineTransform.from_parts([[-1.5]], [0.0])
        with pytest.raises(NoRealLogarithm):
            lie_log(t)
        t2 = AffineTransform.from_parts(np.diag([-2.0, 3.0]), [0.0, 0.0])
        with pytest.raises(NoRealLogarithm):
            lie_log(t2)

    def test_matches_scipy_logm(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            t = AffineTransform.from_parts(np.eye(2) + 0.5 * rng.standard_normal((2, 2)),
                                           rng.standard_normal(2))
            eig = np.linalg.eigvals(t.matrix)
            if np.any((eig.real <= 0) & (np.abs(eig.imag) < 1e-12)):
                continue
            mine = generator_from_vector(lie_log(t))
            ref = scipy.linalg.logm(t.matrix)
            assert np.max(np.abs(mine - np.real(ref))) < 1e-9

    @settings(max_examples=300, deadline=None)
    @given(st.integers(1, 2),
           st.lists(st.floats(-1.0, 1.0), min_size=6, max_size=6),
           st.floats(0.0, 1.0))
    def test_roundtrip_property(self, dim, raw, scale):
        n = dim * (dim + 1)
        delta = np.asarray(raw[:n])
        norm = np.linalg.norm(delta)
        if norm > 0:
            delta = delta * (scale / norm)
        assert np.max(np.abs(lie_log(lie_exp(delta)) - delta)) < 1e-9


class TestProposalJacobian:
    def test_zero_is_one(self):
        assert proposal_jacobian(np.zeros(6)) == 1.0
        assert proposal_jacobian(np.zeros(2)) == 1.0

    def test_symmetric_spectrum_closed_form(self):
        # delta with linear part diag(a, -a): ad-spectrum {0, 0, +-2a, +-a}
        # (brackets of a traceless diagonal matrix), so
        # J = prod over {2a, -2a, a, -a} of lam/(1 - e^-lam).
        a = 0.5
        delta = np.array([a, 0.0, 0.0, 0.0, -a, 0.0])
        lam = np.linalg.eigvals(adjoint_matrix(delta))
        expect_spec = sorted([2 * a, -2 * a, a, -a, 0.0, 0.0])
        assert np.allclose(sorted(lam.real), expect_spec, atol=1e-12)
        assert np.max(np.abs(lam.imag)) < 1e-12
        expected = 1.0
        for v in (2 * a, -2 * a, a, -a):
            expected *= v / (1.0 - np.exp(-v))
        assert np.isclose(proposal_jacobian(delta), expected, rtol=1e-12)

    def test_always_positive(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = 6 if rng.uniform() < 0.5 else 2
            assert proposal_jacobian(rng.standard_normal(n)) > 0.0

    def test_negation_symmetry_for_symmetric_spectrum(self):
        delta = np.array([0.5, 0.0, 0.0, 0.0, -0.5, 0.0])
        assert np.isclose(proposal_jacobian(delta), proposal_jacobian(-delta),
                          rtol=1e-12)

    def test_matches_finite_difference_volume_oracle(self):
        from groupreg.audit import _fd_jacobian_oracle
        rng = np.random.default_rng(4)
        for _ in range(10):
            dim = 2 if rng.uniform() < 0.5 else 1
            delta = 0.4 * rng.standard_normal(dim * (dim + 1))
            j = proposal_jacobian(delta)
            j_fd = _fd_jacobian_oracle(delta)
            assert abs(j - j_fd) / j_fd < 0.02


class TestKarcherMean:
    def test_single_element(self):
        t = affine_compose(AffineTransform.rotation(0.4), translation(1.0, -0.5))
        assert np.max(np.abs(karcher_mean([t]).matrix - t.matrix)) < 1e-10

    def test_symmetric_translation_pair(self):
        t = translation(1.0, 0.0)
        mean = karcher_mean([t, affine_inverse(t)])
        assert np.max(np.abs(mean.matrix - np.eye(3))) < 1e-10

    def test_translations_flat_subgroup(self):
        mean = karcher_mean([translation(1.0, 0.0), translation(3.0, 0.0)])
        assert np.allclose(mean.b, [2.0, 0.0], atol=1e-10)
        assert np.allclose(mean.A, np.eye(2), atol=1e-10)


class TestStandardize:
    def test_identity_fixed_point(self):
        ts = [AffineTransform.identity(2)] * 3
        for t in standardize(ts):
            assert np.allclose(t.matrix, np.eye(3), atol=1e-12)

    def test_mean_already_identity_unchanged(self):
        ts = [translation(1.0, 0.0), translation(-1.0, 0.0)]
        out = standardize(ts)
        for got, want in zip(out, ts):
            assert np.max(np.abs(got.matrix - want.matrix)) < 1e-10

    def test_flat_mean_subtracted(self):
        out = standardize([translation(2.0, 0.0), translation(4.0, 0.0)])
        assert np.allclose(out[0].b, [-1.0, 0.0], atol=1e-10)
        assert np.allclose(out[1].b, [1.0, 0.0], atol=1e-10)

    def test_post_standardize_mean_is_identity(self):
        rng = np.random.default_rng(5)
        ts = [AffineTransform.from_parts(np.eye(2) + 0.1 * rng.standard_normal((2, 2)),
                                         0.5 * rng.standard_normal(2)) for _ in range(5)]
        out = standardize(ts)
        mean = karcher_mean(out)
        assert np.linalg.norm(lie_log(mean)) < 1e-9

    def test_relative_geometry_preserved(self):
        rng = np.random.default_rng(6)
        ts = [AffineTransform.from_parts(np.eye(2) + 0.1 * rng.standard_normal((2, 2)),
                                         0.5 * rng.standard_normal(2)) for _ in range(4)]
        out = standardize(ts)
        for i in range(4):
            for j in range(4):
                before = affine_compose(ts[i], affine_inverse(ts[j])).matrix
                after = affine_compose(out[i], affine_inverse(out[j])).matrix
                assert np.max(np.abs(before - after)) < 1e-10

    def test_idempotent(self):
        rng = np.random.default_rng(7)
        ts = [AffineTransform.from_parts(np.eye(2) + 0.1 * rng.standard_normal((2, 2)),
                                         rng.standard_normal(2)) for _ in range(4)]
        once = standardize(ts)
        twice = standardize(once)
        for a, b in zip(once, twice):
            assert np.max(np.abs(a.matrix - b.matrix)) < 1e-8
