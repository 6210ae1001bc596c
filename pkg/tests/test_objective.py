"""Confidence filtering, marginal entropy, and the analytic gradient.

The gradient oracle is central finite differences on the total loss,
evaluated at h=1e-5 in double precision.
"""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sts.errors import ValidationError
from sts.numerics import shannon_entropy, softmax
from sts.objective import (
    FilterResult,
    ViewBatch,
    filter_views,
    marginal_distribution,
    sts_loss_and_grad,
)
from sts.prototypes import PrototypeSet, zero_shot_probs
from sts.spectral import extract_basis, fixed_rank, thin_svd
from sts.steering import SteeringCoefficients


def make_setup(c=4, d=8, k=2, n=12, seed=0, scale=30.0):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((c, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    proto = PrototypeSet(class_names=tuple(f"c{i}" for i in range(c)), z=z,
                         template_count=1, logit_scale=scale)
    f = thin_svd(z)
    basis = extract_basis(f, fixed_rank(f.s, k))
    v = rng.standard_normal((n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    views = ViewBatch(sample_id="s0", v=v)
    return proto, basis, views


class TestFilterViews:
    def test_ten_percent_of_64(self):
        proto, _, _ = make_setup(n=64)
        _, _, views = make_setup(n=64, seed=3)
        res = filter_views(views, proto, 0.1)
        assert len(res.retained) == 6
        cut = np.sort(res.per_view_entropy)[5]
        assert all(res.per_view_entropy[i] <= cut for i in res.retained)

    def test_single_view_clamp(self):
        proto, _, views = make_setup(n=1)
        for rho in (0.01, 0.5, 1.0):
            assert filter_views(views, proto, rho).retained == (0,)

    def test_increasing_entropy_keeps_first(self):
        # views progressively blended toward a second prototype get more
        # ambiguous, so entropy strictly increases with the index
        z = np.eye(2, 6)
        proto = PrototypeSet(class_names=("a", "b"), z=z,
                             template_count=1, logit_scale=10.0)
        rows = []
        for t in np.linspace(0.0, 0.45, 10):
            w = (1 - t) * z[0] + t * z[1]
            rows.append(w / np.linalg.norm(w))
        views = ViewBatch(sample_id="x", v=np.array(rows))
        res = filter_views(views, proto, 0.1)
        assert np.all(np.diff(res.per_view_entropy) > 0)
        assert res.retained == (0,)

    def test_ties_broken_by_lower_index(self):
        proto, _, _ = make_setup()
        row = np.zeros(8)
        row[0] = 1.0
        views = ViewBatch(sample_id="t", v=np.tile(row, (5, 1)))
        res = filter_views(views, proto, 0.5)
        assert res.retained == (0, 1)

    def test_retained_sorted(self):
        proto, _, views = make_setup(n=20, seed=9)
        res = filter_views(views, proto, 0.4)
        assert list(res.retained) == sorted(res.retained)

    def test_rho_out_of_range(self):
        proto, _, views = make_setup()
        for rho in (0.0, -0.1, 1.5):
            with pytest.raises(ValidationError):
                filter_views(views, proto, rho)

    def test_permutation_consistency(self):
        proto, _, views = make_setup(n=16, seed=4)
        res = filter_views(views, proto, 0.25)
        perm = np.random.default_rng(0).permutation(16)
        views_p = ViewBatch(sample_id="p", v=views.v[perm])
        res_p = filter_views(views_p, proto, 0.25)
        kept = {tuple(views.v[i]) for i in res.retained}
        kept_p = {tuple(views_p.v[i]) for i in res_p.retained}
        assert kept == kept_p

    def test_determinism(self):
        proto, _, views = make_setup(n=30, seed=5)
        a = filter_views(views, proto, 0.3)
        b = filter_views(views, proto, 0.3)
        assert a.retained == b.retained
        assert np.array_equal(a.per_view_entropy, b.per_view_entropy)


class TestMarginal:
    def test_single_view_single_class(self):
        adapted = np.array([[1.0, 0.0]])
        out = marginal_distribution(np.array([[1.0, 0.0]]), adapted, 100.0)
        assert np.array_equal(out, [1.0])

    def test_two_opposed_views_average(self):
        adapted = np.eye(2)
        views = np.eye(2)
        out = marginal_distribution(views, adapted, 1e4)
        assert np.allclose(out, [0.5, 0.5], atol=1e-12)

    def test_hand_two_view_toy(self):
        adapted = np.array([[1.0, 0.0], [0.0, 1.0]])
        views = np.array([[0.8, 0.6], [0.6, 0.8]])
        scale = 3.0
        logits = scale * views @ adapted.T
        expect = softmax(logits).mean(axis=0)
        out = marginal_distribution(views, adapted, scale)
        assert np.max(np.abs(out - expect)) < 1e-12

    def test_zero_coeff_equals_zero_shot_average(self):
        proto, basis, views = make_setup(n=10, seed=7)
        res = filter_views(views, proto, 0.5)
        kept = views.v[list(res.retained)]
        out = marginal_distribution(kept, proto.z, proto.logit_scale)
        ref = np.mean([zero_shot_probs(proto, v) for v in kept], axis=0)
        assert np.max(np.abs(out - ref)) < 1e-15

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            marginal_distribution(np.zeros((0, 4)), np.eye(4), 10.0)


def total_loss(proto, basis, gamma_values, mode, res, views, lam, scale):
    coeffs = SteeringCoefficients(mode=mode, values=gamma_values)
    return sts_loss_and_grad(proto, basis, coeffs, res, views, lam, scale).total


def fd_grad(proto, basis, gamma, mode, res, views, lam, scale, h=1e-5):
    g = np.zeros_like(gamma)
    it = np.nditer(gamma, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        gp = gamma.copy()
        gp[idx] += h
        gm = gamma.copy()
        gm[idx] -= h
        g[idx] = (total_loss(proto, basis, gp, mode, res, views, lam, scale)
                  - total_loss(proto, basis, gm, mode, res, views, lam, scale)) / (2 * h)
        it.iternext()
    return g


def max_rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-8)))


class TestLossAndGrad:
    def test_breakdown_consistency(self):
        proto, basis, views = make_setup()
        res = filter_views(views, proto, 0.5)
        g = SteeringCoefficients(mode="shared", values=np.array([0.05, -0.02]))
        out = sts_loss_and_grad(proto, basis, g, res, views, 0.01, proto.logit_scale)
        assert abs(out.total - (out.entropy_term + out.reg_term)) < 1e-12
        assert out.reg_term >= 0
        assert 0 <= out.entropy_term <= np.log(proto.num_classes) + 1e-12
        assert abs(out.marginal.sum() - 1.0) < 1e-9
        assert np.all(out.marginal > 0)

    def test_single_class(self):
        z = np.array([[1.0, 0.0, 0.0]])
        proto = PrototypeSet(class_names=("only",), z=z,
                             template_count=1, logit_scale=50.0)
        from sts.spectral import RankSelection, SteeringBasis
        basis = SteeringBasis(
            b=np.array([[0.0], [1.0], [0.0]]),
            selection=RankSelection("fixed", 1, None, 1.0))
        views = ViewBatch(sample_id="v", v=np.array([[0.0, 1.0, 0.0]]))
        res = filter_views(views, proto, 1.0)
        g = SteeringCoefficients(mode="shared", values=np.array([0.2]))
        out = sts_loss_and_grad(proto, basis, g, res, views, 0.0, 50.0)
        assert np.array_equal(out.marginal, [1.0])
        assert out.entropy_term == 0.0
        assert np.allclose(out.grad, 0.0, atol=1e-12)

    def test_zero_gamma_reg_inert(self):
        proto, basis, views = make_setup()
        res = filter_views(views, proto, 0.5)
        z0 = SteeringCoefficients.zeros("shared", basis.k_t)
        a = sts_loss_and_grad(proto, basis, z0, res, views, 0.0, proto.logit_scale)
        b = sts_loss_and_grad(proto, basis, z0, res, views, 123.0, proto.logit_scale)
        assert b.reg_term == 0.0
        assert np.array_equal(a.grad, b.grad)

    def test_fd_oracle_shared(self):
        proto, basis, views = make_setup(c=4, d=8, k=2, n=12, seed=1)
        res = filter_views(views, proto, 0.25)
        rng = np.random.default_rng(2)
        gamma = 0.1 * rng.standard_normal(2)
        g = SteeringCoefficients(mode="shared", values=gamma)
        out = sts_loss_and_grad(proto, basis, g, res, views, 0.01, proto.logit_scale)
        fd = fd_grad(proto, basis, gamma, "shared", res, views, 0.01, proto.logit_scale)
        assert max_rel_err(out.grad, fd) < 1e-4

    def test_fd_oracle_per_class(self):
        proto, basis, views = make_setup(c=5, d=10, k=3, n=8, seed=3)
        res = filter_views(views, proto, 0.5)
        rng = np.random.default_rng(4)
        gamma = 0.1 * rng.standard_normal((5, 3))
        g = SteeringCoefficients(mode="per_class", values=gamma)
        out = sts_loss_and_grad(proto, basis, g, res, views, 0.01, proto.logit_scale)
        fd = fd_grad(proto, basis, gamma, "per_class", res, views, 0.01, proto.logit_scale)
        assert max_rel_err(out.grad, fd) < 1e-4

    def test_fd_oracle_at_zero(self):
        # the reg norm gradient must be safeguarded (and zero) at gamma=0
        proto, basis, views = make_setup(seed=5)
        res = filter_views(views, proto, 0.5)
        gamma = np.zeros(2)
        g = SteeringCoefficients(mode="shared", values=gamma)
        out = sts_loss_and_grad(proto, basis, g, res, views, 0.0, proto.logit_scale)
        fd = fd_grad(proto, basis, gamma, "shared", res, views, 0.0, proto.logit_scale)
        assert max_rel_err(out.grad, fd) < 1e-4

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_property_entropy_bounds(self, seed):
        rng = np.random.default_rng(seed)
        c = int(rng.integers(2, 7))
        proto, basis, views = make_setup(c=c, d=12, k=2, n=5, seed=seed)
        res = filter_views(views, proto, 1.0)
        gamma = 0.2 * rng.standard_normal(2)
        g = SteeringCoefficients(mode="shared", values=gamma)
        out = sts_loss_and_grad(proto, basis, g, res, views, 0.01, proto.logit_scale)
        assert 0.0 <= out.entropy_term <= np.log(c) + 1e-12


class TestSoftmaxInvariance:
    def test_constant_logit_shift(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((6, 4))
        p1 = softmax(logits)
        p2 = softmax(logits + 123.4)
        assert np.max(np.abs(p1 - p2)) < 1e-12
        assert np.max(np.abs(shannon_entropy(p1) - shannon_entropy(p2))) < 1e-12

    def test_uniform_entropy_is_log_c(self):
        p = np.full(5, 0.2)
        assert abs(shannon_entropy(p) - np.log(5)) < 1e-12


class TestViewBatch:
    def test_non_unit_rows_rejected(self):
        with pytest.raises(ValidationError):
            ViewBatch(sample_id="bad", v=np.full((2, 3), 2.0))

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            ViewBatch(sample_id="bad", v=np.zeros((0, 3)))

    def test_original_index_range(self):
        row = np.zeros((2, 4))
        row[:, 0] = 1.0
        with pytest.raises(ValidationError):
            ViewBatch(sample_id="bad", v=row, original_index=7)
