"""Per-sample adaptation episodes: reset semantics, identity mode, descent."""
import dataclasses

import numpy as np
import pytest

from sts.episode import AdaptConfig, EpisodeResult, run_episode
from sts.errors import ValidationError
from sts.objective import ViewBatch, filter_views, marginal_distribution
from sts.optimizer import OptimizerConfig
from sts.prototypes import PrototypeSet
from sts.spectral import RankPolicy, steering_basis_for


def toy_problem(c=6, d=16, n=32, seed=0, scale=40.0, k=3):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((c, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    proto = PrototypeSet(class_names=tuple(f"cls{i}" for i in range(c)), z=z,
                         template_count=1, logit_scale=scale)
    basis = steering_basis_for(z, RankPolicy(method="fixed", fixed_k=k))
    v = rng.standard_normal((n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    views = ViewBatch(sample_id="toy", v=v)
    return proto, basis, views


def planted_sample(seed=0, c=10, d=64, n=64, shift=0.6, noise=0.3, label=3):
    """Views built as normalize(z_label + v + noise), v inside span(B).

    The logit scale is kept low so the marginal is not saturated; saturated
    softmax rounds to exactly 1.0 in double precision and leaves nothing
    for adaptation to move.
    """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((c, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    proto = PrototypeSet(class_names=tuple(f"cls{i}" for i in range(c)), z=z,
                         template_count=1, logit_scale=12.0)
    basis = steering_basis_for(z, RankPolicy(method="energy", energy_fraction=0.98))
    w = basis.b @ rng.standard_normal(basis.k_t)
    v = shift * w / np.linalg.norm(w)
    raw = z[label][None, :] + v[None, :] + noise * rng.standard_normal((n, d))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    return proto, basis, ViewBatch(sample_id=f"planted{seed}", v=raw), label


class TestIdentityEpisode:
    def test_steps_zero_matches_zero_shot(self):
        proto, basis, views = toy_problem()
        cfg = AdaptConfig(optimizer=OptimizerConfig(steps=0))
        res = run_episode(proto, basis, views, cfg)
        fr = filter_views(views, proto, cfg.rho)
        ref = marginal_distribution(views.v[list(fr.retained)], proto.z,
                                    proto.logit_scale)
        assert res.predicted_index == int(np.argmax(ref))
        assert np.array_equal(res.marginal_probs_after, res.marginal_probs_before)
        assert res.entropy_after == res.entropy_before
        assert res.shift_norm == 0.0
        assert res.steps_taken == 0

    def test_result_fields(self):
        proto, basis, views = toy_problem()
        cfg = AdaptConfig(optimizer=OptimizerConfig(steps=2))
        res = run_episode(proto, basis, views, cfg)
        assert res.sample_id == "toy"
        assert res.predicted_name == proto.class_names[res.predicted_index]
        assert abs(res.marginal_probs_before.sum() - 1.0) < 1e-9
        assert abs(res.marginal_probs_after.sum() - 1.0) < 1e-9
        for e in (res.entropy_before, res.entropy_after):
            assert 0.0 <= e <= np.log(proto.num_classes) + 1e-12
        assert res.n_filtered == 3   # floor(0.1 * 32)
        assert res.steps_taken == 2
        assert res.wall_time_adapt >= 0.0


class TestDeterminismAndReset:
    def test_bitwise_repeat(self):
        proto, basis, views = toy_problem(seed=5)
        cfg = AdaptConfig(optimizer=OptimizerConfig(steps=3))
        a = run_episode(proto, basis, views, cfg)
        b = run_episode(proto, basis, views, cfg)
        assert np.array_equal(a.marginal_probs_after, b.marginal_probs_after)
        assert a.shift_norm == b.shift_norm
        assert a.predicted_index == b.predicted_index

    def test_no_state_leak_between_episodes(self):
        proto, basis, views = toy_problem(seed=6)
        proto2, basis2, views2 = toy_problem(seed=7)
        cfg = AdaptConfig(optimizer=OptimizerConfig(steps=2))
        first = run_episode(proto, basis, views, cfg)
        run_episode(proto2, basis2, views2, cfg)
        again = run_episode(proto, basis, views, cfg)
        assert np.array_equal(first.marginal_probs_after, again.marginal_probs_after)
        assert first.shift_norm == again.shift_norm

    def test_shift_norm_recomputation(self):
        proto, basis, views = toy_problem(seed=8)
        cfg = AdaptConfig(mode="per_class", optimizer=OptimizerConfig(steps=4))
        res = run_episode(proto, basis, views, cfg)
        recomputed = float(np.linalg.norm(res.coefficients.values @ basis.b.T))
        assert abs(res.shift_norm - recomputed) < 1e-9
        assert res.shift_norm > 0.0


class TestDescent:
    def test_planted_shift_raises_true_class_mass(self):
        proto, basis, views, label = planted_sample(seed=0)
        base = run_episode(proto, basis, views,
                           AdaptConfig(optimizer=OptimizerConfig(steps=0)))
        adapted = run_episode(proto, basis, views,
                              AdaptConfig(optimizer=OptimizerConfig(steps=5)))
        assert adapted.marginal_probs_after[label] > base.marginal_probs_after[label]

    def test_entropy_decreases_single_step(self):
        hits = 0
        for seed in range(10):
            proto, basis, views, _ = planted_sample(seed=seed)
            res = run_episode(proto, basis, views,
                              AdaptConfig(optimizer=OptimizerConfig(steps=1)))
            if res.entropy_after < res.entropy_before:
                hits += 1
        assert hits >= 9


class TestConfig:
    def test_defaults(self):
        cfg = AdaptConfig()
        assert cfg.rho == 0.1
        assert cfg.lambda_reg == 0.01
        assert cfg.mode == "shared"
        assert cfg.rank.method == "gd"
        assert cfg.optimizer.steps == 1
        assert cfg.include_original is False

    def test_invalid(self):
        with pytest.raises(ValidationError):
            AdaptConfig(rho=0.0)
        with pytest.raises(ValidationError):
            AdaptConfig(lambda_reg=-1.0)
        with pytest.raises(ValidationError):
            AdaptConfig(mode="both")
        with pytest.raises(ValidationError):
            AdaptConfig(logit_scale_override=-3.0)

    def test_logit_scale_override(self):
        proto, basis, views = toy_problem()
        cfg0 = AdaptConfig(optimizer=OptimizerConfig(steps=0))
        cfg_hot = dataclasses.replace(cfg0, logit_scale_override=1.0)
        a = run_episode(proto, basis, views, cfg0)
        b = run_episode(proto, basis, views, cfg_hot)
        assert b.entropy_before > a.entropy_before

    def test_include_original_changes_marginal_only(self):
        proto, basis, views = toy_problem(n=40, seed=11)
        cfg = AdaptConfig(optimizer=OptimizerConfig(steps=0))
        fr = filter_views(views, proto, cfg.rho)
        assume_excluded = views.original_index not in fr.retained
        assert assume_excluded
        plain = run_episode(proto, basis, views, cfg)
        with_orig = run_episode(proto, basis, views,
                                dataclasses.replace(cfg, include_original=True))
        assert not np.array_equal(with_orig.marginal_probs_before,
                                  plain.marginal_probs_before)
        assert abs(with_orig.marginal_probs_before.sum() - 1.0) < 1e-9
        assert with_orig.n_filtered == plain.n_filtered


class TestTieBreak:
    def test_argmax_tie_lowest_index(self):
        z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        proto = PrototypeSet(class_names=("a", "b", "c"), z=z,
                             template_count=1, logit_scale=10.0)
        basis = steering_basis_for(z, RankPolicy(method="fixed", fixed_k=1))
        views = ViewBatch(sample_id="tie", v=np.array([[1.0, 0.0]]))
        res = run_episode(proto, basis, views,
                          AdaptConfig(optimizer=OptimizerConfig(steps=0)))
        assert res.predicted_index == 0
        assert res.predicted_name == "a"


class TestErrors:
    def test_sample_id_attached(self):
        proto, basis, _ = toy_problem(d=16)
        rows = np.zeros((4, 8))
        rows[:, 0] = 1.0
        bad_views = ViewBatch(sample_id="bad-sample-42", v=rows)
        with pytest.raises(ValidationError, match="bad-sample-42"):
            run_episode(proto, basis, bad_views, AdaptConfig())


class TestSerialization:
    def test_json_dict_round_trip(self):
        import json

        proto, basis, views = toy_problem()
        res = run_episode(proto, basis, views,
                          AdaptConfig(optimizer=OptimizerConfig(steps=1)))
        d = json.loads(json.dumps(res.to_json_dict()))
        assert d["sample_id"] == "toy"
        assert d["predicted_class"]["index"] == res.predicted_index
        assert d["predicted_class"]["name"] == res.predicted_name
        assert len(d["marginal_probs_after"]) == proto.num_classes
        assert d["steps_taken"] == 1
        assert "coefficients" not in d
