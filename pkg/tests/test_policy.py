"""Policy networks: uniform start, sampling laws, log-probs, entropy, KL, checkpoints."""
import math

import numpy as np
import pytest
import scipy.stats

from helpers import finite_difference_grad, max_rel_err
from theta_dse import diffcore as dc
from theta_dse import policy as pol
from theta_dse.design_space import bundled_soc_space, uniform_space
from theta_dse.errors import ConfigurationError
from theta_dse.policy import (
    MLPConfig,
    TransformerConfig,
    alpha_weights,
    batch_log_probs,
    build_policy,
    entropy_terms,
    forward_policy,
    kl_rev_terms,
    log_prob,
    sample_designs,
)

SOC_CARDS = [2, 12, 3, 2, 3, 3, 4, 7, 13, 10, 5, 10, 5, 6, 7, 5, 7, 2]


def tiny_mlp(space, seed=0):
    return build_policy(space, MLPConfig(input_width=8, hidden=(16,)), seed=seed)


def tiny_transformer(space, seed=0):
    return build_policy(space, TransformerConfig(width=8, depth=1, heads=2, ff_width=16), seed=seed)


class TestBuild:
    def test_mlp_head_width_matches_soc_space(self):
        net = build_policy(bundled_soc_space(), MLPConfig(hidden=(64, 64)), seed=1)
        assert net.named_parameters()["w_out"].shape == (64, 106)

    def test_minimal_transformer_on_one_dim_space(self):
        space = uniform_space("one", 1, 3)
        net = build_policy(space, TransformerConfig(width=4, depth=1, heads=1, ff_width=8), seed=0)
        out = forward_policy(net)
        assert out.num_dimensions == 1
        assert out.per_dim_probs[0].values.shape == (1, 3)

    def test_same_seed_bitwise_identical(self):
        space = uniform_space("s", 3, 5)
        for factory in (tiny_mlp, tiny_transformer):
            a, b = factory(space, seed=9), factory(space, seed=9)
            for pa, pb in zip(a.parameters(), b.parameters()):
                assert np.array_equal(pa.values, pb.values)

    def test_invalid_arch_rejected(self):
        space = uniform_space("s", 2, 2)
        with pytest.raises(ConfigurationError):
            build_policy(space, TransformerConfig(width=6, depth=1, heads=4), seed=0)
        with pytest.raises(ConfigurationError):
            build_policy(space, MLPConfig(hidden=(0,)), seed=0)
        with pytest.raises(ConfigurationError):
            build_policy(space, {"kind": "rnn"}, seed=0)


class TestForward:
    @pytest.mark.parametrize("factory", [tiny_mlp, tiny_transformer])
    def test_fresh_net_is_uniform(self, factory, space_3dim):
        out = forward_policy(factory(space_3dim))
        for probs, dim in zip(out.probs_arrays(), space_3dim.dimensions):
            assert np.allclose(probs, 1.0 / dim.cardinality, atol=1e-12)
            assert np.all(probs == probs[0])

    def test_soc_space_segment_lengths(self):
        out = forward_policy(tiny_mlp(bundled_soc_space()))
        lengths = [p.values.shape[-1] for p in out.per_dim_probs]
        assert lengths == SOC_CARDS
        assert out.log_prob_row.shape[-1] == 106

    @pytest.mark.parametrize("factory", [tiny_mlp, tiny_transformer])
    def test_distributions_normalized_after_training_noise(self, factory, space_3dim, rng):
        net = factory(space_3dim, seed=3)
        for p in net.parameters():
            p.values += rng.normal(scale=0.5, size=p.values.shape)
        out = forward_policy(net)
        for probs, lp, dim in zip(out.probs_arrays(), out.log_probs_arrays(), space_3dim.dimensions):
            assert np.all(probs >= 0)
            assert abs(probs.sum() - 1.0) < 1e-9
            assert np.max(np.abs(np.log(probs) - lp)) < 1e-9
            h = -(probs * lp).sum()
            assert -1e-9 <= h <= math.log(dim.cardinality) + 1e-9


class TestSampling:
    def test_degenerate_distribution_always_sampled(self, space_3dim):
        out = forward_policy(tiny_mlp(space_3dim))
        snap = out.snapshot()
        for d in range(3):
            snap.probs[d][:] = 0.0
            snap.probs[d][min(1, len(snap.probs[d]) - 1)] = 1.0
        snap.probs[0][:] = [0.0, 0.0, 1.0]
        designs = sample_designs(snap, 64, np.random.default_rng(0))
        assert all(d == (2, 1, 1) for d in designs)

    def test_uniform_two_choice_frequency(self):
        space = uniform_space("coin", 1, 2)
        out = forward_policy(tiny_mlp(space))
        designs = sample_designs(out, 10_000, np.random.default_rng(77))
        freq = sum(1 for d in designs if d[0] == 0) / 10_000
        assert abs(freq - 0.5) < 0.02

    def test_same_seed_same_samples(self, space_3dim):
        out = forward_policy(tiny_mlp(space_3dim))
        a = sample_designs(out, 50, np.random.default_rng(5))
        b = sample_designs(out, 50, np.random.default_rng(5))
        assert a == b

    def test_chi_square_goodness_of_fit(self):
        # 20 random fixed policies, 10k samples each, per-dimension chi^2 at alpha=0.001
        for trial in range(20):
            rng = np.random.default_rng(2000 + trial)
            space = uniform_space("chi", int(rng.integers(1, 4)), int(rng.integers(2, 9)))
            net = tiny_mlp(space, seed=trial)
            for p in net.parameters():
                p.values += rng.normal(scale=0.4, size=p.values.shape)
            out = forward_policy(net)
            designs = np.array(sample_designs(out, 10_000, rng))
            for d, probs in enumerate(out.probs_arrays()):
                counts = np.bincount(designs[:, d], minlength=len(probs))
                _, pvalue = scipy.stats.chisquare(counts, probs * 10_000)
                assert pvalue > 0.001, (trial, d)


class TestLogProb:
    def test_uniform_product(self):
        space = uniform_space("u24", 1, 2)
        # build a 2-dim space with cardinalities [2, 4]
        from theta_dse.design_space import DesignSpace, Dimension

        space = DesignSpace(
            "u24", [Dimension("p", ("0", "1")), Dimension("q", ("0", "1", "2", "3"))]
        )
        out = forward_policy(tiny_mlp(space))
        lp = log_prob(out, (1, 2)).item()
        assert abs(lp - (-math.log(8.0))) < 1e-12

    def test_degenerate_log_prob_is_zero(self, space_3dim):
        out = forward_policy(tiny_mlp(space_3dim))
        snap = out.snapshot()
        row = np.concatenate([np.log(np.where(p > 0, p, 1e-300)) for p in snap.probs])
        # fake a delta policy: log prob of its argmax point under itself is 0
        layout = space_3dim.output_layout()
        logs = []
        for off, length in layout.segments:
            seg = np.full(length, -np.inf)
            seg[0] = 0.0
            logs.append(seg)
        assert sum(seg.max() for seg in logs) == 0.0

    def test_exp_log_prob_matches_product_oracle(self, space_3dim, rng):
        net = tiny_mlp(space_3dim, seed=8)
        for p in net.parameters():
            p.values += rng.normal(scale=0.6, size=p.values.shape)
        out = forward_policy(net)
        probs = out.probs_arrays()
        for _ in range(20):
            x = tuple(int(rng.integers(0, c)) for c in space_3dim.cardinalities)
            direct = np.prod([probs[i][xi] for i, xi in enumerate(x)])
            assert abs(math.exp(log_prob(out, x).item()) - direct) < 1e-9

    def test_batch_log_probs_matches_single(self, space_3dim, rng):
        net = tiny_mlp(space_3dim, seed=4)
        for p in net.parameters():
            p.values += rng.normal(scale=0.3, size=p.values.shape)
        out = forward_policy(net)
        designs = [tuple(int(rng.integers(0, c)) for c in space_3dim.cardinalities) for _ in range(6)]
        batch = batch_log_probs(out, designs).values
        singles = [log_prob(out, x).item() for x in designs]
        assert np.allclose(batch, singles, atol=1e-12)

    def test_gradient_flows_through_log_prob(self, space_3dim):
        net = tiny_mlp(space_3dim, seed=2)
        rng = np.random.default_rng(0)
        for p in net.parameters():
            p.values += rng.normal(scale=0.3, size=p.values.shape)
        x = (1, 3, 0)

        def loss_fn():
            return log_prob(forward_policy(net), x)

        loss = loss_fn()
        loss.backward()
        for name, p in net.named_parameters().items():
            fd = finite_difference_grad(lambda: loss_fn().item(), p)
            assert max_rel_err(p.grad if p.grad is not None else np.zeros_like(fd), fd) < 1e-4, name
            p.zero_grad()


class TestEntropyAndKl:
    def test_uniform_entropy_is_log_d(self):
        space = uniform_space("h4", 1, 4)
        out = forward_policy(tiny_mlp(space))
        (h,) = entropy_terms(out, np.ones(1))
        assert abs(h.item() - math.log(4.0)) < 1e-12

    def test_alpha_log_normalized(self):
        from theta_dse.design_space import DesignSpace, Dimension

        space = DesignSpace(
            "a416",
            [
                Dimension("x", tuple(f"x{i}" for i in range(4))),
                Dimension("y", tuple(f"y{i}" for i in range(16))),
            ],
        )
        alpha = alpha_weights(space, "log_normalized")
        assert np.allclose(alpha, [2.0, 1.0], atol=1e-12)
        assert np.allclose(alpha_weights(space, "uniform_one"), [1.0, 1.0])

    def test_alpha_single_choice_dimension_is_zero(self):
        from theta_dse.design_space import DesignSpace, Dimension

        space = DesignSpace(
            "deg", [Dimension("x", ("only",)), Dimension("y", ("a", "b", "c", "d"))]
        )
        alpha = alpha_weights(space, "log_normalized")
        assert alpha[0] == 0.0 and alpha[1] == 1.0

    def test_degenerate_entropy_is_zero(self):
        space = uniform_space("h1", 1, 1)
        out = forward_policy(tiny_mlp(space))
        (h,) = entropy_terms(out, np.ones(1))
        assert abs(h.item()) < 1e-12

    def test_kl_self_divergence_zero(self, space_3dim):
        out = forward_policy(tiny_mlp(space_3dim, seed=6))
        terms = kl_rev_terms(out, out.snapshot())
        assert all(abs(t.item()) < 1e-12 for t in terms)

    def test_kl_hand_value(self):
        space = uniform_space("k2", 1, 2)
        net = tiny_mlp(space)
        out = forward_policy(net)
        snap = out.snapshot()  # old = [0.5, 0.5]
        # make the new distribution [0.75, 0.25] by writing logits into the head bias
        net.named_parameters()["b_out"].values[:] = np.log([0.75, 0.25])
        new_out = forward_policy(net)
        (term,) = kl_rev_terms(new_out, snap)
        want = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)
        assert abs(term.item() - want) < 1e-12
        assert abs(want - 0.130812) < 5e-7

    def test_kl_nonnegative_on_random_pairs(self):
        rng = np.random.default_rng(42)
        space = uniform_space("kl", 3, 6)
        for _ in range(100):
            a = tiny_mlp(space, seed=int(rng.integers(1 << 30)))
            b = tiny_mlp(space, seed=int(rng.integers(1 << 30)))
            for net in (a, b):
                for p in net.parameters():
                    p.values += rng.normal(scale=0.7, size=p.values.shape)
            terms = kl_rev_terms(forward_policy(a), forward_policy(b).snapshot())
            assert all(t.item() >= -1e-12 for t in terms)


class TestCheckpoint:
    @pytest.mark.parametrize("factory", [tiny_mlp, tiny_transformer])
    def test_round_trip(self, factory, space_3dim, tmp_path, rng):
        net = factory(space_3dim, seed=11)
        for p in net.parameters():
            p.values += rng.normal(scale=0.2, size=p.values.shape)
        path = tmp_path / "policy.ckpt"
        pol.save_checkpoint(net, path)
        loaded = pol.load_checkpoint(path, space_3dim)
        for a, b in zip(net.parameters(), loaded.parameters()):
            assert np.array_equal(a.values, b.values)
        assert np.allclose(
            forward_policy(loaded).prob_row.values, forward_policy(net).prob_row.values
        )

    def test_space_hash_mismatch_rejected(self, space_3dim, tmp_path):
        net = tiny_mlp(space_3dim)
        path = tmp_path / "policy.ckpt"
        pol.save_checkpoint(net, path)
        other = uniform_space("other", 2, 3)
        with pytest.raises(ConfigurationError):
            pol.load_checkpoint(path, other)
