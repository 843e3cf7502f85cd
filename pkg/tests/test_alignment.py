"""Tests for region masks, descriptors, local/global similarity and fusion."""

import math

import numpy as np
import pytest

from composed_retrieval.alignment import (
    FusionWeight,
    RegionMaskGenerator,
    fuse,
    global_similarity,
    local_similarity,
    region_descriptors,
    region_masks,
)
from composed_retrieval.autodiff import Tensor, gradient_check
from composed_retrieval.composer import CrossModalBlock, compose
from composed_retrieval.errors import ConfigurationError, DimensionError
from composed_retrieval.features import LEVELS


def make_gen(level="L", d=4, k=3, seed=0):
    return RegionMaskGenerator.initialize(level, d, k, np.random.default_rng(seed))


class TestRegionMasks:
    def test_zero_parameters_give_half(self):
        gen = make_gen(d=4, k=2)
        gen.weight.data[:] = 0.0
        gen.bias.data[:] = 0.0
        masks = region_masks(np.random.default_rng(1).normal(size=(3, 3, 4)), gen)
        np.testing.assert_array_equal(masks.data, np.full((3, 3, 2), 0.5))

    def test_hand_logits(self):
        # one mask, identity-ish weights chosen so logits are 0 and ln 3
        gen = make_gen(d=1, k=1)
        gen.weight.data[:] = 1.0
        gen.bias.data[:] = 0.0
        x = np.array([[[0.0]], [[math.log(3.0)]]])  # 2x1x1
        masks = region_masks(x, gen)
        np.testing.assert_allclose(masks.data.reshape(-1), [0.5, 0.75], atol=1e-12)

    def test_open_interval(self):
        rng = np.random.default_rng(2)
        gen = make_gen(d=5, k=4, seed=3)
        masks = region_masks(rng.normal(size=(4, 4, 5)), gen).data
        assert (masks > 0.0).all() and (masks < 1.0).all()

    def test_level_mismatch(self):
        gen = make_gen(level="H", d=4)
        with pytest.raises(ConfigurationError):
            region_masks(np.zeros((2, 2, 4)), gen, level="L")


class TestRegionDescriptors:
    def test_all_ones_mask_reduces_to_mean(self):
        # drive sigmoid to ~1 with a huge bias
        gen = make_gen(d=1, k=1)
        gen.weight.data[:] = 0.0
        gen.bias.data[:] = 1e3
        x = np.array([[[1.0], [2.0]], [[3.0], [4.0]]])
        desc = region_descriptors(x, gen)
        assert desc.data.reshape(-1)[0] == pytest.approx(2.5, abs=1e-9)

    def test_all_zero_mask_gives_zero(self):
        gen = make_gen(d=1, k=1)
        gen.weight.data[:] = 0.0
        gen.bias.data[:] = -1e3
        x = np.array([[[1.0], [2.0]], [[3.0], [4.0]]])
        desc = region_descriptors(x, gen)
        assert abs(desc.data.reshape(-1)[0]) < 1e-9

    def test_hand_quarter_mask(self):
        # mask ~1 at the single position holding value 1, ~0 elsewhere;
        # positional mean over all four positions is 1/4
        gen = make_gen(d=1, k=1)
        gen.weight.data[:] = 1e4
        gen.bias.data[:] = -0.5e4
        x = np.array([[[1.0], [0.0]], [[0.0], [0.0]]])
        desc = region_descriptors(x, gen)
        assert desc.data.reshape(-1)[0] == pytest.approx(0.25, abs=1e-6)

    def test_descriptor_shape(self):
        gen = make_gen(d=6, k=5, seed=4)
        desc = region_descriptors(np.random.default_rng(5).normal(size=(3, 2, 6)), gen)
        assert desc.shape == (5, 6)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(6)
        gen = make_gen(d=4, k=3, seed=7)
        batch = rng.normal(size=(5, 2, 3, 4))
        stacked = region_descriptors(batch, gen).data
        for i in range(5):
            single = region_descriptors(batch[i], gen).data
            np.testing.assert_array_equal(stacked[i], single)


def _descriptor_sets(rng, k=3, dims=(4, 5, 6)):
    return {lvl: rng.normal(size=(k, d)) for lvl, d in zip(LEVELS, dims)}


class TestLocalSimilarity:
    def test_identical_sets_give_three(self):
        rng = np.random.default_rng(8)
        q = _descriptor_sets(rng)
        s = local_similarity(q, {lvl: v.copy() for lvl, v in q.items()})
        assert s.item() == pytest.approx(3.0, abs=1e-9)

    def test_single_level_orthogonal(self):
        # two levels identical (2.0 total), one level orthogonal after the k-mean
        q = {
            "L": np.array([[1.0, 0.0]]),
            "M": np.array([[1.0, 2.0]]),
            "H": np.array([[3.0, 1.0]]),
        }
        t = {
            "L": np.array([[0.0, 1.0]]),
            "M": np.array([[1.0, 2.0]]),
            "H": np.array([[3.0, 1.0]]),
        }
        assert local_similarity(q, t).item() == pytest.approx(2.0, abs=1e-9)

    def test_negated_level_flips_sign(self):
        rng = np.random.default_rng(9)
        q = _descriptor_sets(rng)
        t = {lvl: v.copy() for lvl, v in q.items()}
        base = local_similarity(q, t).item()
        t["M"] = -t["M"]
        flipped = local_similarity(q, t).item()
        assert flipped == pytest.approx(base - 2.0, abs=1e-9)

    def test_k_mismatch(self):
        rng = np.random.default_rng(10)
        q = _descriptor_sets(rng, k=3)
        t = _descriptor_sets(rng, k=4)
        with pytest.raises(DimensionError):
            local_similarity(q, t)

    def test_range(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            s = local_similarity(_descriptor_sets(rng), _descriptor_sets(rng)).item()
            assert -3.0 <= s <= 3.0


def _feature_maps(rng, shapes=((2, 2, 4), (2, 1, 5), (1, 1, 6))):
    return {lvl: rng.normal(size=shape) for lvl, shape in zip(LEVELS, shapes)}


class TestGlobalSimilarity:
    def test_identical_maps(self):
        rng = np.random.default_rng(12)
        q = _feature_maps(rng)
        s = global_similarity(q, {lvl: v.copy() for lvl, v in q.items()})
        assert s.item() == pytest.approx(3.0, abs=1e-9)

    def test_scale_invariance(self):
        rng = np.random.default_rng(13)
        q = _feature_maps(rng)
        t = {lvl: 2.0 * v for lvl, v in q.items()}
        assert global_similarity(q, t).item() == pytest.approx(3.0, abs=1e-9)

    def test_one_level_orthogonal(self):
        q = {
            "L": np.full((1, 1, 2), 0.0),
            "M": np.ones((2, 2, 3)),
            "H": np.ones((1, 2, 4)),
        }
        q["L"][0, 0] = [1.0, 0.0]
        t = {lvl: v.copy() for lvl, v in q.items()}
        t["L"][0, 0] = [0.0, 1.0]
        assert global_similarity(q, t).item() == pytest.approx(2.0, abs=1e-9)

    def test_single_level_rescale_leaves_term(self):
        rng = np.random.default_rng(14)
        q = _feature_maps(rng)
        t = _feature_maps(rng)
        base = global_similarity(q, t).item()
        t["H"] = 7.5 * t["H"]
        assert global_similarity(q, t).item() == pytest.approx(base, abs=1e-9)

    def test_shape_mismatch(self):
        rng = np.random.default_rng(15)
        q = _feature_maps(rng)
        t = _feature_maps(rng, shapes=((2, 2, 4), (1, 2, 5), (1, 1, 6)))
        with pytest.raises(DimensionError):
            global_similarity(q, t)


class TestFusion:
    def test_paper_default_weighting(self):
        assert fuse(1.0, 0.0, FusionWeight(0.6)) == pytest.approx(0.6, abs=1e-15)

    def test_endpoints(self):
        assert fuse(1.25, -0.5, FusionWeight(1.0)) == 1.25
        assert fuse(1.25, -0.5, FusionWeight(0.0)) == -0.5

    def test_equal_terms(self):
        assert fuse(3.0, 3.0, FusionWeight(0.6)) == pytest.approx(3.0, abs=1e-15)

    def test_invalid_beta(self):
        for bad in (-0.1, 1.1, float("nan")):
            with pytest.raises(ConfigurationError):
                FusionWeight(bad)

    def test_monotone_in_each_term(self):
        w = FusionWeight(0.3)
        assert fuse(1.0, 0.5, w) < fuse(2.0, 0.5, w)
        assert fuse(1.0, 0.5, w) < fuse(1.0, 1.5, w)

    def test_affine_in_beta(self):
        rng = np.random.default_rng(16)
        for _ in range(20):
            sl, sg = rng.normal(size=2)
            s0 = fuse(sl, sg, FusionWeight(0.0))
            s_half = fuse(sl, sg, FusionWeight(0.5))
            s1 = fuse(sl, sg, FusionWeight(1.0))
            assert abs(s_half - 0.5 * (s0 + s1)) < 1e-9

    def test_bound(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            sl = rng.uniform(-3, 3)
            sg = rng.uniform(-3, 3)
            assert abs(fuse(sl, sg, FusionWeight(rng.uniform(0, 1)))) <= 3.0 + 1e-12


class TestChainGradient:
    def test_compose_descriptors_fuse_chain(self):
        """Full trainable chain agrees with central differences."""
        rng = np.random.default_rng(18)
        dims = {"L": 4, "M": 5, "H": 6}
        shapes = {"L": (2, 2, 4), "M": (2, 1, 5), "H": (1, 1, 6)}
        blocks = {lvl: CrossModalBlock.initialize(lvl, d, 3, rng) for lvl, d in dims.items()}
        gens = {lvl: RegionMaskGenerator.initialize(lvl, d, 2, rng) for lvl, d in dims.items()}
        weight = FusionWeight(0.6)

        q_feats = {lvl: Tensor(rng.normal(size=shapes[lvl])) for lvl in LEVELS}
        t_feats = {lvl: Tensor(rng.normal(size=shapes[lvl])) for lvl in LEVELS}
        tokens = Tensor(rng.normal(size=(3, 3)))

        def score():
            composed = {
                lvl: compose(q_feats[lvl], tokens, blocks[lvl], level=lvl) for lvl in LEVELS
            }
            q_desc = {lvl: region_descriptors(composed[lvl], gens[lvl]) for lvl in LEVELS}
            t_desc = {lvl: region_descriptors(t_feats[lvl], gens[lvl]) for lvl in LEVELS}
            s_local = local_similarity(q_desc, t_desc)
            s_global = global_similarity(composed, t_feats)
            return fuse(s_local, s_global, weight)

        params = []
        for lvl in LEVELS:
            params += [p for _, p in blocks[lvl].named_parameters()]
            params += [p for _, p in gens[lvl].named_parameters()]
        err = gradient_check(score, params)
        assert err < 1e-4, f"max relative error {err}"
