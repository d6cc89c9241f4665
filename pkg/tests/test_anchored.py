import numpy as np
import pytest

from conftest import random_grid
from oracles import components, top_k
from tge.affinity import AffinityConfig
from tge.anchored import (
    RetainedTokens,
    SelectionConfig,
    compress_grid,
    compress_image,
    compress_grids,
    grid_pixels,
    score_tokens,
    select_anchored,
)
from tge.encoder import AttentionMap, EncodedOutput, EncoderParams, encode, softmax_attention
from tge.errors import BudgetError, GridError, InputError, ShapeError
from tge.fixtures import two_region_pixels
from tge.token_model import GridLayout, TokenGrid

SINGLE = GridLayout(336, 336)
SMALL_ENCODER = EncoderParams(dim=8, layers=2, vocab=8, seed=3)


def attention(weights):
    w = np.asarray(weights, dtype=np.float64)
    return AttentionMap(w / w.sum())


def fake_output(weights, rows, cols):
    return EncodedOutput([], attention(weights), rows, cols)


def tied_weights(rng, n):
    # draw from a small alphabet so ties are common
    return rng.integers(1, 6, size=n).astype(np.float64)


class TestSelectionConfig:
    def test_rounding(self):
        assert SelectionConfig(0.3).budget_for(10) == 3
        assert SelectionConfig(0.25).budget_for(10) == 3  # 2.5 rounds up
        assert SelectionConfig(0.01).budget_for(10) == 1
        assert SelectionConfig(1.0, 24).budget_for(576) == 24

    def test_invalid(self):
        with pytest.raises(InputError):
            SelectionConfig(0.0)
        with pytest.raises(InputError):
            SelectionConfig(1.0, 0)


class TestScoreTokens:
    def test_uniform(self):
        assert [i for i, _ in score_tokens(attention(np.ones(7)))] == list(range(7))

    def test_example(self):
        assert [i for i, _ in score_tokens(AttentionMap(np.array([0.1, 0.7, 0.2])))] == [1, 2, 0]

    def test_first_is_max(self, rng):
        for _ in range(50):
            w = attention(rng.random(int(rng.integers(1, 40))))
            assert score_tokens(w)[0][1] == w.weights.max()


class TestSelectAnchored:
    def test_ratio_one_keeps_all_in_score_order(self, rng):
        w = attention(rng.random(12))
        out = select_anchored(rng.normal(size=(12, 3)), w, SelectionConfig(1.0))
        assert out.source_indices == [i for i, _ in score_tokens(w)]

    def test_decreasing_weights(self):
        w = attention(np.arange(10, 0, -1))
        out = select_anchored(np.eye(10), w, SelectionConfig(0.3))
        assert out.source_indices == [0, 1, 2]

    def test_budget_24_of_576(self, rng):
        out = select_anchored(rng.normal(size=(576, 4)), attention(rng.random(576)), SelectionConfig(1.0, 24))
        assert len(out) == 24

    def test_matches_full_sort(self, rng):
        for trial in range(1000):
            n = int(rng.integers(1, 513))
            w = tied_weights(rng, n) if trial % 2 else rng.random(n)
            am = attention(w)
            budget = int(rng.integers(1, n + 1))
            out = select_anchored(np.zeros((n, 1)), am, SelectionConfig(1.0, budget))
            assert out.source_indices == top_k(am.weights.tolist(), budget)

    def test_vectors_are_exact_copies(self, rng):
        x = rng.normal(size=(50, 6)).astype(np.float32)
        out = select_anchored(x, attention(rng.random(50)), SelectionConfig(0.4))
        assert out.vectors.tobytes() == x[out.source_indices].tobytes()

    def test_nested_in_budget(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 100))
            am = attention(tied_weights(rng, n))
            prev = []
            for b in range(1, n + 1):
                cur = select_anchored(np.zeros((n, 1)), am, SelectionConfig(1.0, b)).source_indices
                assert cur[:len(prev)] == prev
                prev = cur

    def test_logit_shift_invariance(self, rng):
        for _ in range(50):
            q, k = rng.normal(size=4), rng.normal(size=(30, 4))
            shifted_q = np.append(q, 1.0)
            shifted_k = np.hstack([k, np.full((30, 1), float(rng.normal(scale=3)))])
            base = select_anchored(k, softmax_attention(q, k, 4), SelectionConfig(0.3))
            # the extra coordinate adds the same constant to every logit
            moved = softmax_attention(shifted_q, shifted_k, 5)
            again = select_anchored(k, AttentionMap(moved.weights), SelectionConfig(0.3))
            assert set(base.source_indices) == set(again.source_indices)

    def test_errors(self, rng):
        with pytest.raises(BudgetError):
            select_anchored(np.zeros((5, 1)), attention(np.ones(5)), SelectionConfig(1.0, 6))
        with pytest.raises(ShapeError):
            select_anchored(np.zeros((4, 1)), attention(np.ones(5)), SelectionConfig(1.0))
        with pytest.raises(InputError):
            RetainedTokens(np.zeros((2, 1)), [0, 1], [0.1, 0.2])


class TestCompressGrid:
    def test_constant_grid_collapses(self):
        grid = TokenGrid(np.ones((24, 24, 4)))
        retained, rep = compress_grid(grid, fake_output(np.ones(576), 24, 24), AffinityConfig(),
                                      SelectionConfig(1.0, 24))
        assert len(retained) == 1
        assert rep.cluster_sizes == [576]
        assert retained.scores[0] == pytest.approx(1.0)

    def test_threshold_one_is_pure_selection(self, rng):
        grid = random_grid(rng, 24, 24, 6)
        out = fake_output(rng.random(576), 24, 24)
        sel = SelectionConfig(1.0, 24)
        retained, rep = compress_grid(grid, out, AffinityConfig(join_threshold=1.0), sel)
        direct = select_anchored(grid.tokens, out.cls_attention_second_to_last, sel)
        assert retained.source_indices == direct.source_indices
        assert retained.vectors.tobytes() == direct.vectors.tobytes()
        assert rep.retained_token_count == 24 and rep.pooled_token_count == 576

    def test_two_region_against_replay(self):
        out = encode(two_region_pixels(7), EncoderParams(), SINGLE)
        grid = out.patch_grid()
        aff = AffinityConfig(join_threshold=0.9)
        retained, rep = compress_grid(grid, out, aff, SelectionConfig(1.0, 24))
        assert len(retained) == 24

        # replay both stages with the reference components oracle
        data = grid.data.astype(np.float64)
        comps = sorted(components(data, aff.join_threshold, aff.neighborhood), key=min)
        assert rep.pooled_token_count == len(comps)
        w = out.cls_attention_second_to_last.weights
        sums = [sum(w[i] for i in c) for c in comps]
        expected = top_k(sums, 24)
        assert retained.source_indices == [min(comps[k]) for k in expected]
        assert retained.scores == pytest.approx([sums[k] for k in expected], abs=1e-12)
        tokens = grid.tokens.astype(np.float64)
        for vec, k in zip(retained.vectors, expected):
            assert np.allclose(vec, tokens[sorted(comps[k])].mean(axis=0), atol=1e-6)

    def test_mismatched_output(self, rng):
        with pytest.raises(ShapeError):
            compress_grid(random_grid(rng, 2, 2, 2), fake_output(np.ones(5), 1, 5),
                          AffinityConfig(), SelectionConfig())


class TestCompressImage:
    def test_identity_pipeline(self):
        px = two_region_pixels(1)
        retained, rep = compress_image(px, SINGLE, SMALL_ENCODER, AffinityConfig(join_threshold=1.0),
                                       SelectionConfig(1.0))
        assert len(retained[0]) == 576
        assert rep.compression_ratio == 1
        assert sorted(rep.retained_indices) == list(range(576))

    def test_two_grids_global_indices(self):
        layout = GridLayout(672, 336)
        px = np.hstack([two_region_pixels(1), two_region_pixels(2)])
        retained, rep = compress_image(px, layout, SMALL_ENCODER, AffinityConfig(join_threshold=1.0),
                                       SelectionConfig(1.0, 24))
        assert rep.retained_token_count == 48 and rep.original_token_count == 1152
        assert rep.retained_indices[:24] == retained[0].source_indices
        assert rep.retained_indices[24:] == [576 + i for i in retained[1].source_indices]
        assert grid_pixels(px, layout, 1).tobytes() == two_region_pixels(2).tobytes()

    def test_jobs_do_not_change_results(self):
        tiles = [two_region_pixels(s) for s in range(3)]
        layout = GridLayout(1008, 336)
        args = (tiles, layout, SMALL_ENCODER, AffinityConfig(join_threshold=0.8), SelectionConfig(1.0, 12))
        one = compress_grids(*args, jobs=1)
        two = compress_grids(*args, jobs=2)
        for (r1, c1), (r2, c2) in zip(one, two):
            assert r1.vectors.tobytes() == r2.vectors.tobytes()
            assert r1.source_indices == r2.source_indices and c1.to_dict() == c2.to_dict()

    def test_grid_error_names_grid(self):
        layout = GridLayout(672, 336)
        bad = [two_region_pixels(0), np.full((336, 336), np.inf)]
        with pytest.raises(GridError) as info:
            compress_grids(bad, layout, SMALL_ENCODER, AffinityConfig(), SelectionConfig(1.0, 24))
        assert info.value.index == 1

    def test_tile_count_checked(self):
        with pytest.raises(ShapeError):
            compress_grids([two_region_pixels(0)], GridLayout(672, 336), SMALL_ENCODER,
                           AffinityConfig(), SelectionConfig())
