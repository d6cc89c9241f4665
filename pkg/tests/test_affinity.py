import numpy as np
import pytest

from conftest import random_grid
from oracles import affinity_softmax, components, partition
from tge.affinity import (
    AffinityConfig,
    ClusterAssignment,
    cluster_grid,
    grow_cluster,
    neighbor_affinity,
    pool_clusters,
)
from tge.errors import BoundsError, InputError
from tge.token_model import TokenGrid


def halves_grid(rows=6, cols=6, dim=4):
    data = np.zeros((rows, cols, dim))
    data[:, : cols // 2, 0] = 1.0
    data[:, cols // 2:, 1] = 1.0
    return TokenGrid(data)


def distinct_directions(rows, cols, dim=3):
    rng = np.random.default_rng(0)
    return TokenGrid(rng.normal(size=(rows, cols, dim)))


class TestNeighborAffinity:
    def test_interior_uniform(self):
        q = neighbor_affinity(TokenGrid(np.ones((3, 3, 2))), (1, 1), AffinityConfig(neighborhood=4))
        assert len(q) == 4
        assert all(v == pytest.approx(0.25, abs=1e-15) for _, v in q)

    def test_corner(self):
        q = neighbor_affinity(distinct_directions(4, 4), (0, 0), AffinityConfig(neighborhood=4))
        assert len(q) == 2
        assert sum(v for _, v in q) == pytest.approx(1.0, abs=1e-12)
        assert len(neighbor_affinity(distinct_directions(4, 4), (3, 3), AffinityConfig())) == 3

    def test_matches_extended_precision(self, rng):
        for nb in (4, 8):
            for _ in range(10):
                grid = random_grid(rng, 3, 3, 5)
                cfg = AffinityConfig(neighborhood=nb, temperature=float(rng.uniform(0.05, 2.0)))
                for p in [(r, c) for r in range(3) for c in range(3)]:
                    got = neighbor_affinity(grid, p, cfg)
                    nbrs, expected = affinity_softmax(grid.data.astype(np.float64), p, nb, cfg.temperature)
                    got_map = dict(got)
                    assert set(got_map) == set(nbrs)
                    for s, e in zip(nbrs, expected):
                        assert abs(got_map[s] - e) < 1e-9

    def test_zero_vector_neighbor(self):
        data = np.ones((1, 3, 2))
        data[0, 2] = 0.0
        q = dict(neighbor_affinity(TokenGrid(data), (0, 1), AffinityConfig(temperature=1.0)))
        # cosine 1 with (0,0) and 0 with the zero vector
        assert q[(0, 0)] == pytest.approx(np.e / (np.e + 1))

    def test_errors(self):
        with pytest.raises(BoundsError):
            neighbor_affinity(TokenGrid(np.ones((2, 2, 1))), (2, 0), AffinityConfig())
        with pytest.raises(InputError):
            neighbor_affinity(TokenGrid(np.ones((1, 1, 1))), (0, 0), AffinityConfig())
        with pytest.raises(InputError):
            AffinityConfig(temperature=0)
        with pytest.raises(InputError):
            AffinityConfig(join_threshold=1.5)
        with pytest.raises(InputError):
            AffinityConfig(neighborhood=6)


class TestGrowCluster:
    def test_threshold_one_on_distinct_tokens(self):
        assert grow_cluster(distinct_directions(4, 4), 5, AffinityConfig(join_threshold=1.0)) == {5}

    def test_uniform_one_step(self):
        grid = TokenGrid(np.ones((5, 5, 3)))
        cfg = AffinityConfig(neighborhood=4, steps_n=1, join_threshold=0.9)
        assert grow_cluster(grid, 12, cfg) == {12, 7, 11, 13, 17}
        assert grow_cluster(grid, 0, cfg) == {0, 1, 5}

    def test_halves(self):
        grid = halves_grid()
        cfg = AffinityConfig(neighborhood=4, steps_n=10, join_threshold=0.5)
        left = {r * 6 + c for r in range(6) for c in range(3)}
        assert grow_cluster(grid, 0, cfg) == left
        assert grow_cluster(grid, 35, cfg) == set(range(36)) - left

    def test_monotone_in_steps(self, rng):
        grid = random_grid(rng, 6, 6, 2)
        prev = set()
        for n in range(1, 8):
            cur = grow_cluster(grid, 14, AffinityConfig(steps_n=n, join_threshold=0.3))
            assert prev <= cur and 14 in cur
            prev = cur

    def test_bad_seed(self):
        with pytest.raises(BoundsError):
            grow_cluster(TokenGrid(np.ones((2, 2, 1))), 4, AffinityConfig())


class TestClusterGrid:
    def test_constant(self):
        a = cluster_grid(TokenGrid(np.ones((6, 6, 3))), AffinityConfig())
        assert a.cluster_count == 1

    def test_halves(self):
        a = cluster_grid(halves_grid(), AffinityConfig(join_threshold=0.5))
        assert a.cluster_count == 2
        assert partition(a.cluster_of) == components(halves_grid().data, 0.5, 8)

    def test_singletons(self):
        a = cluster_grid(distinct_directions(5, 5), AffinityConfig(join_threshold=1.0))
        assert a.cluster_count == 25

    def test_matches_components_oracle(self, rng):
        for _ in range(60):
            rows, cols = rng.integers(1, 9, size=2)
            # low-dim, correlated tokens so the threshold actually bites
            grid = random_grid(rng, rows, cols, int(rng.integers(2, 4)))
            cfg = AffinityConfig(neighborhood=int(rng.choice([4, 8])), steps_n=1,
                                 join_threshold=float(rng.uniform(0.0, 1.0)))
            expected = components(grid.data.astype(np.float64), cfg.join_threshold, cfg.neighborhood)
            assert partition(cluster_grid(grid, cfg).cluster_of) == expected

    @pytest.mark.parametrize("steps", [1, 2, 3, 5])
    def test_exhaustive_growth_agrees(self, rng, steps):
        for _ in range(20):
            grid = random_grid(rng, 6, 7, 2)
            cfg = AffinityConfig(steps_n=steps, join_threshold=0.6)
            fast = cluster_grid(grid, cfg)
            slow = cluster_grid(grid, cfg, exhaustive=True)
            assert fast.cluster_of.tolist() == slow.cluster_of.tolist()

    def test_seed_order_invariance(self, rng):
        for _ in range(20):
            grid = random_grid(rng, 5, 6, 2)
            cfg = AffinityConfig(join_threshold=0.5)
            base = cluster_grid(grid, cfg, exhaustive=True)
            perm = rng.permutation(grid.n_tokens).tolist()
            again = cluster_grid(grid, cfg, seed_order=perm, exhaustive=True)
            assert base.cluster_of.tolist() == again.cluster_of.tolist()

    def test_labels_ordered_by_first_member(self, rng):
        a = cluster_grid(random_grid(rng, 6, 6, 2), AffinityConfig(join_threshold=0.7))
        firsts = [int(np.flatnonzero(a.cluster_of == k)[0]) for k in range(a.cluster_count)]
        assert firsts == sorted(firsts)

    def test_assignment_json(self):
        a = cluster_grid(halves_grid(2, 2, 2), AffinityConfig(join_threshold=0.5))
        assert a.to_json() == {"cluster_of": [0, 1, 0, 1]}

    def test_non_contiguous_assignment_rejected(self):
        with pytest.raises(InputError):
            ClusterAssignment(np.array([0, 2]), 2)


class TestPoolClusters:
    def test_singletons_identity(self, rng):
        grid = random_grid(rng, 3, 4, 5)
        tokens, rep = pool_clusters(grid, ClusterAssignment(np.arange(12), 12))
        assert tokens.tobytes() == grid.tokens.tobytes()
        assert rep.cluster_sizes == [1] * 12

    def test_constant_single_cluster(self):
        grid = TokenGrid(np.full((4, 4, 3), 0.5))
        tokens, rep = pool_clusters(grid, ClusterAssignment(np.zeros(16, dtype=int), 1))
        assert tokens.shape == (1, 3) and np.all(tokens == 0.5)
        assert rep.cluster_sizes == [16]

    def test_mean(self):
        grid = TokenGrid(np.array([[[1.0, 0.0], [0.0, 1.0]]]))
        tokens, _ = pool_clusters(grid, ClusterAssignment(np.array([0, 0]), 1))
        assert tokens[0].tolist() == [0.5, 0.5]

    def test_order_by_smallest_member(self):
        grid = TokenGrid(np.arange(4.0).reshape(1, 4, 1))
        tokens, rep = pool_clusters(grid, ClusterAssignment(np.array([1, 0, 1, 0]), 2))
        assert rep.retained_indices == [0, 1]
        assert tokens[:, 0].tolist() == [1.0, 2.0]

    def test_monotone_count(self, rng):
        for _ in range(30):
            grid = random_grid(rng, 5, 5, 2)
            a = cluster_grid(grid, AffinityConfig(join_threshold=float(rng.uniform(0.3, 1.0))))
            tokens, rep = pool_clusters(grid, a)
            assert len(tokens) <= grid.n_tokens
            assert (len(tokens) == grid.n_tokens) == all(s == 1 for s in rep.cluster_sizes)
            assert sum(rep.cluster_sizes) == grid.n_tokens
