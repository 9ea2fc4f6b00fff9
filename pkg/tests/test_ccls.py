import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trustfuse.ccls import (TrustVector, build_design, build_oracle, estimate_trust_table, objective,
                            solve_trust, stack_views, trust_table_from_scores)
from trustfuse.classifiers import ChannelScores, lda_fit
from trustfuse.core import ALL_SCENES, N_LABELS, Channel, Illumination, Modality, View, channels_for
from trustfuse.errors import DegenerateSystem, ShapeMismatch

from conftest import make_feature_dataset
from oracles import grid_search_objective, oracle_vector_loops


def random_blocks(rng, k, l=N_LABELS, m=3, concentration=1.0):
    """(K, L, M) stack whose every column is a probability vector."""
    return rng.dirichlet(np.full(l, concentration), size=(k, m)).transpose(0, 2, 1)


class TestBuildDesign:
    def test_indexing_contract(self):
        blocks = np.arange(12, dtype=float).reshape(2, 3, 2)
        d = build_design(blocks)
        assert d.shape == (6, 2)
        for k in range(2):
            for l in range(3):
                for m in range(2):
                    assert d.a[k * 3 + l, m] == blocks[k, l, m]

    def test_single_block(self):
        blk = np.array([[0.2, 0.5], [0.8, 0.5]])
        assert np.array_equal(build_design([blk]).a, blk)

    def test_column_sums_equal_point_count(self):
        d = build_design(random_blocks(np.random.default_rng(0), 7))
        assert np.allclose(d.a.sum(axis=0), 7.0)

    def test_empty(self):
        with pytest.raises(ShapeMismatch):
            build_design(np.zeros((0, 3, 3)))


class TestBuildOracle:
    def blocks(self):
        # point 0: all three right, point 1: only D right, point 2: all wrong (truth 2)
        b = np.full((3, 3, 3), 0.1)
        b[0, 0, :] = 0.8
        b[1, 1, :] = 0.8
        b[1, 2, 1] = 0.9
        b[2, 0, :] = 0.8
        return b

    def test_unanimous_partial_zero(self):
        o = build_oracle(self.blocks(), [0, 2, 2])
        assert o.b[0] == 1.0 and np.all(o.b[1:3] == 0.0)
        assert o.b[3 + 2] == pytest.approx(1 / 3) and o.b[3] == o.b[4] == 0.0
        assert np.all(o.b[6:9] == 0.0)
        assert o.per_modality[5].tolist() == [0.0, 1.0, 0.0]

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        blocks = random_blocks(rng, 20)
        truth = rng.integers(0, N_LABELS, 20)
        assert np.allclose(build_oracle(blocks, truth).b, oracle_vector_loops(blocks, truth), atol=0)

    def test_column_rescaling_leaves_oracle_unchanged(self):
        rng = np.random.default_rng(2)
        blocks = random_blocks(rng, 10)
        truth = rng.integers(0, N_LABELS, 10)
        scaled = blocks * np.array([3.0, 0.01, 7.5])
        assert np.array_equal(build_oracle(blocks, truth).b, build_oracle(scaled, truth).b)

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatch):
            build_oracle(self.blocks(), [0, 1])


class TestStackViews:
    def test_single_view_is_identity(self):
        blocks = random_blocks(np.random.default_rng(0), 6)
        pair = (build_design(blocks), build_oracle(blocks, np.zeros(6, int)))
        assert stack_views([pair]) is pair

    def test_row_arithmetic(self):
        rng = np.random.default_rng(0)
        pairs = []
        for _ in range(3):
            blocks = random_blocks(rng, 6)
            pairs.append((build_design(blocks), build_oracle(blocks, np.arange(6))))
        d, o = stack_views(pairs)
        assert d.shape == (198, 3) and o.b.shape == (198,)
        assert d.n_views == 3
        assert np.array_equal(d.a[66:132], pairs[1][0].a)

    def test_duplicated_views_keep_solution(self):
        rng = np.random.default_rng(4)
        blocks = random_blocks(rng, 12, concentration=0.3)
        truth = rng.integers(0, N_LABELS, 12)
        pair = (build_design(blocks), build_oracle(blocks, truth))
        single = solve_trust(*pair).w
        stacked = solve_trust(*stack_views([pair, pair, pair])).w
        assert np.allclose(single, stacked, atol=1e-9)

    def test_mismatch(self):
        rng = np.random.default_rng(0)
        a = random_blocks(rng, 4)
        b = random_blocks(rng, 5)
        with pytest.raises(ShapeMismatch):
            stack_views([(build_design(a), build_oracle(a, [0] * 4)),
                         (build_design(b), build_oracle(b, [0] * 5))])


class TestSolveTrust:
    def test_vertex_representation(self):
        rng = np.random.default_rng(0)
        a = build_design(random_blocks(rng, 3)).a
        w = solve_trust(a, a[:, 0].copy()).w
        assert np.allclose(w, [1.0, 0.0, 0.0], atol=1e-9)

    def test_identical_columns_give_uniform(self):
        col = np.random.default_rng(1).dirichlet(np.ones(N_LABELS))
        a = np.repeat(col[:, None], 3, axis=1)
        w = solve_trust(a, np.random.default_rng(2).random(N_LABELS)).w
        assert np.allclose(w, 1.0 / 3.0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_grid_search_oracle(self, seed):
        rng = np.random.default_rng(seed)
        a = build_design(random_blocks(rng, 3)).a  # 33 x 3
        b = rng.random(33)
        w = solve_trust(a, b).w
        assert objective(a, b, w) <= grid_search_objective(a, b, 0.005) + 1e-4

    @pytest.mark.parametrize("seed", range(5))
    def test_exact_recovery(self, seed):
        rng = np.random.default_rng(100 + seed)
        a = build_design(random_blocks(rng, 6)).a
        w0 = rng.dirichlet(np.full(3, 3.0))
        assert np.max(np.abs(solve_trust(a, a @ w0).w - w0)) < 1e-8

    def test_dominates_vertices_and_uniform(self):
        rng = np.random.default_rng(9)
        blocks = random_blocks(rng, 15, concentration=0.2)
        truth = rng.integers(0, N_LABELS, 15)
        a, b = build_design(blocks).a, build_oracle(blocks, truth).b
        best = objective(a, b, solve_trust(a, b).w)
        for cand in [*np.eye(3), np.full(3, 1 / 3)]:
            assert best <= objective(a, b, cand) + 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 12), st.integers(2, 3))
    def test_simplex_property(self, seed, k, m):
        rng = np.random.default_rng(seed)
        blocks = random_blocks(rng, k, m=m, concentration=0.5)
        truth = rng.integers(0, N_LABELS, k)
        w = solve_trust(build_design(blocks), build_oracle(blocks, truth)).w
        assert np.all(w >= 0.0) and abs(w.sum() - 1.0) <= 1e-12

    def test_two_modalities(self):
        a = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert np.allclose(solve_trust(a, np.array([0.7, 0.3])).w, [0.7, 0.3])

    def test_degenerate_and_shape_errors(self):
        with pytest.raises(DegenerateSystem):
            solve_trust(np.ones((2, 3)) / 2, np.ones(2))
        with pytest.raises(DegenerateSystem):
            solve_trust(np.full((4, 3), np.nan), np.ones(4))
        with pytest.raises(ShapeMismatch):
            solve_trust(np.ones((4, 3)), np.ones(5))

    def test_trust_vector_invariants(self):
        tv = TrustVector(np.array([0.2, 0.3, 0.5]))
        assert tv[Modality.P] == 0.5
        with pytest.raises(ValueError):
            TrustVector(np.array([0.2, 0.3, 0.6]))
        with pytest.raises(ShapeMismatch):
            TrustVector(np.array([0.5, 0.5]))


def constructed_scores(rng, scenes, quality, peak=5.0):
    """Per-point channel scores with a controlled chance of voting for the truth.

    ``quality(scene, modality)`` is either the probability that the modality's
    score vector peaks on the true label (otherwise on a random wrong one), or
    ``"uniform"`` for a flat, uninformative output. Peaked vectors are drawn
    from a Dirichlet with ``peak`` extra mass on the voted label, which mimics
    a classifier that is confident but not one-hot.
    """
    chans = channels_for([Modality.R, Modality.D, Modality.P], [View.TOP])
    labels = rng.integers(0, N_LABELS, len(scenes))
    vals = np.zeros((len(scenes), N_LABELS, len(chans)))
    for i, (s, lab) in enumerate(zip(scenes, labels)):
        for j, c in enumerate(chans):
            q = quality(s, c.modality)
            if q == "uniform":
                vals[i, :, j] = 1.0 / N_LABELS
                continue
            target = lab if rng.random() < q else (lab + rng.integers(1, N_LABELS)) % N_LABELS
            alpha = np.ones(N_LABELS)
            alpha[target] += peak
            vals[i, :, j] = rng.dirichlet(alpha)
    return ChannelScores(chans, vals), labels


class TestTrustTable:
    def test_uninformative_depth_in_dark(self):
        rng = np.random.default_rng(0)
        scenes = [s for s in ALL_SCENES for _ in range(30)]

        def quality(s, m):
            if m is Modality.D and s.illumination is Illumination.DARK:
                return "uniform"
            return {Modality.R: 0.6, Modality.D: 0.8, Modality.P: 0.6}[m]

        scores, labels = constructed_scores(rng, scenes, quality)
        table = trust_table_from_scores(scores, labels, scenes, [View.TOP], list(Modality))
        assert len(table) == 12
        dark = [tv[Modality.D] for s, tv in table.items() if s.illumination is Illumination.DARK]
        bright = [tv[Modality.D] for s, tv in table.items() if s.illumination is Illumination.BRIGHT]
        assert max(dark) < min(bright)

    def test_perfect_modality_dominates(self):
        rng = np.random.default_rng(1)
        scenes = [ALL_SCENES[5]] * 60
        scores, labels = constructed_scores(
            rng, scenes, lambda s, m: 1.0 if m is Modality.R else 1.0 / N_LABELS)
        tv = trust_table_from_scores(scores, labels, scenes, [View.TOP], list(Modality))[ALL_SCENES[5]]
        assert tv[Modality.R] > max(tv[Modality.D], tv[Modality.P])

    def test_single_scene_table(self):
        ds = make_feature_dataset(n_rep=2, scenes=[ALL_SCENES[3]])
        clfs = {c: lda_fit(ds.feature_matrix(c), ds.labels) for c in ds.config.channels}
        table = estimate_trust_table(ds, clfs)
        assert list(table) == [ALL_SCENES[3]]
        assert table[ALL_SCENES[3]].scene == ALL_SCENES[3]

    def test_pressure_only_table(self):
        ds = make_feature_dataset(n_rep=2, modalities=(Modality.P,), views=(), scenes=ALL_SCENES[:2])
        clfs = {Channel(Modality.P): lda_fit(ds.feature_matrix(Channel(Modality.P)), ds.labels)}
        table = estimate_trust_table(ds, clfs)
        assert all(tv.w.tolist() == [1.0] for tv in table.values())
