import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from herdrl import checks, model
from herdrl.core import (Ablation, AgentKind, AgentState, JointObservation, RngStream, ScenarioConfig,
                         sample_circle_crossing, to_robot_frame)


def scene(n_h, n_o, seed=0, ablation=Ablation.HeR):
    cfg = ScenarioConfig(n_humans=n_h, n_other_robots=n_o, ablation=ablation)
    return to_robot_frame(sample_circle_crossing(cfg, RngStream(seed, "test", "model")))


def params(seed=0, ablation=Ablation.HeR):
    return checks.random_params(RngStream(seed, "init"), ablation)


def dense_value(obs, p, ablation):
    """Oracle: the network written out node by node with plain numpy."""
    d = model.neighbor_dim(ablation)
    het = Ablation(ablation).heterogeneous

    def mlp(x, prefix):
        for i in range(2):
            x = np.maximum(x @ p[f"{prefix}.{i}.W"] + p[f"{prefix}.{i}.b"], 0)
        return x

    rows = [mlp(obs.cr[None], "embed_cr")[0]]
    rows += [mlp(h[None, :d], "embed_h" if het else "embed_nb")[0] for h in obs.humans]
    rows += [mlp(o[None, :d], "embed_or" if het else "embed_nb")[0] for o in obs.other_robots]
    H = np.array(rows)
    n_h = len(obs.humans)
    kind = ["cr"] + ["h"] * n_h + ["o"] * len(obs.other_robots)
    rel_of = {frozenset(["h"]): "HHI", frozenset(["h", "cr"]): "HCRI", frozenset(["h", "o"]): "HORI",
              frozenset(["cr", "o"]): "CRORI", frozenset(["o"]): "ORORI"}
    rels = model.relation_keys(ablation)
    n = len(H)
    for layer in range(2):
        out = np.zeros_like(H)
        for v in range(n):
            mine = sorted({(rel_of[frozenset([kind[v], kind[u]])] if het else "ALL") for u in range(n) if u != v})
            mine = mine or list(rels)
            out[v] += H[v] @ np.mean([p[f"gnn{layer}.{r}.W1"] for r in mine], axis=0)
            for u in range(n):
                if u != v:
                    r = rel_of[frozenset([kind[v], kind[u]])] if het else "ALL"
                    out[v] += H[u] @ p[f"gnn{layer}.{r}.W2"]
        H = np.maximum(out, 0)
    x = H[0:1]
    for i in range(4):
        x = x @ p[f"value.{i}.W"] + p[f"value.{i}.b"]
        if i < 3:
            x = np.maximum(x, 0)
    return x[0, 0]


class TestParams:
    def test_deterministic(self):
        a = model.init_params(RngStream(4, "init"))
        b = model.init_params(RngStream(4, "init"))
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_glorot_bounds_and_zero_bias(self):
        for name, w in model.init_params(RngStream(0, "init")).items():
            if name.endswith(".b"):
                assert not w.any()
            else:
                bound = math.sqrt(6 / sum(w.shape))
                assert np.all(np.abs(w) <= bound)

    def test_relations_get_distinct_weights(self):
        p = model.init_params(RngStream(0, "init"))
        w2 = [p[f"gnn0.{r.value}.W2"] for r in model.RelationType]
        assert all(not np.array_equal(a, b) for a, b in itertools.combinations(w2, 2))

    @pytest.mark.parametrize("ablation", list(Ablation))
    def test_shapes(self, ablation):
        shapes = model.param_shapes(ablation)
        d = 8 if ablation.uses_category else 7
        groups = ("embed_h", "embed_or") if ablation.heterogeneous else ("embed_nb",)
        for g in groups:
            assert shapes[f"{g}.0.W"] == (d, 64)
        n_rel = 5 if ablation.heterogeneous else 1
        assert sum(k.startswith("gnn0.") for k in shapes) == 2 * n_rel
        assert shapes["value.0.W"] == (64, 128) and shapes["value.3.W"] == (32, 1)


class TestGraph:
    def test_counts_5h2o(self):
        g = model.build_het_graph(scene(5, 2))
        assert g.undirected_counts() == {"HHI": 10, "HCRI": 5, "HORI": 10, "CRORI": 2, "ORORI": 1}

    def test_counts_3h3o(self):
        g = model.build_het_graph(scene(3, 3))
        assert g.undirected_counts() == {"HHI": 3, "HCRI": 3, "HORI": 9, "CRORI": 3, "ORORI": 3}

    def test_lonely_robot(self):
        g = model.build_het_graph(scene(0, 0))
        assert g.n_nodes == 1 and all(len(e) == 0 for e in g.edges.values())

    @given(n_h=st.integers(0, 7), n_o=st.integers(0, 7))
    def test_partition_of_complete_graph(self, n_h, n_o):
        g = model._graph_for_counts(n_h, n_o, Ablation.HeR)
        seen = []
        for e in g.edges.values():
            seen += [tuple(x) for x in e]
        assert len(seen) == len(set(seen))
        n = 1 + n_h + n_o
        assert set(seen) == {(i, j) for i in range(n) for j in range(n) if i != j}

    def test_homogeneous_graph_is_union(self):
        g = model.build_het_graph(scene(5, 2), Ablation.HoR)
        assert list(g.edges) == ["ALL"] and len(g.edges["ALL"]) == 2 * 28


class TestEmbed:
    def test_zero_weights_zero_features(self):
        p = {k: np.zeros_like(v) for k, v in params().items()}
        assert not model.embed(scene(5, 2), p).any()

    def test_shape(self):
        assert model.embed(scene(5, 2), params()).shape == (8, 64)

    def test_category_bit_matters(self):
        row = np.array([1.0, 0.5, 0.2, -0.1, 0.3, 1.1, 0.6, 1.0])
        other = row.copy()
        other[7] = 0.0
        obs = JointObservation(np.zeros(6), row[None], other[None])
        p = params()
        # Same MLP for both so only the category bit differs.
        p["embed_or.0.W"], p["embed_or.0.b"] = p["embed_h.0.W"], p["embed_h.0.b"]
        p["embed_or.1.W"], p["embed_or.1.b"] = p["embed_h.1.W"], p["embed_h.1.b"]
        emb = model.embed(obs, p)
        assert not np.allclose(emb[1], emb[2])

    def test_nocate_ignores_category(self):
        obs = scene(3, 2, ablation=Ablation.HeR_nocate)
        flipped = JointObservation(obs.cr, obs.humans.copy(), obs.other_robots.copy())
        flipped.humans[:, 7] = 0.0
        p = params(ablation=Ablation.HeR_nocate)
        assert model.value(obs, p, Ablation.HeR_nocate) == model.value(flipped, p, Ablation.HeR_nocate)


class TestLayer:
    def test_zero_weights(self):
        g = model.build_het_graph(scene(3, 2))
        z = np.zeros((64, 64))
        out = model.hetgnn_layer(g, np.random.default_rng(0).normal(size=(6, 64)),
                                 {r: (z, z) for r in model.relation_keys(Ablation.HeR)}).value
        assert not out.any()

    def test_isolated_center_robot_uses_mean_w1(self):
        g = model.build_het_graph(scene(0, 0))
        rng = np.random.default_rng(1)
        h = rng.normal(size=(1, 64))
        weights = {r: (rng.normal(size=(64, 64)), rng.normal(size=(64, 64))) for r in model.relation_keys("HeR")}
        w1_avg = np.mean([w[0] for w in weights.values()], axis=0)
        out = model.hetgnn_layer(g, h, weights).value
        assert np.allclose(out, np.maximum(h @ w1_avg, 0), atol=1e-12)

    @given(n_h=st.integers(0, 6), n_o=st.integers(0, 6), seed=st.integers(0, 1000))
    def test_tied_weights_reduce_to_homogeneous(self, n_h, n_o, seed):
        g = model._graph_for_counts(n_h, n_o, Ablation.HeR)
        rng = np.random.default_rng(seed)
        feats = rng.normal(size=(g.n_nodes, 64))
        W1, W2 = rng.normal(size=(64, 64)) * 0.2, rng.normal(size=(64, 64)) * 0.2
        het = model.hetgnn_layer(g, feats, {r: (W1, W2) for r in model.relation_keys("HeR")}).value
        assert np.allclose(het, model.homogeneous_gnn_layer(g, feats, W1, W2), atol=1e-9, rtol=0)


class TestValue:
    def test_zero_params(self):
        p = {k: np.zeros_like(v) for k, v in params().items()}
        assert model.value(scene(5, 2), p) == 0.0

    @pytest.mark.parametrize("ablation", list(Ablation))
    @pytest.mark.parametrize("counts", [(0, 0), (1, 0), (0, 1), (2, 1), (5, 2), (3, 3)])
    def test_matches_dense_oracle(self, ablation, counts):
        obs = scene(*counts, seed=sum(counts), ablation=ablation)
        p = params(sum(counts), ablation)
        assert model.value(obs, p, ablation) == pytest.approx(dense_value(obs, p, ablation), abs=1e-12, rel=1e-12)

    def test_batch_matches_single(self):
        obs = [scene(h, o, seed=i) for i, (h, o) in enumerate([(5, 2), (0, 0), (2, 1), (3, 3), (5, 2)])]
        p = params()
        batched = model.values(obs, p)
        single = [model.value(o, p) for o in obs]
        assert np.allclose(batched, single, atol=1e-12, rtol=0)

    def test_permutation_invariance(self):
        obs = scene(5, 2)
        p = params()
        base = model.value(obs, p)
        rng = np.random.default_rng(0)
        for _ in range(50):
            perm = JointObservation(obs.cr, obs.humans[rng.permutation(5)], obs.other_robots[rng.permutation(2)])
            assert model.value(perm, p) == pytest.approx(base, abs=1e-9)

    def test_hor_equals_her_with_tied_weights(self):
        obs = scene(4, 2)
        her = params()
        for layer in range(2):
            for r in model.relation_keys("HeR"):
                her[f"gnn{layer}.{r}.W1"] = her[f"gnn{layer}.HHI.W1"]
                her[f"gnn{layer}.{r}.W2"] = her[f"gnn{layer}.HHI.W2"]
        for suffix in (".0.W", ".0.b", ".1.W", ".1.b"):
            her["embed_or" + suffix] = her["embed_h" + suffix]
        hor = {k: v for k, v in her.items() if not k.startswith(("gnn", "embed_h", "embed_or"))}
        for layer in range(2):
            hor[f"gnn{layer}.ALL.W1"] = her[f"gnn{layer}.HHI.W1"]
            hor[f"gnn{layer}.ALL.W2"] = her[f"gnn{layer}.HHI.W2"]
        for suffix in (".0.W", ".0.b", ".1.W", ".1.b"):
            hor["embed_nb" + suffix] = her["embed_h" + suffix]
        assert model.value(obs, hor, Ablation.HoR) == pytest.approx(model.value(obs, her, Ablation.HeR), abs=1e-9)

    def test_gradients_small_check(self):
        assert checks.gradient_check(n_scenes=3, coords_per_scene=20, seed=7).passed


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        p = params()
        path = tmp_path / "c.bin"
        model.save_checkpoint(path, p, Ablation.HeR)
        back, abl = model.load_checkpoint(path)
        assert abl is Ablation.HeR and list(back) == list(p)
        assert all(back[k].tobytes() == p[k].tobytes() for k in p)
        assert model.dump_checkpoint(back, abl) == path.read_bytes()

    def test_bad_magic(self):
        with pytest.raises(model.CheckpointError, match="magic"):
            model.load_checkpoint_bytes(b"NOTACKPT" + bytes(20))

    def test_truncated(self):
        data = model.dump_checkpoint(params(), Ablation.HeR)
        with pytest.raises(model.CheckpointError, match="truncated"):
            model.load_checkpoint_bytes(data[:-10])

    def test_dimension_diff(self):
        p = params()
        assert model.dimension_diff(p, Ablation.HeR) == []
        diff = model.dimension_diff(p, Ablation.HoR)
        assert any("missing gnn0.ALL.W1" in d for d in diff)
        assert any("unexpected gnn0.HHI.W1" in d for d in diff)
