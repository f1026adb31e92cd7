import numpy as np
import pytest

from lexgraph import autodiff as ad
from lexgraph import gnn, objective
from lexgraph.errors import ValidationError
from lexgraph.gcg import FeatureSource, GcgAdjacency, NodeFeatures, compose
from lexgraph.gradcheck import build_random_graph


def _adjacency(a_case, m=0):
    n = a_case.shape[0]
    a_charge = np.zeros((m, m), dtype=np.uint8)
    a_bridge = np.zeros((m, n), dtype=np.uint8)
    return GcgAdjacency(
        n=n, m=m, a_case=a_case, a_charge=a_charge, a_bridge=a_bridge,
        a=compose(a_case, a_charge, a_bridge),
    )


def _features(x, m=0):
    x = np.asarray(x)
    n = x.shape[0] - m
    return NodeFeatures(
        dim=x.shape[1],
        case_features=x[:n],
        charge_features=x[n:],
        source=FeatureSource.HASHED_TF,
    )


def _params_from(config, arrays):
    tensors = {
        name: ad.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)
        for name, arr in arrays.items()
    }
    return gnn.ModelParams(tensors=tensors)


class TestGatLayer:
    def test_single_node_identity(self):
        d = 3
        h = ad.Tensor(np.array([[1.0, -2.0, 0.5]]))
        src = np.array([0])
        dst = np.array([0])
        out = gnn.gat_layer(
            h, src, dst, 1,
            [(ad.Tensor(np.eye(d)), ad.Tensor(np.zeros((2 * d, 1))))],
            ad.Tensor(np.zeros(d)),
            gnn.Activation.IDENTITY,
        )
        assert np.allclose(out.data, h.data)

    def test_two_nodes_uniform_attention(self):
        d = 2
        x = np.array([[1.0, 2.0], [1.0, 2.0]])
        h = ad.Tensor(x)
        # both nodes connected, plus self-loops
        src = np.array([0, 1, 0, 1])
        dst = np.array([0, 0, 1, 1])
        attention = []
        out = gnn.gat_layer(
            h, src, dst, 2,
            [(ad.Tensor(np.eye(d)), ad.Tensor(np.zeros((2 * d, 1))))],
            ad.Tensor(np.zeros(d)),
            gnn.Activation.IDENTITY,
            attention_out=attention,
        )
        assert np.allclose(attention[0], [0.5, 0.5, 0.5, 0.5])
        assert np.allclose(out.data, x)

    def test_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        for trial in range(10):
            adjacency, features = build_random_graph(trial, n_cases=8, n_charges=2, dim=5)
            config = gnn.GnnConfig(layers=1, dim=5, dropout=0.0)
            params = gnn.init_params(config, trial, dtype=np.float64)
            src, dst = gnn.edge_arrays(adjacency.a, self_loops=True)
            h = ad.Tensor(gnn.stack_features(features, dtype=np.float64))
            attention = []
            heads, bias = gnn._layer_params(params, config, 0)
            gnn.gat_layer(
                h, src, dst, adjacency.n + adjacency.m, heads, bias,
                config.activation, attention_out=attention,
            )
            sums = np.zeros(adjacency.n + adjacency.m)
            np.add.at(sums, dst, attention[0])
            assert np.allclose(sums, 1.0, atol=1e-6)


class TestOtherLayers:
    def test_gcn_edgeless_identity(self):
        d = 3
        h = ad.Tensor(np.array([[1.0, -1.0, 2.0], [0.5, 0.0, -2.0]]))
        # self-loops only
        src = np.array([0, 1])
        dst = np.array([0, 1])
        out = gnn.gcn_layer(
            h, src, dst, 2, ad.Tensor(np.eye(d)), ad.Tensor(np.zeros(d)),
            gnn.Activation.IDENTITY,
        )
        assert np.allclose(out.data, h.data)

    def test_sage_isolated_node(self):
        d = 2
        rng = np.random.default_rng(1)
        w = rng.normal(size=(2 * d, d))
        h_data = rng.normal(size=(3, d))
        h = ad.Tensor(h_data)
        # node 2 isolated; nodes 0,1 connected
        src = np.array([1, 0])
        dst = np.array([0, 1])
        bias = rng.normal(size=d)
        out = gnn.sage_layer(
            h, src, dst, 3, ad.Tensor(w), ad.Tensor(bias), gnn.Activation.IDENTITY
        )
        expected_iso = np.concatenate([h_data[2], np.zeros(d)]) @ w + bias
        assert np.allclose(out.data[2], expected_iso)


class TestForward:
    def _zero_params(self, config):
        arrays = {}
        d = config.dim
        for layer in range(config.layers):
            if config.arch is gnn.Arch.GAT:
                for head in range(config.heads):
                    arrays[f"layers.{layer}.heads.{head}.W"] = np.zeros((d, d))
                    arrays[f"layers.{layer}.heads.{head}.a"] = np.zeros((2 * d, 1))
            elif config.arch is gnn.Arch.GCN:
                arrays[f"layers.{layer}.W"] = np.zeros((d, d))
            else:
                arrays[f"layers.{layer}.W"] = np.zeros((2 * d, d))
            arrays[f"layers.{layer}.bias"] = np.zeros(d)
        return _params_from(config, arrays)

    @pytest.mark.parametrize("arch", list(gnn.Arch))
    def test_zero_params_residual_identity(self, arch):
        adjacency, features = build_random_graph(3, n_cases=7, n_charges=2, dim=4)
        config = gnn.GnnConfig(arch=arch, layers=2, dim=4, dropout=0.0)
        params = self._zero_params(config)
        h = gnn.forward(adjacency, features, params, config)
        x = gnn.stack_features(features, dtype=np.float64)
        assert np.array_equal(h.data, x)

    def test_eval_mode_deterministic(self):
        adjacency, features = build_random_graph(5, dim=6)
        config = gnn.GnnConfig(dim=6, dropout=0.3)
        params = gnn.init_params(config, 5)
        a = gnn.forward(adjacency, features, params, config, train=False, seed=1)
        b = gnn.forward(adjacency, features, params, config, train=False, seed=2)
        assert np.array_equal(a.data, b.data)

    def test_train_dropout_seed_dependence(self):
        adjacency, features = build_random_graph(5, dim=6)
        config = gnn.GnnConfig(dim=6, dropout=0.3)
        params = gnn.init_params(config, 5)
        a = gnn.forward(adjacency, features, params, config, train=True, seed=1)
        b = gnn.forward(adjacency, features, params, config, train=True, seed=1)
        c = gnn.forward(adjacency, features, params, config, train=True, seed=2)
        assert np.array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)

    def test_no_residual_flag(self):
        adjacency, features = build_random_graph(4, dim=5)
        config = gnn.GnnConfig(dim=5, dropout=0.0)
        params = gnn.init_params(config, 4, dtype=np.float64)
        with_res = gnn.forward(adjacency, features, params, config)
        no_res = gnn.forward(
            adjacency, features, params,
            gnn.GnnConfig(dim=5, dropout=0.0, residual=False),
        )
        x = gnn.stack_features(features, dtype=np.float64)
        assert np.allclose(with_res.data - no_res.data, x, atol=1e-12)

    def test_dim_mismatch_rejected(self):
        adjacency, features = build_random_graph(4, dim=5)
        config = gnn.GnnConfig(dim=6)
        params = gnn.init_params(config, 0)
        with pytest.raises(ValidationError):
            gnn.forward(adjacency, features, params, config)

    @pytest.mark.parametrize("arch", list(gnn.Arch))
    def test_permutation_equivariance(self, arch):
        rng = np.random.default_rng(11)
        for trial in range(5):
            adjacency, features = build_random_graph(
                100 + trial, n_cases=8, n_charges=2, dim=4
            )
            config = gnn.GnnConfig(arch=arch, layers=2, dim=4, dropout=0.0)
            params = gnn.init_params(config, trial, dtype=np.float64)
            base = gnn.forward(adjacency, features, params, config).data

            perm = rng.permutation(10)
            a_perm = adjacency.a[np.ix_(perm, perm)]
            x = gnn.stack_features(features, dtype=np.float64)[perm]
            permuted = GcgAdjacency(
                n=10, m=0, a_case=a_perm,
                a_charge=np.zeros((0, 0), np.uint8),
                a_bridge=np.zeros((0, 10), np.uint8), a=a_perm,
            )
            feats_perm = NodeFeatures(
                dim=4, case_features=x, charge_features=np.zeros((0, 4)),
                source=FeatureSource.HASHED_TF,
            )
            out = gnn.forward(permuted, feats_perm, params, config).data
            assert np.allclose(out, base[perm], atol=1e-10)


class TestLayerGradients:
    @pytest.mark.parametrize("arch", list(gnn.Arch))
    def test_forward_loss_gradcheck(self, arch):
        """Full forward + contrastive loss against central differences."""
        adjacency, features = build_random_graph(9, dim=5)
        features = NodeFeatures(
            dim=5,
            case_features=features.case_features.astype(np.longdouble),
            charge_features=features.charge_features.astype(np.longdouble),
            source=features.source,
        )
        config = gnn.GnnConfig(arch=arch, layers=2, dim=5, dropout=0.0)
        params = gnn.init_params(config, 9, dtype=np.longdouble)
        entry = objective.BatchEntry(query=0, positive=2, easy=(3,), hard=(4,))

        def f(_):
            h = gnn.forward(adjacency, features, params, config)
            h_cases = ad.gather_rows(h, np.arange(adjacency.n))
            nce = objective.info_nce(h_cases, entry, [], tau=0.1)
            reg = objective.deg_reg(h_cases, list(range(2, adjacency.n)))
            return objective.total_loss([nce], reg, 1e-3)

        err = ad.finite_diff_check(f, params.all(), eps=1e-4)
        assert err < 1e-4, f"{arch}: {err:.3e}"
