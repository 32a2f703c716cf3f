import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from certattack import (AttackConfig, Certificate, LossKind, NoiseSpec,
                        ParameterError, SmoothingConfig, TrainConfig,
                        WeightScheme, apply_perturbation, cr_loss, discretize,
                        evaluate_attack, forward, gradients, init_params,
                        minmax_poisoning, node_loss, node_weights,
                        pgd_evasion, project_budget, split_nodes,
                        synth_sbm, top_delta_binary, train)
from certattack.graph import DataSplit, Graph
from oracles import project_capped_box_exact


def make_certs(nodes, sizes):
    return [Certificate(int(v), 0, np.array([1, 0]), 0, 0.9, int(k))
            for v, k in zip(nodes, sizes)]


class TestNodeWeights:
    def test_certified_values(self, sbm_graph):
        targets = np.array([0, 1, 2])
        certs = make_certs(targets, [0, 2, 1])
        w = node_weights(WeightScheme("certified", a=1.0), certs, sbm_graph,
                         targets)
        assert w[0] == pytest.approx(0.5)
        assert w[1] == pytest.approx(1.0 / (1.0 + np.exp(2.0)), rel=1e-9)
        assert w[1] == pytest.approx(0.11920, abs=1e-5)

    def test_uniform_is_ones(self, sbm_graph):
        w = node_weights(WeightScheme("uniform"), None, sbm_graph,
                         np.arange(5))
        assert np.all(w == 1.0)

    def test_certified_monotone_in_size(self, sbm_graph):
        targets = np.arange(6)
        certs = make_certs(targets, [0, 1, 2, 3, 5, 9])
        for a in (0.5, 1.0, 3.0):
            w = node_weights(WeightScheme("certified", a=a), certs, sbm_graph,
                             targets)
            assert np.all(np.diff(w) < 0)

    def test_missing_certificates_rejected(self, sbm_graph):
        with pytest.raises(ParameterError):
            node_weights(WeightScheme("certified"), None, sbm_graph,
                         np.arange(3))

    def test_random_seeded(self, sbm_graph):
        a = node_weights(WeightScheme("random", seed=5), None, sbm_graph,
                         np.arange(10))
        b = node_weights(WeightScheme("random", seed=5), None, sbm_graph,
                         np.arange(10))
        assert np.array_equal(a, b)
        assert np.all((a >= 0) & (a < 1))

    def test_degree_and_centrality_shrink_with_connectivity(self, sbm_graph):
        deg = sbm_graph.adjacency.sum(axis=0)
        lo, hi = int(np.argmin(deg)), int(np.argmax(deg))
        targets = np.array([lo, hi])
        w_deg = node_weights(WeightScheme("degree"), None, sbm_graph, targets)
        assert w_deg[0] > w_deg[1]


class TestCrLoss:
    def test_uniform_weights_reduce_to_plain_sum(self, sbm_setup):
        graph, split, params = sbm_setup
        kind = LossKind("cross_entropy")
        weighted = cr_loss(params, graph.adjacency, graph, split.test,
                           np.ones(split.test.size), kind)
        logits = forward(params, graph.adjacency, graph.features)
        plain = sum(node_loss(logits[v], graph.labels[v], kind)
                    for v in split.test)
        assert weighted == pytest.approx(plain, rel=1e-12)

    def test_zero_weight_drops_node(self, sbm_setup):
        graph, split, params = sbm_setup
        kind = LossKind("cross_entropy")
        targets = split.test[:4]
        w = np.array([1.0, 0.0, 1.0, 1.0])
        dropped = cr_loss(params, graph.adjacency, graph, targets, w, kind)
        rest = cr_loss(params, graph.adjacency, graph,
                       targets[[0, 2, 3]], np.ones(3), kind)
        assert dropped == pytest.approx(rest, rel=1e-12)

    def test_weighted_arithmetic(self):
        # weights (0.5, 0.1192) against losses (1.0, 2.0) -> 0.7384
        assert 0.5 * 1.0 + 0.1192 * 2.0 == pytest.approx(0.7384)


class TestProjection:
    def test_feasible_point_unchanged(self):
        x = np.array([0.2, 0.3, 0.1])
        assert np.array_equal(project_budget(x, 2), x)

    def test_analytic_shift(self):
        out = project_budget(np.array([0.8, 0.8, 0.8]), 1.2)
        assert np.allclose(out, [0.4, 0.4, 0.4], atol=1e-9)

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        x = rng.normal(0.5, 1.0, 40)
        once = project_budget(x, 5)
        twice = project_budget(once, 5)
        assert np.allclose(once, twice, atol=1e-9)

    def test_matches_breakpoint_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            m = rng.integers(1, 7)
            x = rng.normal(0.4, 0.8, m)
            budget = float(rng.uniform(0.2, m * 0.7))
            ours = project_budget(x, budget)
            exact = project_capped_box_exact(x, budget)
            assert np.abs(ours - exact).max() <= 1e-5

    @given(st.integers(min_value=0, max_value=2 ** 31))
    @settings(max_examples=30, deadline=None)
    def test_feasibility_at_scale(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(0.3, 1.2, 500)
        budget = int(rng.integers(1, 60))
        out = project_budget(x, budget)
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert out.sum() <= budget + 1e-6


class TestDiscretize:
    def test_binary_input_fixed_point(self):
        relaxed = np.array([1.0, 0.0, 1.0, 0.0])
        rng = np.random.default_rng(0)
        out = discretize(relaxed, 3, 5, rng, lambda b: 0.0)
        assert np.array_equal(out, [1, 0, 1, 0])

    def test_top_budget_selection(self):
        out = top_delta_binary(np.array([0.9, 0.8, 0.1]), 2)
        assert np.array_equal(out, [1, 1, 0])

    def test_never_worse_than_deterministic(self):
        rng = np.random.default_rng(3)
        relaxed = rng.random(30) * 0.6
        weights = rng.normal(size=30)

        def objective(b):
            return float(weights @ b)

        det = top_delta_binary(relaxed, 6)
        best = discretize(relaxed, 6, 25, np.random.default_rng(1), objective)
        assert objective(best) >= objective(det)
        assert best.sum() <= 6

    def test_budget_respected(self):
        rng = np.random.default_rng(5)
        relaxed = np.clip(rng.random(50), 0, 1)
        out = discretize(relaxed, 4, 30, rng, lambda b: float(b.sum()))
        assert out.sum() <= 4


def line_graph(n, feature_dim=3, seed=0):
    rng = np.random.default_rng(seed)
    adj = np.zeros((n, n), dtype=np.int8)
    for i in range(n - 1):
        adj[i, i + 1] = adj[i + 1, i] = 1
    labels = (np.arange(n) >= n // 2).astype(np.int64)
    features = np.zeros((n, feature_dim))
    features[np.arange(n), labels % feature_dim] = 1.0
    features += rng.normal(0, 0.3, (n, feature_dim))
    return Graph(adj, features, labels, 2)


class TestEvaluateAttack:
    def test_zero_delta_evasion_identity(self, sbm_setup):
        graph, split, params = sbm_setup
        delta = np.zeros(graph.num_pairs, dtype=np.int8)
        pre, post = evaluate_attack(graph, split, delta, "evasion",
                                    params=params)
        assert pre == post

    def test_zero_delta_poisoning_identity(self, tiny_graph):
        split = DataSplit(np.array([0, 2]), np.array([]), np.array([1, 3]),
                          n=4)
        tc = TrainConfig(epochs=80, seed=0)
        delta = np.zeros(tiny_graph.num_pairs, dtype=np.int8)
        pre, post = evaluate_attack(tiny_graph, split, delta, "poisoning",
                                    train_config=tc)
        assert pre == post

    def test_far_flips_leave_two_hop_predictions_unchanged(self):
        # 2-layer receptive field: flipping the far end of a path graph
        # cannot change predictions of nodes three or more hops away
        graph = line_graph(10)
        params = init_params(3, 4, 2, seed=1)
        split = DataSplit(np.arange(1, 10), np.array([]), np.array([0]),
                          n=10)
        delta = np.zeros(graph.num_pairs, dtype=np.int8)
        rows, cols = np.triu_indices(10, k=1)
        far_pair = np.flatnonzero((rows == 8) & (cols == 9))[0]
        delta[far_pair] = 1
        pre, post = evaluate_attack(graph, split, delta, "evasion",
                                    params=params)
        assert pre == post
        clean_logits = forward(params, graph.adjacency, graph.features)
        pert_logits = forward(params, apply_perturbation(graph.adjacency,
                                                         delta),
                              graph.features)
        assert np.allclose(clean_logits[0], pert_logits[0], atol=1e-12)

    def test_accuracies_in_unit_interval(self, sbm_setup):
        graph, split, params = sbm_setup
        rng = np.random.default_rng(2)
        delta = (rng.random(graph.num_pairs) < 0.01).astype(np.int8)
        pre, post = evaluate_attack(graph, split, delta, "evasion",
                                    params=params)
        assert 0.0 <= pre <= 1.0 and 0.0 <= post <= 1.0


def small_attack_config(budget, scheme="uniform", iterations=12, seed=0,
                        **kwargs):
    return AttackConfig(
        budget=budget, iterations=iterations, refresh_interval=4,
        step_size=kwargs.pop("step_size", 0.2),
        inner_step_size=kwargs.pop("inner_step_size", 0.2),
        loss=kwargs.pop("loss", LossKind("cross_entropy")),
        smoothing=SmoothingConfig(num_samples=20, alpha=0.1, seed=seed),
        noise=NoiseSpec(kwargs.pop("beta", 0.9)),
        scheme=WeightScheme(scheme, 1.0, seed=seed),
        discretize_trials=8, seed=seed, **kwargs)


@pytest.fixture(scope="module")
def small_setup():
    graph = synth_sbm(40, 2, 0.25, 0.02, 4, seed=2)
    split = split_nodes(graph, (0.2, 0.1, 0.7), seed=0)
    tc = TrainConfig(epochs=120, learning_rate=0.1, seed=1)
    params = train(graph, split, graph.adjacency, tc)
    return graph, split, tc, params


class TestPgdEvasion:
    def test_zero_budget_is_identity(self, small_setup):
        graph, split, _, params = small_setup
        report = pgd_evasion(params, graph, split,
                             small_attack_config(budget=0))
        assert report.budget_used == 0
        assert report.post_attack_accuracy == report.pre_attack_accuracy

    def test_uniform_matches_hand_rolled_pgd(self, small_setup):
        # reduction: with unit weights the loop is plain projected ascent
        graph, split, _, params = small_setup
        budget = 6
        config = small_attack_config(budget=budget, iterations=15)
        report = pgd_evasion(params, graph, split, config,
                             record_trajectory=True)
        delta = np.zeros(graph.num_pairs)
        w = np.zeros(graph.n)
        w[split.test] = 1.0
        for t in range(15):
            _, _, _, g_delta = gradients(params, graph.adjacency, delta,
                                         graph.features, graph.labels, w,
                                         split.test, config.loss)
            step = config.step_size * budget / np.sqrt(t + 1.0)
            delta = project_budget(delta + step * g_delta, budget)
            assert np.array_equal(report.delta_trajectory[t], delta)

    def test_feasible_every_iteration(self, small_setup):
        graph, split, _, params = small_setup
        config = small_attack_config(budget=5, iterations=10)
        report = pgd_evasion(params, graph, split, config,
                             record_trajectory=True)
        for delta in report.delta_trajectory:
            assert delta.min() >= 0.0 and delta.max() <= 1.0
            assert delta.sum() <= 5 + 1e-6
        assert report.perturbation.binary.sum() <= 5

    def test_deterministic(self, small_setup):
        graph, split, _, params = small_setup
        config = small_attack_config(budget=5, scheme="certified")
        a = pgd_evasion(params, graph, split, config)
        b = pgd_evasion(params, graph, split, config)
        assert np.array_equal(a.perturbation.binary, b.perturbation.binary)
        assert np.array_equal(a.per_iteration_loss, b.per_iteration_loss)
        assert a.post_attack_accuracy == b.post_attack_accuracy

    def test_certified_scheme_refreshes_weights(self, small_setup):
        graph, split, _, params = small_setup
        config = small_attack_config(budget=5, scheme="certified",
                                     iterations=9)
        report = pgd_evasion(params, graph, split, config)
        assert [t for t, _ in report.weights_history] == [0, 4, 8]
        for _, w in report.weights_history:
            assert np.all(w > 0.0) and np.all(w <= 0.5)


class TestMinmaxPoisoning:
    def test_zero_budget_matches_clean_retrain(self, small_setup):
        graph, split, tc, _ = small_setup
        report = minmax_poisoning(graph, split, tc,
                                  small_attack_config(budget=0))
        assert report.post_attack_accuracy == report.pre_attack_accuracy

    def test_budget_respected_and_deterministic(self, small_setup):
        graph, split, tc, _ = small_setup
        config = small_attack_config(budget=6, scheme="certified",
                                     iterations=8)
        a = minmax_poisoning(graph, split, tc, config)
        b = minmax_poisoning(graph, split, tc, config)
        assert a.perturbation.binary.sum() <= 6
        assert np.array_equal(a.perturbation.binary, b.perturbation.binary)

    def test_blind_to_test_labels(self, small_setup):
        # scrambling every non-train label must not change the attack output
        graph, split, tc, _ = small_setup
        config = small_attack_config(budget=6, scheme="certified",
                                     iterations=8)
        report = minmax_poisoning(graph, split, tc, config)
        scrambled = graph.labels.copy()
        outside = np.setdiff1d(np.arange(graph.n), split.train)
        scrambled[outside] = (scrambled[outside] + 1) % graph.num_classes
        shuffled_graph = Graph(graph.adjacency, graph.features, scrambled,
                               graph.num_classes)
        report2 = minmax_poisoning(shuffled_graph, split, tc, config)
        assert np.array_equal(report.perturbation.binary,
                              report2.perturbation.binary)
        assert np.array_equal(report.per_iteration_loss,
                              report2.per_iteration_loss)

    def test_uniform_never_refreshes_certificates(self, small_setup):
        graph, split, tc, _ = small_setup
        config = small_attack_config(budget=6, scheme="uniform",
                                     iterations=8)
        report = minmax_poisoning(graph, split, tc, config)
        assert len(report.weights_history) == 1
        assert report.cert_seconds == 0.0


class TestEqualWeightReduction:
    def test_constant_certificates_scale_the_uniform_gradient(self,
                                                              small_setup):
        # all certificates equal -> weights are a constant w, so the ascent
        # direction (normalized) matches the uniform scheme's exactly
        graph, split, _, params = small_setup
        targets = split.test
        certs = make_certs(targets, [2] * targets.size)
        w_const = node_weights(WeightScheme("certified", a=1.0), certs,
                               graph, targets)
        assert np.allclose(w_const, w_const[0])
        delta = np.zeros(graph.num_pairs)
        w_full = np.zeros(graph.n)
        w_full[targets] = w_const
        u_full = np.zeros(graph.n)
        u_full[targets] = 1.0
        kind = LossKind("cross_entropy")
        _, _, _, g_cert = gradients(params, graph.adjacency, delta,
                                    graph.features, graph.labels, w_full,
                                    targets, kind)
        _, _, _, g_unif = gradients(params, graph.adjacency, delta,
                                    graph.features, graph.labels, u_full,
                                    targets, kind)
        direction_cert = g_cert / np.linalg.norm(g_cert)
        direction_unif = g_unif / np.linalg.norm(g_unif)
        assert np.abs(direction_cert - direction_unif).max() <= 1e-10


class TestReportExport:
    def test_report_csv_sections(self, small_setup, tmp_path):
        from certattack import write_report_csv
        graph, split, _, params = small_setup
        report = pgd_evasion(params, graph, split,
                             small_attack_config(budget=4, iterations=5))
        path = tmp_path / "report.csv"
        write_report_csv(report, "uniform", path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iteration,cr_loss,feasible_mass"
        assert len([l for l in lines if l and l[0].isdigit()]) >= 5
        assert "scheme,budget,pre_accuracy,post_accuracy,runtime_seconds" \
            in lines
