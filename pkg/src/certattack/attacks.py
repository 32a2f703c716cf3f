"""Certificate-guided attack framework.

Node weights shrink exponentially with the certified perturbation size
(w = 1/(1 + exp(a * K))), so the weighted attack loss concentrates the
edge-flip budget on provably fragile nodes.  With uniform weights both
attacks reduce exactly to their unweighted base versions.
"""
import csv
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DimensionError, ParameterError
from .gcn import (CROSS_ENTROPY, GCNParams, LossKind, TrainConfig, gradients,
                  init_params, param_gradients, predict_all, train,
                  weighted_loss)
from .graph import DataSplit, Graph, classification_accuracy
from .perturb import (Perturbation, apply_perturbation, num_pairs,
                      relax_perturbation, triu_pairs)
from .smoothing import (Certificate, NoiseSpec, SmoothingConfig,
                        _certificates_from_counts, mc_counts_evasion,
                        mc_counts_poisoning, mix_seed)

WEIGHT_SCHEMES = ("uniform", "random", "degree", "centrality", "certified")


@dataclass(frozen=True)
class WeightScheme:
    """How target nodes are weighted inside the attack loss."""
    tag: str = "certified"
    a: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.tag not in WEIGHT_SCHEMES:
            raise ParameterError(f"unknown weight scheme {self.tag!r}")
        if self.a <= 0:
            raise ParameterError("sharpness a must be positive")


@dataclass(frozen=True)
class AttackConfig:
    """All attack hyperparameters.

    step_size is the base PGD rate; the effective ascent step at iteration
    t is step_size * max(budget, 1) / sqrt(t + 1).  inner_step_size is the
    constant model-descent rate of the poisoning inner problem.
    """
    budget: int
    iterations: int = 100
    refresh_interval: int = 10
    step_size: float = 0.1
    inner_step_size: float = 0.01
    loss: LossKind = CROSS_ENTROPY
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    noise: NoiseSpec = field(default_factory=lambda: NoiseSpec(0.999))
    scheme: WeightScheme = field(default_factory=WeightScheme)
    discretize_trials: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.budget < 0:
            raise ParameterError("budget must be nonnegative")
        if self.iterations < 1:
            raise ParameterError("iterations must be at least 1")
        if self.refresh_interval < 1:
            raise ParameterError("refresh_interval must be at least 1")
        if self.step_size <= 0 or self.inner_step_size <= 0:
            raise ParameterError("step sizes must be positive")
        if self.discretize_trials < 1:
            raise ParameterError("discretize_trials must be at least 1")


@dataclass
class AttackReport:
    perturbation: Perturbation
    pre_attack_accuracy: float
    post_attack_accuracy: float
    per_iteration_loss: np.ndarray
    per_iteration_mass: np.ndarray
    weights_history: list
    attack_seconds: float = 0.0
    cert_seconds: float = 0.0
    delta_trajectory: np.ndarray | None = None

    @property
    def budget_used(self) -> int:
        return self.perturbation.num_flips


def eigenvector_centrality(adjacency: np.ndarray, iterations: int = 100,
                           tol: float = 1e-8) -> np.ndarray:
    """Power-iteration eigenvector centrality, normalized to max 1."""
    A = np.asarray(adjacency, dtype=np.float64)
    n = A.shape[0]
    x = np.full(n, 1.0 / np.sqrt(n))
    for _ in range(iterations):
        y = A @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return np.ones(n)
        y /= norm
        if np.abs(y - x).max() < tol:
            x = y
            break
        x = y
    x = np.abs(x)
    top = x.max()
    return x / top if top > 0 else np.ones(n)


def node_weights(scheme: WeightScheme, certificates: list[Certificate] | None,
                 graph: Graph, target_nodes: np.ndarray) -> np.ndarray:
    """Weights for the target nodes under the chosen scheme."""
    targets = np.asarray(target_nodes, dtype=np.int64)
    if scheme.tag == "uniform":
        return np.ones(targets.size)
    if scheme.tag == "random":
        return np.random.default_rng(scheme.seed).random(targets.size)
    if scheme.tag == "degree":
        deg = np.asarray(graph.adjacency, dtype=np.float64).sum(axis=1)
        return expit(-scheme.a * deg[targets])
    if scheme.tag == "centrality":
        cen = eigenvector_centrality(graph.adjacency)
        return expit(-scheme.a * cen[targets])
    if certificates is None or len(certificates) != targets.size:
        raise ParameterError(
            "certified scheme needs one certificate per target node")
    sizes = np.empty(targets.size)
    for i, (cert, node) in enumerate(zip(certificates, targets)):
        if cert.node != node:
            raise ParameterError(
                f"certificate for node {cert.node} does not match target {node}")
        sizes[i] = cert.certified_size
    return expit(-scheme.a * sizes)


def cr_loss(params: GCNParams, adjacency_real: np.ndarray, graph: Graph,
            target_nodes: np.ndarray, weights: np.ndarray,
            kind: LossKind = CROSS_ENTROPY,
            labels: np.ndarray | None = None) -> float:
    """Weighted sum of target-node losses; equals the unweighted sum when
    every weight is one."""
    targets = np.asarray(target_nodes, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != targets.shape:
        raise DimensionError("need exactly one weight per target node")
    if labels is None:
        labels = graph.labels
    full = np.zeros(graph.n)
    full[targets] = weights
    return weighted_loss(params, adjacency_real, graph.features, labels,
                         full, targets, kind)


def project_budget(relaxed: np.ndarray, budget: int) -> np.ndarray:
    """Euclidean projection onto {p in [0,1]^m : sum(p) <= budget}.

    If the box-clipped point already fits the budget it is returned as is;
    otherwise the shift mu with sum(clip(x - mu)) = budget is found by
    bisection on [0, max(x)].
    """
    x = np.asarray(relaxed, dtype=np.float64)
    clipped = np.clip(x, 0.0, 1.0)
    if clipped.sum() <= budget:
        return clipped
    lo, hi = 0.0, float(x.max())
    for _ in range(100):
        mu = 0.5 * (lo + hi)
        if np.clip(x - mu, 0.0, 1.0).sum() > budget:
            lo = mu
        else:
            hi = mu
        if hi - lo < 1e-10:
            break
    return np.clip(x - 0.5 * (lo + hi), 0.0, 1.0)


def top_delta_binary(relaxed: np.ndarray, budget: int) -> np.ndarray:
    """Deterministic rounding: the (up to) budget largest positive entries."""
    relaxed = np.asarray(relaxed, dtype=np.float64)
    out = np.zeros(relaxed.size, dtype=np.int8)
    if budget <= 0:
        return out
    order = np.argsort(-relaxed, kind="stable")
    take = order[:budget]
    take = take[relaxed[take] > 0.0]
    out[take] = 1
    return out


def discretize(relaxed: np.ndarray, budget: int, trials: int,
               rng: np.random.Generator, objective) -> np.ndarray:
    """Best binary candidate under the attacker objective.

    Candidates: the deterministic top-budget rounding plus `trials`
    Bernoulli(relaxed) draws, each truncated to its highest-value active
    entries when over budget.  Never exceeds the budget and never scores
    below the deterministic candidate.
    """
    relaxed = np.asarray(relaxed, dtype=np.float64)
    best = top_delta_binary(relaxed, budget)
    best_value = objective(best)
    for _ in range(trials):
        draw = (rng.random(relaxed.size) < relaxed).astype(np.int8)
        if int(draw.sum()) > budget:
            masked = np.where(draw > 0, relaxed, -np.inf)
            draw = top_delta_binary(masked, budget)
        value = objective(draw)
        if value > best_value:
            best, best_value = draw, value
    return best


def _scatter(weights, targets, n):
    full = np.zeros(n)
    full[targets] = weights
    return full


def pgd_evasion(params: GCNParams, graph: Graph, split: DataSplit,
                config: AttackConfig,
                record_trajectory: bool = False) -> AttackReport:
    """Projected-gradient evasion attack with certificate-refresh weights.

    Certificates (certified scheme only) are recomputed every
    refresh_interval iterations against the binarized snapshot of the
    current perturbation, with the fixed trained model; other schemes
    compute their weights once.  The uniform scheme is exactly the plain
    PGD base attack.
    """
    start = time.perf_counter()
    targets = split.test
    if targets.size == 0:
        raise ParameterError("evasion attack needs a non-empty test mask")
    A = graph.adjacency
    m = graph.num_pairs
    delta = np.zeros(m)
    losses = np.zeros(config.iterations)
    masses = np.zeros(config.iterations)
    weights_history = []
    trajectory = [] if record_trajectory else None
    cert_seconds = 0.0
    w_targets = None
    for t in range(config.iterations):
        if config.scheme.tag == "certified":
            if t % config.refresh_interval == 0:
                tick = time.perf_counter()
                snapshot = apply_perturbation(
                    A, top_delta_binary(delta, config.budget))
                counts = mc_counts_evasion(params, snapshot, graph.features,
                                           targets, config.noise,
                                           config.smoothing)
                certs = _certificates_from_counts(counts, targets,
                                                  graph.labels, config.noise,
                                                  config.smoothing,
                                                  r_max=2000)
                cert_seconds += time.perf_counter() - tick
                w_targets = node_weights(config.scheme, certs, graph, targets)
                weights_history.append((t, w_targets))
        elif w_targets is None:
            w_targets = node_weights(config.scheme, None, graph, targets)
            weights_history.append((0, w_targets))
        w_full = _scatter(w_targets, targets, graph.n)
        loss, _, _, g_delta = gradients(params, A, delta, graph.features,
                                        graph.labels, w_full, targets,
                                        config.loss)
        losses[t] = loss
        step = config.step_size * max(config.budget, 1) / np.sqrt(t + 1.0)
        delta = project_budget(delta + step * g_delta, config.budget)
        masses[t] = delta.sum()
        if record_trajectory:
            trajectory.append(delta.copy())

    def attack_objective(binary):
        return cr_loss(params, apply_perturbation(A, binary), graph, targets,
                       w_targets, config.loss)

    rng = np.random.default_rng(mix_seed(config.seed, 0xD15C))
    binary = discretize(delta, config.budget, config.discretize_trials, rng,
                        attack_objective)
    pre, post = evaluate_attack(graph, split, binary, "evasion",
                                params=params)
    return AttackReport(
        perturbation=Perturbation(delta, config.budget, binary),
        pre_attack_accuracy=pre, post_attack_accuracy=post,
        per_iteration_loss=losses, per_iteration_mass=masses,
        weights_history=weights_history,
        attack_seconds=time.perf_counter() - start,
        cert_seconds=cert_seconds,
        delta_trajectory=np.asarray(trajectory) if record_trajectory else None)


def minmax_poisoning(graph: Graph, split: DataSplit,
                     train_config: TrainConfig, config: AttackConfig,
                     record_trajectory: bool = False) -> AttackReport:
    """Alternating min-max poisoning attack over the training nodes.

    Each iteration takes one model-descent step on the weighted training
    loss and one projected ascent step on the relaxed perturbation; the
    certified scheme refreshes weights every refresh_interval iterations
    by training fresh classifiers on noisy copies of the current
    binarized snapshot.  Labels outside the train mask are never read by
    the optimization (they are masked out), so the attack is blind to
    test labels; the reported accuracies come from a separate clean
    retraining evaluation.
    """
    start = time.perf_counter()
    targets = split.train
    A = graph.adjacency
    labels_masked = np.where(np.isin(np.arange(graph.n), targets),
                             graph.labels, -1)
    m = graph.num_pairs
    delta = np.zeros(m)
    theta = init_params(graph.features.shape[1], train_config.hidden_dim,
                        graph.num_classes, mix_seed(config.seed, 0x7E7A))
    losses = np.zeros(config.iterations)
    masses = np.zeros(config.iterations)
    weights_history = []
    trajectory = [] if record_trajectory else None
    cert_seconds = 0.0
    w_targets = None
    for t in range(config.iterations):
        if config.scheme.tag == "certified":
            if t % config.refresh_interval == 0:
                tick = time.perf_counter()
                snapshot = apply_perturbation(
                    A, top_delta_binary(delta, config.budget))
                counts = mc_counts_poisoning(snapshot, graph.features,
                                             labels_masked, targets,
                                             train_config, targets,
                                             config.noise, config.smoothing,
                                             graph.num_classes)
                certs = _certificates_from_counts(counts, targets,
                                                  labels_masked, config.noise,
                                                  config.smoothing,
                                                  r_max=2000)
                cert_seconds += time.perf_counter() - tick
                w_targets = node_weights(config.scheme, certs, graph, targets)
                weights_history.append((t, w_targets))
        elif w_targets is None:
            w_targets = node_weights(config.scheme, None, graph, targets)
            weights_history.append((0, w_targets))
        w_full = _scatter(w_targets, targets, graph.n)
        relaxed_adj = relax_perturbation(A, delta)
        _, gW1, gW2 = param_gradients(theta, relaxed_adj, graph.features,
                                      labels_masked, w_full, targets,
                                      config.loss)
        theta = GCNParams(theta.W1 - config.inner_step_size * gW1,
                          theta.W2 - config.inner_step_size * gW2)
        loss, _, _, g_delta = gradients(theta, A, delta, graph.features,
                                        labels_masked, w_full, targets,
                                        config.loss)
        losses[t] = loss
        step = config.step_size * max(config.budget, 1) / np.sqrt(t + 1.0)
        delta = project_budget(delta + step * g_delta, config.budget)
        masses[t] = delta.sum()
        if record_trajectory:
            trajectory.append(delta.copy())

    final_theta = theta

    def attack_objective(binary):
        return cr_loss(final_theta, apply_perturbation(A, binary), graph,
                       targets, w_targets, config.loss, labels=labels_masked)

    rng = np.random.default_rng(mix_seed(config.seed, 0xD15C))
    binary = discretize(delta, config.budget, config.discretize_trials, rng,
                        attack_objective)
    pre, post = evaluate_attack(graph, split, binary, "poisoning",
                                train_config=train_config)
    return AttackReport(
        perturbation=Perturbation(delta, config.budget, binary),
        pre_attack_accuracy=pre, post_attack_accuracy=post,
        per_iteration_loss=losses, per_iteration_mass=masses,
        weights_history=weights_history,
        attack_seconds=time.perf_counter() - start,
        cert_seconds=cert_seconds,
        delta_trajectory=np.asarray(trajectory) if record_trajectory else None)


def evaluate_attack(graph: Graph, split: DataSplit, delta_binary: np.ndarray,
                    mode: str, *, params: GCNParams | None = None,
                    train_config: TrainConfig | None = None):
    """(pre, post) test accuracy around a binary perturbation.

    Evasion scores a fixed model on the clean and XOR-perturbed graphs;
    poisoning retrains from scratch (clean unweighted loss, same seed
    policy) on each graph before scoring.
    """
    perturbed = apply_perturbation(graph.adjacency, delta_binary)
    if mode == "evasion":
        if params is None:
            raise ParameterError("evasion evaluation needs trained params")
        preds_pre = predict_all(params, graph.adjacency, graph.features)
        preds_post = predict_all(params, perturbed, graph.features)
    elif mode == "poisoning":
        if train_config is None:
            raise ParameterError("poisoning evaluation needs a train config")
        model_pre = train(graph, split, graph.adjacency, train_config)
        model_post = train(graph, split, perturbed, train_config)
        preds_pre = predict_all(model_pre, graph.adjacency, graph.features)
        preds_post = predict_all(model_post, perturbed, graph.features)
    else:
        raise ParameterError(f"unknown attack mode {mode!r}")
    pre = classification_accuracy(preds_pre, graph.labels, split.test)
    post = classification_accuracy(preds_post, graph.labels, split.test)
    return pre, post


def write_report_csv(report: AttackReport, scheme_tag: str, path) -> None:
    """Per-iteration trace followed by a one-row summary section."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "cr_loss", "feasible_mass"])
        for t, (loss, mass) in enumerate(zip(report.per_iteration_loss,
                                             report.per_iteration_mass)):
            writer.writerow([t, repr(float(loss)), repr(float(mass))])
        writer.writerow([])
        writer.writerow(["scheme", "budget", "pre_accuracy", "post_accuracy",
                         "runtime_seconds"])
        writer.writerow([scheme_tag, report.perturbation.budget,
                         repr(report.pre_attack_accuracy),
                         repr(report.post_attack_accuracy),
                         repr(report.attack_seconds)])


def write_delta_edges(delta_binary: np.ndarray, adjacency: np.ndarray,
                      path) -> None:
    """Flip list: one 's<TAB>t<TAB>direction' line per perturbed pair."""
    n = adjacency.shape[0]
    rows, cols = triu_pairs(n)
    delta_binary = np.asarray(delta_binary)
    if delta_binary.shape != (num_pairs(n),):
        raise DimensionError("flip vector does not match the adjacency size")
    with open(path, "w", encoding="utf-8") as fh:
        for p in np.flatnonzero(delta_binary):
            s, t = int(rows[p]), int(cols[p])
            direction = "remove" if adjacency[s, t] else "add"
            fh.write(f"{s}\t{t}\t{direction}\n")


def read_delta_edges(path, n: int) -> np.ndarray:
    """Inverse of write_delta_edges for a graph with n nodes."""
    rows, cols = triu_pairs(n)
    index = {(int(s), int(t)): p for p, (s, t) in enumerate(zip(rows, cols))}
    out = np.zeros(num_pairs(n), dtype=np.int8)
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            s, t, _ = line.split("\t")
            s, t = int(s), int(t)
            if s > t:
                s, t = t, s
            out[index[(s, t)]] = 1
    return out
