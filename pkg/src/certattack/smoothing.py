"""Randomized smoothing over binary edge noise and certified sizes.

Noise keeps each upper-triangle edge status with probability beta and
flips it with probability 1 - beta.  Certified perturbation sizes come
from the discrete Neyman-Pearson construction: for a radius r, outcomes
are partitioned by the number k of perturbed coordinates that agree with
the clean graph, giving region probabilities

    Pr_clean(k)  = C(r,k) beta^k (1-beta)^(r-k)
    Pr_attack(k) = C(r,k) beta^(r-k) (1-beta)^k

and likelihood ratio (beta/(1-beta))^(2k-r).  The worst-case retained
probability rho(r) consumes the lower-bound mass greedily from the
highest-ratio region down, fractionally at the boundary.
"""
import csv
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammaln
from scipy.stats import beta as beta_dist

from .errors import CapacityError, CertificationError, ParameterError
from .gcn import GCNParams, TrainConfig, predict_all, train_arrays
from .perturb import apply_perturbation, num_pairs

DEFAULT_RADIUS_CAP = 2000


@dataclass(frozen=True)
class NoiseSpec:
    """Keep-probability of the edge-status noise; beta in (0.5, 1]."""
    beta: float

    def __post_init__(self):
        if not 0.5 < self.beta <= 1.0:
            raise ParameterError(
                f"beta must lie in (0.5, 1], got {self.beta}")


@dataclass(frozen=True)
class SmoothingConfig:
    num_samples: int = 200
    alpha: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_samples < 1:
            raise ParameterError("num_samples must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError("alpha must lie in (0, 1)")


@dataclass
class Certificate:
    """Per-node smoothing outcome."""
    node: int
    true_label: int
    counts: np.ndarray
    smoothed_label: int
    p_lower: float
    certified_size: int
    saturated: bool = False


def _stream_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([seed % (2 ** 63), int(index)]))


def mix_seed(seed: int, salt: int) -> int:
    """Deterministic derived seed for replicate / sub-stream use."""
    ss = np.random.SeedSequence([seed % (2 ** 63), int(salt)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2 ** 63))


def sample_noise(spec: NoiseSpec, n: int, seed: int, index: int) -> np.ndarray:
    """One upper-triangle flip mask; entry 1 with probability 1 - beta.

    Deterministic given (seed, index); applied to graphs via the XOR of
    apply_perturbation, which is self-inverse.
    """
    rng = _stream_rng(seed, index)
    return (rng.random(num_pairs(n)) < 1.0 - spec.beta).astype(np.int8)


def mc_counts_evasion(params: GCNParams, adjacency: np.ndarray,
                      features: np.ndarray, target_nodes: np.ndarray,
                      spec: NoiseSpec, config: SmoothingConfig) -> np.ndarray:
    """Monte Carlo label counts under noise for a fixed trained model.

    Each of the N noisy graphs is classified once and serves every
    target node.
    """
    targets = np.asarray(target_nodes, dtype=np.int64)
    counts = np.zeros((targets.size, params.num_classes), dtype=np.int64)
    n = adjacency.shape[0]
    rows = np.arange(targets.size)
    for j in range(config.num_samples):
        mask = sample_noise(spec, n, config.seed, j)
        noisy = apply_perturbation(adjacency, mask)
        preds = predict_all(params, noisy, features)
        counts[rows, preds[targets]] += 1
    return counts


def mc_counts_poisoning(adjacency: np.ndarray, features: np.ndarray,
                        labels: np.ndarray, train_idx: np.ndarray,
                        train_config: TrainConfig, target_nodes: np.ndarray,
                        spec: NoiseSpec, config: SmoothingConfig,
                        num_classes: int,
                        share_train_seed: bool = False) -> np.ndarray:
    """Label counts from N classifiers trained on independently noised graphs.

    Replicate j trains on A xor eps_j with a seed derived from
    (train_config.seed, j) and predicts the targets on its own noisy
    graph; with share_train_seed every replicate reuses the base seed.
    """
    targets = np.asarray(target_nodes, dtype=np.int64)
    counts = np.zeros((targets.size, num_classes), dtype=np.int64)
    n = adjacency.shape[0]
    rows = np.arange(targets.size)
    for j in range(config.num_samples):
        mask = sample_noise(spec, n, config.seed, j)
        noisy = apply_perturbation(adjacency, mask)
        seed_j = (train_config.seed if share_train_seed
                  else mix_seed(train_config.seed, j))
        try:
            params_j = train_arrays(noisy, features, labels, train_idx,
                                    replace(train_config, seed=seed_j),
                                    num_classes)
        except Exception as exc:
            raise CertificationError(f"replicate {j} failed: {exc}") from exc
        preds = predict_all(params_j, noisy, features)
        counts[rows, preds[targets]] += 1
    return counts


def lower_bound_prob(count: int, total: int, alpha: float) -> float:
    """One-sided Clopper-Pearson lower bound: the alpha quantile of
    Beta(count, total - count + 1); zero by convention when count is 0."""
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if not 0 <= count <= total:
        raise ParameterError(f"count {count} outside [0, {total}]")
    if count == 0:
        return 0.0
    return float(beta_dist.ppf(alpha, count, total - count + 1))


def worst_case_retained(p_lower: float, beta: float, radius: int) -> float:
    """rho(r): minimal smoothed probability retained after r flips.

    Greedy allocation over the likelihood-ratio regions: the adversary
    spends the refusal mass 1 - p_lower on regions in descending
    attacked/clean ratio order (k = 0 agreements upward), fractionally at
    the boundary, and rho is one minus the attacked mass removed.  Working
    with the complement keeps the computation stable when p_lower sits
    within a few ulp of 1, and region probabilities live in log space so
    beta close to 1 does not underflow.
    """
    if radius == 0:
        return p_lower
    k = np.arange(0, radius + 1, dtype=np.float64)
    log_comb = (gammaln(radius + 1) - gammaln(k + 1)
                - gammaln(radius - k + 1))
    log_beta, log_1mb = np.log(beta), np.log1p(-beta)
    log_x = log_comb + k * log_beta + (radius - k) * log_1mb
    log_y = log_comb + (radius - k) * log_beta + k * log_1mb
    remaining = 1.0 - p_lower
    removed = 0.0
    for lx, ly in zip(log_x, log_y):
        x_mass = np.exp(lx)
        if x_mass < remaining:
            removed += np.exp(ly)
            remaining -= x_mass
        else:
            if remaining > 0.0:
                with np.errstate(over="ignore"):
                    removed += remaining * np.exp(ly - lx)
            break
    return float(1.0 - removed)


def _certified_size_scan(p_lower: float, spec: NoiseSpec,
                         r_max: int) -> tuple[int, bool]:
    if not 0.0 <= p_lower <= 1.0:
        raise ParameterError(f"p_lower must lie in [0, 1], got {p_lower}")
    if spec.beta >= 1.0:
        raise ParameterError(
            "certified size is undefined at beta = 1 (likelihood ratio "
            "degenerates)")
    if p_lower <= 0.5:
        return 0, False
    prev_rho = np.inf
    for r in range(1, r_max + 1):
        rho = worst_case_retained(p_lower, spec.beta, r)
        if rho > prev_rho + 1e-9:
            raise CertificationError(
                f"worst-case probability increased from {prev_rho} to {rho} "
                f"at radius {r}; monotonicity assumption violated")
        if rho <= 0.5:
            return r - 1, False
        prev_rho = rho
    return r_max, True


def certified_size(p_lower: float, spec: NoiseSpec,
                   r_max: int = DEFAULT_RADIUS_CAP) -> int:
    """Largest radius r with rho(r) > 1/2; zero when p_lower <= 1/2.

    Scans r upward and stops at the first failure; if the scan reaches
    r_max without failing, r_max is returned with a saturation warning.
    """
    size, saturated = _certified_size_scan(p_lower, spec, r_max)
    if saturated:
        warnings.warn(f"certified size saturated at the scan cap {r_max}")
    return size


def exact_smoothed_probs(params: GCNParams, adjacency: np.ndarray,
                         features: np.ndarray, spec: NoiseSpec,
                         cap: int = 20) -> np.ndarray:
    """Exact smoothed label distribution for every node by enumerating all
    2^m noise masks; only feasible for m <= cap."""
    n = adjacency.shape[0]
    m = num_pairs(n)
    if m > cap:
        raise CapacityError(
            f"exact enumeration needs 2^{m} masks; cap is 2^{cap}")
    probs = np.zeros((n, params.num_classes))
    bits = np.arange(m)
    node_idx = np.arange(n)
    for code in range(1 << m):
        mask = ((code >> bits) & 1).astype(np.int8)
        flips = int(mask.sum())
        weight = (1.0 - spec.beta) ** flips * spec.beta ** (m - flips)
        if weight == 0.0:
            continue
        preds = predict_all(params, apply_perturbation(adjacency, mask),
                            features)
        probs[node_idx, preds] += weight
    return probs


def exact_smoothed_prob(params: GCNParams, adjacency: np.ndarray,
                        features: np.ndarray, node: int,
                        spec: NoiseSpec) -> np.ndarray:
    """Exact smoothed label distribution of one node (test oracle)."""
    return exact_smoothed_probs(params, adjacency, features, spec)[node]


def _certificates_from_counts(counts: np.ndarray, target_nodes: np.ndarray,
                              labels: np.ndarray, spec: NoiseSpec,
                              config: SmoothingConfig,
                              r_max: int) -> list[Certificate]:
    certs = []
    for i, node in enumerate(np.asarray(target_nodes, dtype=np.int64)):
        row = counts[i]
        smoothed = int(np.argmax(row))
        true_label = int(labels[node])
        p_low = lower_bound_prob(int(row[true_label]), config.num_samples,
                                 config.alpha)
        size, saturated = 0, False
        if smoothed == true_label and p_low > 0.5:
            size, saturated = _certified_size_scan(p_low, spec, r_max)
        certs.append(Certificate(int(node), true_label, row.copy(), smoothed,
                                 p_low, size, saturated))
    return certs


def certify_nodes(mode: str, *, target_nodes, labels, spec: NoiseSpec,
                  config: SmoothingConfig, adjacency=None, features=None,
                  params: GCNParams | None = None,
                  train_idx=None, train_config: TrainConfig | None = None,
                  num_classes: int | None = None,
                  r_max: int = DEFAULT_RADIUS_CAP,
                  share_train_seed: bool = False) -> list[Certificate]:
    """Monte Carlo certification of the targets under evasion or poisoning.

    Per node: counts -> smoothed label (argmax, ties to the lowest class)
    -> Clopper-Pearson lower bound for the true label -> certified size,
    which is zero unless the smoothed label is correct and the bound
    exceeds 1/2.
    """
    if mode == "evasion":
        if params is None:
            raise ParameterError("evasion certification needs trained params")
        counts = mc_counts_evasion(params, adjacency, features, target_nodes,
                                   spec, config)
    elif mode == "poisoning":
        if train_config is None or train_idx is None or num_classes is None:
            raise ParameterError(
                "poisoning certification needs train_idx, train_config and "
                "num_classes")
        counts = mc_counts_poisoning(adjacency, features, labels, train_idx,
                                     train_config, target_nodes, spec, config,
                                     num_classes,
                                     share_train_seed=share_train_seed)
    else:
        raise ParameterError(f"unknown certification mode {mode!r}")
    return _certificates_from_counts(counts, target_nodes, labels, spec,
                                     config, r_max)


def write_certificates_csv(certs: list[Certificate], spec: NoiseSpec,
                           config: SmoothingConfig, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "true_label", "smoothed_label", "top_count",
                         "N", "alpha", "beta", "p_lower", "K"])
        for cert in certs:
            writer.writerow([cert.node, cert.true_label, cert.smoothed_label,
                             int(cert.counts[cert.smoothed_label]),
                             config.num_samples, repr(config.alpha),
                             repr(spec.beta), repr(cert.p_lower),
                             cert.certified_size])


def read_certificates_csv(path) -> dict[int, int]:
    """node -> certified size map from an exported certificate CSV."""
    sizes = {}
    with open(path, "r", newline="") as fh:
        for row in csv.DictReader(fh):
            sizes[int(row["node"])] = int(row["K"])
    return sizes
