"""Command-line driver.

Exit codes: 0 success, 1 config error, 2 runtime failure, 3 partial sweep.
"""
import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .attacks import (minmax_poisoning, pgd_evasion, read_delta_edges,
                      write_delta_edges, write_report_csv)
from .errors import CertAttackError, GraphLoadError, ParameterError
from .experiment import (build_dataset, parse_config, report_distribution,
                         run_sweep, runtime_profile, _cell_attack_config)
from .gcn import load_params, predict_all, save_params, train
from .graph import classification_accuracy, split_nodes
from .smoothing import (Certificate, certify_nodes, mix_seed,
                        read_certificates_csv, write_certificates_csv)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config file")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed list with one seed")
    common.add_argument("--out", type=Path, default=None,
                        help="override the output directory")
    common.add_argument("--jobs", type=int, default=1,
                        help="concurrent sweep workers")
    common.add_argument("--resume", action="store_true",
                        help="skip sweep cells already in the raw CSV")
    parser = argparse.ArgumentParser(
        prog="certattack",
        description="certificate-guided attacks on graph neural networks")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common],
                   help="train a clean model and save a checkpoint")
    cert = sub.add_parser("certify", parents=[common],
                          help="certify target nodes via randomized smoothing")
    cert.add_argument("--params", type=Path, default=None,
                      help="load a checkpoint instead of retraining")
    sub.add_parser("attack-evasion", parents=[common],
                   help="run the PGD evasion attack")
    sub.add_parser("attack-poisoning", parents=[common],
                   help="run the Minmax poisoning attack")
    sub.add_parser("sweep", parents=[common],
                   help="run the configured experiment sweep")
    dist = sub.add_parser("report-distribution", parents=[common],
                          help="histogram perturbed edges by certified size")
    dist.add_argument("--delta", type=Path, required=True,
                      help="edge-flip list produced by an attack")
    dist.add_argument("--certificates", type=Path, required=True,
                      help="certificate CSV for the target nodes")
    prof = sub.add_parser("profile", parents=[common],
                          help="time attack and certification phases per N")
    prof.add_argument("--samples", type=str, default="5,10,20",
                      help="comma-separated Monte Carlo sample counts")
    return parser


def _load_config(args):
    if args.config is None:
        raise ParameterError("--config is required for this command")
    config = parse_config(args.config)
    if args.seed is not None:
        config = replace(config, seeds=(args.seed,))
    if args.out is not None:
        config = replace(config, out_dir=str(args.out))
    return config


def _prepare(config):
    graph = build_dataset(config.dataset)
    seed = config.seeds[0]
    split = split_nodes(graph, config.ratios, seed)
    train_config = replace(config.train, seed=mix_seed(seed, 1))
    return graph, seed, split, train_config


def cmd_train(args) -> int:
    config = _load_config(args)
    graph, _, split, train_config = _prepare(config)
    params = train(graph, split, graph.adjacency, train_config)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "params.bin"
    save_params(params, path)
    preds = predict_all(params, graph.adjacency, graph.features)
    acc_tr = classification_accuracy(preds, graph.labels, split.train)
    acc_te = classification_accuracy(preds, graph.labels, split.test)
    print(f"trained model saved to {path}")
    print(f"train accuracy {acc_tr:.4f}  test accuracy {acc_te:.4f}")
    return EXIT_OK


def cmd_certify(args) -> int:
    config = _load_config(args)
    graph, seed, split, train_config = _prepare(config)
    attack = _cell_attack_config(config, graph, seed, config.sweep_values[0])
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if config.mode == "evasion":
        params = (load_params(args.params) if args.params
                  else train(graph, split, graph.adjacency, train_config))
        certs = certify_nodes(
            "evasion", target_nodes=split.test, labels=graph.labels,
            spec=attack.noise, config=attack.smoothing,
            adjacency=graph.adjacency, features=graph.features, params=params)
    else:
        certs = certify_nodes(
            "poisoning", target_nodes=split.train, labels=graph.labels,
            spec=attack.noise, config=attack.smoothing,
            adjacency=graph.adjacency, features=graph.features,
            train_idx=split.train, train_config=train_config,
            num_classes=graph.num_classes)
    path = out_dir / "certificates.csv"
    write_certificates_csv(certs, attack.noise, attack.smoothing, path)
    certified = sum(1 for c in certs if c.certified_size > 0)
    print(f"{len(certs)} nodes certified ({certified} with K > 0) -> {path}")
    return EXIT_OK


def cmd_attack(args, mode: str) -> int:
    config = _load_config(args)
    if config.mode != mode:
        config = replace(config, mode=mode)
    graph, seed, split, train_config = _prepare(config)
    attack = _cell_attack_config(config, graph, seed, config.sweep_values[0])
    if mode == "evasion":
        params = train(graph, split, graph.adjacency, train_config)
        report = pgd_evasion(params, graph, split, attack)
    else:
        report = minmax_poisoning(graph, split, train_config, attack)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, attack.scheme.tag, out_dir / "attack_report.csv")
    write_delta_edges(report.perturbation.binary, graph.adjacency,
                      out_dir / "delta_edges.tsv")
    print(f"{mode} attack: scheme={attack.scheme.tag} budget={attack.budget} "
          f"flips={report.budget_used}")
    print(f"accuracy {report.pre_attack_accuracy:.4f} -> "
          f"{report.post_attack_accuracy:.4f} "
          f"({report.attack_seconds:.2f}s, cert {report.cert_seconds:.2f}s)")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _load_config(args)
    rows = run_sweep(config, jobs=args.jobs, resume=args.resume)
    failed = [r for r in rows if r.status != "ok"]
    print(f"sweep finished: {len(rows)} cells, {len(failed)} failed "
          f"-> {config.out_dir}")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_report_distribution(args) -> int:
    sizes = read_certificates_csv(args.certificates)
    if not sizes:
        raise ParameterError(f"{args.certificates}: no certificates found")
    certs = [Certificate(node, 0, np.zeros(1, dtype=np.int64), 0, 0.0, size)
             for node, size in sizes.items()]
    n = max(sizes) + 1
    with open(args.delta, "r", encoding="utf-8") as fh:
        for line in fh:
            toks = line.split()
            if len(toks) >= 2:
                n = max(n, int(toks[0]) + 1, int(toks[1]) + 1)
    delta = read_delta_edges(args.delta, n)
    out_dir = Path(args.out) if args.out else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "distribution.csv"
    histogram = report_distribution(delta, certs, path)
    print(f"distribution over {sum(histogram.values())} edge incidences "
          f"-> {path}")
    return EXIT_OK


def cmd_profile(args) -> int:
    config = _load_config(args)
    counts = [int(tok) for tok in args.samples.split(",") if tok.strip()]
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "runtime_profile.csv"
    results = runtime_profile(config, counts, path)
    for n_samples, total, cert in results:
        print(f"N={n_samples}: attack {total:.2f}s, certification {cert:.2f}s")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(args)
        if args.command == "certify":
            return cmd_certify(args)
        if args.command == "attack-evasion":
            return cmd_attack(args, "evasion")
        if args.command == "attack-poisoning":
            return cmd_attack(args, "poisoning")
        if args.command == "sweep":
            return cmd_sweep(args)
        if args.command == "report-distribution":
            return cmd_report_distribution(args)
        if args.command == "profile":
            return cmd_profile(args)
        raise ParameterError(f"unknown command {args.command!r}")
    except (ParameterError, GraphLoadError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CertAttackError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
