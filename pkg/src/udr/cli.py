"""Command-line front door.

Subcommands: gen-data, train, evaluate, sweep-eps, transfer, trajectory,
norm-stats, theory-check, bench. Every file-emitting run writes a
manifest.json (resolved config, seed, backend, sha256 of each artifact);
pointing --config at a manifest reruns that configuration. The --workers
flag is accepted for interface compatibility and recorded in the manifest;
results never depend on it (the pipeline is deterministically ordered).
"""

import argparse
import os
import sys

import numpy as np

from udr import bench as bench_mod
from udr import config as config_mod
from udr import data as data_mod
from udr import evalbench, nn, trainer
from udr.adversary import AdvConfig, udr_inner
from udr.errors import ConfigError, DataFormatError, UdrError
from udr.losses import RiskFn
from udr.manifest import write_manifest
from udr.trainer import RunConfig

ENV_DATA_DIR = "UDR_DATA_DIR"

_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

_EVAL_DEFAULTS = {  # (k, epsilon, eta) per dataset, evaluation attack
    "toy": (200, 2.0, 0.1),
    "mnist": (200, 0.3, 0.01),
}


def _data_root(cfg: RunConfig) -> str:
    return cfg.data_dir or os.environ.get(ENV_DATA_DIR, "")


def _find_idx(root: str, stem: str) -> str:
    for name in (stem, stem + ".gz"):
        path = os.path.join(root, name)
        if os.path.exists(path):
            return path
    raise DataFormatError(f"missing IDX file {stem}[.gz] under {root!r}")


def load_datasets(cfg: RunConfig):
    root = _data_root(cfg)
    if cfg.dataset == "toy":
        train_csv = os.path.join(root, "train.csv") if root else ""
        if train_csv and os.path.exists(train_csv):
            train = data_mod.read_csv(train_csv)
            test = data_mod.read_csv(os.path.join(root, "test.csv"))
            return train, test
        return data_mod.gen_synthetic(cfg.data_seed)
    if not root:
        raise ConfigError(
            "mnist needs data_dir (or UDR_DATA_DIR) pointing at the IDX files"
        )
    train = data_mod.load_mnist_idx(_find_idx(root, _MNIST_FILES["train"][0]),
                                    _find_idx(root, _MNIST_FILES["train"][1]))
    test = data_mod.load_mnist_idx(_find_idx(root, _MNIST_FILES["test"][0]),
                                   _find_idx(root, _MNIST_FILES["test"][1]))
    if cfg.mnist_subset:
        train = train.subset(np.arange(min(cfg.mnist_subset, train.n)))
    return train, test


def _resolve_config(args) -> RunConfig:
    cfg = config_mod.parse_config(args.config, args.set or ())
    if getattr(args, "seed", None) is not None:
        cfg = config_mod.with_updates(cfg, seed=args.seed)
    return cfg


def _eval_attack(cfg: RunConfig, args) -> AdvConfig:
    k, eps, eta = _EVAL_DEFAULTS[cfg.dataset]
    return AdvConfig(
        k=args.k if args.k is not None else k,
        epsilon=args.eps if args.eps is not None else eps,
        eta=args.eta if args.eta is not None else eta,
        random_init=True,
        clip01=cfg.adv.clip01,
    )


def _ensure_out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_gen_data(args) -> int:
    out = _ensure_out(args)
    seed = args.seed if args.seed is not None else 7
    train, test = data_mod.gen_synthetic(seed)
    train_path = os.path.join(out, "train.csv")
    test_path = os.path.join(out, "test.csv")
    data_mod.write_csv(train, train_path)
    data_mod.write_csv(test, test_path)
    write_manifest(out, "gen-data", {"data_seed": seed}, seed,
                   [train_path, test_path], extra={"workers": args.workers})
    print(f"wrote {train_path} ({train.n} rows), {test_path} ({test.n} rows)")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = _ensure_out(args)
    train_ds, test_ds = load_datasets(cfg)
    state, log = trainer.train(cfg, train_ds, test_ds,
                               checkpoint_dir=out if cfg.checkpoint_every else None)
    ckpt = os.path.join(out, "checkpoint.udr")
    metrics = os.path.join(out, "metrics.csv")
    nn.save_checkpoint(state.net, ckpt, cfg.seed, state.epoch)
    log.write_csv(metrics)
    write_manifest(out, "train", config_mod.to_flat(cfg), cfg.seed,
                   [ckpt, metrics],
                   extra={"workers": args.workers,
                          "final_lambda": state.lam})
    last = log.rows[-1]
    print(f"natural_acc={last['natural_acc']:.4f} "
          f"robust_acc_k{cfg.probe_k}={last['robust_acc_k20']:.4f} "
          f"lambda={state.lam:.6g}")
    return 0


def _load_net(path):
    net, seed, epoch = nn.load_checkpoint(path)
    return net


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    net = _load_net(args.checkpoint)
    _, test_ds = load_datasets(cfg)
    attack = _eval_attack(cfg, args)
    nat = evalbench.evaluate_accuracy(net, test_ds)
    rob = evalbench.robust_accuracy(net, test_ds, attack, seed=cfg.seed)
    print(f"natural_acc={nat:.4f} robust_acc={rob:.4f} "
          f"(k={attack.k} eps={attack.epsilon} eta={attack.eta})")
    if args.out:
        out = _ensure_out(args)
        report = evalbench.SweepReport(
            [(attack.epsilon, nat, rob, test_ds.n, cfg.seed)])
        path = os.path.join(out, "eval.csv")
        report.write_csv(path)
        write_manifest(out, "evaluate", config_mod.to_flat(cfg), cfg.seed,
                       [path], extra={"workers": args.workers,
                                      "checkpoint": args.checkpoint,
                                      "attack_k": attack.k,
                                      "attack_eps": attack.epsilon,
                                      "attack_eta": attack.eta})
    return 0


def cmd_sweep_eps(args) -> int:
    cfg = _resolve_config(args)
    net = _load_net(args.checkpoint)
    _, test_ds = load_datasets(cfg)
    attack = _eval_attack(cfg, args)
    eps_list = [float(v) for v in args.eps_list.split(",")]
    report = evalbench.sweep_epsilons(net, test_ds, eps_list, attack,
                                      seed=cfg.seed)
    for row in report.rows:
        print(f"epsilon={row[0]} natural_acc={row[1]:.4f} robust_acc={row[2]:.4f}")
    if args.out:
        out = _ensure_out(args)
        path = os.path.join(out, "sweep.csv")
        report.write_csv(path)
        write_manifest(out, "sweep-eps", config_mod.to_flat(cfg), cfg.seed,
                       [path], extra={"workers": args.workers,
                                      "checkpoint": args.checkpoint})
    return 0


def cmd_transfer(args) -> int:
    cfg = _resolve_config(args)
    source = _load_net(args.source)
    target = _load_net(args.target)
    _, test_ds = load_datasets(cfg)
    attack = _eval_attack(cfg, args)
    acc = evalbench.transfer_attack(source, target, test_ds, attack,
                                    seed=cfg.seed)
    print(f"transfer_acc={acc:.4f} (source={args.source} target={args.target})")
    if args.out:
        out = _ensure_out(args)
        path = os.path.join(out, "transfer.csv")
        with open(path, "w", newline="") as f:
            f.write("source,target,epsilon,transfer_acc,n_samples,seed\n")
            f.write(f"{args.source},{args.target},{attack.epsilon!r},"
                    f"{acc!r},{test_ds.n},{cfg.seed}\n")
        write_manifest(out, "transfer", config_mod.to_flat(cfg), cfg.seed,
                       [path], extra={"workers": args.workers})
    return 0


def cmd_trajectory(args) -> int:
    cfg = _resolve_config(args)
    net = _load_net(args.checkpoint)
    _, test_ds = load_datasets(cfg)
    ids = [int(v) for v in args.samples.split(",")]
    out = _ensure_out(args)
    rf = RiskFn(cfg.method if cfg.method in trainer.UDR_METHODS else "udr_pgd",
                cfg.beta)
    x = test_ds.features[ids]
    y = test_ds.labels[ids]
    _, trajectories = udr_inner(net, x, y, rf, cfg.step_cost, args.lam,
                                cfg.adv, seed=cfg.seed, epoch=0,
                                sample_ids=np.asarray(ids),
                                record_trajectory=True)
    paths = []
    for sid, traj in zip(ids, trajectories):
        path = os.path.join(out, f"trajectory_{sid}.csv")
        traj.write_csv(path)
        paths.append(path)
    write_manifest(out, "trajectory", config_mod.to_flat(cfg), cfg.seed,
                   paths, extra={"workers": args.workers,
                                 "lambda": args.lam, "samples": ids})
    print(f"wrote {len(paths)} trajectories to {out}")
    return 0


def cmd_norm_stats(args) -> int:
    cfg = _resolve_config(args)
    net = _load_net(args.checkpoint)
    _, test_ds = load_datasets(cfg)
    n = min(args.n, test_ds.n)
    idx = np.arange(n)
    x, y = test_ds.features[idx], test_ds.labels[idx]
    if args.attack == "udr":
        rf = RiskFn(cfg.method if cfg.method in trainer.UDR_METHODS else "udr_pgd",
                    cfg.beta)
        x_adv, _ = udr_inner(net, x, y, rf, cfg.step_cost, args.lam, cfg.adv,
                             seed=cfg.seed, epoch=0, sample_ids=idx)
    else:
        from udr.adversary import pgd_attack

        x_adv = pgd_attack(net, x, y, cfg.adv, loss="ce", seed=cfg.seed,
                           epoch=0, sample_ids=idx)
    stats = evalbench.perturbation_stats(x, x_adv, cfg.adv.epsilon)
    print(f"mean_abs={stats.mean_abs_perturbation:.6g} "
          f"max={stats.max_perturbation:.6g} "
          + " ".join(f"p_le_{m}eps={stats.fraction_le[m]:.4f}"
                     for m in stats.MULTIPLIERS))
    if args.out:
        out = _ensure_out(args)
        path = os.path.join(out, "norm_stats.csv")
        stats.write_csv(path)
        write_manifest(out, "norm-stats", config_mod.to_flat(cfg), cfg.seed,
                       [path], extra={"workers": args.workers,
                                      "attack": args.attack, "lambda": args.lam})
    return 0


def cmd_theory_check(args) -> int:
    lam_grid = evalbench.default_lambda_grid(args.lambda_points)
    worst = 0.0
    rows = []
    for i in range(args.instances):
        problem = evalbench.random_problem(args.seed + i, args.grid,
                                           epsilon=args.eps)
        primal, dual, gap = evalbench.duality_check(problem, args.eps, lam_grid)
        print(f"primal={primal!r} dual={dual!r} gap={gap!r}")
        worst = max(worst, abs(gap))
        rows.append((args.seed + i, primal, dual, gap))
    if args.out:
        out = _ensure_out(args)
        path = os.path.join(out, "theory.csv")
        with open(path, "w", newline="") as f:
            f.write("seed,primal,dual,gap\n")
            for r in rows:
                f.write(f"{r[0]},{r[1]!r},{r[2]!r},{r[3]!r}\n")
        write_manifest(out, "theory-check",
                       {"grid": args.grid, "eps": args.eps,
                        "instances": args.instances,
                        "lambda_points": args.lambda_points},
                       args.seed, [path], extra={"workers": args.workers})
    return 0 if worst <= 1e-9 else 1


def cmd_bench(args) -> int:
    rows = bench_mod.run_benchmark(repeats=args.repeats)
    print(bench_mod.format_rows(rows))
    if args.out:
        out = _ensure_out(args)
        path = os.path.join(out, "bench.csv")
        bench_mod.write_csv(rows, path)
        write_manifest(out, "bench", {"repeats": args.repeats}, 0, [path],
                       extra={"workers": args.workers})
    return 0


def _add_common(p, need_out: bool):
    p.add_argument("--config", default=None,
                   help="flat key=value config file or a manifest.json")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=need_out, default=None,
                   help="output directory")
    p.add_argument("--workers", type=int, default=1,
                   help="accepted for compatibility; never changes results")


def _add_eval_flags(p):
    p.add_argument("--k", type=int, default=None, help="attack steps")
    p.add_argument("--eps", type=float, default=None, help="attack budget")
    p.add_argument("--eta", type=float, default=None, help="attack step size")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="udr")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic 2-D dataset CSVs")
    _add_common(p, need_out=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model per the config")
    _add_common(p, need_out=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="natural + robust accuracy of a checkpoint")
    _add_common(p, need_out=False)
    _add_eval_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("sweep-eps", help="robust accuracy across attack budgets")
    _add_common(p, need_out=False)
    _add_eval_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--eps-list", required=True,
                   help="comma-separated attack budgets")
    p.set_defaults(fn=cmd_sweep_eps)

    p = sub.add_parser("transfer", help="blackbox transfer accuracy")
    _add_common(p, need_out=False)
    _add_eval_flags(p)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.set_defaults(fn=cmd_transfer)

    p = sub.add_parser("trajectory", help="export soft-ball attack trajectories")
    _add_common(p, need_out=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", default="0",
                   help="comma-separated test-set row ids")
    p.add_argument("--lam", type=float, default=0.1,
                   help="multiplier used while crafting")
    p.set_defaults(fn=cmd_trajectory)

    p = sub.add_parser("norm-stats", help="perturbation-norm statistics")
    _add_common(p, need_out=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--attack", choices=("udr", "pgd"), default="udr")
    p.add_argument("--lam", type=float, default=0.0)
    p.add_argument("--n", type=int, default=1000)
    p.set_defaults(fn=cmd_norm_stats)

    p = sub.add_parser("theory-check",
                       help="brute-force primal/dual gap on random instances")
    _add_common(p, need_out=False)
    p.add_argument("--grid", type=int, default=201)
    p.add_argument("--eps", type=float, default=0.3)
    p.add_argument("--instances", type=int, default=1)
    p.add_argument("--lambda-points", type=int, default=50)
    p.set_defaults(fn=cmd_theory_check)

    p = sub.add_parser("bench", help="numba vs numpy kernel benchmark")
    _add_common(p, need_out=False)
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(fn=cmd_bench)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is None and getattr(args, "cmd", "") == "theory-check":
        args.seed = 3
    try:
        return args.fn(args)
    except UdrError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
