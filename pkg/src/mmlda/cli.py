"""Command-line interface.

Subcommands: means, train, finetune, attack, cw, select-c, bias, verify,
export-features.  Every run writes its artifacts plus a summary.json whose
"digest" field is stable across reruns with the same config and seed; any
config error or invariant violation exits nonzero.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import time

from . import harness
from .attacks import export_attack_csv
from .heads import load_classifier, save_classifier
from .means import generate_opt_means, save_mean_set
from .net import save_tensor


def _file_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="experiment config JSON")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="output directory (default: config out_dir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmlda", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("means", help="construct an optimal mean set and write it as text")
    p.add_argument("--sq-norm", type=float, default=100.0)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--rotation-seed", type=int, default=None)
    _add_common(p)

    for name, extra in [
        ("train", []),
        ("finetune", ["--checkpoint"]),
        ("attack", ["--checkpoint"]),
        ("cw", ["--checkpoint"]),
        ("export-features", ["--checkpoint"]),
    ]:
        p = sub.add_parser(name)
        for flag in extra:
            p.add_argument(flag, required=True)
        _add_common(p)

    p = sub.add_parser("select-c", help="cross-validated error table per candidate norm")
    p.add_argument("--candidates", default="1,10,100,1000",
                   help="comma-separated squared norms")
    p.add_argument("--folds", type=int, default=5)
    _add_common(p)

    p = sub.add_parser("bias", help="paired accuracies on class-biased counterparts")
    p.add_argument("--kind", choices=("bp1", "bp2"), required=True)
    _add_common(p)

    p = sub.add_parser("verify", help="run the theory suite against its oracles")
    p.add_argument("--mc-samples", type=int, default=1_000_000)
    _add_common(p)

    return parser


def _load_config(args) -> harness.ExperimentConfig:
    if args.config:
        config = harness.ExperimentConfig.load(args.config)
    else:
        config = harness.ExperimentConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.out is not None:
        config = dataclasses.replace(config, out_dir=args.out)
    config.validate()
    return config


def _write_summary(out_dir: str, payload: dict, wall_clock: float) -> None:
    os.makedirs(out_dir, exist_ok=True)
    digest = hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode("ascii")).hexdigest()
    doc = dict(payload)
    doc["digest"] = digest
    doc["wall_clock"] = wall_clock
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="ascii") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)


def _cmd_means(args) -> int:
    started = time.perf_counter()
    out_dir = args.out or "runs/means"
    os.makedirs(out_dir, exist_ok=True)
    ms = generate_opt_means(args.sq_norm, args.dim, args.classes,
                            rotation_seed=args.rotation_seed)
    path = os.path.join(out_dir, "means.txt")
    save_mean_set(path, ms)
    _write_summary(out_dir, {"command": "means", "file": path, "content": _file_digest(path)},
                   time.perf_counter() - started)
    print(f"wrote {path}")
    return 0


def _cmd_train(args) -> int:
    config = _load_config(args)
    out_dir = args.out or config.out_dir
    summary = harness.train(config, out_dir)
    _write_summary(out_dir, {
        "command": "train",
        "checkpoint_digest": summary["digest"],
        "config_digest": config.digest(),
        "final_loss": summary["final_loss"],
        "steps": summary["steps"],
    }, summary["wall_clock"])
    print(f"trained {summary['steps']} steps; checkpoint {summary['checkpoint']}")
    return 0


def _cmd_finetune(args) -> int:
    config = _load_config(args)
    out_dir = args.out or config.out_dir
    if config.finetune_mode == "none":
        raise ValueError("config finetune_mode is 'none'; nothing to do")
    started = time.perf_counter()
    model = load_classifier(args.checkpoint)
    dataset = harness.build_dataset(config, "train")
    harness.adversarial_finetune(
        model, dataset, config.finetune_mode, config.finetune_attack,
        config.finetune_epsilon, config.finetune_steps, config.batch_size,
        config.finetune_lr, config.seed, config.attack_steps)
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, "finetuned.json")
    save_classifier(out_path, model)
    _write_summary(out_dir, {
        "command": "finetune",
        "mode": config.finetune_mode,
        "checkpoint_digest": _file_digest(out_path),
        "config_digest": config.digest(),
    }, time.perf_counter() - started)
    print(f"fine-tuned model written to {out_path}")
    return 0


def _cmd_attack(args) -> int:
    config = _load_config(args)
    out_dir = args.out or config.out_dir
    model = load_classifier(args.checkpoint)
    dataset = harness.build_dataset(config, "test")
    report, results = harness.evaluate_attacks(model, dataset, config, with_results=True)
    os.makedirs(out_dir, exist_ok=True)
    report.write_csv(os.path.join(out_dir, "attack_grid.csv"))
    with open(os.path.join(out_dir, "report.json"), "w", encoding="ascii") as fh:
        fh.write(report.to_json() + "\n")
    # per-cell artifacts: example-level CSV plus the adversarial tensors
    for (kind, eps), result in results.items():
        stem = os.path.join(out_dir, f"{kind}_eps{eps:g}")
        export_attack_csv(stem + ".csv", result, dataset.labels)
        save_tensor(stem + "_adv.json", result.x_adv)
    _write_summary(out_dir, report.payload(), report.wall_clock)
    print(f"clean error {report.clean_error:.4f}; grid written to {out_dir}")
    return 0


def _cmd_cw(args) -> int:
    config = _load_config(args)
    out_dir = args.out or config.out_dir
    started = time.perf_counter()
    model = load_classifier(args.checkpoint)
    dataset = harness.build_dataset(config, "test")
    summary = harness.evaluate_cw(model, dataset, config.kappa,
                                  config.cw_search_steps, config.cw_max_iters)
    payload = {
        "command": "cw",
        "mean_min_distortion": summary.mean_min_distortion,
        "success_rate": summary.success_rate,
        "attacked": summary.attacked,
        "excluded": summary.excluded,
        "config_digest": config.digest(),
    }
    _write_summary(out_dir, payload, time.perf_counter() - started)
    print(f"mean minimal distortion {summary.mean_min_distortion:.4f} "
          f"(success rate {summary.success_rate:.3f})")
    return 0


def _cmd_select_c(args) -> int:
    config = _load_config(args)
    out_dir = args.out or config.out_dir
    started = time.perf_counter()
    candidates = [float(v) for v in args.candidates.split(",") if v]
    dataset = harness.build_dataset(config, "train")
    rows = harness.select_C(config, dataset, candidates, folds=args.folds)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "select_c.csv"), "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sq_norm", "mean_error", "sd_error"])
        for row in rows:
            writer.writerow([f"{row['sq_norm']:g}", f"{row['mean_error']:.17g}",
                             f"{row['sd_error']:.17g}"])
    _write_summary(out_dir, {"command": "select-c", "table": rows,
                             "config_digest": config.digest()},
                   time.perf_counter() - started)
    for row in rows:
        print(f"C={row['sq_norm']:g}: error {row['mean_error']:.4f} +- {row['sd_error']:.4f}")
    return 0


def _cmd_bias(args) -> int:
    config = _load_config(args)
    out_dir = args.out or config.out_dir
    started = time.perf_counter()
    train_set = harness.build_dataset(config, "train")
    test_set = harness.build_dataset(config, "test")
    rows = harness.bias_experiment(config, train_set, test_set, args.kind, seed=config.seed)
    _write_summary(out_dir, {"command": "bias", "kind": args.kind, "rows": rows,
                             "config_digest": config.digest()},
                   time.perf_counter() - started)
    wins = sum(r["mmlda_accuracy"] >= r["softmax_accuracy"] for r in rows)
    print(f"{args.kind}: fixed-prototype head at least as accurate on {wins}/10 counterparts")
    return 0


def _cmd_verify(args) -> int:
    out_dir = args.out or "runs/verify"
    started = time.perf_counter()
    seed = args.seed if args.seed is not None else 0
    mc_rows = harness.boundary_mc_table(mc_samples=args.mc_samples, seed=seed)
    checks = harness.verify_theory(mc_samples=args.mc_samples, seed=seed, mc_rows=mc_rows)
    os.makedirs(out_dir, exist_ok=True)
    harness.theory_checks_to_csv(checks, os.path.join(out_dir, "verify.csv"))
    with open(os.path.join(out_dir, "boundary_mc.csv"), "w", newline="",
              encoding="ascii") as fh:
        harness.boundary_mc_to_csv(mc_rows, fh)
    payload = {
        "command": "verify",
        "checks": [dataclasses.asdict(c) for c in checks],
        "boundary_mc": mc_rows,
        "all_passed": all(c.passed for c in checks),
    }
    _write_summary(out_dir, payload, time.perf_counter() - started)
    harness.boundary_mc_to_csv(mc_rows, sys.stdout)
    for check in checks:
        print(f"{'PASS' if check.passed else 'FAIL'} {check.name} "
              f"value={check.value:.3e} threshold={check.threshold:.3e}")
    if not payload["all_passed"]:
        print("some theory checks FAILED", file=sys.stderr)
        return 1
    return 0


def _cmd_export_features(args) -> int:
    config = _load_config(args)
    out_dir = args.out or config.out_dir
    started = time.perf_counter()
    model = load_classifier(args.checkpoint)
    dataset = harness.build_dataset(config, "test")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "features.csv")
    harness.export_features(model, dataset, path)
    _write_summary(out_dir, {"command": "export-features", "file": path,
                             "content": _file_digest(path), "config_digest": config.digest()},
                   time.perf_counter() - started)
    print(f"wrote {path}")
    return 0


_COMMANDS = {
    "means": _cmd_means,
    "train": _cmd_train,
    "finetune": _cmd_finetune,
    "attack": _cmd_attack,
    "cw": _cmd_cw,
    "select-c": _cmd_select_c,
    "bias": _cmd_bias,
    "verify": _cmd_verify,
    "export-features": _cmd_export_features,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
