"""Experiment orchestration: training, fine-tuning, attack grids, model
selection, bias studies, and the theory verification suite.

Everything an experiment needs sits in one JSON-round-trippable config; every
run is deterministic for a fixed config and seed, and reports carry a content
digest that excludes wall-clock time so reruns can be compared byte for byte.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import theory
from .attacks import AttackConfig, bim, cw_l2, fgsm, ilcm, run_attack
from .data import (
    Dataset,
    bias_counterparts,
    class_biased_subsample,
    kfold_split,
    load_idx,
    sample_mmd,
    sample_synthetic_nonlinear,
)
from .heads import Classifier, MMLDAHead, SoftmaxHead, save_classifier, softmax
from .means import (
    MMDSpec,
    approx_robustness,
    generate_opt_means,
    robustness_upper_bound,
    verify_opt_condition,
)
from .net import AdamState, adam_step, init_network
from .rng import make_rng

__all__ = [
    "ExperimentConfig",
    "Report",
    "CwSummary",
    "TheoryCheck",
    "build_dataset",
    "fit",
    "train",
    "adversarial_finetune",
    "evaluate_attacks",
    "evaluate_cw",
    "select_C",
    "bias_experiment",
    "verify_theory",
    "boundary_mc_table",
    "export_features",
]

DATASET_KINDS = ("arcs", "gmm_input", "mmd", "idx")
HEAD_KINDS = ("mmlda", "softmax")
FINETUNE_MODES = ("none", "sat", "hat")
HAT_EPSILON_RANGE = (0.02, 0.20)


@dataclass
class ExperimentConfig:
    """One experiment: data, model, training, and attack grid."""

    dataset_kind: str = "arcs"
    num_classes: int = 3
    train_size: int = 3000
    test_size: int = 1000
    noise: float = 0.02
    data_seed: int = 0
    idx_images: str | None = None
    idx_labels: str | None = None
    idx_test_images: str | None = None
    idx_test_labels: str | None = None

    hidden_dims: list[int] = field(default_factory=lambda: [64, 64])
    latent_dim: int | None = None  # defaults to max(10, num_classes - 1)
    head_kind: str = "mmlda"
    sq_norm: float = 100.0
    priors_mode: str = "uniform"  # "uniform" | "empirical"

    train_steps: int = 2000
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0

    attack_kinds: list[str] = field(default_factory=lambda: ["fgsm", "bim", "ilcm"])
    epsilons: list[float] = field(default_factory=lambda: [0.04, 0.12, 0.20])
    attack_steps: int = 10
    jsma_pixel_budget: int | None = None
    kappa: float = 0.0
    cw_search_steps: int = 9
    cw_max_iters: int = 1000

    finetune_mode: str = "none"
    finetune_attack: str = "fgsm"
    finetune_epsilon: float = 0.1
    finetune_steps: int = 500
    finetune_lr: float = 1e-3

    out_dir: str = "runs"

    def validate(self) -> None:
        if self.dataset_kind not in DATASET_KINDS:
            raise ValueError(f"unknown dataset kind {self.dataset_kind!r}")
        if self.head_kind not in HEAD_KINDS:
            raise ValueError(f"unknown head kind {self.head_kind!r}")
        if self.finetune_mode not in FINETUNE_MODES:
            raise ValueError(f"unknown finetune mode {self.finetune_mode!r}")
        if self.sq_norm <= 0:
            raise ValueError("sq_norm must be positive")
        if any(e < 0 for e in self.epsilons):
            raise ValueError("attack epsilons must be nonnegative")
        if self.train_steps < 0 or self.finetune_steps < 0:
            raise ValueError("step counts must be nonnegative")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2")
        if self.dataset_kind == "idx" and not (self.idx_images and self.idx_labels):
            raise ValueError("idx datasets need idx_images and idx_labels paths")

    def latent(self) -> int:
        return self.latent_dim if self.latent_dim is not None else max(10, self.num_classes - 1)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        doc = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        config = cls(**doc)
        config.validate()
        return config

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="ascii") as fh:
            return cls.from_json(fh.read())

    def digest(self) -> str:
        """Content hash of the experiment; where it writes is not part of it."""
        doc = dataclasses.asdict(self)
        doc.pop("out_dir")
        blob = json.dumps(doc, sort_keys=True).encode("ascii")
        return hashlib.sha256(blob).hexdigest()


@dataclass
class Report:
    """Attack-grid accuracies plus run metadata.

    The digest covers everything except wall_clock, so identical runs agree
    byte for byte even though their timings differ.
    """

    cells: list[dict]
    clean_error: float
    config_digest: str
    seed: int
    wall_clock: float
    mean_min_distortion: float | None = None

    def payload(self) -> dict:
        return {
            "cells": self.cells,
            "clean_error": self.clean_error,
            "config_digest": self.config_digest,
            "mean_min_distortion": self.mean_min_distortion,
            "seed": self.seed,
        }

    def digest(self) -> str:
        blob = json.dumps(self.payload(), sort_keys=True).encode("ascii")
        return hashlib.sha256(blob).hexdigest()

    def to_json(self) -> str:
        doc = self.payload()
        doc["digest"] = self.digest()
        doc["wall_clock"] = self.wall_clock
        return json.dumps(doc, sort_keys=True, indent=2)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="ascii") as fh:
            writer = csv.writer(fh)
            writer.writerow(["attack", "epsilon", "accuracy"])
            for cell in self.cells:
                writer.writerow([cell["attack"], f"{cell['epsilon']:.17g}",
                                 f"{cell['accuracy']:.17g}"])


@dataclass(frozen=True)
class CwSummary:
    mean_min_distortion: float
    success_rate: float
    attacked: int
    excluded: int  # initially misclassified examples, never attacked


@dataclass(frozen=True)
class TheoryCheck:
    name: str
    value: float
    threshold: float
    passed: bool


def build_dataset(config: ExperimentConfig, role: str = "train") -> Dataset:
    """Materialise the configured dataset; train and test draws use disjoint
    seed streams derived from data_seed."""
    if role not in ("train", "test"):
        raise ValueError("role must be 'train' or 'test'")
    config.validate()
    seed = 2 * config.data_seed + (0 if role == "train" else 1)
    size = config.train_size if role == "train" else config.test_size
    if config.dataset_kind in ("arcs", "gmm_input"):
        return sample_synthetic_nonlinear(config.dataset_kind, config.num_classes,
                                          size, config.noise, seed)
    if config.dataset_kind == "mmd":
        spec = MMDSpec.uniform(generate_opt_means(config.sq_norm, config.latent(),
                                                  config.num_classes))
        return sample_mmd(spec, size, seed)
    if role == "train":
        return load_idx(config.idx_images, config.idx_labels)
    if not (config.idx_test_images and config.idx_test_labels):
        raise ValueError("idx datasets need idx_test_images and idx_test_labels for evaluation")
    return load_idx(config.idx_test_images, config.idx_test_labels)


def _build_classifier(config: ExperimentConfig, dataset: Dataset) -> Classifier:
    latent = config.latent()
    dims = [dataset.dim] + [int(h) for h in config.hidden_dims] + [latent]
    net = init_network(dims, seed=config.seed)
    if config.head_kind == "mmlda":
        mean_set = generate_opt_means(config.sq_norm, latent, dataset.num_classes)
        priors = dataset.empirical_priors if config.priors_mode == "empirical" else None
        head = MMLDAHead(mean_set, priors)
    else:
        head = SoftmaxHead.init(dataset.num_classes, latent, seed=config.seed)
    return Classifier(net, head)


def fit(config: ExperimentConfig, dataset: Dataset):
    """Minibatch training loop; returns the model and the per-step loss trace.

    The prototype means are computed once up front (for the fixed head) and
    only the trunk parameters, plus the linear head's when present, are
    updated.  Zero steps returns the freshly initialised model.
    """
    config.validate()
    clf = _build_classifier(config, dataset)
    params = clf.train_params()
    state = AdamState.init(params, lr=config.learning_rate)
    rng = make_rng(config.seed, 31)
    losses: list[float] = []
    for _ in range(config.train_steps):
        idx = rng.integers(0, dataset.n, size=config.batch_size)
        loss, _, net_grads, head_grads = clf.loss_and_grads(
            dataset.features[idx], dataset.labels[idx])
        losses.append(loss)
        adam_step(state, params, net_grads + head_grads)
    return clf, losses


def train(config: ExperimentConfig, out_dir) -> dict:
    """Train per config and write checkpoint + loss trace; returns a summary."""
    os.makedirs(out_dir, exist_ok=True)
    started = time.perf_counter()
    dataset = build_dataset(config, "train")
    clf, losses = fit(config, dataset)
    checkpoint = os.path.join(out_dir, "checkpoint.json")
    save_classifier(checkpoint, clf)
    with open(os.path.join(out_dir, "loss_trace.csv"), "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for step, loss in enumerate(losses):
            writer.writerow([step, f"{loss:.17g}"])
    with open(checkpoint, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    return {
        "checkpoint": checkpoint,
        "digest": digest,
        "final_loss": losses[-1] if losses else None,
        "steps": len(losses),
        "wall_clock": time.perf_counter() - started,
    }


def _craft_for_finetune(model, x, labels, attack: str, eps, steps: int):
    if attack == "fgsm":
        return fgsm(model, x, labels, eps).x_adv
    if attack == "bim":
        return bim(model, x, labels, eps, steps).x_adv
    if attack == "ilcm":
        return ilcm(model, x, eps, steps).x_adv
    raise ValueError(f"fine-tuning supports the sign-based attacks, not {attack!r}")


def adversarial_finetune(model: Classifier, dataset: Dataset, mode: str,
                         attack: str = "fgsm", epsilon: float = 0.1,
                         steps: int = 500, batch_size: int = 64,
                         learning_rate: float = 1e-3, seed: int = 0,
                         attack_steps: int = 10) -> Classifier:
    """Fine-tune on 1:1 mixed batches of clean and adversarial examples.

    Adversarial halves are crafted on the current model each step.  ``sat``
    uses the fixed epsilon; ``hat`` draws one per example uniformly from
    [0.02, 0.20].  The learning rate is constant.
    """
    if mode not in ("sat", "hat"):
        raise ValueError("mode must be 'sat' or 'hat'")
    params = model.train_params()
    state = AdamState.init(params, lr=learning_rate)
    rng = make_rng(seed, 41)
    half = batch_size // 2
    for _ in range(steps):
        idx = rng.integers(0, dataset.n, size=2 * half)
        clean_x = dataset.features[idx[:half]]
        clean_y = dataset.labels[idx[:half]]
        base_x = dataset.features[idx[half:]]
        base_y = dataset.labels[idx[half:]]
        if mode == "hat":
            lo, hi = HAT_EPSILON_RANGE
            eps = lo + (hi - lo) * rng.random(half)
        else:
            eps = epsilon
        adv_x = _craft_for_finetune(model, base_x, base_y, attack, eps, attack_steps)
        batch_x = np.vstack([clean_x, adv_x])
        batch_y = np.concatenate([clean_y, base_y])
        _, _, net_grads, head_grads = model.loss_and_grads(batch_x, batch_y)
        adam_step(state, params, net_grads + head_grads)
    return model


def evaluate_attacks(model: Classifier, dataset: Dataset, config: ExperimentConfig,
                     with_results: bool = False):
    """Accuracy per (attack, epsilon) cell over the full evaluation set.

    With ``with_results`` the raw per-cell AttackResult objects come back too,
    keyed by (kind, epsilon), so callers can export them without re-attacking.
    """
    started = time.perf_counter()
    clean_pred = model.predict(dataset.features)
    clean_acc = float((clean_pred == dataset.labels).mean())
    cells = []
    results = {}
    for kind in config.attack_kinds:
        for eps in config.epsilons:
            attack_config = AttackConfig(
                kind, epsilon=float(eps), steps=config.attack_steps,
                kappa=config.kappa, search_steps=config.cw_search_steps,
                max_iters=config.cw_max_iters, pixel_budget=config.jsma_pixel_budget)
            result = run_attack(model, dataset.features, dataset.labels, attack_config)
            accuracy = float((result.adv_pred == dataset.labels).mean())
            cells.append({"attack": kind, "epsilon": float(eps), "accuracy": accuracy})
            results[(kind, float(eps))] = result
    report = Report(cells=cells, clean_error=1.0 - clean_acc,
                    config_digest=config.digest(), seed=config.seed,
                    wall_clock=time.perf_counter() - started)
    return (report, results) if with_results else report


def evaluate_cw(model: Classifier, dataset: Dataset, kappa: float = 0.0,
                search_steps: int = 9, max_iters: int = 1000) -> CwSummary:
    """Mean minimal distortion of the L2 attack over initially-correct examples.

    Misclassified examples are excluded up front (they need no attack) and
    the mean is taken over successful attacks only; the success rate and both
    counts are reported alongside.
    """
    clean_pred = model.predict(dataset.features)
    correct = clean_pred == dataset.labels
    excluded = int((~correct).sum())
    x = dataset.features[correct]
    labels = dataset.labels[correct]
    if x.shape[0] == 0:
        return CwSummary(math.nan, 0.0, 0, excluded)
    result = cw_l2(model, x, labels, kappa=kappa, search_steps=search_steps,
                   max_iters=max_iters)
    successes = result.success
    mean_dist = float(result.distortion[successes].mean()) if successes.any() else math.nan
    return CwSummary(mean_dist, float(successes.mean()), int(x.shape[0]), excluded)


def select_C(config: ExperimentConfig, dataset: Dataset, candidates,
             folds: int = 5) -> list[dict]:
    """Cross-validated validation error per candidate squared norm.

    Emits the table only; picking the winner is left to the reader.
    """
    rows = []
    for candidate in candidates:
        if candidate <= 0:
            raise ValueError("candidate norms must be positive")
        errors = []
        for train_part, val_part in kfold_split(dataset, folds, seed=config.seed):
            fold_config = dataclasses.replace(config, sq_norm=float(candidate),
                                              head_kind="mmlda")
            clf, _ = fit(fold_config, train_part)
            errors.append(1.0 - float((clf.predict(val_part.features) == val_part.labels).mean()))
        rows.append({
            "sq_norm": float(candidate),
            "mean_error": float(np.mean(errors)),
            "sd_error": float(np.std(errors, ddof=1)),
            "fold_errors": errors,
        })
    return rows


def bias_experiment(config: ExperimentConfig, train_set: Dataset, test_set: Dataset,
                    kind: str, seed: int = 0) -> list[dict]:
    """Paired accuracies of both heads over ten class-biased counterparts.

    Each counterpart biases the train and test splits with the same keep
    probabilities but independent seeds; both heads train with identical
    budgets, and the fixed-prototype head keeps uniform priors.
    """
    rows = []
    for index, alpha in enumerate(bias_counterparts(kind, seed=seed)):
        biased_train = class_biased_subsample(train_set, alpha, seed=1000 * seed + 2 * index)
        biased_test = class_biased_subsample(test_set, alpha, seed=1000 * seed + 2 * index + 1)
        row = {"counterpart": index, "alpha": [float(a) for a in alpha]}
        for head_kind in ("softmax", "mmlda"):
            head_config = dataclasses.replace(config, head_kind=head_kind,
                                              priors_mode="uniform")
            clf, _ = fit(head_config, biased_train)
            accuracy = float((clf.predict(biased_test.features) == biased_test.labels).mean())
            row[f"{head_kind}_accuracy"] = accuracy
        rows.append(row)
    return rows


def boundary_mc_table(mc_samples: int = 1_000_000, seed: int = 0) -> list[dict]:
    """Closed form vs Monte Carlo for the expected boundary distance, one row
    per (delta, zeta) grid point; a row passes within four standard errors."""
    rows = []
    for delta in (0.5, 1.0, 2.0, 4.0):
        for zeta in (0.0, 0.5):
            closed = theory.expected_boundary_distance(delta, zeta)
            mc = theory.monte_carlo_boundary_distance(delta, zeta, mc_samples, seed=seed + 7)
            rows.append({
                "delta": delta,
                "zeta": zeta,
                "closed_form": closed,
                "mc_estimate": mc.estimate,
                "standard_error": mc.standard_error,
                "passed": abs(closed - mc.estimate) <= 4.0 * mc.standard_error,
            })
    return rows


def boundary_mc_to_csv(rows: list[dict], fh) -> None:
    writer = csv.writer(fh)
    writer.writerow(["delta", "zeta", "closed_form", "mc_estimate", "standard_error", "pass"])
    for row in rows:
        writer.writerow([f"{row['delta']:g}", f"{row['zeta']:g}",
                         f"{row['closed_form']:.12g}", f"{row['mc_estimate']:.12g}",
                         f"{row['standard_error']:.6g}", int(row["passed"])])


def verify_theory(mc_samples: int = 1_000_000, seed: int = 0,
                  mc_rows: list[dict] | None = None) -> list[TheoryCheck]:
    """Run the closed-form theory suite against its independent oracles.

    One row per check; a row passes when value <= threshold.  Covers the
    prototype optimality grid, bound attainment, the expected-boundary-
    distance Monte Carlo grid, the derivative finite-difference grid, the
    large-distance ratio claim, the efficiency checks, and the label gap.
    ``mc_rows`` lets a caller that already ran :func:`boundary_mc_table`
    reuse those draws.
    """
    checks: list[TheoryCheck] = []

    def add(name, value, threshold):
        value = float(value)
        checks.append(TheoryCheck(name, value, float(threshold), value <= threshold))

    for num_classes, dim in [(2, 1), (3, 2), (10, 10), (10, 63), (64, 63)]:
        for sq_norm in (1.0, 100.0):
            ms = generate_opt_means(sq_norm, dim, num_classes)
            report = verify_opt_condition(ms, tol=1e-9)
            add(f"opt_condition/L{num_classes}_p{dim}_C{sq_norm:g}",
                max(report.max_diag_err, report.max_offdiag_err) / sq_norm, 1e-9)
            bound = robustness_upper_bound(sq_norm, num_classes)
            add(f"bound_equality/L{num_classes}_p{dim}_C{sq_norm:g}",
                abs(approx_robustness(ms) - bound) / bound, 1e-9)

    rng = make_rng(seed, 43)
    worst_excess = -math.inf
    for _ in range(100):
        num_classes = int(rng.integers(2, 9))
        dim = int(rng.integers(num_classes - 1, num_classes + 6))
        pts = rng.standard_normal((num_classes, dim))
        pts -= pts.mean(axis=0)
        pts *= np.sqrt(4.0 / np.einsum("ij,ij->i", pts, pts).max())
        excess = approx_robustness(pts) - robustness_upper_bound(4.0, num_classes)
        worst_excess = max(worst_excess, excess)
    add("bound_holds_random_sets", worst_excess, 1e-9)

    for row in (mc_rows if mc_rows is not None else boundary_mc_table(mc_samples, seed)):
        add(f"boundary_distance_mc/delta{row['delta']:g}_zeta{row['zeta']:g}",
            abs(row["closed_form"] - row["mc_estimate"]) / row["standard_error"], 4.0)

    h = 1e-5
    worst_rel = 0.0
    min_deriv = math.inf
    for delta in np.linspace(0.5, 8.0, 76):
        fd = (theory.expected_boundary_distance(delta + h)
              - theory.expected_boundary_distance(delta - h)) / (2 * h)
        analytic = theory.boundary_distance_derivative(delta)
        worst_rel = max(worst_rel, abs(analytic - fd) / abs(fd))
        min_deriv = min(min_deriv, analytic)
    add("derivative_finite_difference", worst_rel, 1e-6)
    add("derivative_nonnegative", -min_deriv, 0.0)

    add("large_distance_ratio",
        abs(theory.expected_boundary_distance(10.0) / 10.0 - 0.5), 1e-7)

    eff_small = theory.efron_efficiency(5, 0.0, 0.01)
    add("efficiency_small_delta_upper", eff_small - 1.0, 0.0)
    add("efficiency_small_delta_lower", 0.99 - eff_small, 0.0)
    for zeta in (0.0, 1.0):
        values = [theory.efron_efficiency(5, zeta, d) for d in np.arange(0.5, 4.01, 0.5)]
        add(f"efficiency_nonincreasing/zeta{zeta:g}",
            max(b - a for a, b in zip(values, values[1:])), 1e-12)
    worst_gap = 0.0
    for dim in (2, 5, 10):
        for zeta in (0.0, 0.5, 1.0):
            for delta in (0.5, 1.5, 3.0):
                gap = abs(theory.efron_efficiency(dim, zeta, delta)
                          - theory.efron_efficiency_reference(dim, zeta, delta))
                worst_gap = max(worst_gap, gap)
    add("efficiency_dual_quadrature", worst_gap, 1e-6)

    add("label_gap_bound", theory.mmlda_label_gap(10.0, 10), 1e-8)
    ms = generate_opt_means(100.0, 10, 10)
    head = MMLDAHead(ms)
    probs = softmax(head.scores(ms.means))
    add("prototype_prediction_gap", np.abs(probs - np.eye(10)).max(), 1e-8)

    return checks


def theory_checks_to_csv(checks: list[TheoryCheck], path) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["check", "value", "threshold", "pass"])
        for check in checks:
            writer.writerow([check.name, f"{check.value:.17g}",
                             f"{check.threshold:.17g}", int(check.passed)])


def export_features(model: Classifier, dataset: Dataset, path) -> None:
    """CSV of (label, latent feature vector) per example."""
    features = model.features(dataset.features)
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"z{j}" for j in range(features.shape[1])])
        for label, row in zip(dataset.labels, features):
            writer.writerow([int(label)] + [f"{v:.17g}" for v in row])
