"""White-box adversarial attacks against a read-only classifier.

Inputs live in the pixel box [-0.5, 0.5].  The sign-based attacks keep every
iterate inside the intersection of that box and the L-infinity ball around
the clean input; the saliency attack touches each feature at most once; the
L2 attack optimises a tanh reparameterisation with a per-example binary
search over the objective constant.  Attacks never modify the model and are
deterministic for fixed inputs and configuration.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .net import AdamState, adam_step

__all__ = [
    "PIXEL_MIN",
    "PIXEL_MAX",
    "AttackConfig",
    "AttackResult",
    "fgsm",
    "bim",
    "ilcm",
    "jsma",
    "cw_l2",
    "distortion",
    "run_attack",
    "export_attack_csv",
]

PIXEL_MIN, PIXEL_MAX = -0.5, 0.5
ATTACK_KINDS = ("fgsm", "bim", "ilcm", "jsma", "cw")

_C_START = 1e-2
_C_LIMIT = 1e10


@dataclass(frozen=True)
class AttackConfig:
    """Attack kind plus every knob the harness can turn."""

    kind: str
    epsilon: float = 0.1
    steps: int = 10              # iterations for the sign-based attacks
    kappa: float = 0.0           # confidence margin for the L2 attack
    search_steps: int = 9        # binary-search rounds over the L2 constant
    max_iters: int = 1000        # optimiser iterations per constant
    pixel_budget: int | None = None  # saliency attack: max distinct features
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.steps < 1 or self.search_steps < 1 or self.max_iters < 1:
            raise ValueError("iteration counts must be at least 1")


@dataclass
class AttackResult:
    x_adv: np.ndarray
    clean_pred: np.ndarray
    adv_pred: np.ndarray
    success: np.ndarray       # prediction changed (untargeted) / target hit
    linf: np.ndarray          # per-example max pixel perturbation
    distortion: np.ndarray    # per-example RMS distortion on the 0..255 scale
    target: np.ndarray | None = None


def _clip_ball_box(values, x, eps):
    lower = np.maximum(x - eps, PIXEL_MIN)
    upper = np.minimum(x + eps, PIXEL_MAX)
    return np.clip(values, lower, upper)


def _finish(model, x, x_adv, clean_pred, target=None) -> AttackResult:
    adv_pred = model.predict(x_adv)
    if target is None:
        success = adv_pred != clean_pred
    else:
        success = adv_pred == target
    linf = np.abs(x_adv - x).max(axis=1)
    return AttackResult(x_adv, clean_pred, adv_pred, success, linf,
                        distortion(x, x_adv), target)


def _signed_iterations(model, x, labels, eps, steps, ascend=True):
    """Shared core of the sign-based attacks; eps may be per-example."""
    x = np.asarray(x, dtype=np.float64)
    eps_arr = np.asarray(eps, dtype=np.float64)
    if (eps_arr < 0).any():
        raise ValueError("epsilon must be nonnegative")
    eps_col = (np.full((x.shape[0], 1), float(eps_arr)) if eps_arr.ndim == 0
               else eps_arr.reshape(-1, 1))
    step = eps_col / steps
    direction = 1.0 if ascend else -1.0
    x_adv = x.copy()
    for _ in range(steps):
        grad = model.input_grad(x_adv, labels)
        x_adv = _clip_ball_box(x_adv + direction * step * np.sign(grad), x, eps_col)
    return x_adv


def fgsm(model, x, labels, epsilon) -> AttackResult:
    """One signed gradient-ascent step on the training loss."""
    clean_pred = model.predict(x)
    x_adv = _signed_iterations(model, x, labels, epsilon, steps=1)
    return _finish(model, x, x_adv, clean_pred)


def bim(model, x, labels, epsilon, steps: int = 10) -> AttackResult:
    """`steps` signed steps of size epsilon/steps, clipped to the ball each
    time; with steps=1 this is bit-identical to :func:`fgsm`."""
    if steps < 1:
        raise ValueError("steps must be at least 1")
    clean_pred = model.predict(x)
    x_adv = _signed_iterations(model, x, labels, epsilon, steps)
    return _finish(model, x, x_adv, clean_pred)


def ilcm(model, x, epsilon, steps: int = 10) -> AttackResult:
    """Descend the loss toward the least-likely class of the clean input.

    The target is fixed once from the clean prediction; success means the
    adversarial prediction lands on it.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    x = np.asarray(x, dtype=np.float64)
    probs = model.probs(x)
    target = probs.argmin(axis=1)  # ties resolve to the lowest index
    clean_pred = probs.argmax(axis=1)
    x_adv = _signed_iterations(model, x, target, epsilon, steps, ascend=False)
    return _finish(model, x, x_adv, clean_pred, target=target)


def _saliency_map(jacobian, target):
    """Feature scores for pushing probability mass toward ``target``."""
    toward = jacobian[target]
    away = jacobian.sum(axis=0) - toward
    scores = np.where((toward < 0.0) | (away > 0.0), 0.0, toward * np.abs(away))
    return scores


def jsma(model, x, target, epsilon, pixel_budget: int | None = None) -> AttackResult:
    """Greedy single-feature perturbations ranked by the saliency map.

    Each iteration bumps the highest-saliency untouched feature by +epsilon
    (clipped to the box) until the prediction reaches the target, the budget
    of distinct features is exhausted, or the entire map vanishes.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    target = np.broadcast_to(np.asarray(target, dtype=int), (n,)).copy()
    budget = d if pixel_budget is None else int(pixel_budget)
    if budget < 0:
        raise ValueError("pixel_budget must be nonnegative")
    clean_pred = model.predict(x)
    x_adv = x.copy()
    for i in range(n):
        row = x_adv[i:i + 1]
        used = np.zeros(d, dtype=bool)
        for _ in range(budget):
            if model.predict(row)[0] == target[i]:
                break
            scores = _saliency_map(model.prob_jacobian(row)[0], target[i])
            scores[used] = 0.0
            scores[row[0] >= PIXEL_MAX] = 0.0  # cannot move further up
            best = int(scores.argmax())
            if scores[best] <= 0.0:
                break
            row[0, best] = min(row[0, best] + epsilon, PIXEL_MAX)
            used[best] = True
    return _finish(model, x, x_adv, clean_pred, target=target)


def cw_l2(model, x, labels, kappa: float = 0.0, search_steps: int = 9,
          max_iters: int = 1000, lr: float = 1e-2) -> AttackResult:
    """L2-minimal misclassification via a tanh change of variables.

    Minimises ||x'(w) - x||^2 + c * f(x'(w)) with x'(w) = tanh(w)/2 and
    f(v) = max(score_y(v) - max_{i != y} score_i(v), -kappa), using Adam on w
    and a per-example modified binary search over c: start at 1e-2, multiply
    by 10 on failure until a success brackets the constant, then bisect,
    shrinking toward the smallest constant that still succeeds.  The smallest
    successful perturbation seen anywhere is kept; examples with no success
    at any constant report failure and an infinite distortion.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    n = x.shape[0]
    clean_pred = model.predict(x)
    num_classes = model.scores(x[:1]).shape[1]
    rows = np.arange(n)

    # tanh(w)/2 spans the open pixel box; nudge endpoints to keep atanh finite
    w_init = np.arctanh(np.clip(2.0 * x, -1.0 + 1e-12, 1.0 - 1e-12))

    lower = np.zeros(n)
    upper = np.full(n, _C_LIMIT)
    c = np.full(n, _C_START)
    best_adv = x.copy()
    best_l2 = np.full(n, np.inf)

    def margin_and_runner(scores):
        true_scores = scores[rows, labels]
        masked = scores.copy()
        masked[rows, labels] = -np.inf
        runner = masked.argmax(axis=1)
        return true_scores - masked[rows, runner], runner

    for _ in range(int(search_steps)):
        w = w_init.copy()
        state = AdamState.init([w], lr=lr)
        round_success = np.zeros(n, dtype=bool)
        for it in range(int(max_iters) + 1):
            x_adv = 0.5 * np.tanh(w)
            scores = model.scores(x_adv)
            margin, runner = margin_and_runner(scores)
            pred = scores.argmax(axis=1)
            success = (margin <= -kappa) & (pred != labels)
            round_success |= success
            l2 = ((x_adv - x) ** 2).sum(axis=1)
            better = success & (l2 < best_l2)
            best_adv[better] = x_adv[better]
            best_l2[better] = l2[better]
            if it == max_iters:
                break
            coeff = np.zeros((n, num_classes))
            active = margin > -kappa  # hinge floor kills the gradient below
            coeff[rows, labels] = np.where(active, 1.0, 0.0)
            coeff[rows, runner] -= np.where(active, 1.0, 0.0)
            grad_obj = 2.0 * (x_adv - x) + c[:, None] * model.score_mix_grad(x_adv, coeff)
            grad_w = grad_obj * 0.5 * (1.0 - np.tanh(w) ** 2)
            adam_step(state, [w], [grad_w])
        upper = np.where(round_success, np.minimum(upper, c), upper)
        lower = np.where(round_success, lower, np.maximum(lower, c))
        bracketed = upper < _C_LIMIT
        c = np.where(bracketed, 0.5 * (lower + upper), c * 10.0)

    found = np.isfinite(best_l2)
    x_adv = np.where(found[:, None], best_adv, x)
    adv_pred = model.predict(x_adv)
    dist = distortion(x, x_adv)
    dist[~found] = np.inf  # explicit sentinel: no success at any constant
    linf = np.abs(x_adv - x).max(axis=1)
    return AttackResult(x_adv, clean_pred, adv_pred, found, linf, dist)


def distortion(x, x_star) -> np.ndarray | float:
    """Root-mean-square pixel difference after rescaling to the 0..255 range."""
    x = np.asarray(x, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    if x.shape != x_star.shape:
        raise ValueError("inputs must have identical shapes")
    diff = 255.0 * (x_star - x)
    if diff.ndim == 1:
        return float(np.sqrt(np.mean(diff * diff)))
    return np.sqrt(np.mean(diff * diff, axis=1))


def run_attack(model, x, labels, config: AttackConfig) -> AttackResult:
    """Dispatch a configured attack.

    The saliency attack is targeted; the evaluation convention targets the
    next class index, (label + 1) mod L.
    """
    if config.kind == "fgsm":
        return fgsm(model, x, labels, config.epsilon)
    if config.kind == "bim":
        return bim(model, x, labels, config.epsilon, config.steps)
    if config.kind == "ilcm":
        return ilcm(model, x, config.epsilon, config.steps)
    if config.kind == "jsma":
        num_classes = model.scores(np.asarray(x)[:1]).shape[1]
        target = (np.asarray(labels, dtype=int) + 1) % num_classes
        return jsma(model, x, target, config.epsilon, config.pixel_budget)
    return cw_l2(model, x, labels, config.kappa, config.search_steps, config.max_iters)


def export_attack_csv(path, result: AttackResult, labels) -> None:
    """One row per example: id, label, predictions, success, L-inf, distortion."""
    labels = np.asarray(labels, dtype=int)
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["example_id", "clean_label", "clean_prediction",
                         "adversarial_prediction", "success", "linf", "distortion"])
        for i in range(result.x_adv.shape[0]):
            writer.writerow([
                i, int(labels[i]), int(result.clean_pred[i]), int(result.adv_pred[i]),
                int(result.success[i]), f"{result.linf[i]:.17g}", f"{result.distortion[i]:.17g}",
            ])
