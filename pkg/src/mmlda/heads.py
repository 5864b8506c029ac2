"""Classifier heads and the trunk-plus-head models built from them.

Two heads share one interface: ``scores(z)`` returns the pre-softmax score
matrix, ``loss_grads(z, labels)`` the mean cross-entropy with its gradients,
and ``backprop_scores(z, g)`` pulls an arbitrary score-space gradient back to
latent space.  The softmax head is trainable; the max-Mahalanobis head keeps
its prototype means and priors fixed.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .means import MeanSet, verify_opt_condition
from .net import Network, DenseLayer, backward, forward, forward_cached
from .rng import make_rng

__all__ = [
    "SoftmaxHead",
    "MMLDAHead",
    "Classifier",
    "softmax",
    "log_softmax",
    "cross_entropy_from_scores",
    "head_loss",
    "predict",
    "save_classifier",
    "load_classifier",
    "classifier_digest",
]

# stands in for log(0) when a class prior is exactly zero; large enough that
# the class never wins an argmax, small enough to stay finite in float64
ZERO_PRIOR_SCORE = -1e30


def softmax(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy_from_scores(scores: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the scores."""
    labels = np.asarray(labels)
    n, k = scores.shape
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= k:
        raise ValueError("labels must be a vector of class indices for the batch")
    logp = log_softmax(scores)
    rows = np.arange(n)
    loss = float(-logp[rows, labels].mean())
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad


class SoftmaxHead:
    """Trainable linear layer feeding a softmax."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = np.asarray(weight, dtype=np.float64)  # (L, p)
        self.bias = np.asarray(bias, dtype=np.float64)      # (L,)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("weight must be (classes, latent_dim) with matching bias")

    kind = "softmax"

    @classmethod
    def init(cls, num_classes: int, latent_dim: int, seed: int) -> "SoftmaxHead":
        rng = make_rng(seed, 202)
        limit = np.sqrt(6.0 / (num_classes + latent_dim))
        weight = (2.0 * rng.random((num_classes, latent_dim)) - 1.0) * limit
        return cls(weight, np.zeros(num_classes))

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    def scores(self, z: np.ndarray) -> np.ndarray:
        return z @ self.weight.T + self.bias

    def backprop_scores(self, z: np.ndarray, g: np.ndarray) -> np.ndarray:
        return g @ self.weight

    def params(self) -> list[np.ndarray]:
        return [self.weight, self.bias]

    def loss_grads(self, z: np.ndarray, labels: np.ndarray):
        loss, g = cross_entropy_from_scores(self.scores(z), labels)
        dz = g @ self.weight
        return loss, dz, [g.T @ z, g.sum(axis=0)]

    def copy(self) -> "SoftmaxHead":
        return SoftmaxHead(self.weight.copy(), self.bias.copy())


class MMLDAHead:
    """Fixed-prototype head: score_k(z) = log prior_k - ||z - mean_k||^2 / 2.

    The Gaussian normalisers cancel inside the softmax, so these scores give
    exactly the posterior of the latent Gaussian-mixture model.  Means and
    priors are hyperparameters, never trained.
    """

    def __init__(self, mean_set: MeanSet, priors: np.ndarray | None = None):
        if not verify_opt_condition(mean_set, tol=1e-6).passed:
            raise ValueError("mean_set does not satisfy the optimality condition")
        k = mean_set.num_classes
        if priors is None:
            priors = np.full(k, 1.0 / k)
        priors = np.asarray(priors, dtype=np.float64)
        if priors.shape != (k,) or (priors < 0).any():
            raise ValueError("priors must be nonnegative with one entry per class")
        if abs(priors.sum() - 1.0) > 1e-12:
            raise ValueError("priors must sum to one")
        self.mean_set = mean_set
        self.priors = priors
        with np.errstate(divide="ignore"):
            log_priors = np.log(priors)
        self.log_priors = np.where(np.isfinite(log_priors), log_priors, ZERO_PRIOR_SCORE)

    kind = "mmlda"

    @property
    def num_classes(self) -> int:
        return self.mean_set.num_classes

    def scores(self, z: np.ndarray) -> np.ndarray:
        means = self.mean_set.means
        sq = (z * z).sum(axis=1, keepdims=True) - 2.0 * z @ means.T \
            + np.einsum("ij,ij->i", means, means)
        return self.log_priors - 0.5 * sq

    def backprop_scores(self, z: np.ndarray, g: np.ndarray) -> np.ndarray:
        # d score_k / dz = mean_k - z
        return g @ self.mean_set.means - g.sum(axis=1, keepdims=True) * z

    def params(self) -> list[np.ndarray]:
        return []

    def loss_grads(self, z: np.ndarray, labels: np.ndarray):
        loss, g = cross_entropy_from_scores(self.scores(z), labels)
        return loss, self.backprop_scores(z, g), []

    def copy(self) -> "MMLDAHead":
        return MMLDAHead(self.mean_set, self.priors.copy())


def head_loss(head, z: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy of a head on latent features, with its z-gradient."""
    loss, dz, _ = head.loss_grads(np.asarray(z, dtype=np.float64), labels)
    return loss, dz


def predict(head, z: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest index."""
    return head.scores(np.asarray(z, dtype=np.float64)).argmax(axis=1)


@dataclass
class Classifier:
    """A transformation network composed with a classifier head."""

    net: Network
    head: SoftmaxHead | MMLDAHead

    def features(self, x: np.ndarray) -> np.ndarray:
        return forward(self.net, x)

    def scores(self, x: np.ndarray) -> np.ndarray:
        return self.head.scores(self.features(x))

    def probs(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.scores(x))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.scores(x).argmax(axis=1)

    def loss(self, x: np.ndarray, labels: np.ndarray) -> float:
        return self.head.loss_grads(self.features(x), labels)[0]

    def loss_and_grads(self, x: np.ndarray, labels: np.ndarray):
        """Returns (loss, input_grad, net_grads, head_grads)."""
        z, cache = forward_cached(self.net, x)
        loss, dz, head_grads = self.head.loss_grads(z, labels)
        net_grads, input_grad = backward(self.net, dz, cache)
        return loss, input_grad, net_grads, head_grads

    def input_grad(self, x: np.ndarray, labels: np.ndarray) -> np.ndarray:
        return self.loss_and_grads(x, labels)[1]

    def score_mix_grad(self, x: np.ndarray, coeff: np.ndarray) -> np.ndarray:
        """Input gradient of sum_k coeff[:, k] * score_k per example."""
        z, cache = forward_cached(self.net, x)
        dz = self.head.backprop_scores(z, np.asarray(coeff, dtype=np.float64))
        _, input_grad = backward(self.net, dz, cache)
        return input_grad

    def prob_jacobian(self, x: np.ndarray) -> np.ndarray:
        """Jacobian of output probabilities w.r.t. inputs, shape (n, L, d)."""
        x = np.asarray(x, dtype=np.float64)
        z, cache = forward_cached(self.net, x)
        p = softmax(self.head.scores(z))
        n, k = p.shape
        jac = np.empty((n, k, x.shape[1]))
        for j in range(k):
            # row j of the softmax jacobian: p_j (delta_jk - p_k)
            coeff = -p[:, j:j + 1] * p
            coeff[:, j] += p[:, j]
            dz = self.head.backprop_scores(z, coeff)
            _, jac[:, j, :] = backward(self.net, dz, cache)
        return jac

    def train_params(self) -> list[np.ndarray]:
        return self.net.params() + self.head.params()

    def copy(self) -> "Classifier":
        return Classifier(self.net.copy(), self.head.copy())


def _classifier_doc(clf: Classifier) -> dict:
    net_doc = {
        "dims": clf.net.layer_dims,
        "activations": [layer.activation for layer in clf.net.layers],
        "weights": [layer.weight.tolist() for layer in clf.net.layers],
        "biases": [layer.bias.tolist() for layer in clf.net.layers],
    }
    head = clf.head
    if head.kind == "softmax":
        head_doc = {"kind": "softmax", "weight": head.weight.tolist(), "bias": head.bias.tolist()}
    else:
        head_doc = {
            "kind": "mmlda",
            "sq_norm": head.mean_set.sq_norm,
            "means": head.mean_set.means.tolist(),
            "priors": head.priors.tolist(),
        }
    return {"format_version": 1, "network": net_doc, "head": head_doc}


def save_classifier(path, clf: Classifier) -> None:
    """Versioned checkpoint with full-precision parameters.

    JSON floats round-trip exactly, and keys are sorted, so identical models
    always produce identical bytes.
    """
    with open(path, "w", encoding="ascii") as fh:
        json.dump(_classifier_doc(clf), fh, sort_keys=True)


def load_classifier(path) -> Classifier:
    with open(path, "r", encoding="ascii") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != 1:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    net_doc = doc["network"]
    layers = [
        DenseLayer(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64), act)
        for w, b, act in zip(net_doc["weights"], net_doc["biases"], net_doc["activations"])
    ]
    net = Network(layers)
    head_doc = doc["head"]
    if head_doc["kind"] == "softmax":
        head = SoftmaxHead(np.asarray(head_doc["weight"]), np.asarray(head_doc["bias"]))
    elif head_doc["kind"] == "mmlda":
        mean_set = MeanSet(np.asarray(head_doc["means"]), head_doc["sq_norm"])
        head = MMLDAHead(mean_set, np.asarray(head_doc["priors"]))
    else:
        raise ValueError(f"unknown head kind {head_doc['kind']!r}")
    return Classifier(net, head)


def classifier_digest(clf: Classifier) -> str:
    """Stable content hash of a model (independent of any file on disk)."""
    payload = json.dumps(_classifier_doc(clf), sort_keys=True).encode("ascii")
    return hashlib.sha256(payload).hexdigest()
