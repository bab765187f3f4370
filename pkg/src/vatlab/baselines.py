"""Comparison regularizers: adversarial training, random perturbation, L2 decay.

Adversarial perturbations use the one-step linearization of the negative
log-likelihood (fast-gradient method), with either an L-infinity or an L2
norm budget. Random perturbation training reuses the virtual-adversarial
machinery but replaces the searched direction with a uniform one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError
from .numerics import Tensor, as_tensor, normalize_rows, sample_unit_vector
from .vat import VatConfig

_ZERO_TOL = 1e-12

REGULARIZER_KINDS = (
    "none", "l2_decay", "dropout", "random_perturbation",
    "adversarial_linf", "adversarial_l2", "vat",
)


@dataclass
class Regularizer:
    """Exactly one regularization method, with its hyperparameters."""
    kind: str
    weight: float = 1.0           # lambda multiplying the penalty term
    epsilon: float = 0.0          # perturbation radius (perturbation methods)
    keep_prob: float = 1.0        # input keep probability (dropout)
    adv_mode: str = "augment"     # "augment" keeps the clean NLL, "replace" drops it
    vat: VatConfig | None = None

    def __post_init__(self):
        if self.kind not in REGULARIZER_KINDS:
            raise ConfigError(f"unknown regularizer kind {self.kind!r}")
        if self.adv_mode not in ("augment", "replace"):
            raise ConfigError(f"adv_mode must be augment or replace, got {self.adv_mode!r}")
        if self.kind == "vat" and self.vat is None:
            raise ConfigError("vat regularizer needs a VatConfig")
        if self.kind in ("random_perturbation", "adversarial_linf", "adversarial_l2") \
                and self.epsilon <= 0:
            raise ConfigError(f"{self.kind} needs epsilon > 0")
        if self.kind == "dropout" and not 0.0 < self.keep_prob <= 1.0:
            raise ConfigError("dropout keep_prob must be in (0, 1]")

    @property
    def needs_labels(self) -> bool:
        """True for methods that cannot run on unlabeled data."""
        return self.kind in ("dropout", "adversarial_linf", "adversarial_l2")


def adv_perturbation(net, x: Tensor, labels: np.ndarray, epsilon: float,
                     norm: str = "l2") -> Tensor:
    """One-step adversarial perturbation of the NLL at (x, labels).

    linf: epsilon * sign(grad); l2: epsilon * grad / ||grad|| per row.
    Rows with a vanishing gradient get a zero perturbation.
    """
    if norm not in ("linf", "l2"):
        raise ConfigError(f"norm must be linf or l2, got {norm!r}")
    logits, cache = nn.forward(net, x)
    _, d_logits = nn.nll_loss(logits, labels)
    g = nn.backward(net, cache, d_logits).d_input
    if norm == "linf":
        return epsilon * np.sign(g)
    return epsilon * normalize_rows(g, tol=_ZERO_TOL)


def random_perturbation(x: Tensor, epsilon: float, rng: np.random.Generator) -> Tensor:
    """Per-row epsilon-sized directions sampled uniformly from the unit sphere."""
    x = as_tensor(x)
    d = np.stack([sample_unit_vector(rng, x.shape[1]) for _ in range(x.shape[0])])
    return epsilon * d


def l2_penalty(net, lam: float) -> tuple[float, list[Tensor]]:
    """(lam/2) * sum of squared weights and its gradient lam * W per layer.

    Biases are excluded. The gradient list matches net.parameters() order,
    with zero entries for the biases.
    """
    if lam < 0:
        raise ConfigError("l2 weight must be >= 0")
    penalty = 0.0
    grads = []
    for layer in net.layers:
        penalty += 0.5 * lam * float((layer.weights ** 2).sum())
        grads.append(lam * layer.weights)
        grads.append(np.zeros_like(layer.biases))
    return penalty, grads


def adv_loss_term(net, x: Tensor, labels: np.ndarray,
                  r_adv: Tensor) -> tuple[float, nn.GradientBundle]:
    """NLL at x + r_adv with the perturbation held constant."""
    logits, cache = nn.forward(net, x + r_adv)
    loss, d_logits = nn.nll_loss(logits, labels)
    return loss, nn.backward(net, cache, d_logits)
