"""Virtual-adversarial perturbation search and the smoothness penalty gradient.

The worst-case perturbation inside an epsilon ball is approximated by power
iteration on the (never materialized) Hessian of the KL sensitivity, with
each Hessian-vector product replaced by a finite difference: the sensitivity
gradient evaluated at r = xi * d, divided by xi. Each iteration therefore
costs one forward and one backward pass.

The penalty gradient treats both the perturbation and the base distribution
as constants and backpropagates only through the perturbed forward pass.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import divergence, nn
from .errors import ConfigError
from .numerics import (Tensor, as_tensor, log_softmax, normalize_rows,
                       sample_unit_vector, softmax)

log = logging.getLogger(__name__)

_DEGENERATE_TOL = 1e-12


@dataclass
class VatConfig:
    epsilon: float          # perturbation radius, input-space L2 units
    xi: float = 1e-6        # finite-difference probe scale
    power_iterations: int = 1
    weight: float = 1.0     # penalty weight in the training objective

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.xi <= 0:
            raise ConfigError(f"xi must be > 0, got {self.xi}")
        if self.power_iterations < 1:
            raise ConfigError(f"power_iterations must be >= 1, got {self.power_iterations}")
        if self.weight < 0:
            raise ConfigError(f"weight must be >= 0, got {self.weight}")


@dataclass
class VapResult:
    r_vadv: Tensor          # (batch, I), each row of norm epsilon
    lds_estimate: Tensor    # (batch,), always <= 0
    iterations_used: int


def gen_vap(model, x: Tensor, cfg: VatConfig, rng: np.random.Generator,
            base=None) -> Tensor:
    """Approximate per-row worst-case perturbations of norm cfg.epsilon.

    Starts from a fresh random unit direction per row and runs
    cfg.power_iterations rounds of normalized finite-difference
    Hessian-vector products. Rows where the gradient collapses keep their
    previous direction (flat model; any direction is a valid maximizer).
    """
    x = as_tensor(x)
    batch, dim = x.shape
    if base is None:
        base = divergence.base_distribution(model, x)
    d = np.stack([sample_unit_vector(rng, dim) for _ in range(batch)])
    for _ in range(cfg.power_iterations):
        grad = divergence.grad_r_delta_kl(model, x, cfg.xi * d, base)
        norms = np.linalg.norm(grad, axis=1)
        if np.any(norms < _DEGENERATE_TOL):
            log.debug("gen_vap: %d degenerate rows keep their previous direction",
                      int((norms < _DEGENERATE_TOL).sum()))
        d = normalize_rows(grad, fallback=d, tol=_DEGENERATE_TOL)
    return cfg.epsilon * d


def lds_estimate(model, x: Tensor, r_vadv: Tensor, base=None) -> Tensor:
    """Per-row negative KL sensitivity at the supplied perturbation."""
    if base is None:
        base = divergence.base_distribution(model, x)
    return -divergence.delta_kl(model, x, r_vadv, base)


def generate(model, x: Tensor, cfg: VatConfig, rng: np.random.Generator,
             base=None) -> VapResult:
    """gen_vap plus the smoothness estimate at the resulting perturbation."""
    if base is None:
        base = divergence.base_distribution(model, x)
    r = gen_vap(model, x, cfg, rng, base=base)
    return VapResult(r_vadv=r, lds_estimate=lds_estimate(model, x, r, base=base),
                     iterations_used=cfg.power_iterations)


def vat_backward(net, x: Tensor, r_vadv: Tensor, base=None) -> tuple[float, nn.GradientBundle]:
    """Penalty value and parameter gradient of the mean KL sensitivity.

    Gradient of mean_rows KL[base || p(. | x + r_vadv, theta)] with respect to
    theta, with r_vadv and base held constant: one forward/backward pair
    through the perturbed input only.
    """
    if base is None:
        base = divergence.base_distribution(net, x)
    logits, cache = nn.forward(net, x + r_vadv)
    penalty = float(divergence.kl_categorical(base, log_softmax(logits)).mean())
    d_logits = (softmax(logits) - base) / x.shape[0]
    return penalty, nn.backward(net, cache, d_logits)


def vat_step_cost_audit(net, x_reg: Tensor, cfg: VatConfig,
                        rng: np.random.Generator) -> dict[str, int]:
    """Run one regularizer pass under instrumentation and report pass counts.

    With power_iterations = 1 the path costs exactly 3 forward and 2 backward
    propagations: one forward for the base distribution, one forward/backward
    pair inside the perturbation search, one pair for the penalty gradient.
    A zero penalty weight short-circuits to no propagations at all.
    """
    nn.reset_propagation_counts()
    if cfg.weight > 0:
        base = divergence.base_distribution(net, x_reg)
        r = gen_vap(net, x_reg, cfg, rng, base=base)
        vat_backward(net, x_reg, r, base=base)
    fwd, bwd = nn.propagation_counts()
    return {"forward": fwd, "backward": bwd, "power_iterations": cfg.power_iterations}
