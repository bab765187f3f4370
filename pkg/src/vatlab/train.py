"""Training loops: regularized supervised steps, the two-minibatch
semi-supervised protocol, evaluation, and hyperparameter grid search.

The minimized objective is the mean NLL on the labeled batch plus
weight * mean KL sensitivity (or the chosen baseline penalty) on the
regularizer batch. Both terms average over their own minibatch.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines, divergence, nn, vat
from .baselines import Regularizer
from .data import Dataset
from .errors import ConfigError, DataError
from .numerics import Tensor, make_rng
from .optim import Adam, DecaySchedule, MomentumSgd
from .vat import VatConfig

# Smoothness estimates in evaluate() use the fixed probe settings below
# regardless of the training-time configuration.
EVAL_VAT = VatConfig(epsilon=0.5, power_iterations=5)


@dataclass
class TrainConfig:
    input_dim: int
    hidden_sizes: list[int]
    n_classes: int
    regularizer: Regularizer
    optimizer: str = "sgd"                    # "sgd" or "adam"
    schedule: DecaySchedule = field(default_factory=lambda: DecaySchedule(1.0, 0.995, 1))
    momentum: float = 0.9
    batch_size: int = 0                       # 0 = full batch
    reg_batch_size: int = 0                   # 0 = reuse the likelihood batch
    total_updates: int = 1000
    eval_every: int = 0                       # 0 = final evaluation only
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.total_updates < 1:
            raise ConfigError("total_updates must be >= 1")
        if self.batch_size < 0 or self.reg_batch_size < 0:
            raise ConfigError("batch sizes must be >= 0")

    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_sizes, self.n_classes]


@dataclass
class TrainRecord:
    """Per-evaluation-point metrics collected during one training run."""
    rows: list[dict] = field(default_factory=list)

    FIELDS = ("update", "train_err", "test_err", "train_lds", "test_lds", "nll", "reg")

    def append(self, **row) -> None:
        for err_key in ("train_err", "test_err"):
            if err_key in row and row[err_key] is not None:
                if not 0.0 <= row[err_key] <= 1.0:
                    raise DataError(f"{err_key} outside [0, 1]")
        self.rows.append(row)

    @property
    def final(self) -> dict:
        return self.rows[-1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.FIELDS)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: row.get(k) for k in self.FIELDS})


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return MomentumSgd(cfg.momentum, cfg.schedule)
    return Adam(cfg.schedule)


def supervised_step(net, x: Tensor, y: np.ndarray, reg: Regularizer,
                    optimizer, rng: np.random.Generator) -> dict:
    """One update on a fully labeled batch; returns the loss components."""
    kind = reg.kind
    x_lik = x
    if kind == "dropout":
        x_lik = nn.apply_dropout(x, reg.keep_prob, rng)
    replace_clean = kind in ("adversarial_linf", "adversarial_l2") and reg.adv_mode == "replace"

    if replace_clean:
        nll_value, grads = 0.0, nn.zero_gradients(net, x.shape[0])
    else:
        logits, cache = nn.forward(net, x_lik)
        nll_value, d_logits = nn.nll_loss(logits, y)
        grads = nn.backward(net, cache, d_logits)

    reg_value = 0.0
    if reg.weight > 0:
        if kind == "vat":
            base = divergence.base_distribution(net, x)
            r = vat.gen_vap(net, x, reg.vat, rng, base=base)
            reg_value, reg_grads = vat.vat_backward(net, x, r, base=base)
            grads.add_scaled(reg_grads, reg.weight)
        elif kind == "random_perturbation":
            base = divergence.base_distribution(net, x)
            r = baselines.random_perturbation(x, reg.epsilon, rng)
            reg_value, reg_grads = vat.vat_backward(net, x, r, base=base)
            grads.add_scaled(reg_grads, reg.weight)
        elif kind in ("adversarial_linf", "adversarial_l2"):
            norm = "linf" if kind == "adversarial_linf" else "l2"
            r = baselines.adv_perturbation(net, x, y, reg.epsilon, norm)
            reg_value, reg_grads = baselines.adv_loss_term(net, x, y, r)
            grads.add_scaled(reg_grads, reg.weight)
        elif kind == "l2_decay":
            reg_value, penalty_grads = baselines.l2_penalty(net, reg.weight)
            for g, pg in zip(grads.parameter_grads(), penalty_grads):
                g += pg

    optimizer.step(net.parameters(), grads.parameter_grads())
    return {"nll": nll_value, "reg": reg_value}


def semisup_step(net, x_labeled: Tensor, y_labeled: np.ndarray, x_reg: Tensor,
                 reg: Regularizer, optimizer, rng: np.random.Generator) -> dict:
    """One update with separate likelihood and regularizer minibatches.

    The regularizer batch may contain unlabeled rows, so label-requiring
    methods are rejected here.
    """
    if reg.needs_labels:
        raise ConfigError(f"{reg.kind} needs labels and cannot regularize unlabeled data")
    logits, cache = nn.forward(net, x_labeled)
    nll_value, d_logits = nn.nll_loss(logits, y_labeled)
    grads = nn.backward(net, cache, d_logits)

    reg_value = 0.0
    if reg.weight > 0 and reg.kind in ("vat", "random_perturbation"):
        base = divergence.base_distribution(net, x_reg)
        if reg.kind == "vat":
            r = vat.gen_vap(net, x_reg, reg.vat, rng, base=base)
        else:
            r = baselines.random_perturbation(x_reg, reg.epsilon, rng)
        reg_value, reg_grads = vat.vat_backward(net, x_reg, r, base=base)
        grads.add_scaled(reg_grads, reg.weight)

    optimizer.step(net.parameters(), grads.parameter_grads())
    return {"nll": nll_value, "reg": reg_value}


def evaluate(net, x: Tensor, y: np.ndarray | None,
             eval_cfg: VatConfig = EVAL_VAT, rng: np.random.Generator | None = None,
             with_lds: bool = True) -> dict:
    """Error rate (argmax mismatches) and mean smoothness estimate on a split."""
    out = {}
    proba = nn.predict_proba(net, x)
    if y is not None:
        out["error"] = float((proba.argmax(axis=1) != y).mean())
    if with_lds:
        rng = rng if rng is not None else make_rng(0)
        result = vat.generate(net, x, eval_cfg, rng)
        out["mean_lds"] = float(result.lds_estimate.mean())
    return out


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless minibatch index stream; full-batch when batch_size is 0 or >= n."""
    if batch_size == 0 or batch_size >= n:
        while True:
            yield np.arange(n)
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield order[start:start + batch_size]


def train_supervised(cfg: TrainConfig, train_x: Tensor, train_y: np.ndarray,
                     test_x: Tensor | None = None, test_y: np.ndarray | None = None,
                     net=None, record_lds: bool = False) -> tuple:
    """Train on labeled data only; returns (net, TrainRecord)."""
    rng = make_rng(cfg.seed)
    if net is None:
        net = nn.init_mlp(cfg.layer_sizes(), rng)
    optimizer = make_optimizer(cfg)
    record = TrainRecord()
    batches = _batches(train_x.shape[0], cfg.batch_size, rng)
    for update in range(1, cfg.total_updates + 1):
        idx = next(batches)
        losses = supervised_step(net, train_x[idx], train_y[idx], cfg.regularizer,
                                 optimizer, rng)
        if (cfg.eval_every and update % cfg.eval_every == 0) or update == cfg.total_updates:
            record.append(update=update,
                          **_eval_row(net, train_x, train_y, test_x, test_y,
                                      record_lds, rng), **losses)
    return net, record


def train_semisup(cfg: TrainConfig, dataset: Dataset,
                  net=None, record_lds: bool = False) -> tuple:
    """Two-minibatch semi-supervised training over a tagged dataset.

    The likelihood batch comes from labeled rows; the regularizer batch is
    drawn uniformly from the union of labeled and unlabeled rows.
    """
    rng = make_rng(cfg.seed)
    lab_x, lab_y = dataset.subset("labeled")
    pool_mask = np.isin(dataset.split, ("labeled", "unlabeled"))
    pool_x = dataset.inputs[pool_mask]
    test_x, test_y = (dataset.subset("test") if "test" in dataset.split
                      else (None, None))
    if net is None:
        net = nn.init_mlp(cfg.layer_sizes(), rng)
    optimizer = make_optimizer(cfg)
    record = TrainRecord()
    lab_batches = _batches(lab_x.shape[0], cfg.batch_size, rng)
    reg_size = cfg.reg_batch_size or cfg.batch_size
    reg_batches = _batches(pool_x.shape[0], reg_size, rng)
    for update in range(1, cfg.total_updates + 1):
        li = next(lab_batches)
        ri = next(reg_batches)
        losses = semisup_step(net, lab_x[li], lab_y[li], pool_x[ri],
                              cfg.regularizer, optimizer, rng)
        if (cfg.eval_every and update % cfg.eval_every == 0) or update == cfg.total_updates:
            record.append(update=update,
                          **_eval_row(net, lab_x, lab_y, test_x, test_y,
                                      record_lds, rng), **losses)
    return net, record


def _eval_row(net, train_x, train_y, test_x, test_y, record_lds, rng) -> dict:
    row = {}
    tr = evaluate(net, train_x, train_y, rng=rng, with_lds=record_lds)
    row["train_err"] = tr["error"]
    row["train_lds"] = tr.get("mean_lds")
    if test_x is not None:
        te = evaluate(net, test_x, test_y, rng=rng, with_lds=record_lds)
        row["test_err"] = te["error"]
        row["test_lds"] = te.get("mean_lds")
    return row


@dataclass
class GridResult:
    best_config: TrainConfig
    best_validation_error: float
    table: list[dict]            # one row per config: mean/sd validation error

    def to_json(self, path) -> None:
        payload = {
            "best": _config_summary(self.best_config),
            "best_validation_error": self.best_validation_error,
            "table": self.table,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)


def _config_summary(cfg: TrainConfig) -> dict:
    reg = cfg.regularizer
    summary = {"regularizer": reg.kind, "weight": reg.weight}
    if reg.kind == "vat":
        summary.update(epsilon=reg.vat.epsilon, xi=reg.vat.xi,
                       power_iterations=reg.vat.power_iterations)
    elif reg.kind in ("random_perturbation", "adversarial_linf", "adversarial_l2"):
        summary["epsilon"] = reg.epsilon
    elif reg.kind == "dropout":
        summary["keep_prob"] = reg.keep_prob
    summary.update(optimizer=cfg.optimizer, total_updates=cfg.total_updates)
    return summary


def grid_search(configs: list[TrainConfig], make_data, repetitions: int,
                base_seed: int = 0) -> GridResult:
    """Pick the config with the lowest mean validation error.

    make_data(seed) must return (train_x, train_y, val_x, val_y). Each config
    is trained `repetitions` times on freshly drawn data/seeds.
    """
    if not configs:
        raise ConfigError("empty hyperparameter grid")
    table = []
    best = None
    for ci, cfg in enumerate(configs):
        errors = []
        for rep in range(repetitions):
            seed = base_seed + rep
            train_x, train_y, val_x, val_y = make_data(seed)
            run_cfg = replace(cfg, seed=seed * 1000 + ci)
            net, _ = train_supervised(run_cfg, train_x, train_y)
            errors.append(evaluate(net, val_x, val_y, with_lds=False)["error"])
        mean = float(np.mean(errors))
        sd = float(np.std(errors))
        table.append({"config": _config_summary(cfg), "mean_error": mean, "sd_error": sd})
        if best is None or mean < best[0]:
            best = (mean, cfg)
    return GridResult(best_config=best[1], best_validation_error=best[0], table=table)
