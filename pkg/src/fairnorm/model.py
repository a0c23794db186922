"""Two-layer GCN with optional group-wise normalization and a linear logit head.

Each GCN layer computes ``W H Q``, normalizes it (per sensitive group, over
the whole graph, or not at all) and applies the activation. The order of
normalization and activation is configurable; the default normalizes first.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import fairness
from .graph import AggregationOperator, Graph
from .layers import (ACTIVATIONS, DenseParam, ForwardTape, activation_backward,
                     activation_forward, gcn_layer_backward, gcn_layer_forward, glorot_init,
                     linear_backward, linear_forward, sigmoid)
from .mnorm import MNormParams, MNormStats, mnorm_backward, mnorm_forward, mnorm_init

NORM_MODES = ("none", "graphnorm_single", "mnorm_group")
FAIRNESS_MODES = ("none", "fairnorm", "covariance_baseline")
LOGIT_CLAMP = 30.0
N_LAYERS = 2


@dataclass
class TrainConfig:
    kappa: float = 100.0
    tau: float = 1e-7
    cov_weight: float = 1.0
    lr: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 1000
    hidden_dim: int = 64
    activation: str = "relu"
    norm_mode: str = "mnorm_group"
    fairness_mode: str = "none"
    norm_position: str = "pre"  # "post" normalizes after the activation
    seed: int = 0
    split_fractions: tuple = (0.5, 0.25, 0.25)
    eps: float = 1e-5
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.split_fractions = tuple(float(f) for f in self.split_fractions)
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.norm_mode not in NORM_MODES:
            raise ValueError(f"norm_mode must be one of {NORM_MODES}")
        if self.fairness_mode not in FAIRNESS_MODES:
            raise ValueError(f"fairness_mode must be one of {FAIRNESS_MODES}")
        if self.fairness_mode == "fairnorm" and self.norm_mode != "mnorm_group":
            raise ValueError("fairness_mode 'fairnorm' requires norm_mode 'mnorm_group'")
        if self.norm_position not in ("pre", "post"):
            raise ValueError("norm_position must be 'pre' or 'post'")
        if min(self.kappa, self.tau, self.cov_weight, self.weight_decay) < 0:
            raise ValueError("regularization weights must be nonnegative")
        if self.lr <= 0 or self.hidden_dim < 1 or self.epochs < 0:
            raise ValueError("lr and hidden_dim must be positive, epochs nonnegative")


@dataclass
class ModelState:
    weights: list  # [W1 (hidden x F), W2 (hidden x hidden)]
    head: DenseParam  # 1 x hidden
    norms: list  # one MNormParams per GCN layer, or None entries
    step: int = 0

    def decayed_params(self) -> list[DenseParam]:
        return [*self.weights, self.head]

    def norm_params(self) -> list[DenseParam]:
        return [p for nm in self.norms if nm is not None for p in nm.params().values()]

    def all_params(self) -> list[DenseParam]:
        return self.decayed_params() + self.norm_params()

    def zero_grad(self):
        for p in self.all_params():
            p.zero_grad()

    def clone(self) -> "ModelState":
        return copy.deepcopy(self)

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self.all_params())


def init_model(n_features: int, config: TrainConfig) -> ModelState:
    rng = np.random.default_rng(config.seed)
    h = config.hidden_dim
    weights = [DenseParam(glorot_init((h, n_features), rng)),
               DenseParam(glorot_init((h, h), rng))]
    head = DenseParam(glorot_init((1, h), rng))
    n_groups = {"none": 0, "graphnorm_single": 1, "mnorm_group": 2}[config.norm_mode]
    norms = [mnorm_init(h, config.eps, n_groups) if n_groups else None for _ in range(N_LAYERS)]
    return ModelState(weights=weights, head=head, norms=norms)


def norm_groups(config: TrainConfig, op: AggregationOperator):
    if config.norm_mode == "mnorm_group":
        return op.groups
    if config.norm_mode == "graphnorm_single":
        return (np.arange(op.n_nodes),)
    return None


@dataclass
class NormRecord:
    """What the regularizers need from one normalization layer."""
    layer: int
    r: np.ndarray  # normalization input
    stats: MNormStats
    groups: tuple
    output: np.ndarray


@dataclass
class ForwardPass:
    logits: np.ndarray
    norm_records: list
    tape: ForwardTape = field(repr=False)


def forward_full(model: ModelState, graph: Graph, op: AggregationOperator,
                 config: TrainConfig) -> ForwardPass:
    tape = ForwardTape()
    groups = norm_groups(config, op)
    records = []
    h = graph.features
    for k in range(N_LAYERS):
        z, cache = gcn_layer_forward(model.weights[k], h, op)
        tape.push(f"gcn{k}", cache)
        steps = ("norm", "act") if config.norm_position == "pre" else ("act", "norm")
        for s in steps:
            if s == "act":
                z, cache = activation_forward(config.activation, z)
                tape.push(f"act{k}", cache)
            elif groups is not None:
                out, stats, cache = mnorm_forward(model.norms[k], z, groups)
                records.append(NormRecord(layer=k, r=z, stats=stats, groups=groups, output=out))
                tape.push(f"norm{k}", cache)
                z = out
        h = z
    logits, cache = linear_forward(model.head, h)
    tape.push("head", cache)
    return ForwardPass(logits=logits[0], norm_records=records, tape=tape)


def _bce_terms(logits, labels, mask):
    z = np.clip(logits[mask], -LOGIT_CLAMP, LOGIT_CLAMP)
    y = labels[mask].astype(np.float64)
    return z, y


def classification_loss(logits, labels, mask) -> float:
    """Mean binary cross-entropy of clamped logits over ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty training mask")
    z, y = _bce_terms(logits, labels, mask)
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def predict_proba(logits) -> np.ndarray:
    return sigmoid(np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP))


def loss_total(fp: ForwardPass, graph: Graph, model: ModelState, config: TrainConfig):
    """Objective and its parts: ``L_c + kappa * sum L_mu + tau * sum L_delta`` (+ covariance).

    ``loss_mu`` / ``loss_delta`` are always reported for two-group norms, but
    only enter the total under ``fairness_mode == "fairnorm"``.
    """
    mask = graph.train_mask
    l_c = classification_loss(fp.logits, graph.labels, mask)
    l_mu = l_delta = 0.0
    for rec in fp.norm_records:
        if len(rec.groups) == 2:
            params = model.norms[rec.layer]
            l_mu += fairness.loss_mu(params, rec.stats)
            l_delta += fairness.loss_delta(params, rec.stats, rec.r, rec.groups)
    l_cov = fairness.loss_covariance_baseline(predict_proba(fp.logits), graph.sensitive, mask)
    total = l_c
    if config.fairness_mode == "fairnorm":
        total = total + config.kappa * l_mu + config.tau * l_delta
    elif config.fairness_mode == "covariance_baseline":
        total = total + config.cov_weight * l_cov
    parts = {"loss_c": l_c, "loss_mu": l_mu, "loss_delta": l_delta, "loss_cov": l_cov}
    return float(total), parts


def backward(model: ModelState, fp: ForwardPass, graph: Graph, config: TrainConfig) -> None:
    """Populate ``.grad`` of every parameter with d(loss_total)/d(param).

    Consumes the tape.
    """
    model.zero_grad()
    mask = graph.train_mask
    logits = fp.logits
    inside = np.abs(logits) < LOGIT_CLAMP
    probs = predict_proba(logits)
    d_logits = np.zeros_like(logits)
    y = graph.labels.astype(np.float64)
    d_logits[mask] = (probs[mask] - y[mask]) / mask.sum()
    if config.fairness_mode == "covariance_baseline":
        d_p = config.cov_weight * fairness.loss_covariance_backward(probs, graph.sensitive, mask)
        d_logits += d_p * probs * (1.0 - probs)
    d_logits *= inside

    regs = {}
    if config.fairness_mode == "fairnorm":
        for rec in fp.norm_records:
            params = model.norms[rec.layer]
            gm = fairness.loss_mu_backward(params, rec.stats)
            gd = fairness.loss_delta_backward(params, rec.stats, rec.r, rec.groups)
            kap, tau = config.kappa, config.tau
            regs[rec.layer] = {
                "alpha": kap * gm["alpha"],
                "gamma": kap * gm["gamma"] + tau * gd["gamma"],
                "beta": kap * gm["beta"],
                "m": kap * gm["m"] + tau * gd["m"],
                "sigma": kap * gm["sigma"] + tau * gd["sigma"],
                "r": tau * gd["r"],
            }

    tape = fp.tape
    grad = linear_backward(model.head, tape.pop("head"), d_logits[None, :])
    for k in reversed(range(N_LAYERS)):
        steps = ("act", "norm") if config.norm_position == "pre" else ("norm", "act")
        for s in steps:
            if s == "act":
                grad = activation_backward(tape.pop(f"act{k}"), grad)
            elif model.norms[k] is not None:
                reg = regs.get(k)
                cache = tape.pop(f"norm{k}")
                grad, pg = mnorm_backward(cache, grad,
                                          None if reg is None else reg["m"],
                                          None if reg is None else reg["sigma"])
                for name, p in model.norms[k].params().items():
                    p.grad += pg[name]
                    if reg is not None and name in reg:
                        p.grad += reg[name]
                if reg is not None:
                    grad = grad + reg["r"]
        grad = gcn_layer_backward(model.weights[k], tape.pop(f"gcn{k}"), grad,
                                  need_input_grad=k > 0)
    tape.clear()
