"""Full-batch training with Adam, per-epoch logging and best-validation model selection."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fairness
from .graph import AggregationOperator, Graph, build_gcn_operator
from .model import (ModelState, TrainConfig, backward, forward_full, init_model, loss_total,
                    predict_proba)

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "loss_total", "loss_c", "loss_mu", "loss_delta", "val_acc",
               "val_dsp", "val_deo")


@dataclass
class MetricsReport:
    accuracy: float | None
    dsp: float | None
    deo: float | None

    def as_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    model: ModelState
    series: list = field(default_factory=list)  # one dict per epoch, keys LOG_COLUMNS
    best_epoch: int = -1
    test: MetricsReport | None = None


def adam_step(model: ModelState, config: TrainConfig) -> ModelState:
    """One Adam update from the gradients stored on the parameters.

    Weight decay is classic L2 (added to the gradient) and only applies to the
    GCN and head weights, not to normalization parameters.
    """
    b1, b2 = config.adam_betas
    model.step += 1
    t = model.step
    decayed = {id(p) for p in model.decayed_params()}
    for p in model.all_params():
        g = p.grad
        if config.weight_decay and id(p) in decayed:
            g = g + config.weight_decay * p.value
        p.adam_m = b1 * p.adam_m + (1.0 - b1) * g
        p.adam_v = b2 * p.adam_v + (1.0 - b2) * g * g
        m_hat = p.adam_m / (1.0 - b1**t)
        v_hat = p.adam_v / (1.0 - b2**t)
        p.value = p.value - config.lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return model


def _safe(metric, *args):
    try:
        return metric(*args)
    except fairness.UndefinedMetricError:
        return None


def metrics_from_logits(logits, graph: Graph, mask) -> MetricsReport:
    pred = (predict_proba(logits) > 0.5).astype(np.int64)
    return MetricsReport(
        accuracy=_safe(fairness.accuracy, pred, graph.labels, mask),
        dsp=_safe(fairness.metric_statistical_parity, pred, graph.sensitive, mask),
        deo=_safe(fairness.metric_equal_opportunity, pred, graph.labels, graph.sensitive, mask),
    )


def evaluate(model: ModelState, graph: Graph, op: AggregationOperator, mask,
             config: TrainConfig) -> MetricsReport:
    fp = forward_full(model, graph, op, config)
    return metrics_from_logits(fp.logits, graph, np.asarray(mask, dtype=bool))


def train(graph: Graph, config: TrainConfig, op: AggregationOperator | None = None) -> TrainResult:
    """Run ``config.epochs`` full-batch steps; return the best-validation-accuracy model.

    Validation metrics for epoch ``e`` are read off the same forward pass that
    produces the epoch's training loss, i.e. before that epoch's update.
    """
    if config.norm_mode == "mnorm_group" or config.fairness_mode != "none":
        graph.check_groups(2)
    if not graph.train_mask.any():
        raise ValueError("empty training mask")
    op = op if op is not None else build_gcn_operator(graph)
    model = init_model(graph.n_features, config)
    best_model, best_acc, best_epoch = model.clone(), -np.inf, -1
    series = []
    for epoch in range(config.epochs):
        fp = forward_full(model, graph, op, config)
        total, parts = loss_total(fp, graph, model, config)
        val = metrics_from_logits(fp.logits, graph, graph.val_mask)
        series.append({"epoch": epoch, "loss_total": total, "loss_c": parts["loss_c"],
                       "loss_mu": parts["loss_mu"], "loss_delta": parts["loss_delta"],
                       "val_acc": val.accuracy, "val_dsp": val.dsp, "val_deo": val.deo})
        acc = val.accuracy if val.accuracy is not None else -np.inf
        if acc > best_acc:
            best_model, best_acc, best_epoch = model.clone(), acc, epoch
        backward(model, fp, graph, config)
        adam_step(model, config)
        if epoch % 100 == 0:
            log.debug("epoch %d loss %.6f val_acc %s", epoch, total, val.accuracy)
    result = TrainResult(model=best_model, series=series, best_epoch=best_epoch)
    if graph.test_mask.any():
        result.test = evaluate(best_model, graph, op, graph.test_mask, config)
    return result


def epochs_to_threshold(losses, factor: float = 1.05) -> int:
    """First epoch whose loss is within ``factor`` of the run's minimum loss."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        raise ValueError("empty loss series")
    target = factor * losses.min()
    return int(np.flatnonzero(losses <= target)[0])
