"""Loss, SGD, the training loop, evaluation, and gradient checking.

Everything here is deterministic given the seeds in TrainConfig: the split,
the weight init, and each epoch's shuffle draw from seed-derived streams,
so identical invocations reproduce bit-identical reports and parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, LabelClass
from .errors import TrainingError, UsageError
from .layers import (
    ConvLayer,
    DenseLayer,
    ModelConfig,
    ModelParams,
    check_params,
    flatten_params,
    init_params,
    layer_names,
    model_backward,
    model_forward,
    param_count,
)
from .tensor import FLOAT32, FLOAT64, Tensor

LOG_CLAMP = 1e-7
GRADCHECK_MAX_PARAMS = 5000
GRADCHECK_TOLERANCE = 1e-4


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 128
    epochs: int = 5
    train_fraction: float = 0.8
    seed: int = 0
    precision: int = 32  # 32 or 64

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise UsageError(f"train_fraction {self.train_fraction} not in (0, 1)")
        if self.batch_size < 1:
            raise UsageError(f"batch_size {self.batch_size} < 1")
        if self.epochs < 1:
            raise UsageError(f"epochs {self.epochs} < 1")
        if self.learning_rate <= 0:
            raise UsageError(f"learning_rate {self.learning_rate} <= 0")
        if self.precision not in (32, 64):
            raise UsageError(f"precision {self.precision} not 32 or 64")

    @property
    def dtype(self):
        return FLOAT32 if self.precision == 32 else FLOAT64


@dataclass
class EpochMetrics:
    epoch: int
    mean_loss: float
    accuracy: float


@dataclass
class TrainReport:
    per_epoch: list
    test_loss: float
    test_accuracy: float
    model_config: ModelConfig
    train_config: TrainConfig
    param_count: int
    train_size: int
    test_size: int


def _subseed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence((seed,) + key).generate_state(1, np.uint64)[0])


def cross_entropy_loss(probs: Tensor, targets: Tensor):
    """Mean cross-entropy plus the fused softmax gradient (p - y) / n.

    probs rows must come from softmax; targets must be one-hot. The log is
    clamped to [1e-7, 1 - 1e-7] so confident wrong predictions stay finite.
    """
    if probs.shape != targets.shape or probs.ndim != 2:
        raise UsageError(f"probs {probs.shape} and targets {targets.shape} must match")
    t64 = targets.astype(FLOAT64)
    if not (np.all((t64 == 0.0) | (t64 == 1.0)) and np.all(t64.sum(axis=1) == 1.0)):
        raise UsageError("targets must be one-hot rows")
    n = probs.shape[0]
    clamped = np.clip(probs.astype(FLOAT64), LOG_CLAMP, 1.0 - LOG_CLAMP)
    loss = float(-(t64 * np.log(clamped)).sum() / n)
    grad_logits = ((probs - targets) / probs.dtype.type(n)).astype(probs.dtype)
    return loss, grad_logits


def sgd_step(params: ModelParams, grads: ModelParams, learning_rate: float) -> ModelParams:
    """One descent step w <- w - lr * g; returns new parameters."""
    if len(grads) != len(params):
        raise UsageError(f"{len(grads)} gradient sets for {len(params)} layers")
    lr = learning_rate
    out: ModelParams = []
    for p, g in zip(params, grads):
        if type(p) is not type(g) or p.weights.shape != g.weights.shape \
                or p.bias.shape != g.bias.shape:
            raise UsageError("gradients are not shaped like the parameters")
        w = p.weights - lr * g.weights
        b = p.bias - lr * g.bias
        out.append(ConvLayer(w, b, p.stride) if isinstance(p, ConvLayer) else DenseLayer(w, b))
    return out


def split_dataset(dataset: Dataset, train_fraction: float, seed: int):
    """Disjoint, exhaustive, per-class stratified split with a seeded shuffle.

    Each class contributes round(fraction * class count) training samples;
    both sides keep the dataset's original sample order.
    """
    if len(dataset) == 0:
        raise UsageError("cannot split an empty dataset")
    if not 0.0 < train_fraction < 1.0:
        raise UsageError(f"train_fraction {train_fraction} not in (0, 1)")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    train_idx: list[int] = []
    test_idx: list[int] = []
    for cls in LabelClass:
        members = [i for i, s in enumerate(dataset.samples) if s.label is cls]
        order = rng.permutation(len(members))
        n_train = int(len(members) * train_fraction + 0.5)
        chosen = {members[j] for j in order[:n_train]}
        train_idx.extend(i for i in members if i in chosen)
        test_idx.extend(i for i in members if i not in chosen)
    if not train_idx or not test_idx:
        raise UsageError(
            f"fraction {train_fraction} leaves an empty side "
            f"({len(train_idx)} train / {len(test_idx)} test)"
        )
    return dataset.subset(sorted(train_idx)), dataset.subset(sorted(test_idx))


def batch_iterator(n_samples: int, batch_size: int, epoch_seed: int):
    """Yield index arrays covering 0..n-1 once, in a seeded shuffle order.

    The final partial batch is kept.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(epoch_seed)))
    order = rng.permutation(n_samples)
    for start in range(0, n_samples, batch_size):
        yield order[start:start + batch_size]


def _accuracy(probs: Tensor, targets: Tensor) -> float:
    # np.argmax breaks ties toward the lower index
    return float(np.mean(np.argmax(probs, axis=1) == np.argmax(targets, axis=1)))


def evaluate(config: ModelConfig, params: ModelParams, test_set: Dataset,
             batch_size: int = 256):
    """Mean cross-entropy and argmax accuracy on a dataset; no updates."""
    if len(test_set) == 0:
        raise UsageError("cannot evaluate on an empty dataset")
    dtype = params[0].weights.dtype
    x, y = test_set.stack(dtype=dtype)
    loss_sum = 0.0
    correct = 0.0
    for start in range(0, len(test_set), batch_size):
        xb, yb = x[start:start + batch_size], y[start:start + batch_size]
        probs, _ = model_forward(config, params, xb)
        loss, _ = cross_entropy_loss(probs, yb)
        loss_sum += loss * len(xb)
        correct += _accuracy(probs, yb) * len(xb)
    n = len(test_set)
    return loss_sum / n, correct / n


def train(model_config: ModelConfig, train_config: TrainConfig, dataset: Dataset):
    """Split, run mini-batch SGD for the configured epochs, then evaluate.

    Epoch metrics are running means over the batches as encountered (each
    batch measured with the parameters it was trained on, before its
    update), mirroring per-epoch "loss - acc" reporting.
    """
    counts = dataset.class_counts()
    if any(c == 0 for c in counts.values()):
        raise UsageError(f"dataset must contain both classes, got {counts}")
    seed = train_config.seed
    train_set, test_set = split_dataset(dataset, train_config.train_fraction,
                                        _subseed(seed, 1))
    dtype = train_config.dtype
    x_train, y_train = train_set.stack(dtype=dtype)
    params = init_params(model_config, _subseed(seed, 0), dtype)
    per_epoch = []
    for epoch in range(1, train_config.epochs + 1):
        loss_sum = 0.0
        correct = 0.0
        batches = batch_iterator(len(train_set), train_config.batch_size,
                                 _subseed(seed, 2, epoch))
        for batch_index, idx in enumerate(batches):
            xb, yb = x_train[idx], y_train[idx]
            probs, cache = model_forward(model_config, params, xb)
            loss, grad_logits = cross_entropy_loss(probs, yb)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {batch_index}"
                )
            loss_sum += loss * len(idx)
            correct += _accuracy(probs, yb) * len(idx)
            grads = model_backward(model_config, params, cache, grad_logits)
            params = sgd_step(params, grads, train_config.learning_rate)
        n = len(train_set)
        per_epoch.append(EpochMetrics(epoch, loss_sum / n, correct / n))
    test_loss, test_accuracy = evaluate(model_config, params, test_set)
    report = TrainReport(
        per_epoch=per_epoch,
        test_loss=test_loss,
        test_accuracy=test_accuracy,
        model_config=model_config,
        train_config=train_config,
        param_count=param_count(model_config),
        train_size=len(train_set),
        test_size=len(test_set),
    )
    return params, report


def render_report(report: TrainReport) -> str:
    """Tab-separated report: per-epoch rows then a final test row."""
    lines = ["split\tepoch\tloss\tacc"]
    split = f"{report.train_config.train_fraction:g}"
    for m in report.per_epoch:
        lines.append(f"{split}\t{m.epoch}\t{m.mean_loss:.4f}\t{m.accuracy:.4f}")
    lines.append(f"test\t-\t{report.test_loss:.4f}\t{report.test_accuracy:.4f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    """Max relative error per layer, plus any coordinates over tolerance."""

    layer_errors: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)  # (layer, array, index, analytic, numeric)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_error(self) -> float:
        return max(self.layer_errors.values()) if self.layer_errors else 0.0


def gradient_check(model_config: ModelConfig, seed: int,
                   batch_size: int = 4) -> GradCheckReport:
    """Compare analytic parameter gradients with central finite differences.

    Runs in 64-bit with step h = 1e-5 * (|w| + 1) per coordinate; relative
    error is |a - n| / max(|a|, |n|, 1e-8). Only models with at most 5000
    parameters are accepted.
    """
    total = param_count(model_config)
    if total > GRADCHECK_MAX_PARAMS:
        raise UsageError(f"{total} parameters exceed the {GRADCHECK_MAX_PARAMS} limit")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 17))))
    h, w, c = model_config.input_size
    x = rng.uniform(0.0, 1.0, size=(batch_size, h, w, c))
    labels = rng.integers(0, model_config.num_classes, size=batch_size)
    y = np.zeros((batch_size, model_config.num_classes), dtype=FLOAT64)
    y[np.arange(batch_size), labels] = 1.0
    params = init_params(model_config, seed, FLOAT64)

    def loss_at(p: ModelParams) -> float:
        probs, _ = model_forward(model_config, p, x)
        return cross_entropy_loss(probs, y)[0]

    probs, cache = model_forward(model_config, params, x)
    _, grad_logits = cross_entropy_loss(probs, y)
    grads = model_backward(model_config, params, cache, grad_logits)

    report = GradCheckReport()
    for name, layer, grad in zip(layer_names(model_config), params, grads):
        worst = 0.0
        for attr in ("weights", "bias"):
            values = getattr(layer, attr)
            analytic = getattr(grad, attr)
            flat = values.ravel()
            for i in range(flat.size):
                step = 1e-5 * (abs(flat[i]) + 1.0)
                original = flat[i]
                flat[i] = original + step
                plus = loss_at(params)
                flat[i] = original - step
                minus = loss_at(params)
                flat[i] = original
                numeric = (plus - minus) / (2.0 * step)
                a = float(analytic.ravel()[i])
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, rel)
                if rel > GRADCHECK_TOLERANCE:
                    report.failures.append((name, attr, i, a, numeric))
        report.layer_errors[name] = worst
    return report
