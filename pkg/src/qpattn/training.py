"""Training loop, optimizer, metrics and statistics.

SGD with classical momentum, linear-warmup + cosine-annealing schedule, early
stopping on validation accuracy, confusion-matrix metrics with a rank-based
AUC, paired t-tests with Cohen's d and confidence intervals, and the
confidence-stratified accuracy breakdown. The Student-t CDF is computed here
directly (continued-fraction incomplete beta) so statistical results do not
depend on an external stats library.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import vit
from .data import ImageDataset


@dataclass(frozen=True)
class TrainConfig:
    lr0: float
    batch_size: int
    epochs: int = 100
    warmup_epochs: int = 3
    patience: int = 20
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("warmup_epochs must satisfy 0 <= warmup < epochs")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Linear warmup to lr0 over `warmup_epochs`, then cosine annealing to ~0."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    if epoch < config.warmup_epochs:
        return config.lr0 * (epoch + 1) / config.warmup_epochs
    t = epoch - config.warmup_epochs
    span = config.epochs - config.warmup_epochs
    return config.lr0 * 0.5 * (1 + math.cos(math.pi * t / span))


def sgd_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray],
    lr: float,
    momentum: float,
    weight_decay: float = 0.0,
) -> None:
    """Classical momentum update in place: v <- m*v + g (+ wd*p); p <- p - lr*v."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        if weight_decay:
            g = g + weight_decay * p
        velocity[name] = momentum * velocity[name] + g
        p -= lr * velocity[name]


# ---------------------------------------------------------------------------
# Metrics.
# ---------------------------------------------------------------------------


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc_roc: float | None

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc_roc": self.auc_roc,
        }


def compute_metrics(labels, predicted, positive_scores) -> Metrics:
    """Binary confusion-matrix metrics plus rank-statistic AUC with tie handling.

    AUC is the Mann-Whitney statistic (average ranks for ties); it is reported
    as None when only one class is present.
    """
    labels = np.asarray(labels).astype(int)
    predicted = np.asarray(predicted).astype(int)
    scores = np.asarray(positive_scores, dtype=float)
    if not np.all(np.isfinite(scores)):
        raise ValueError("positive_scores must be finite")

    tp = int(np.sum((predicted == 1) & (labels == 1)))
    tn = int(np.sum((predicted == 0) & (labels == 0)))
    fp = int(np.sum((predicted == 1) & (labels == 0)))
    fn = int(np.sum((predicted == 0) & (labels == 1)))
    n = labels.size
    accuracy = (tp + tn) / n
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0

    n_pos = int(np.sum(labels == 1))
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        auc = None
    else:
        ranks = rankdata(scores)  # average ranks resolve ties
        auc = (ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)
        auc = float(auc)
    return Metrics(accuracy, precision, recall, f1, auc)


# ---------------------------------------------------------------------------
# Student-t statistics.
# ---------------------------------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    # Lentz continued fraction for the incomplete beta function.
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-14:
            return h
    raise RuntimeError("incomplete beta continued fraction failed to converge")


def _betainc(a: float, b: float, x: float) -> float:
    # Regularised incomplete beta I_x(a, b).
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, dof: float) -> float:
    """CDF of the Student-t distribution via the incomplete beta function."""
    if dof <= 0:
        raise ValueError("degrees of freedom must be positive")
    x = dof / (dof + t * t)
    tail = 0.5 * _betainc(dof / 2.0, 0.5, x)
    return 1.0 - tail if t > 0 else tail


def student_t_ppf(p: float, dof: float) -> float:
    """Inverse CDF by bisection on the monotone `student_t_cdf`."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    lo, hi = -1e6, 1e6
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if student_t_cdf(mid, dof) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class TTestResult:
    mean_diff: float
    t_statistic: float
    p_one_tail: float
    p_two_tail: float
    cohens_d: float
    ci95_low: float
    ci95_high: float
    n: int
    degenerate: bool = False

    def as_dict(self) -> dict:
        return {
            "mean_diff": self.mean_diff,
            "t_statistic": self.t_statistic,
            "p_one_tail": self.p_one_tail,
            "p_two_tail": self.p_two_tail,
            "cohens_d": self.cohens_d,
            "ci95_low": self.ci95_low,
            "ci95_high": self.ci95_high,
            "n": self.n,
            "degenerate": self.degenerate,
        }


def paired_t_test(a, b) -> TTestResult:
    """Paired t-test of a - b with Cohen's d and the 95% CI of the mean difference.

    The one-tailed p tests the alternative mean(a) > mean(b). Runs must be
    paired (same seed / data split per index). Zero-variance differences are
    reported as degenerate rather than dividing by zero.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("paired samples must be equal-length 1-d arrays with n >= 2")
    d = a - b
    n = d.size
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        return TTestResult(mean, 0.0, 0.5, 1.0, 0.0, mean, mean, n, degenerate=True)
    se = sd / math.sqrt(n)
    t = mean / se
    p_one = 1.0 - student_t_cdf(t, n - 1)
    p_two = 2.0 * min(p_one, 1.0 - p_one)
    tcrit = student_t_ppf(0.975, n - 1)
    return TTestResult(
        mean_diff=mean,
        t_statistic=t,
        p_one_tail=p_one,
        p_two_tail=p_two,
        cohens_d=mean / sd,
        ci95_low=mean - tcrit * se,
        ci95_high=mean + tcrit * se,
        n=n,
    )


def significance_stars(p: float) -> str:
    """Marker convention: n.s. above 0.05, then * / ** / *** at 0.05 / 0.01 / 0.001."""
    if p <= 0.001:
        return "***"
    if p <= 0.01:
        return "**"
    if p <= 0.05:
        return "*"
    return "n.s."


# ---------------------------------------------------------------------------
# Confidence stratification.
# ---------------------------------------------------------------------------

CONFIDENCE_STRATA = (
    ("low", 0.5, 0.6),
    ("medium", 0.6, 0.9),
    ("high", 0.9, 1.0),
)


@dataclass
class StratumResult:
    name: str
    low: float
    high: float
    count: int
    accuracy: float | None


def stratify_by_confidence(max_softmax_probs, correct_flags) -> list[StratumResult]:
    """Per-stratum sample counts and accuracies over half-open confidence bins.

    Bins are [0.5, 0.6), [0.6, 0.9), [0.9, 1.0]: each boundary belongs to the
    bin above it and 1.0 falls in the high stratum. Empty strata report count
    0 with accuracy None.
    """
    probs = np.asarray(max_softmax_probs, dtype=float)
    correct = np.asarray(correct_flags, dtype=bool)
    if probs.shape != correct.shape:
        raise ValueError("probs and correctness flags must align")
    results = []
    for i, (name, lo, hi) in enumerate(CONFIDENCE_STRATA):
        top_bin = i == len(CONFIDENCE_STRATA) - 1
        mask = (probs >= lo) & ((probs <= hi) if top_bin else (probs < hi))
        count = int(mask.sum())
        acc = float(correct[mask].mean()) if count else None
        results.append(StratumResult(name, lo, hi, count, acc))
    return results


# ---------------------------------------------------------------------------
# Training loop.
# ---------------------------------------------------------------------------


@dataclass
class RunStats:
    """One completed run's record, the unit fed to paired comparisons."""

    seed: int
    scorer: str
    metrics: dict
    best_epoch: int
    history: list[dict] = field(default_factory=list)


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_accuracy: float = -1.0
    best_params: dict[str, np.ndarray] | None = None
    best_metrics: Metrics | None = None
    stopped_early: bool = False


def evaluate(model: vit.VitModel, dataset: ImageDataset, batch_size: int = 64):
    """Validation metrics plus per-sample max-softmax probs and correctness."""
    all_probs = []
    for start in range(0, dataset.n, batch_size):
        logits = vit.forward(model, dataset.images[start : start + batch_size])
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        all_probs.append(e / e.sum(axis=1, keepdims=True))
    probs = np.concatenate(all_probs, axis=0)
    predicted = probs.argmax(axis=1)
    metrics = compute_metrics(dataset.labels, predicted, probs[:, 1])
    return metrics, probs.max(axis=1), predicted == dataset.labels


def train_loop(
    model: vit.VitModel,
    train_ds: ImageDataset,
    valid_ds: ImageDataset,
    config: TrainConfig,
) -> TrainResult:
    """SGD training with per-epoch validation and early stopping.

    Stops once validation accuracy has not improved for `patience` epochs and
    returns the best-validation parameter snapshot along with the per-epoch
    history. Deterministic for a fixed config seed.
    """
    if train_ds.n == 0 or valid_ds.n == 0:
        raise ValueError("training and validation splits must be non-empty")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7261]))
    velocity = {name: np.zeros_like(p) for name, p in model.params.items()}
    result = TrainResult()
    since_best = 0

    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config)
        order = rng.permutation(train_ds.n)
        epoch_loss = 0.0
        for start in range(0, train_ds.n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = vit.backward(model, train_ds.images[idx], train_ds.labels[idx])
            sgd_step(model.params, grads, velocity, lr, config.momentum, config.weight_decay)
            epoch_loss += loss * idx.size
        epoch_loss /= train_ds.n
        if not math.isfinite(epoch_loss):
            raise RuntimeError(
                f"training diverged at epoch {epoch} (non-finite loss); reduce lr0"
            )

        metrics, _, _ = evaluate(model, valid_ds)
        record = {"epoch": epoch, "lr": lr, "train_loss": epoch_loss}
        record.update({f"val_{k}": v for k, v in metrics.as_dict().items()})
        result.history.append(record)

        if metrics.accuracy > result.best_accuracy:
            result.best_accuracy = metrics.accuracy
            result.best_epoch = epoch
            result.best_metrics = metrics
            result.best_params = {k: v.copy() for k, v in model.params.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                result.stopped_early = True
                break
    return result
