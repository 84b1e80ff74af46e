"""Probabilistic classification, decision-level probability fusion, metrics,
and LOSO / repeated stratified k-fold cross-validation.

The built-in classifier is an L2-regularized multinomial logistic regression
trained with a deterministic batch optimizer, so every per-class probability
needed by the fusion rule P = (1-a)*p1 + a*p2 is available without external
dependencies. Externally computed per-sample probability files can be
plugged in wherever a list of ClassDistributions is accepted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .lbptop import FeatureVector


@dataclass(frozen=True)
class ClassDistribution:
    """Probability simplex over an ordered label set."""

    labels: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64).ravel()
        labels = tuple(self.labels)
        if len(labels) != probs.shape[0]:
            raise ValueError("labels and probabilities must have matching length")
        if np.any(probs < -1e-12):
            raise ValueError("probabilities must be non-negative")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities must sum to 1 within 1e-9, got {probs.sum()!r}")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "probs", probs)

    @property
    def argmax_label(self) -> str:
        # Ties break toward the lowest class index, for reproducibility.
        return self.labels[int(np.argmax(self.probs))]


@dataclass(frozen=True)
class FusionConfig:
    """Mixing weight for 2-d/3-d probability fusion; 0 = 2-d only, 1 = 3-d only."""

    a: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.a <= 1.0:
            raise ValueError(f"fusion weight must lie in [0, 1], got {self.a}")


@dataclass
class EvalResult:
    accuracy: float
    f1: float
    confusion: np.ndarray          # rows = truth, cols = prediction
    classes: tuple[str, ...]
    per_fold: list[float] = field(default_factory=list)


def _as_matrix(features) -> np.ndarray:
    rows = [f.values if isinstance(f, FeatureVector) else np.asarray(f, dtype=np.float64).ravel()
            for f in features]
    lengths = {r.shape[0] for r in rows}
    if len(lengths) > 1:
        raise ValueError(f"inconsistent feature lengths: {sorted(lengths)}")
    return np.vstack(rows)


@dataclass
class LogisticModel:
    """Multinomial logistic regression with standardized inputs."""

    classes: tuple[str, ...]
    weights: np.ndarray   # (d, C)
    bias: np.ndarray      # (C,)
    mean: np.ndarray      # (d,)
    scale: np.ndarray     # (d,)

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    def predict_proba_matrix(self, x: np.ndarray) -> np.ndarray:
        z = ((x - self.mean) / self.scale) @ self.weights + self.bias
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


def train(features, labels, seed: int = 0, l2: float = 1e-3,
          max_iter: int = 500) -> LogisticModel:
    """Fit the multinomial logistic classifier.

    Deterministic given the seed: seeded small random init, full-batch
    L-BFGS on the mean cross-entropy plus an L2 penalty on the weights
    (bias unpenalized). The mean-loss form makes the fit insensitive to
    duplicating every training point.
    """
    x = _as_matrix(features)
    labels = [str(l) for l in labels]
    if len(labels) != x.shape[0]:
        raise ValueError("one label per feature row required")
    classes = tuple(sorted(set(labels)))
    if len(classes) < 2:
        raise ValueError(f"training needs at least 2 classes, got {classes}")

    class_index = {c: i for i, c in enumerate(classes)}
    y = np.array([class_index[l] for l in labels])
    n, d = x.shape
    c = len(classes)

    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0.0] = 1.0
    xs = (x - mean) / scale

    one_hot = np.zeros((n, c))
    one_hot[np.arange(n), y] = 1.0

    rng = np.random.default_rng(seed)
    w0 = 0.01 * rng.standard_normal(d * c + c)

    def loss_grad(theta):
        w = theta[: d * c].reshape(d, c)
        b = theta[d * c:]
        z = xs @ w + b
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        nll = -np.log(np.clip(p[np.arange(n), y], 1e-300, None)).mean()
        loss = nll + 0.5 * l2 * np.sum(w * w)
        g = (p - one_hot) / n
        gw = xs.T @ g + l2 * w
        gb = g.sum(axis=0)
        return loss, np.concatenate([gw.ravel(), gb])

    result = minimize(loss_grad, w0, jac=True, method="L-BFGS-B",
                      options={"maxiter": max_iter})
    theta = result.x
    return LogisticModel(
        classes=classes,
        weights=theta[: d * c].reshape(d, c),
        bias=theta[d * c:],
        mean=mean,
        scale=scale,
    )


def predict_proba(model: LogisticModel, feature) -> ClassDistribution:
    """Class probabilities for one feature vector."""
    vals = feature.values if isinstance(feature, FeatureVector) else \
        np.asarray(feature, dtype=np.float64).ravel()
    if vals.shape[0] != model.n_features:
        raise ValueError(f"feature length {vals.shape[0]} does not match "
                         f"model ({model.n_features})")
    probs = model.predict_proba_matrix(vals[None, :])[0]
    return ClassDistribution(model.classes, probs)


def fuse(p1: ClassDistribution, p2: ClassDistribution, a: float) -> ClassDistribution:
    """Probability-level fusion: (1 - a) * p1 + a * p2, elementwise.

    a = 0 reproduces p1 (first modality only), a = 1 reproduces p2. The
    fused prediction is the argmax of the mixed distribution.
    """
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"fusion weight must lie in [0, 1], got {a}")
    if set(p1.labels) != set(p2.labels):
        raise ValueError(f"label sets differ: {p1.labels} vs {p2.labels}")
    if p1.labels != p2.labels:
        order = [p2.labels.index(l) for l in p1.labels]
        p2 = ClassDistribution(p1.labels, p2.probs[order])
    return ClassDistribution(p1.labels, (1.0 - a) * p1.probs + a * p2.probs)


def metrics(predictions, truths) -> EvalResult:
    """Accuracy, macro-averaged F1, and the confusion matrix.

    F1 is averaged over the classes present in the truths; a class with no
    predictions and no true positives contributes 0.
    """
    predictions = [str(p) for p in predictions]
    truths = [str(t) for t in truths]
    if not truths:
        raise ValueError("cannot compute metrics on empty inputs")
    if len(predictions) != len(truths):
        raise ValueError("predictions and truths must have equal length")

    classes = tuple(sorted(set(truths) | set(predictions)))
    index = {c: i for i, c in enumerate(classes)}
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(truths, predictions):
        confusion[index[t], index[p]] += 1

    accuracy = float(np.trace(confusion)) / len(truths)

    f1_scores = []
    for c in classes:
        i = index[c]
        tp = confusion[i, i]
        fp = confusion[:, i].sum() - tp
        fn = confusion[i, :].sum() - tp
        if tp + fn == 0:
            continue  # class absent from the truths
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn)
        f1_scores.append(2 * precision * recall / (precision + recall)
                         if precision + recall > 0 else 0.0)
    f1 = float(np.mean(f1_scores)) if f1_scores else 0.0

    return EvalResult(accuracy=accuracy, f1=f1, confusion=confusion, classes=classes)


def loso_split(records) -> list[tuple[list[int], list[int]]]:
    """Leave-one-subject-out folds: one fold per subject, that subject's
    samples as the test set. Accepts SampleRecords or raw subject ids."""
    subjects = [getattr(r, "subject_id", r) for r in records]
    unique = sorted(set(subjects))
    if len(unique) < 2:
        raise ValueError(f"LOSO needs at least 2 distinct subjects, got {len(unique)}")
    folds = []
    for subject in unique:
        test = [i for i, s in enumerate(subjects) if s == subject]
        train_idx = [i for i, s in enumerate(subjects) if s != subject]
        folds.append((train_idx, test))
    return folds


def stratified_kfold_indices(labels, k: int, rng: np.random.Generator) -> list[list[int]]:
    """Random stratified assignment of sample indices to k folds; global
    fold sizes differ by at most 1."""
    labels = [str(l) for l in labels]
    fold_members: list[list[int]] = [[] for _ in range(k)]
    counter = int(rng.integers(k))  # rotate the starting fold
    for c in sorted(set(labels)):
        idx = [i for i, l in enumerate(labels) if l == c]
        order = rng.permutation(len(idx))
        for j in order:
            fold_members[counter % k].append(idx[j])
            counter += 1
    return fold_members


def cross_val_proba(features, labels, folds, seed: int = 0, train_fn=None):
    """Out-of-fold class probabilities for every sample.

    ``folds`` is a list of (train indices, test indices) covering each
    sample exactly once on the test side. Probabilities are embedded into
    the global sorted label set (zero for classes a fold's model never saw).
    Returns (distributions, per_fold_accuracies).
    """
    x = _as_matrix(features)
    labels = [str(l) for l in labels]
    classes = tuple(sorted(set(labels)))
    train_fn = train_fn if train_fn is not None else train

    proba: list[ClassDistribution | None] = [None] * len(labels)
    per_fold = []
    for fold_no, (train_idx, test_idx) in enumerate(folds):
        model = train_fn([x[i] for i in train_idx], [labels[i] for i in train_idx],
                         seed=seed + fold_no)
        correct = 0
        for i in test_idx:
            dist = predict_proba(model, x[i])
            if dist.labels != classes:
                expanded = np.zeros(len(classes))
                for l, p in zip(dist.labels, dist.probs):
                    expanded[classes.index(l)] = p
                total = expanded.sum()
                dist = ClassDistribution(classes, expanded / total if total > 0 else
                                         np.full(len(classes), 1.0 / len(classes)))
            proba[i] = dist
            if dist.argmax_label == labels[i]:
                correct += 1
        per_fold.append(correct / len(test_idx) if test_idx else 0.0)

    missing = [i for i, p in enumerate(proba) if p is None]
    if missing:
        raise ValueError(f"folds do not cover samples {missing}")
    return proba, per_fold


def loso_eval(features, labels, subjects, seed: int = 0, train_fn=None) -> EvalResult:
    """Leave-one-subject-out evaluation with the built-in classifier."""
    folds = loso_split(subjects)
    proba, per_fold = cross_val_proba(features, labels, folds, seed=seed, train_fn=train_fn)
    result = metrics([p.argmax_label for p in proba], labels)
    result.per_fold = per_fold
    return result


def kfold_eval(features, labels, k: int = 10, repeats: int = 10, seed: int = 0,
               train_fn=None) -> EvalResult:
    """Repeated stratified k-fold evaluation.

    Folds are reshuffled each repeat with seeds derived from ``seed``;
    reported accuracy and F1 are means over the repeats, the confusion
    matrix accumulates over all repeats, and per_fold lists every individual
    fold accuracy.
    """
    labels = [str(l) for l in labels]
    n = len(labels)
    if k > n:
        raise ValueError(f"k={k} exceeds the sample count {n}")
    if k < 2:
        raise ValueError("k must be at least 2")

    seed_seq = np.random.SeedSequence(seed)
    accs, f1s, per_fold = [], [], []
    confusion = None
    classes = None
    for repeat, child in enumerate(seed_seq.spawn(repeats)):
        rng = np.random.default_rng(child)
        fold_members = stratified_kfold_indices(labels, k, rng)
        folds = []
        for f in range(k):
            test = sorted(fold_members[f])
            train_idx = sorted(i for g in range(k) if g != f for i in fold_members[g])
            folds.append((train_idx, test))
        proba, fold_accs = cross_val_proba(features, labels, folds,
                                           seed=seed + 1000 * repeat, train_fn=train_fn)
        result = metrics([p.argmax_label for p in proba], labels)
        accs.append(result.accuracy)
        f1s.append(result.f1)
        per_fold.extend(fold_accs)
        confusion = result.confusion if confusion is None else confusion + result.confusion
        classes = result.classes

    return EvalResult(accuracy=float(np.mean(accs)), f1=float(np.mean(f1s)),
                      confusion=confusion, classes=classes, per_fold=per_fold)


def write_probabilities_csv(path, sample_ids, distributions) -> None:
    """Per-sample probability file: header ``sample_id,p_class0,...`` then one
    row per sample. All distributions must share one ordered label set; the
    label order is recorded in a trailing comment line for reference."""
    from pathlib import Path

    distributions = list(distributions)
    sample_ids = list(sample_ids)
    if len(sample_ids) != len(distributions):
        raise ValueError("one sample id per distribution required")
    labels = distributions[0].labels
    for d in distributions:
        if d.labels != labels:
            raise ValueError("all distributions must share one ordered label set")
    lines = ["sample_id," + ",".join(f"p_class{i}" for i in range(len(labels)))]
    for sid, d in zip(sample_ids, distributions):
        lines.append(str(sid) + "," + ",".join(repr(float(p)) for p in d.probs))
    lines.append("# classes: " + ",".join(labels))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_probabilities_csv(path, labels) -> dict[str, ClassDistribution]:
    """Read an externally produced per-sample probability file.

    ``labels`` gives the class meaning of the p_class0... columns, in order.
    Returns {sample_id: ClassDistribution}.
    """
    from pathlib import Path

    labels = tuple(labels)
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("sample_id,"):
        raise ValueError(f"{path}: expected header 'sample_id,p_class0,...'")
    n_cols = len(lines[0].split(",")) - 1
    if n_cols != len(labels):
        raise ValueError(f"{path}: file has {n_cols} probability columns, "
                         f"expected {len(labels)}")
    out: dict[str, ClassDistribution] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != len(labels) + 1:
            raise ValueError(f"{path} row {line_no}: wrong column count")
        out[parts[0]] = ClassDistribution(labels, np.array([float(v) for v in parts[1:]]))
    return out


def fusion_sweep(p1_per_sample, p2_per_sample, truths,
                 weights=(0.1, 0.2, 0.3, 0.4, 0.5)) -> tuple[float, EvalResult]:
    """Pick the fusion weight with the best accuracy over the grid.

    Evaluates the fused predictions at each weight and returns the argmax
    (ties resolved toward the smaller weight) together with its EvalResult.
    """
    if not (len(p1_per_sample) == len(p2_per_sample) == len(truths)):
        raise ValueError("probability lists and truths must be aligned")
    best_a = None
    best_result = None
    for a in weights:
        fused = [fuse(p1, p2, a) for p1, p2 in zip(p1_per_sample, p2_per_sample)]
        result = metrics([f.argmax_label for f in fused], truths)
        if best_result is None or result.accuracy > best_result.accuracy:
            best_a, best_result = a, result
    return best_a, best_result
