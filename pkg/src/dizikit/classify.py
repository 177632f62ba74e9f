"""School classification with an L2-regularised multinomial log-linear model.

Any of the four feature schemes (``bow``, ``tfidf``, ``cbow``, ``skipgram``)
can feed the model.  :func:`cross_validate` runs stratified k-fold evaluation
with the featurizer refit on each training split.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .features import (
    EmbeddingModel,
    EmbeddingParams,
    Vocabulary,
    bow_vector,
    build_vocabulary,
    embed_piece,
    tfidf_vector,
    train_embeddings,
)
from .notation import School
from .represent import TokenSequence

SCHEMES = ("bow", "tfidf", "cbow", "skipgram")
CLASSIFIER_FORMAT = "dizikit-classifier"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ClassifierConfig:
    scheme: str = "tfidf"
    reg: float = 1e-2
    max_iter: int = 1000
    tol: float = 1e-9
    seed: int = 0
    embedding: EmbeddingParams = field(default_factory=EmbeddingParams)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")


class Featurizer:
    """Maps token sequences to dense rows for one feature scheme."""

    def __init__(self, scheme: str, vocab: Vocabulary | None = None,
                 embeddings: EmbeddingModel | None = None):
        self.scheme = scheme
        self.vocab = vocab
        self.embeddings = embeddings

    @classmethod
    def fit(cls, scheme: str, pieces: Sequence[TokenSequence],
            embedding: EmbeddingParams | None = None) -> "Featurizer":
        if scheme in ("bow", "tfidf"):
            return cls(scheme, vocab=build_vocabulary(pieces))
        params = replace(embedding or EmbeddingParams(), mode=scheme)
        return cls(scheme, embeddings=train_embeddings(pieces, params))

    @property
    def dim(self) -> int:
        return len(self.vocab) if self.vocab is not None else self.embeddings.dim

    def row(self, piece: TokenSequence) -> np.ndarray:
        if self.scheme == "bow":
            return bow_vector(piece, self.vocab).dense()
        if self.scheme == "tfidf":
            return tfidf_vector(piece, self.vocab).dense()
        return embed_piece(piece, self.embeddings)

    def transform(self, pieces: Sequence[TokenSequence]) -> np.ndarray:
        if not pieces:
            return np.zeros((0, self.dim))
        return np.vstack([self.row(p) for p in pieces])

    def to_lines(self) -> list[str]:
        if self.vocab is not None:
            return self.vocab.to_lines()
        return self.embeddings.to_lines()

    @classmethod
    def from_lines(cls, scheme: str, lines: list[str]) -> "Featurizer":
        if scheme in ("bow", "tfidf"):
            return cls(scheme, vocab=Vocabulary.from_lines(lines))
        return cls(scheme, embeddings=EmbeddingModel.from_lines(lines))


@dataclass
class ClassifierModel:
    weights: np.ndarray  # classes x features
    bias: np.ndarray
    classes: list[School]
    reg: float = 1e-2
    seed: int = 0
    featurizer: Featurizer | None = None

    def __post_init__(self):
        if self.weights.shape[0] != len(self.classes) or self.bias.shape != (len(self.classes),):
            raise ValueError("weights and bias must have one row per class")

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(dumps_classifier(self))

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        with open(path, encoding="utf-8") as fh:
            return loads_classifier(fh.read())


def _unpack(theta: np.ndarray, n_classes: int, dim: int):
    W = theta[: n_classes * dim].reshape(n_classes, dim)
    b = theta[n_classes * dim:]
    return W, b


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grad(theta: np.ndarray, X: np.ndarray, y: np.ndarray, n_classes: int, reg: float):
    """Mean cross-entropy plus ``reg / 2 * ||W||^2`` (bias unpenalised)."""
    n, dim = X.shape
    W, b = _unpack(theta, n_classes, dim)
    scores = X @ W.T + b
    z = scores - scores.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_norm - z[np.arange(n), y])) + 0.5 * reg * float(np.sum(W * W))
    resid = np.exp(z - log_norm[:, None])
    resid[np.arange(n), y] -= 1.0
    resid /= n
    gW = resid.T @ X + reg * W
    gb = resid.sum(axis=0)
    return loss, np.concatenate([gW.ravel(), gb])


def train_classifier(X: np.ndarray, labels: Sequence[School], config: ClassifierConfig | None = None,
                     featurizer: Featurizer | None = None) -> ClassifierModel:
    """Fit the log-linear model with L-BFGS from a zero start.

    Raises ``ValueError`` for fewer than two classes or ragged input.
    """
    config = config or ClassifierConfig()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != len(labels):
        raise ValueError("X must be a matrix with one row per label")
    if featurizer is not None and X.shape[1] != featurizer.dim:
        raise ValueError(f"feature dimension {X.shape[1]} != featurizer dimension {featurizer.dim}")
    classes = sorted(set(labels), key=lambda s: s.index)
    if len(classes) < 2:
        raise ValueError("training data must contain at least two classes")
    y = np.array([classes.index(lab) for lab in labels])
    C, D = len(classes), X.shape[1]
    theta0 = np.zeros(C * D + C)
    if config.max_iter > 0:
        res = minimize(loss_and_grad, theta0, args=(X, y, C, config.reg), jac=True, method="L-BFGS-B",
                       options={"maxiter": config.max_iter, "gtol": config.tol, "ftol": 1e-15})
        theta0 = res.x
    W, b = _unpack(theta0, C, D)
    return ClassifierModel(W.copy(), b.copy(), classes, config.reg, config.seed, featurizer)


def predict_proba(model: ClassifierModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.dim:
        raise ValueError(f"input dimension {x.shape[-1]} != model dimension {model.dim}")
    return softmax(x @ model.weights.T + model.bias)


def predict(model: ClassifierModel, x: np.ndarray) -> tuple[School, np.ndarray]:
    """Most probable class (lowest index on ties) and the full distribution."""
    p = predict_proba(model, x)
    return model.classes[int(np.argmax(p))], p


def predict_piece(model: ClassifierModel, piece: TokenSequence) -> tuple[School, np.ndarray]:
    if model.featurizer is None:
        raise ValueError("model has no featurizer attached")
    return predict(model, model.featurizer.row(piece))


def fit_pipeline(pieces: Sequence[TokenSequence], config: ClassifierConfig | None = None) -> ClassifierModel:
    """Fit featurizer and classifier on labelled pieces."""
    config = config or ClassifierConfig()
    emb = replace(config.embedding, seed=config.seed)
    feat = Featurizer.fit(config.scheme, pieces, emb)
    return train_classifier(feat.transform(pieces), [p.label for p in pieces], config, feat)


# --- evaluation ---------------------------------------------------------------


def confusion_matrix(y_true: Sequence[int], y_pred: Sequence[int], n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[t, p] += 1
    return cm


def class_metrics(cm: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class recall, precision and F1 in percent (0 where undefined)."""
    tp = np.diag(cm).astype(float)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0) * 100
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0) * 100
    denom = recall + precision
    f1 = np.divide(2 * recall * precision, denom, out=np.zeros_like(tp), where=denom > 0)
    return recall, precision, f1


@dataclass
class FoldResult:
    fold: int
    n_test: int
    recall: float
    f1: float
    confusion: np.ndarray


@dataclass
class EvalReport:
    scheme: str
    classes: list[School]
    folds: list[FoldResult]
    confusion: np.ndarray
    seed: int

    @property
    def macro_recall(self) -> float:
        return float(np.mean([f.recall for f in self.folds]))

    @property
    def macro_f1(self) -> float:
        return float(np.mean([f.f1 for f in self.folds]))

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "classes": [c.value for c in self.classes],
            "seed": self.seed,
            "folds": [
                {"fold": f.fold, "n_test": f.n_test, "recall": round(f.recall, 6), "f1": round(f.f1, 6),
                 "confusion": f.confusion.tolist()}
                for f in self.folds
            ],
            "macro_recall": round(self.macro_recall, 6),
            "macro_f1": round(self.macro_f1, 6),
            "confusion": self.confusion.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        lines = [f"scheme: {self.scheme}   folds: {len(self.folds)}   seed: {self.seed}",
                 f"{'fold':>4} {'n':>5} {'recall':>8} {'f1':>8}"]
        for f in self.folds:
            lines.append(f"{f.fold:>4} {f.n_test:>5} {f.recall:8.2f} {f.f1:8.2f}")
        lines.append(f"{'mean':>4} {sum(f.n_test for f in self.folds):>5} "
                     f"{self.macro_recall:8.2f} {self.macro_f1:8.2f}")
        names = [c.value for c in self.classes]
        lines.append("confusion (rows = true, cols = predicted): " + " ".join(names))
        for name, row in zip(names, self.confusion):
            lines.append(f"  {name:>6} " + " ".join(f"{v:>6d}" for v in row))
        return "\n".join(lines) + "\n"


def stratified_folds(labels: Sequence[School], folds: int, seed: int) -> list[int]:
    """Fold number for every item: each class is shuffled and dealt round-robin."""
    rng = np.random.default_rng(seed)
    assignment = [0] * len(labels)
    classes = sorted(set(labels), key=lambda s: s.index)
    for c in classes:
        idx = [i for i, lab in enumerate(labels) if lab == c]
        if len(idx) < folds:
            raise ValueError(f"class {c.value} has {len(idx)} items, fewer than {folds} folds")
        for pos, i in enumerate(rng.permutation(idx)):
            assignment[int(i)] = pos % folds
    return assignment


def cross_validate(corpus: Sequence[TokenSequence], folds: int = 10,
                   config: ClassifierConfig | None = None) -> EvalReport:
    """Stratified k-fold evaluation reporting macro recall and F1 in percent.

    Vocabulary, document frequencies and embeddings are rebuilt from each
    training split only.
    """
    config = config or ClassifierConfig()
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if len(corpus) < folds:
        raise ValueError(f"corpus of {len(corpus)} pieces is smaller than {folds} folds")
    labels = [p.label for p in corpus]
    assignment = stratified_folds(labels, folds, config.seed)
    classes = sorted(set(labels), key=lambda s: s.index)
    results = []
    total = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for k in range(folds):
        train = [p for p, a in zip(corpus, assignment) if a != k]
        test = [p for p, a in zip(corpus, assignment) if a == k]
        model = fit_pipeline(train, config)
        probs = predict_proba(model, model.featurizer.transform(test))
        pred = [classes.index(model.classes[i]) for i in np.argmax(probs, axis=1)]
        true = [classes.index(p.label) for p in test]
        cm = confusion_matrix(true, pred, len(classes))
        recall, _, f1 = class_metrics(cm)
        results.append(FoldResult(k, len(test), float(recall.mean()), float(f1.mean()), cm))
        total += cm
    return EvalReport(config.scheme, classes, results, total, config.seed)


# --- persistence --------------------------------------------------------------


def dumps_classifier(model: ClassifierModel) -> str:
    feat = model.featurizer
    lines = [
        f"{CLASSIFIER_FORMAT} {FORMAT_VERSION}",
        f"scheme {feat.scheme if feat else 'none'}",
        "classes " + " ".join(c.value for c in model.classes),
        f"reg {model.reg!r}",
        f"seed {model.seed}",
        f"dim {model.dim}",
    ]
    for c, row in zip(model.classes, model.weights):
        lines.append(" ".join(["weights", c.value] + [repr(float(v)) for v in row]))
    lines.append(" ".join(["bias"] + [repr(float(v)) for v in model.bias]))
    if feat is not None:
        lines.append("featurizer")
        lines += feat.to_lines()
    return "\n".join(lines) + "\n"


def loads_classifier(text: str) -> ClassifierModel:
    lines = text.splitlines()
    if lines[0].split() != [CLASSIFIER_FORMAT, str(FORMAT_VERSION)]:
        raise ValueError(f"not a {CLASSIFIER_FORMAT} v{FORMAT_VERSION} file")
    scheme = lines[1].split()[1]
    classes = [School.parse(c) for c in lines[2].split()[1:]]
    reg = float(lines[3].split()[1])
    seed = int(lines[4].split()[1])
    dim = int(lines[5].split()[1])
    rows = [lines[6 + i].split()[2:] for i in range(len(classes))]
    weights = np.array([[float(v) for v in r] for r in rows]).reshape(len(classes), dim)
    pos = 6 + len(classes)
    bias = np.array([float(v) for v in lines[pos].split()[1:]])
    feat = None
    if scheme != "none":
        if lines[pos + 1] != "featurizer":
            raise ValueError("missing featurizer section")
        feat = Featurizer.from_lines(scheme, lines[pos + 2:])
    return ClassifierModel(weights, bias, classes, reg, seed, feat)
