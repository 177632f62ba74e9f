"""Numeric features for token sequences.

Bag-of-words counts, smoothed TF-IDF, and CBOW / skip-gram embeddings trained
with negative sampling.  Embedding training runs in :mod:`dizikit.kernels`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .represent import TokenSequence

EMBEDDING_FORMAT = "dizikit-embeddings"
FORMAT_VERSION = 1


@dataclass
class Vocabulary:
    """Token to index map in first-seen order, with document frequencies."""

    tokens: list[str] = field(default_factory=list)
    df: list[int] = field(default_factory=list)
    n_docs: int = 0

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: object) -> bool:
        return token in self.index

    def to_lines(self) -> list[str]:
        lines = [f"vocab {len(self.tokens)} {self.n_docs}"]
        lines += [f"{t} {d}" for t, d in zip(self.tokens, self.df)]
        return lines

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Vocabulary":
        it = iter(lines)
        head = next(it).split()
        if head[0] != "vocab":
            raise ValueError("expected a vocab section")
        size, n_docs = int(head[1]), int(head[2])
        tokens, df = [], []
        for _ in range(size):
            tok, count = next(it).split()
            tokens.append(tok)
            df.append(int(count))
        return cls(tokens, df, n_docs)


def build_vocabulary(corpus: Sequence[TokenSequence]) -> Vocabulary:
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    tokens: list[str] = []
    index: dict[str, int] = {}
    df: list[int] = []
    for piece in corpus:
        for tok in dict.fromkeys(piece.tokens):
            if tok not in index:
                index[tok] = len(tokens)
                tokens.append(tok)
                df.append(0)
            df[index[tok]] += 1
    return Vocabulary(tokens, df, len(corpus))


@dataclass(frozen=True)
class SparseVector:
    dim: int
    entries: dict  # index -> weight

    def dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        for i, w in self.entries.items():
            out[i] = w
        return out

    def __getitem__(self, i: int) -> float:
        return self.entries.get(i, 0.0)


def bow_vector(piece: TokenSequence, vocab: Vocabulary) -> SparseVector:
    counts: dict[int, float] = {}
    for tok in piece.tokens:
        i = vocab.index.get(tok)
        if i is not None:
            counts[i] = counts.get(i, 0.0) + 1.0
    return SparseVector(len(vocab), counts)


def idf(df: int, n_docs: int) -> float:
    return math.log((1 + n_docs) / (1 + df))


def tfidf_vector(piece: TokenSequence, vocab: Vocabulary, n_docs: int | None = None,
                 normalize: bool = True) -> SparseVector:
    """tf * ln((1 + N) / (1 + df)), with tf = count / piece length, then L2-normalised.

    Document frequencies come from ``vocab`` (the training corpus); ``n_docs``
    defaults to the number of documents the vocabulary was built from.
    """
    if n_docs is None:
        n_docs = vocab.n_docs
    if n_docs < 1:
        raise ValueError("n_docs must be at least 1")
    length = len(piece.tokens)
    raw = bow_vector(piece, vocab).entries
    weights = {i: (c / length) * idf(vocab.df[i], n_docs) for i, c in raw.items()}
    if not normalize:
        return SparseVector(len(vocab), weights)
    norm = math.sqrt(sum(w * w for w in weights.values()))
    if norm > 0:
        weights = {i: w / norm for i, w in weights.items() if w != 0.0}
    else:
        weights = {}
    return SparseVector(len(vocab), weights)


# --- embeddings ---------------------------------------------------------------

MODES = ("cbow", "skipgram")


@dataclass(frozen=True)
class EmbeddingParams:
    mode: str = "skipgram"
    dim: int = 32
    window: int = 4
    negative: int = 5
    epochs: int = 30
    lr: float = 0.025
    min_lr: float = 0.0001
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dim < 1 or self.window < 1 or self.negative < 1 or self.epochs < 0:
            raise ValueError("dim, window and negative must be >= 1 and epochs >= 0")


@dataclass
class EmbeddingModel:
    vocab: Vocabulary
    W_in: np.ndarray
    W_out: np.ndarray
    params: EmbeddingParams
    epoch_loss: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.W_in.shape != self.W_out.shape:
            raise ValueError("input and output matrices must have the same shape")
        if self.W_in.shape[0] != len(self.vocab):
            raise ValueError("matrix rows must match the vocabulary size")

    @property
    def dim(self) -> int:
        return self.W_in.shape[1]

    def vector(self, token: str) -> np.ndarray:
        return self.W_in[self.vocab.index[token]]

    def to_lines(self) -> list[str]:
        p = self.params
        lines = [
            f"{EMBEDDING_FORMAT} {FORMAT_VERSION}",
            f"mode {p.mode} dim {p.dim} window {p.window} negative {p.negative} "
            f"epochs {p.epochs} lr {p.lr!r} min_lr {p.min_lr!r} seed {p.seed}",
        ]
        lines += self.vocab.to_lines()
        lines.append("input")
        lines += [" ".join([t] + [repr(float(x)) for x in row]) for t, row in zip(self.vocab.tokens, self.W_in)]
        lines.append("output")
        lines += [" ".join([t] + [repr(float(x)) for x in row]) for t, row in zip(self.vocab.tokens, self.W_out)]
        return lines

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "EmbeddingModel":
        it = iter(lines)
        magic = next(it).split()
        if magic != [EMBEDDING_FORMAT, str(FORMAT_VERSION)]:
            raise ValueError(f"not a {EMBEDDING_FORMAT} v{FORMAT_VERSION} block")
        kv = next(it).split()
        raw = dict(zip(kv[::2], kv[1::2]))
        params = EmbeddingParams(
            mode=raw["mode"], dim=int(raw["dim"]), window=int(raw["window"]),
            negative=int(raw["negative"]), epochs=int(raw["epochs"]), lr=float(raw["lr"]),
            min_lr=float(raw["min_lr"]), seed=int(raw["seed"]),
        )
        head = next(it)
        size = int(head.split()[1])
        vocab = Vocabulary.from_lines([head] + [next(it) for _ in range(size)])
        matrices = []
        for section in ("input", "output"):
            if next(it).strip() != section:
                raise ValueError(f"expected {section!r} section")
            rows = [next(it).split() for _ in range(size)]
            matrices.append(np.array([[float(x) for x in r[1:]] for r in rows]).reshape(size, params.dim))
        return cls(vocab, matrices[0], matrices[1], params)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.to_lines()) + "\n")

    @classmethod
    def load(cls, path) -> "EmbeddingModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_lines(fh.read().splitlines())


def noise_distribution(vocab: Vocabulary, corpus: Sequence[TokenSequence]) -> np.ndarray:
    """Unigram counts raised to 3/4, normalised."""
    counts = np.zeros(len(vocab))
    for piece in corpus:
        for tok in piece.tokens:
            counts[vocab.index[tok]] += 1
    p = counts ** 0.75
    return p / p.sum()


def _pairs(corpus: Sequence[list[int]], window: int, mode: str):
    """Training examples in corpus order.

    Skip-gram yields (center, context) pairs; CBOW yields (target, contexts).
    The full symmetric window is used at every position.
    """
    for ids in corpus:
        n = len(ids)
        for i in range(n):
            ctx = [ids[j] for j in range(max(0, i - window), min(n, i + window + 1)) if j != i]
            if mode == "skipgram":
                for c in ctx:
                    yield ids[i], c
            elif ctx:
                yield ids[i], ctx


def train_embeddings(corpus: Sequence[TokenSequence], params: EmbeddingParams | None = None,
                     backend=None, **overrides) -> EmbeddingModel:
    """Train CBOW or skip-gram vectors with negative sampling.

    Plain SGD, learning rate decayed linearly from ``lr`` to ``min_lr`` over
    all examples.  Negative samples are drawn up front from a
    ``numpy.random.Generator`` seeded with ``params.seed``, so a run is
    bit-reproducible for a given backend.
    """
    params = params or EmbeddingParams()
    if overrides:
        params = EmbeddingParams(**{**params.__dict__, **overrides})
    if not corpus:
        raise ValueError("empty corpus")
    vocab = build_vocabulary(corpus)
    if len(vocab) < 2:
        raise ValueError("need at least two distinct tokens to train embeddings")
    impl = backend or kernels
    rng = np.random.default_rng(params.seed)
    V, d = len(vocab), params.dim
    W_in = (rng.random((V, d)) - 0.5) / d
    W_out = np.zeros((V, d))
    noise = noise_distribution(vocab, corpus)
    ids = [[vocab.index[t] for t in piece.tokens] for piece in corpus]
    examples = list(_pairs(ids, params.window, params.mode))
    model = EmbeddingModel(vocab, W_in, W_out, params)
    n = len(examples)
    if n == 0:
        return model

    targets = np.array([e[0] for e in examples], dtype=np.int64)
    if params.mode == "skipgram":
        contexts = np.array([e[1] for e in examples], dtype=np.int64)
        # the context word is the one being predicted
        centers, predicted = targets, contexts
    else:
        lengths = [len(e[1]) for e in examples]
        ctx_flat = np.array([c for e in examples for c in e[1]], dtype=np.int64)
        ctx_offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)

    total = n * params.epochs
    for epoch in range(params.epochs):
        step = np.arange(epoch * n, (epoch + 1) * n)
        lrs = params.lr - (params.lr - params.min_lr) * step / total
        lrs = np.ascontiguousarray(lrs, dtype=np.float64)
        negatives = rng.choice(V, size=(n, params.negative), p=noise).astype(np.int64)
        if params.mode == "skipgram":
            loss = impl.sgns_epoch(W_in, W_out, centers, predicted, negatives, lrs)
        else:
            loss = impl.cbow_epoch(W_in, W_out, targets, ctx_flat, ctx_offsets, negatives, lrs)
        model.epoch_loss.append(loss / n)
    return model


def embed_piece(piece: TokenSequence, model: EmbeddingModel) -> np.ndarray:
    """Mean of the input vectors of in-vocabulary tokens; zeros when there are none."""
    rows = [model.vocab.index[t] for t in piece.tokens if t in model.vocab]
    if not rows:
        return np.zeros(model.dim)
    return model.W_in[rows].mean(axis=0)


def negative_sampling_loss(center: np.ndarray, context: np.ndarray, negatives: np.ndarray):
    """Loss and gradients for one skip-gram example.

    Returns ``(loss, d_center, d_context, d_negatives)`` for
    ``-log s(u_o . v) - sum_k log s(-u_k . v)``.
    """
    pos = context @ center
    neg = negatives @ center
    loss = np.logaddexp(0.0, -pos) + np.logaddexp(0.0, neg).sum()
    sp = 1.0 / (1.0 + np.exp(-pos))
    sn = 1.0 / (1.0 + np.exp(-neg))
    d_center = -(1.0 - sp) * context + sn @ negatives
    d_context = -(1.0 - sp) * center
    d_negatives = sn[:, None] * center[None, :]
    return float(loss), d_center, d_context, d_negatives
