"""Per-note playing-technique tagging with a linear-chain CRF.

Each note token is an observation and each technique a state.  Path score is
the sum of emission weights of the active features plus tag-to-tag transition
weights; there are no start/stop transitions.  ``decode`` optionally applies a
:class:`RuleSet` that forbids tags or adds score bonuses before the Viterbi
search (the CRF-RULES variant).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import minimize

from . import kernels
from .features import Vocabulary, build_vocabulary
from .notation import DEFAULT_TECHNIQUES, TechniqueRegistry
from .represent import TokenSequence, split_token, token_duration

CRF_FORMAT = "dizikit-crf"
FORMAT_VERSION = 1
TEMPLATE = "local-v1"


class DecodeError(ValueError):
    pass


def token_features(tokens: Sequence[str], i: int) -> list[str]:
    """Feature template: token identity and neighbours, pitch class, duration, edge flags."""
    tok = tokens[i]
    pc, _, dur = split_token(tok)
    feats = [
        "bias",
        f"w={tok}",
        f"w-1={tokens[i - 1] if i > 0 else '<s>'}",
        f"w+1={tokens[i + 1] if i + 1 < len(tokens) else '</s>'}",
        f"pc={pc or 'R'}",
        f"dur={dur}",
    ]
    if i == 0:
        feats.append("first")
    if i == len(tokens) - 1:
        feats.append("last")
    return feats


@dataclass
class CrfModel:
    tags: list[str]
    features: list[str]
    emission: np.ndarray  # features x tags
    transition: np.ndarray  # tags x tags, [previous, current]
    reg: float = 0.1
    seed: int = 0
    template: str = TEMPLATE

    def __post_init__(self):
        T = len(self.tags)
        if self.transition.shape != (T, T):
            raise ValueError("transition matrix must be |tags| x |tags|")
        if self.emission.shape != (len(self.features), T):
            raise ValueError("emission matrix must be |features| x |tags|")
        self.feature_index = {f: i for i, f in enumerate(self.features)}

    def design(self, tokens: Sequence[str]) -> sparse.csr_matrix:
        """Binary position x feature matrix; unknown features are dropped."""
        rows, cols = [], []
        for i in range(len(tokens)):
            for f in token_features(tokens, i):
                j = self.feature_index.get(f)
                if j is not None:
                    rows.append(i)
                    cols.append(j)
        data = np.ones(len(rows))
        return sparse.csr_matrix((data, (rows, cols)), shape=(len(tokens), len(self.features)))

    def emissions(self, tokens: Sequence[str]) -> np.ndarray:
        return np.ascontiguousarray(self.design(tokens) @ self.emission)

    def path_score(self, tokens: Sequence[str], path: Sequence[int]) -> float:
        E = self.emissions(tokens)
        s = sum(E[t, y] for t, y in enumerate(path))
        s += sum(self.transition[a, b] for a, b in zip(path, path[1:]))
        return float(s)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(dumps_crf(self))

    @classmethod
    def load(cls, path) -> "CrfModel":
        with open(path, encoding="utf-8") as fh:
            return loads_crf(fh.read())


@dataclass(frozen=True)
class CrfConfig:
    reg: float = 0.1
    max_iter: int = 200
    tol: float = 1e-6
    seed: int = 0


def _check_sequences(sequences: Sequence[TokenSequence], registry: TechniqueRegistry):
    if not sequences:
        raise ValueError("no training sequences")
    for s in sequences:
        if len(s.tokens) == 0:
            raise ValueError("empty training sequence")
        if s.tags is None or len(s.tags) != len(s.tokens):
            raise ValueError("every training sequence needs one tag per token")
        for t in s.tags:
            if t not in registry:
                raise ValueError(f"unregistered technique tag {t!r}")


class _Problem:
    """Precomputed design matrices and observed counts for one training set."""

    def __init__(self, model: CrfModel, sequences: Sequence[TokenSequence], backend=None):
        self.model = model
        self.impl = backend or kernels
        T = len(model.tags)
        tag_index = {t: i for i, t in enumerate(model.tags)}
        self.X = [model.design(s.tokens) for s in sequences]
        self.Y = [np.array([tag_index[t] for t in s.tags]) for s in sequences]
        F = len(model.features)
        self.observed_emit = np.zeros((F, T))
        self.observed_trans = np.zeros((T, T))
        for X, y in zip(self.X, self.Y):
            onehot = np.zeros((len(y), T))
            onehot[np.arange(len(y)), y] = 1.0
            self.observed_emit += X.T @ onehot
            np.add.at(self.observed_trans, (y[:-1], y[1:]), 1.0)
        self.n = len(sequences)

    def unpack(self, theta):
        F, T = self.model.emission.shape
        return theta[: F * T].reshape(F, T), theta[F * T:].reshape(T, T)

    def objective(self, theta, reg):
        """Mean negative conditional log-likelihood plus ``reg / 2 * ||theta||^2``."""
        W, A = self.unpack(theta)
        A = np.ascontiguousarray(A)
        nll = 0.0
        g_emit = -self.observed_emit.copy()
        g_trans = -self.observed_trans.copy()
        for X, y in zip(self.X, self.Y):
            E = np.ascontiguousarray(X @ W)
            log_z, marg, edge = self.impl.forward_backward(E, A)
            gold = E[np.arange(len(y)), y].sum() + A[y[:-1], y[1:]].sum()
            nll += log_z - gold
            g_emit += X.T @ marg
            g_trans += edge
        grad = np.concatenate([g_emit.ravel(), g_trans.ravel()]) / self.n + reg * theta
        return nll / self.n + 0.5 * reg * float(theta @ theta), grad


def init_model(sequences: Sequence[TokenSequence], registry: TechniqueRegistry = DEFAULT_TECHNIQUES,
               config: CrfConfig | None = None) -> CrfModel:
    """All-zero model over the features seen in ``sequences``."""
    config = config or CrfConfig()
    feats: dict[str, None] = {}
    for s in sequences:
        for i in range(len(s.tokens)):
            feats.update(dict.fromkeys(token_features(s.tokens, i)))
    T = len(registry)
    return CrfModel(registry.names, list(feats), np.zeros((len(feats), T)), np.zeros((T, T)),
                    config.reg, config.seed)


def train_crf(sequences: Sequence[TokenSequence], config: CrfConfig | None = None,
              registry: TechniqueRegistry = DEFAULT_TECHNIQUES, backend=None) -> CrfModel:
    """Maximise the L2-regularised conditional log-likelihood with L-BFGS.

    Expectations come from forward-backward.  Starts from zero weights, so
    ``max_iter=0`` returns the uniform model.
    """
    config = config or CrfConfig()
    _check_sequences(sequences, registry)
    model = init_model(sequences, registry, config)
    if config.max_iter <= 0:
        return model
    problem = _Problem(model, sequences, backend)
    theta0 = np.zeros(model.emission.size + model.transition.size)
    res = minimize(problem.objective, theta0, args=(config.reg,), jac=True, method="L-BFGS-B",
                   options={"maxiter": config.max_iter, "gtol": config.tol})
    W, A = problem.unpack(res.x)
    model.emission = W.copy()
    model.transition = A.copy()
    return model


def marginals(model: CrfModel, tokens: Sequence[str], backend=None) -> np.ndarray:
    impl = backend or kernels
    _, marg, _ = impl.forward_backward(model.emissions(tokens), np.ascontiguousarray(model.transition))
    return marg


# --- rules ---------------------------------------------------------------------

_ATOM_RE = re.compile(r"(?:(prev|next)\.)?([a-z]+)(?:(<=|>=|!=|=|<|>)(\S+))?")
_OPS: dict[str, Callable] = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def _atom(text: str) -> Callable[[Sequence[str], int], bool]:
    m = _ATOM_RE.fullmatch(text)
    if not m:
        raise ValueError(f"cannot read predicate {text!r}")
    shift = {"prev": -1, "next": 1, None: 0}[m.group(1)]
    name, op, value = m.group(2), m.group(3), m.group(4)

    if name in ("always", "first", "last", "rest", "note"):
        if op:
            raise ValueError(f"{name!r} takes no comparison")

        def base(tokens, i):
            if name == "always":
                return True
            if name == "first":
                return i == 0
            if name == "last":
                return i == len(tokens) - 1
            is_rest = tokens[i].startswith("R")
            return is_rest if name == "rest" else not is_rest
    elif name in ("token", "pitch", "octave", "dur"):
        if not op:
            raise ValueError(f"{name!r} needs a comparison, e.g. {name}=...")
        cmp = _OPS[op]
        if name == "dur":
            ref = Fraction(value)

            def base(tokens, i):
                return cmp(token_duration(tokens[i]), ref)
        elif name == "octave":
            ref = int(value)

            def base(tokens, i):
                octv = split_token(tokens[i])[1]
                return octv is not None and cmp(octv, ref)
        elif name == "pitch":
            if op not in ("=", "!="):
                raise ValueError("pitch supports only = and !=")

            def base(tokens, i):
                return cmp(split_token(tokens[i])[0] or "R", value)
        else:
            if op not in ("=", "!="):
                raise ValueError("token supports only = and !=")

            def base(tokens, i):
                return cmp(tokens[i], value)
    else:
        raise ValueError(f"unknown predicate {name!r}")

    def pred(tokens, i):
        j = i + shift
        return 0 <= j < len(tokens) and base(tokens, j)

    return pred


def parse_predicate(words: Sequence[str]) -> Callable[[Sequence[str], int], bool]:
    """``[not] atom (and [not] atom)*``; neighbour atoms are false off the edges."""
    clauses = []
    negate = False
    expect_atom = True
    for w in words:
        if expect_atom and w == "not":
            negate = not negate
            continue
        if expect_atom:
            atom = _atom(w)
            clauses.append((lambda a: (lambda t, i: not a(t, i)))(atom) if negate else atom)
            negate, expect_atom = False, False
        elif w == "and":
            expect_atom = True
        else:
            raise ValueError(f"expected 'and', got {w!r}")
    if expect_atom:
        raise ValueError("incomplete predicate")
    return lambda tokens, i: all(c(tokens, i) for c in clauses)


@dataclass(frozen=True)
class Rule:
    text: str
    predicate: Callable
    forbid: frozenset = frozenset()
    boost: tuple[str, float] | None = None


@dataclass
class RuleSet:
    rules: list[Rule] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rules)

    @classmethod
    def parse(cls, text: str, registry: TechniqueRegistry = DEFAULT_TECHNIQUES) -> "RuleSet":
        """Read ``when <predicate> forbid <tags>`` / ``when <predicate> boost <tag> <score>`` lines."""
        rules = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            words = line.split()
            try:
                if words[0] != "when":
                    raise ValueError("rule must start with 'when'")
                kw = next((k for k, w in enumerate(words) if w in ("forbid", "boost")), None)
                if kw is None:
                    raise ValueError("rule needs 'forbid' or 'boost'")
                pred = parse_predicate(words[1:kw])
                args = words[kw + 1:]
                if words[kw] == "forbid":
                    if not args:
                        raise ValueError("forbid needs at least one tag")
                    tags = frozenset(registry.resolve(a).name for a in args)
                    if len(tags) == len(registry):
                        raise ValueError("rule forbids every tag")
                    rules.append(Rule(line, pred, forbid=tags))
                else:
                    if len(args) != 2:
                        raise ValueError("boost needs a tag and a score")
                    rules.append(Rule(line, pred, boost=(registry.resolve(args[0]).name, float(args[1]))))
            except (ValueError, StopIteration) as exc:
                raise ValueError(f"rules line {lineno}: {exc}") from None
        return cls(rules)

    @classmethod
    def load(cls, path, registry: TechniqueRegistry = DEFAULT_TECHNIQUES) -> "RuleSet":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read(), registry)

    def adjust(self, tokens: Sequence[str], tags: Sequence[str]) -> np.ndarray:
        """Additive score adjustment per (position, tag): -inf where forbidden."""
        index = {t: k for k, t in enumerate(tags)}
        adj = np.zeros((len(tokens), len(tags)))
        for rule in self.rules:
            for i in range(len(tokens)):
                if not rule.predicate(tokens, i):
                    continue
                for t in rule.forbid:
                    if t in index:
                        adj[i, index[t]] = -np.inf
                if rule.boost is not None and rule.boost[0] in index:
                    adj[i, index[rule.boost[0]]] += rule.boost[1]
        return adj


def default_rules(registry: TechniqueRegistry = DEFAULT_TECHNIQUES) -> RuleSet:
    """Rests carry no technique."""
    others = " ".join(t.code for t in registry if t.name != "None")
    return RuleSet.parse(f"when rest forbid {others}\n", registry)


# --- decoding and evaluation ----------------------------------------------------


def decode(model: CrfModel, sequence: TokenSequence | Sequence[str], rules: RuleSet | None = None,
           backend=None) -> list[str]:
    """Highest-scoring tag path; ties go to the lowest tag index."""
    impl = backend or kernels
    tokens = sequence.tokens if isinstance(sequence, TokenSequence) else tuple(sequence)
    if not tokens:
        raise DecodeError("cannot decode an empty sequence")
    E = model.emissions(tokens)
    if rules:
        E = E + rules.adjust(tokens, model.tags)
        dead = np.where(np.all(np.isneginf(E), axis=1))[0]
        if len(dead):
            raise DecodeError(f"rules forbid every tag at position {int(dead[0])} ({tokens[dead[0]]})")
    path, _ = impl.viterbi(np.ascontiguousarray(E), np.ascontiguousarray(model.transition))
    return [model.tags[int(k)] for k in path]


def score_tags(gold: Sequence[Sequence[str]], predicted: Sequence[Sequence[str]],
               tokens: Sequence[Sequence[str]], train_vocab: Vocabulary) -> tuple[float, float | None]:
    """Accuracy and OOV accuracy in percent; OOV accuracy is None when no token is OOV."""
    correct = total = oov_correct = oov_total = 0
    for g_seq, p_seq, t_seq in zip(gold, predicted, tokens):
        for g, p, tok in zip(g_seq, p_seq, t_seq):
            total += 1
            correct += g == p
            if tok not in train_vocab:
                oov_total += 1
                oov_correct += g == p
    if total == 0:
        raise ValueError("empty test set")
    oov = 100.0 * oov_correct / oov_total if oov_total else None
    return 100.0 * correct / total, oov


def evaluate_tagger(model: CrfModel, rules: RuleSet | None, test: Sequence[TokenSequence],
                    train_vocab: Vocabulary) -> tuple[float, float | None]:
    predicted = [decode(model, s, rules) for s in test]
    return score_tags([s.tags for s in test], predicted, [s.tokens for s in test], train_vocab)


@dataclass
class TaggerReport:
    variant: str
    folds: list[tuple[float, float | None]]
    confusion: dict  # (gold, predicted) -> count
    seed: int

    @property
    def accuracy(self) -> float:
        return float(np.mean([a for a, _ in self.folds]))

    @property
    def oov_accuracy(self) -> float | None:
        vals = [o for _, o in self.folds if o is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def disagreements(self) -> int:
        return sum(c for (g, p), c in self.confusion.items() if g != p)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "seed": self.seed,
            "folds": [{"accuracy": round(a, 6), "oov_accuracy": None if o is None else round(o, 6)}
                      for a, o in self.folds],
            "accuracy": round(self.accuracy, 6),
            "oov_accuracy": None if self.oov_accuracy is None else round(self.oov_accuracy, 6),
            "disagreements": self.disagreements,
            "confusion": [{"gold": g, "predicted": p, "count": c}
                          for (g, p), c in sorted(self.confusion.items())],
        }


def cross_validate_tagger(sequences: Sequence[TokenSequence], folds: int = 10,
                          config: CrfConfig | None = None, rules: RuleSet | None = None,
                          registry: TechniqueRegistry = DEFAULT_TECHNIQUES) -> TaggerReport:
    """Seeded k-fold accuracy / OOV accuracy for CRF (or CRF-RULES with ``rules``)."""
    config = config or CrfConfig()
    if len(sequences) < folds:
        raise ValueError(f"{len(sequences)} sequences is fewer than {folds} folds")
    order = np.random.default_rng(config.seed).permutation(len(sequences))
    assignment = np.empty(len(sequences), dtype=int)
    assignment[order] = np.arange(len(sequences)) % folds
    results, confusion = [], {}
    for k in range(folds):
        train = [s for s, a in zip(sequences, assignment) if a != k]
        test = [s for s, a in zip(sequences, assignment) if a == k]
        model = train_crf(train, config, registry)
        vocab = build_vocabulary(train)
        predicted = [decode(model, s, rules) for s in test]
        results.append(score_tags([s.tags for s in test], predicted, [s.tokens for s in test], vocab))
        for s, p in zip(test, predicted):
            for g, q in zip(s.tags, p):
                confusion[(g, q)] = confusion.get((g, q), 0) + 1
    return TaggerReport("crf-rules" if rules else "crf", results, confusion, config.seed)


# --- persistence ---------------------------------------------------------------


def dumps_crf(model: CrfModel) -> str:
    lines = [
        f"{CRF_FORMAT} {FORMAT_VERSION}",
        "tags " + " ".join(model.tags),
        f"reg {model.reg!r}",
        f"seed {model.seed}",
        f"template {model.template}",
        f"features {len(model.features)}",
    ]
    for f, row in zip(model.features, model.emission):
        lines.append(" ".join([f] + [repr(float(v)) for v in row]))
    lines.append("transitions")
    for row in model.transition:
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def loads_crf(text: str) -> CrfModel:
    lines = text.splitlines()
    if lines[0].split() != [CRF_FORMAT, str(FORMAT_VERSION)]:
        raise ValueError(f"not a {CRF_FORMAT} v{FORMAT_VERSION} file")
    tags = lines[1].split()[1:]
    reg = float(lines[2].split()[1])
    seed = int(lines[3].split()[1])
    template = lines[4].split()[1]
    if template != TEMPLATE:
        raise ValueError(f"unknown feature template {template!r}")
    n = int(lines[5].split()[1])
    T = len(tags)
    feats, rows = [], []
    for line in lines[6:6 + n]:
        parts = line.split()
        feats.append(parts[0])
        rows.append([float(v) for v in parts[1:]])
    if lines[6 + n] != "transitions":
        raise ValueError("missing transitions section")
    trans = np.array([[float(v) for v in lines[7 + n + i].split()] for i in range(T)])
    emission = np.array(rows).reshape(n, T)
    return CrfModel(tags, feats, emission, trans, reg, seed, template)
