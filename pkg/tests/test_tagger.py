import itertools

import numpy as np
import pytest

from dizikit.features import build_vocabulary
from dizikit.notation import DEFAULT_TECHNIQUES, TechniqueRegistry
from dizikit.represent import TokenSequence
from dizikit.tagger import (
    CrfConfig,
    CrfModel,
    DecodeError,
    RuleSet,
    _Problem,
    cross_validate_tagger,
    decode,
    default_rules,
    evaluate_tagger,
    init_model,
    marginals,
    score_tags,
    train_crf,
)


def brute_force(emit, trans):
    """Best path by enumerating every tag sequence."""
    n, T = emit.shape
    best, best_path = -np.inf, None
    for path in itertools.product(range(T), repeat=n):
        s = sum(emit[t, y] for t, y in enumerate(path)) + sum(trans[a, b] for a, b in zip(path, path[1:]))
        if s > best:
            best, best_path = s, path
    return list(best_path), best


def brute_log_z(emit, trans):
    n, T = emit.shape
    scores = [sum(emit[t, y] for t, y in enumerate(p)) + sum(trans[a, b] for a, b in zip(p, p[1:]))
              for p in itertools.product(range(T), repeat=n)]
    return float(np.logaddexp.reduce(scores))


def test_viterbi_matches_enumeration(backend):
    rng = np.random.default_rng(0)
    for _ in range(200):
        n, T = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        emit, trans = rng.normal(size=(n, T)), rng.normal(size=(T, T))
        path, score = backend.viterbi(emit, trans)
        want, want_score = brute_force(emit, trans)
        assert list(path) == want
        assert score == pytest.approx(want_score, abs=1e-12)


def test_forward_backward_against_enumeration(backend):
    rng = np.random.default_rng(1)
    for _ in range(30):
        n, T = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        emit, trans = rng.normal(size=(n, T)), rng.normal(size=(T, T))
        log_z, marg, edge = backend.forward_backward(emit, trans)
        assert log_z == pytest.approx(brute_log_z(emit, trans), abs=1e-10)
        np.testing.assert_allclose(marg.sum(axis=1), 1.0, atol=1e-9)
        assert edge.sum() == pytest.approx(n - 1, abs=1e-9)


def test_viterbi_ties_go_to_lowest_index(backend):
    path, _ = backend.viterbi(np.zeros((5, 4)), np.zeros((4, 4)))
    assert list(path) == [0] * 5


def seqs(*items):
    return [TokenSequence(tuple(toks.split()), None, tags=tuple(tags.split())) for toks, tags in items]


def _three_tag_registry():
    return TechniqueRegistry([("Trill", "tr"), ("Tonguing", "tk")])


def test_crf_gradient_matches_finite_differences():
    reg = _three_tag_registry()
    data = seqs(("C41 D41 E41", "None Trill Tonguing"), ("D41 C41 E41", "Trill None None"))
    model = init_model(data, reg)
    problem = _Problem(model, data)
    rng = np.random.default_rng(0)
    theta = rng.normal(scale=0.5, size=model.emission.size + model.transition.size)
    _, grad = problem.objective(theta, 0.1)
    h = 1e-6
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        num = (problem.objective(theta + e, 0.1)[0] - problem.objective(theta - e, 0.1)[0]) / (2 * h)
        assert abs(num - grad[i]) / max(abs(num), abs(grad[i]), 1e-12) < 1e-4


def _deterministic_corpus():
    mapping = {"C41": "None", "D41": "Trill", "E40.5": "Tonguing", "G41": "Portamento", "R1": "None"}
    rng = np.random.default_rng(0)
    out = []
    for _ in range(30):
        toks = list(rng.choice(list(mapping), size=int(rng.integers(3, 9))))
        out.append(TokenSequence(tuple(toks), None, tags=tuple(mapping[t] for t in toks)))
    return out


def test_deterministic_corpus_is_learned():
    data = _deterministic_corpus()
    model = train_crf(data, CrfConfig(reg=0.01))
    for s in data:
        assert tuple(decode(model, s)) == s.tags
    acc, oov = evaluate_tagger(model, None, data, build_vocabulary(data))
    assert acc == 100.0 and oov is None


def test_training_is_deterministic():
    data = _deterministic_corpus()
    a = train_crf(data, CrfConfig(seed=3))
    b = train_crf(data, CrfConfig(seed=3))
    np.testing.assert_array_equal(a.emission, b.emission)
    np.testing.assert_array_equal(a.transition, b.transition)


def test_zero_iterations_tags_everything_with_index_zero():
    model = train_crf(_deterministic_corpus(), CrfConfig(max_iter=0))
    assert not model.emission.any() and not model.transition.any()
    assert decode(model, ["C41", "D41", "R1"]) == ["None"] * 3


def test_training_errors():
    with pytest.raises(ValueError):
        train_crf([])
    with pytest.raises(ValueError):
        train_crf(seqs(("C41", "Vibrato")))
    with pytest.raises(ValueError):
        train_crf([TokenSequence((), None, tags=())])
    with pytest.raises(DecodeError):
        decode(train_crf(_deterministic_corpus(), CrfConfig(max_iter=0)), [])


@pytest.fixture(scope="module")
def trained():
    return train_crf(_deterministic_corpus(), CrfConfig(reg=0.5, max_iter=20))


def test_forbid_all_but_none(trained):
    others = " ".join(t.code for t in DEFAULT_TECHNIQUES if t.name != "None")
    rules = RuleSet.parse(f"when always forbid {others}\n")
    assert decode(trained, ["D41", "E40.5", "G41"], rules) == ["None"] * 3


def test_empty_rules_change_nothing(trained):
    toks = ["D41", "E40.5", "G41", "C41"]
    assert decode(trained, toks, RuleSet()) == decode(trained, toks)
    assert decode(trained, toks, RuleSet.parse("# only a comment\n\n")) == decode(trained, toks)


def test_rule_parsing_and_effects(trained):
    rules = RuleSet.parse(
        "# tongue every long note\n"
        "when dur>=1 and note boost tk 50\n"
        "when pitch=C#  forbid tr\n"
        "when prev.rest and not last forbid po\n"
    )
    assert len(rules) == 3
    adj = rules.adjust(["C41", "C#40.5", "R1", "G41", "D41"], trained.tags)
    tk, tr, po = (trained.tags.index(x) for x in ("Tonguing", "Trill", "Portamento"))
    assert adj[0, tk] == 50 and adj[1, tk] == 0 and adj[2, tk] == 0
    assert adj[1, tr] == -np.inf
    assert adj[3, po] == -np.inf and adj[4, po] == 0
    assert decode(trained, ["C41", "D41"], rules) == ["Tonguing", "Tonguing"]


@pytest.mark.parametrize("text", [
    "forbid tr",
    "when always",
    "when always forbid",
    "when always boost tk",
    "when bogus forbid tr",
    "when always forbid zz",
    "when dur forbid tr",
    "when always and forbid tr",
    "when always forbid tk ft tr ua la po br None",
])
def test_bad_rules_are_rejected(text):
    with pytest.raises(ValueError):
        RuleSet.parse(text)


def test_rule_file_with_sharp_tokens(tmp_path):
    path = tmp_path / "r.rules"
    path.write_text("# header\nwhen token=C#41 forbid tr\n")
    rules = RuleSet.load(path)
    assert rules.adjust(["C#41"], DEFAULT_TECHNIQUES.names)[0, DEFAULT_TECHNIQUES.index("Trill")] == -np.inf


def test_all_tags_forbidden_is_reported():
    model = train_crf(_deterministic_corpus(), CrfConfig(max_iter=0))
    rules = RuleSet.parse("when rest forbid tk ft tr ua la po br\nwhen rest forbid None\n")
    with pytest.raises(DecodeError, match="position 1"):
        decode(model, ["C41", "R1"], rules)


def test_default_rules_keep_rests_plain(trained):
    out = decode(trained, ["R1", "R1", "R1"], default_rules())
    assert out == ["None"] * 3


def _random_model(rng, tokens, T=4):
    reg = TechniqueRegistry([(n, c) for n, c in [("Trill", "tr"), ("Tonguing", "tk"), ("Breath", "br")]][: T - 1])
    seq = [TokenSequence(tuple(tokens), None, tags=("None",) * len(tokens))]
    model = init_model(seq, reg)
    model.emission = rng.normal(size=model.emission.shape)
    model.transition = rng.normal(size=model.transition.shape)
    return model


def test_decode_beats_random_paths():
    rng = np.random.default_rng(5)
    tokens = ["C41", "D41", "E41", "R1", "G40.5", "A41", "C41", "D41"]
    model = _random_model(rng, tokens)
    best = decode(model, tokens)
    path = [model.tags.index(t) for t in best]
    best_score = model.path_score(tokens, path)
    for _ in range(1000):
        other = rng.integers(0, len(model.tags), size=len(tokens))
        assert model.path_score(tokens, other) <= best_score + 1e-12


def test_decode_matches_enumeration_through_the_model():
    rng = np.random.default_rng(6)
    for _ in range(20):
        tokens = list(rng.choice(["C41", "D41", "R1", "E40.5"], size=int(rng.integers(1, 6))))
        model = _random_model(rng, tokens, T=int(rng.integers(2, 5)))
        want, _ = brute_force(model.emissions(tokens), model.transition)
        assert decode(model, tokens) == [model.tags[k] for k in want]


def test_boosting_the_winner_keeps_the_path():
    rng = np.random.default_rng(7)
    tokens = ["C41", "D41", "E41", "G41", "A41"]
    for _ in range(30):
        model = _random_model(rng, tokens)
        base = decode(model, tokens)
        pos = int(rng.integers(len(tokens)))
        code = DEFAULT_TECHNIQUES.by_name(base[pos]).code if base[pos] != "None" else "None"
        rules = RuleSet.parse(f"when token={tokens[pos]} boost {code} {rng.uniform(0.1, 5):.3f}\n",
                              TechniqueRegistry([("Trill", "tr"), ("Tonguing", "tk"), ("Breath", "br")]))
        assert decode(model, tokens, rules) == base


def test_marginals_sum_to_one(trained):
    marg = marginals(trained, ["C41", "D41", "R1", "G41"])
    np.testing.assert_allclose(marg.sum(axis=1), 1.0, atol=1e-9)


def _fixed_model():
    """Tags each token by a lookup table through its identity feature."""
    table = {"C41": "None", "D41": "Trill", "E41": "None", "F41": "Trill", "G41": "None"}
    tags = DEFAULT_TECHNIQUES.names
    feats = [f"w={t}" for t in table]
    emission = np.zeros((len(feats), len(tags)))
    for i, t in enumerate(table.values()):
        emission[i, tags.index(t)] = 10.0
    return CrfModel(tags, feats, emission, np.zeros((len(tags), len(tags))))


def test_hand_counted_fixture():
    # 5 notes, 4 right; F41 and G41 are the only out-of-vocabulary notes and one of them is right
    test = seqs(("C41 D41 E41 F41 G41", "None Trill None Trill Tonguing"))
    train_vocab = build_vocabulary([TokenSequence(("C41", "D41", "E41"), None)])
    acc, oov = evaluate_tagger(_fixed_model(), None, test, train_vocab)
    assert acc == 80.0
    assert oov == 50.0


def test_zero_oov_is_undefined_not_perfect():
    test = seqs(("C41 D41", "None Trill"))
    acc, oov = evaluate_tagger(_fixed_model(), None, test, build_vocabulary(test))
    assert acc == 100.0
    assert oov is None
    acc, oov = score_tags([["None"]], [["Trill"]], [["C41"]], build_vocabulary(test))
    assert (acc, oov) == (0.0, None)


def test_model_round_trip(tmp_path, trained):
    path = tmp_path / "crf.model"
    trained.save(path)
    again = CrfModel.load(path)
    np.testing.assert_array_equal(again.emission, trained.emission)
    np.testing.assert_array_equal(again.transition, trained.transition)
    assert again.tags == trained.tags and again.features == trained.features
    toks = ["C41", "D41", "E40.5", "G41"]
    assert decode(again, toks) == decode(trained, toks)


def test_per_school_models_are_independent(synth_scores):
    from dizikit.notation import School
    from dizikit.represent import tokenize

    north = [tokenize(s) for s in synth_scores if s.school is School.NORTH][:20]
    south = [tokenize(s) for s in synth_scores if s.school is School.SOUTH][:20]
    config = CrfConfig(max_iter=30)
    n_alone = train_crf(north, config)
    train_crf(south, config)
    n_again = train_crf(north, config)
    np.testing.assert_array_equal(n_alone.emission, n_again.emission)
    south_tokens = {t for s in south for t in s.tokens}
    assert not any(f"w={t}" in n_alone.feature_index for t in south_tokens)


def test_cross_validation_report(synth_scores):
    from dizikit.represent import tokenize

    data = [tokenize(s) for s in synth_scores[:20]]
    report = cross_validate_tagger(data, folds=4, config=CrfConfig(max_iter=20))
    assert len(report.folds) == 4
    assert 0 <= report.accuracy <= 100
    ruled = cross_validate_tagger(data, folds=4, config=CrfConfig(max_iter=20), rules=default_rules())
    assert ruled.variant == "crf-rules"
    assert report.to_dict()["disagreements"] == report.disagreements
