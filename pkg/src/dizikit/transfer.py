"""Style transfer: classifier-guided melody mutation, then technique re-tagging.

Melody transfer is single-proposal hill climbing.  Each iteration proposes
one random mutation (raise/lower a note by 1-2 semitones, split a note,
merge two neighbours) and keeps it only if the classifier still predicts the
piece's initial label while that label's probability strictly drops.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .classify import ClassifierModel, predict_piece
from .musicxml import MAJOR_SCALE, export_musicxml, note_pitch
from .notation import (
    ALLOWED_DENOMINATORS,
    DEFAULT_TECHNIQUES,
    KeySignature,
    Measure,
    NoteEvent,
    Score,
    School,
    TechniqueRegistry,
    parse_score,
    serialize_score,
    validate_measures,
)
from .represent import segment_scores, tokenize
from .tagger import CrfModel, RuleSet, decode, default_rules

SPLIT_PATTERNS = (
    (Fraction(1, 2), Fraction(1, 2)),
    (Fraction(1, 3), Fraction(2, 3)),
    (Fraction(2, 3), Fraction(1, 3)),
    (Fraction(1, 3), Fraction(1, 3), Fraction(1, 3)),
)
D4, E6 = 62, 88


class TransferError(ValueError):
    pass


class MutationKind(enum.Enum):
    RAISE = "RaisePitch"
    LOWER = "LowerPitch"
    SPLIT = "SplitNote"
    MERGE = "MergeNotes"


@dataclass(frozen=True)
class Mutation:
    kind: MutationKind
    position: int  # index into the flattened note list
    param: int | tuple[Fraction, ...] | None = None

    def __str__(self) -> str:
        if self.kind is MutationKind.SPLIT:
            param = "(" + ",".join(str(f) for f in self.param) + ")"
        elif self.param is None:
            param = "-"
        else:
            param = str(self.param)
        return f"{self.kind.value} {self.position} {param}"


@dataclass(frozen=True)
class TransferConfig:
    iterations: int = 60
    checkpoints: tuple[int, ...] = (0, 20, 60)
    low: int = D4  # playable range, MIDI numbers
    high: int = E6
    window: int = 4
    include_rests: bool = True
    force: bool = False
    seed: int = 0


@dataclass
class TraceEntry:
    iteration: int
    mutation: Mutation | None
    accepted: bool
    p_before: float
    p_after: float
    label_after: School | None = None
    window: int = 0
    note: str = ""

    def to_line(self) -> str:
        mut = str(self.mutation) if self.mutation else "- - -"
        label = self.label_after.value if self.label_after else "-"
        return (f"{self.window}\t{self.iteration}\t{mut.replace(' ', chr(9))}\t{int(self.accepted)}\t"
                f"{self.p_before!r}\t{self.p_after!r}\t{label}\t{self.note or '-'}")


TRACE_HEADER = "window\titeration\tkind\tposition\tparam\taccepted\tp_before\tp_after\tlabel\tnote"


# --- pitch spelling ------------------------------------------------------------

# semitone above the tonic -> (degree, accidental), sharps only
_SPELLING = {off: (deg + 1, 0) for deg, off in enumerate(MAJOR_SCALE)}
for _off in range(12):
    if _off not in _SPELLING:
        _SPELLING[_off] = (_SPELLING[_off - 1][0], 1)


def respell(midi: int, key: KeySignature) -> tuple[int, int, int]:
    """Canonical (degree, accidental, octave shift) for a MIDI pitch in ``key``."""
    shift, off = divmod(midi - key.tonic_midi, 12)
    degree, acc = _SPELLING[off]
    return degree, acc, shift


# --- mutations ------------------------------------------------------------------


def _locate(score: Score) -> list[tuple[int, int]]:
    return [(m, k) for m, measure in enumerate(score.measures) for k in range(len(measure.notes))]


def _shifted(note: NoteEvent, key: KeySignature, semitones: int) -> NoteEvent:
    midi = note_pitch(note, key).midi + semitones
    degree, acc, octave = respell(midi, key)
    return NoteEvent(degree, acc, octave, note.duration, note.technique)


def _pitch_ok(note: NoteEvent, key: KeySignature, semitones: int, config: TransferConfig) -> bool:
    if note.is_rest:
        return False
    midi = note_pitch(note, key).midi + semitones
    if not config.low <= midi <= config.high:
        return False
    return abs(respell(midi, key)[2]) <= 2


def _split_ok(note: NoteEvent, pattern: Sequence[Fraction]) -> bool:
    return not note.is_rest and all((note.duration * f).denominator in ALLOWED_DENOMINATORS for f in pattern)


def valid_mutations(score: Score, kind: MutationKind, config: TransferConfig = TransferConfig()) -> list[Mutation]:
    """Every applicable mutation of one kind, in position order."""
    out = []
    flat = _locate(score)
    for pos, (m, k) in enumerate(flat):
        note = score.measures[m].notes[k]
        if kind in (MutationKind.RAISE, MutationKind.LOWER):
            sign = 1 if kind is MutationKind.RAISE else -1
            out += [Mutation(kind, pos, s) for s in (1, 2) if _pitch_ok(note, score.key, sign * s, config)]
        elif kind is MutationKind.SPLIT:
            out += [Mutation(kind, pos, p) for p in SPLIT_PATTERNS if _split_ok(note, p)]
        else:
            if k + 1 >= len(score.measures[m].notes):
                continue
            nxt = score.measures[m].notes[k + 1]
            if note.is_rest or nxt.is_rest:
                continue
            if (note.duration + nxt.duration).denominator in ALLOWED_DENOMINATORS:
                out.append(Mutation(kind, pos))
    return out


def apply_mutation(score: Score, mutation: Mutation, config: TransferConfig = TransferConfig()) -> Score:
    """Return a new score with ``mutation`` applied; measure lengths never change.

    Split pieces keep the pitch; only the first keeps the technique.  A merge
    keeps the first note's pitch and technique with the summed duration.
    """
    flat = _locate(score)
    if not 0 <= mutation.position < len(flat):
        raise TransferError(f"position {mutation.position} out of range")
    m, k = flat[mutation.position]
    notes = list(score.measures[m].notes)
    note = notes[k]
    kind = mutation.kind
    if kind in (MutationKind.RAISE, MutationKind.LOWER):
        if mutation.param not in (1, 2):
            raise TransferError("pitch mutations move by 1 or 2 semitones")
        semis = mutation.param if kind is MutationKind.RAISE else -mutation.param
        if not _pitch_ok(note, score.key, semis, config):
            raise TransferError(f"cannot move note {mutation.position} by {semis} semitones")
        notes[k] = _shifted(note, score.key, semis)
    elif kind is MutationKind.SPLIT:
        pattern = tuple(mutation.param or ())
        if sum(pattern) != 1 or pattern not in SPLIT_PATTERNS:
            raise TransferError(f"unknown split pattern {mutation.param}")
        if not _split_ok(note, pattern):
            raise TransferError(f"cannot split note {mutation.position} as {pattern}")
        parts = [NoteEvent(note.degree, note.accidental, note.octave, note.duration * f,
                           note.technique if i == 0 else "None") for i, f in enumerate(pattern)]
        notes[k:k + 1] = parts
    else:
        if k + 1 >= len(notes):
            raise TransferError("merge needs a following note in the same measure")
        nxt = notes[k + 1]
        if note.is_rest or nxt.is_rest:
            raise TransferError("merge applies to two notes, not rests")
        total = note.duration + nxt.duration
        if total.denominator not in ALLOWED_DENOMINATORS:
            raise TransferError(f"merged duration {total} is not representable")
        notes[k:k + 2] = [NoteEvent(note.degree, note.accidental, note.octave, total, note.technique)]
    measures = list(score.measures)
    measures[m] = Measure(tuple(notes))
    return score.replace_measures(measures)


# --- melody transfer -------------------------------------------------------------


def _label_prob(classifier: ClassifierModel, score: Score, label: School, include_rests: bool):
    pred, probs = predict_piece(classifier, tokenize(score, include_rests))
    return pred, float(probs[classifier.classes.index(label)])


@dataclass
class MelodyResult:
    score: Score
    trace: list[TraceEntry]
    snapshots: dict[int, Score]
    initial_label: School
    p_start: float
    p_end: float


def melody_transfer(piece: Score, classifier: ClassifierModel, iterations: int | None = None,
                    seed: int | None = None, config: TransferConfig = TransferConfig(),
                    window_id: int = 0) -> MelodyResult:
    """Hill-climb away from the piece's style while keeping its predicted label.

    A proposal is kept iff the predicted label still equals the initial label
    and the initial label's probability strictly decreases.  The initial
    label must match the piece's school unless ``config.force`` is set.
    """
    iterations = config.iterations if iterations is None else iterations
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    initial, probs = predict_piece(classifier, tokenize(piece, config.include_rests))
    p_cur = float(probs[classifier.classes.index(initial)])
    if initial != piece.school and not config.force:
        raise TransferError(f"classifier predicts {initial.value} for a {piece.school.value} piece")

    current = piece
    trace: list[TraceEntry] = []
    snapshots = {0: piece} if 0 in config.checkpoints else {}
    p_start = p_cur
    kinds = list(MutationKind)
    for it in range(1, iterations + 1):
        options = [(kind, valid_mutations(current, kind, config)) for kind in kinds]
        options = [(kind, muts) for kind, muts in options if muts]
        if not options:
            trace.append(TraceEntry(it, None, False, p_cur, p_cur, None, window_id, "no valid mutation"))
            break
        _, muts = options[int(rng.integers(len(options)))]
        mutation = muts[int(rng.integers(len(muts)))]
        candidate = apply_mutation(current, mutation, config)
        label, p_new = _label_prob(classifier, candidate, initial, config.include_rests)
        accepted = label == initial and p_new < p_cur
        trace.append(TraceEntry(it, mutation, accepted, p_cur, p_new, label, window_id))
        if accepted:
            current, p_cur = candidate, p_new
        if it in config.checkpoints:
            snapshots[it] = current
    for c in config.checkpoints:
        if c not in snapshots and c <= iterations:
            snapshots[c] = current
    return MelodyResult(current, trace, snapshots, initial, p_start, p_cur)


# --- technique transfer -------------------------------------------------------


def technique_transfer(score: Score, tagger: CrfModel, rules: RuleSet | None = None,
                       registry: TechniqueRegistry = DEFAULT_TECHNIQUES) -> Score:
    """Replace every note's technique with the target-school tagger's decoding.

    Rests are always constrained to no technique, in addition to ``rules``.
    """
    seq = tokenize(score, include_rests=True)
    if not seq.tokens:
        return score
    combined = RuleSet(default_rules(registry).rules + (rules.rules if rules else []))
    tags = iter(decode(tagger, seq, combined))
    measures = []
    for measure in score.measures:
        notes = []
        for n in measure.notes:
            notes.append(NoteEvent(n.degree, n.accidental, n.octave, n.duration, next(tags)))
        measures.append(Measure(tuple(notes)))
    return score.replace_measures(measures)


# --- whole-score pipeline -------------------------------------------------------


def classify_score(score: Score, classifier: ClassifierModel, window: int = 4,
                   include_rests: bool = True) -> tuple[School, np.ndarray]:
    """Mean of the per-window class distributions (whole score if shorter than a window)."""
    pieces, _ = segment_scores(score, window)
    if not pieces:
        pieces = [score]
    probs = np.mean([predict_piece(classifier, tokenize(p, include_rests))[1] for p in pieces], axis=0)
    return classifier.classes[int(np.argmax(probs))], probs


@dataclass
class TransferResult:
    score: Score
    trace: list[TraceEntry]
    checkpoints: dict[int, Score]
    exports: dict[int, tuple[str, str]]  # checkpoint -> (.jp text, MusicXML text)
    technique_counts: dict[int, Counter]
    probabilities: dict[int, list[float]] = field(default_factory=dict)

    def trace_text(self) -> str:
        return "\n".join([TRACE_HEADER] + [e.to_line() for e in self.trace]) + "\n"

    def summary_text(self, classes: Sequence[School]) -> str:
        names = [c.value for c in classes]
        lines = ["checkpoint\t" + "\t".join(f"p_{n}" for n in names) + "\ttechniques"]
        for c in sorted(self.checkpoints):
            counts = self.technique_counts[c]
            tech = ",".join(f"{k}={v}" for k, v in sorted(counts.items())) or "-"
            probs = "\t".join(f"{p:.6f}" for p in self.probabilities.get(c, []))
            lines.append(f"{c}\t{probs}\t{tech}")
        return "\n".join(lines) + "\n"


def run_style_transfer(score: Score, source_school: School, target_school: School,
                       classifier: ClassifierModel, tagger: CrfModel, rules: RuleSet | None = None,
                       config: TransferConfig = TransferConfig(),
                       registry: TechniqueRegistry = DEFAULT_TECHNIQUES) -> TransferResult:
    """Melody transfer per window, re-tagging with the target school's tagger, exports per checkpoint.

    Windows the classifier does not assign to ``source_school`` are passed
    through unchanged (noted in the trace) unless ``config.force`` is set.
    Leftover measures after the last full window are never mutated.
    """
    if source_school not in classifier.classes:
        raise TransferError(f"classifier was not trained on {source_school.value}")
    source = Score(score.measures, score.title, source_school, score.key, score.time)
    pieces, rest = segment_scores(source, config.window)
    checkpoints = sorted(c for c in set(config.checkpoints) | {config.iterations} if c <= config.iterations)
    per_window: list[dict[int, Score]] = []
    trace: list[TraceEntry] = []
    for w, piece in enumerate(pieces):
        try:
            result = melody_transfer(piece, classifier, config.iterations, None,
                                     _window_config(config, w), window_id=w)
        except TransferError as exc:
            trace.append(TraceEntry(0, None, False, float("nan"), float("nan"), None, w, f"skipped: {exc}"))
            per_window.append({c: piece for c in checkpoints})
            continue
        trace += result.trace
        per_window.append({c: result.snapshots.get(c, result.score) for c in checkpoints})

    out_checkpoints, exports, counts, probs = {}, {}, {}, {}
    for c in checkpoints:
        measures = [m for snap in per_window for m in snap[c].measures] + rest
        melody = Score(tuple(measures), score.title, target_school, score.key, score.time)
        tagged = technique_transfer(melody, tagger, rules, registry)
        _check_structure(score, tagged)
        jp = serialize_score(tagged, registry)
        parse_score(jp, registry)
        out_checkpoints[c] = tagged
        exports[c] = (jp, export_musicxml(tagged, registry))
        counts[c] = Counter(n.technique for n in tagged.notes if n.technique != "None")
        probs[c] = [float(p) for p in classify_score(melody, classifier, config.window, config.include_rests)[1]]
    final = out_checkpoints[checkpoints[-1]]
    return TransferResult(final, trace, out_checkpoints, exports, counts, probs)


def _window_config(config: TransferConfig, window: int) -> TransferConfig:
    seed = int(np.random.default_rng([config.seed, window]).integers(2 ** 32))
    return TransferConfig(config.iterations, config.checkpoints, config.low, config.high, config.window,
                          config.include_rests, config.force, seed)


def _check_structure(before: Score, after: Score) -> None:
    if len(before.measures) != len(after.measures):
        raise TransferError("measure count changed")
    for i, (a, b) in enumerate(zip(before.measures, after.measures)):
        if a.duration != b.duration:
            raise TransferError(f"measure {i + 1} changed length from {a.duration} to {b.duration}")
    if validate_measures(after) != validate_measures(before):
        raise TransferError("transfer changed measure validity")
