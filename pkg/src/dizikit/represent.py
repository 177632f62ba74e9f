"""Token representation of scores and fixed-length windowing."""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

from .musicxml import note_pitch
from .notation import NoteEvent, Score, School

_TOKEN_RE = re.compile(r"(?:(?P<pc>[A-G]#?)(?P<oct>-?\d)|R)(?P<dur>\d+(?:\.\d+)?|\d+/\d+)")


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]
    label: School
    source: tuple[str, int, int] = ("", 1, 0)  # title, first measure, last measure (1-based)
    tags: tuple[str, ...] | None = None  # technique per token, when known

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_text(cls, text: str, label: School = School.OTHER) -> "TokenSequence":
        return cls(tuple(text.split()), label)


def duration_text(d: Fraction) -> str:
    """Quarter-length text: minimal decimal when exact, else ``p/q``."""
    if d.denominator == 1:
        return str(d.numerator)
    den = d.denominator
    while den % 2 == 0:
        den //= 2
    while den % 5 == 0:
        den //= 5
    if den != 1:
        return f"{d.numerator}/{d.denominator}"
    text = f"{d.numerator / d.denominator:.10f}".rstrip("0")
    return text


def note_token(note: NoteEvent, key) -> str:
    dur = duration_text(note.duration)
    if note.is_rest:
        return "R" + dur
    return f"{note_pitch(note, key)}{dur}"


def split_token(token: str) -> tuple[str | None, int | None, str]:
    """Return ``(pitch class, octave, duration text)``; pitch parts are None for rests."""
    m = _TOKEN_RE.fullmatch(token)
    if not m:
        raise ValueError(f"not a note token: {token!r}")
    octave = int(m["oct"]) if m["oct"] is not None else None
    return m["pc"], octave, m["dur"]


def token_duration(token: str) -> Fraction:
    return Fraction(split_token(token)[2])


def tokenize(score: Score, include_rests: bool = True, measures: range | None = None) -> TokenSequence:
    """One token per note event, e.g. quarter Do in ``1=C`` becomes ``C41``.

    Technique tags are not part of the token; they ride along in ``tags``.
    """
    if measures is None:
        measures = range(len(score.measures))
    tokens, tags = [], []
    for i in measures:
        for note in score.measures[i].notes:
            if note.is_rest and not include_rests:
                continue
            tokens.append(note_token(note, score.key))
            tags.append(note.technique)
    first = measures.start + 1 if len(measures) else 1
    last = measures.stop if len(measures) else 0
    return TokenSequence(tuple(tokens), score.school, (score.title, first, last), tuple(tags))


def segment(score: Score, window: int = 4, include_rests: bool = True) -> list[TokenSequence]:
    """Non-overlapping windows of exactly ``window`` measures; the remainder is dropped."""
    if window < 1:
        raise ValueError("window must be at least 1")
    n = len(score.measures) // window
    return [tokenize(score, include_rests, range(k * window, (k + 1) * window)) for k in range(n)]


def segment_scores(score: Score, window: int = 4) -> tuple[list[Score], list]:
    """Cut a score into window-sized sub-scores plus the leftover measures."""
    n = len(score.measures) // window
    pieces = [score.replace_measures(score.measures[k * window:(k + 1) * window]) for k in range(n)]
    return pieces, list(score.measures[n * window:])
