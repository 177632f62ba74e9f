"""Plain-text numbered notation (``.jp``) scores.

A score file is a block of ``name: value`` header lines followed by the body::

    title: Song of Soochow
    school: South
    key: 1=G
    time: 2/4
    % comments start with a percent sign
    5/ 5/ | 6 - | #4,// 3// 2/ 1!tr |

Each body token is one note or rest::

    [#|b] degree ['...|,...] [/...] [.] [{p/q}] [!code]

``-`` on its own extends the previous note of the same measure by a quarter,
``|`` closes a measure.  See ``docs/formats/jp.md`` for the full grammar.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

PITCH_CLASSES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
_FLAT_NAMES = {"Db": 1, "Eb": 3, "Gb": 6, "Ab": 8, "Bb": 10}

ALLOWED_DENOMINATORS = frozenset({1, 2, 3, 4, 6, 8, 12, 16})
MAX_OCTAVE_SHIFT = 2


class ScoreError(ValueError):
    """A diagnostic raised for malformed score text or invalid score values."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.message = message
        self.line = line
        self.column = column
        if line is None:
            text = message
        elif column is None:
            text = f"line {line}: {message}"
        else:
            text = f"line {line}, column {column}: {message}"
        super().__init__(text)


class School(enum.Enum):
    NORTH = "North"
    SOUTH = "South"
    OTHER = "Other"

    @classmethod
    def parse(cls, text: str) -> "School":
        for member in cls:
            if member.value.lower() == text.strip().lower():
                return member
        raise ValueError(f"unknown school {text!r}")

    @property
    def index(self) -> int:
        return list(School).index(self)


# --- technique registry ---------------------------------------------------


@dataclass(frozen=True)
class TechniqueTag:
    name: str
    code: str


class TechniqueRegistry:
    """Ordered, extensible set of technique tags.

    The order defines tag indices used by the tagger; ``None`` is always
    index 0 so that ties resolve toward "no technique".
    """

    def __init__(self, tags: Iterable[tuple[str, str]] = ()):
        self._tags: list[TechniqueTag] = [TechniqueTag("None", "")]
        self._by_name = {"None": self._tags[0]}
        self._by_code: dict[str, TechniqueTag] = {}
        for name, code in tags:
            self.register(name, code)

    def register(self, name: str, code: str) -> TechniqueTag:
        if not re.fullmatch(r"[A-Za-z][A-Za-z0-9]*", name):
            raise ValueError(f"invalid technique name {name!r}")
        if not re.fullmatch(r"[a-z][a-z0-9]*", code):
            raise ValueError(f"invalid technique code {code!r}")
        if name in self._by_name or code in self._by_code:
            raise ValueError(f"technique {name!r}/{code!r} already registered")
        tag = TechniqueTag(name, code)
        self._tags.append(tag)
        self._by_name[name] = tag
        self._by_code[code] = tag
        return tag

    def __iter__(self):
        return iter(self._tags)

    def __len__(self) -> int:
        return len(self._tags)

    def __contains__(self, name: object) -> bool:
        return name in self._by_name

    @property
    def names(self) -> list[str]:
        return [t.name for t in self._tags]

    def index(self, name: str) -> int:
        return self.names.index(self.by_name(name).name)

    def by_name(self, name: str) -> TechniqueTag:
        try:
            return self._by_name[name]
        except KeyError:
            raise ValueError(f"unknown technique {name!r}") from None

    def by_code(self, code: str) -> TechniqueTag:
        try:
            return self._by_code[code]
        except KeyError:
            raise ValueError(f"unknown technique code {code!r}") from None

    def resolve(self, text: str) -> TechniqueTag:
        """Look a tag up by name or short code."""
        if text in self._by_name:
            return self._by_name[text]
        return self.by_code(text)

    def copy(self) -> "TechniqueRegistry":
        return TechniqueRegistry((t.name, t.code) for t in self._tags[1:])


DEFAULT_TECHNIQUES = TechniqueRegistry(
    [
        ("Tonguing", "tk"),
        ("FlutterTonguing", "ft"),
        ("Trill", "tr"),
        ("UpperAcciaccatura", "ua"),
        ("LowerAcciaccatura", "la"),
        ("Portamento", "po"),
        ("Breath", "br"),
    ]
)


# --- value types ------------------------------------------------------------


def parse_pitch_class(text: str) -> int:
    text = text.strip()
    if text in PITCH_CLASSES:
        return PITCH_CLASSES.index(text)
    if text in _FLAT_NAMES:
        return _FLAT_NAMES[text]
    raise ValueError(f"unknown pitch class {text!r}")


@dataclass(frozen=True)
class KeySignature:
    tonic: int = 0
    octave: int = 4

    def __post_init__(self):
        if not 0 <= self.tonic < 12:
            raise ScoreError(f"tonic must be a pitch class 0-11, got {self.tonic}")

    @property
    def tonic_name(self) -> str:
        return PITCH_CLASSES[self.tonic]

    @property
    def tonic_midi(self) -> int:
        return 12 * (self.octave + 1) + self.tonic

    def __str__(self) -> str:
        if self.octave == 4:
            return f"1={self.tonic_name}"
        return f"1={self.tonic_name}{self.octave}"


@dataclass(frozen=True)
class TimeSignature:
    beats: int = 4
    unit: int = 4

    def __post_init__(self):
        if self.beats < 1:
            raise ScoreError(f"beats per measure must be positive, got {self.beats}")
        if self.unit < 1 or self.unit & (self.unit - 1):
            raise ScoreError(f"beat unit must be a power of two, got {self.unit}")

    @property
    def measure_length(self) -> Fraction:
        """Full measure duration in quarter lengths."""
        return Fraction(self.beats * 4, self.unit)

    def __str__(self) -> str:
        return f"{self.beats}/{self.unit}"


@dataclass(frozen=True)
class NoteEvent:
    degree: int
    accidental: int = 0
    octave: int = 0
    duration: Fraction = Fraction(1)
    technique: str = "None"

    def __post_init__(self):
        if not isinstance(self.duration, Fraction):
            object.__setattr__(self, "duration", Fraction(self.duration))
        if not 0 <= self.degree <= 7:
            raise ScoreError(f"degree must be 0-7, got {self.degree}")
        if self.accidental not in (-1, 0, 1):
            raise ScoreError(f"accidental must be -1, 0 or 1, got {self.accidental}")
        if abs(self.octave) > MAX_OCTAVE_SHIFT:
            raise ScoreError(f"octave shift must be within +-{MAX_OCTAVE_SHIFT}, got {self.octave}")
        if self.duration <= 0:
            raise ScoreError(f"duration must be positive, got {self.duration}")
        if self.duration.denominator not in ALLOWED_DENOMINATORS:
            raise ScoreError(f"unsupported duration {self.duration}")
        if self.degree == 0 and (self.accidental or self.octave or self.technique != "None"):
            raise ScoreError("a rest cannot carry accidentals, octave marks or techniques")

    @property
    def is_rest(self) -> bool:
        return self.degree == 0


@dataclass(frozen=True)
class Measure:
    notes: tuple[NoteEvent, ...]

    @property
    def duration(self) -> Fraction:
        return sum((n.duration for n in self.notes), Fraction(0))

    def __len__(self) -> int:
        return len(self.notes)


@dataclass(frozen=True)
class Score:
    measures: tuple[Measure, ...]
    title: str = ""
    school: School = School.OTHER
    key: KeySignature = field(default_factory=KeySignature)
    time: TimeSignature = field(default_factory=TimeSignature)

    @property
    def notes(self) -> list[NoteEvent]:
        return [n for m in self.measures for n in m.notes]

    def replace_measures(self, measures: Iterable[Measure]) -> "Score":
        return Score(tuple(measures), self.title, self.school, self.key, self.time)


# --- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    measure: int  # 1-based
    expected: Fraction
    actual: Fraction
    line: int | None = None

    def __str__(self) -> str:
        where = f"line {self.line}: " if self.line is not None else ""
        return (f"{where}measure {self.measure} lasts {self.actual} quarter lengths, "
                f"expected {self.expected}")


def validate_measures(score: Score, lines: list[int] | None = None) -> list[Diagnostic]:
    """Return one diagnostic per measure whose length disagrees with the meter.

    The first (anacrusis) and last measures may be shorter than a full bar
    but never longer.
    """
    full = score.time.measure_length
    last = len(score.measures) - 1
    out = []
    for i, measure in enumerate(score.measures):
        total = measure.duration
        if total == full:
            continue
        if (i == 0 or i == last) and 0 < total < full:
            continue
        out.append(Diagnostic(i + 1, full, total, lines[i] if lines else None))
    return out


# --- parsing ------------------------------------------------------------------

_HEADER_RE = re.compile(r"([A-Za-z_]+)\s*:(.*)")
_NOTE_RE = re.compile(
    r"""
    (?P<acc>[#b]?)
    (?P<deg>\d)
    (?P<oct>[',]*)
    (?P<slash>/*)
    (?P<dot>\.?)
    (?:\{(?P<num>\d+)/(?P<den>\d+)\})?
    (?:!(?P<tech>[A-Za-z0-9]+))?
    """,
    re.VERBOSE,
)
_TOKEN_RE = re.compile(r"[^\s|]+|\|")
HEADER_FIELDS = ("title", "school", "key", "time")


def _parse_key(value: str) -> KeySignature:
    m = re.fullmatch(r"1\s*=\s*([A-G][#b]?)(\d)?", value.strip())
    if not m:
        raise ValueError(f"key must look like '1=C' or '1=Bb3', got {value.strip()!r}")
    octave = int(m.group(2)) if m.group(2) else 4
    return KeySignature(parse_pitch_class(m.group(1)), octave)


def _parse_time(value: str) -> TimeSignature:
    m = re.fullmatch(r"(\d+)\s*/\s*(\d+)", value.strip())
    if not m:
        raise ValueError(f"time must look like '2/4', got {value.strip()!r}")
    return TimeSignature(int(m.group(1)), int(m.group(2)))


def _parse_note(tok: str, registry: TechniqueRegistry, lineno: int, col: int) -> NoteEvent:
    m = _NOTE_RE.fullmatch(tok)
    if not m:
        raise ScoreError(f"cannot read note token {tok!r}", lineno, col)
    degree = int(m["deg"])
    if degree > 7:
        raise ScoreError(f"degree {degree} out of range 0-7 in token {tok!r}", lineno, col)
    accidental = {"": 0, "#": 1, "b": -1}[m["acc"]]
    marks = m["oct"]
    if "'" in marks and "," in marks:
        raise ScoreError(f"mixed octave marks in token {tok!r}", lineno, col)
    octave = marks.count("'") - marks.count(",")
    if m["num"] is not None:
        if m["slash"] or m["dot"]:
            raise ScoreError(f"explicit duration cannot be combined with '/' or '.' in {tok!r}",
                             lineno, col)
        if int(m["den"]) == 0:
            raise ScoreError(f"zero denominator in token {tok!r}", lineno, col)
        duration = Fraction(int(m["num"]), int(m["den"]))
    else:
        duration = Fraction(1, 2 ** len(m["slash"]))
        if m["dot"]:
            duration *= Fraction(3, 2)
    technique = "None"
    if m["tech"] is not None:
        try:
            technique = registry.by_code(m["tech"]).name
        except ValueError:
            raise ScoreError(f"unknown technique tag '!{m['tech']}'", lineno, col) from None
    try:
        return NoteEvent(degree, accidental, octave, duration, technique)
    except ScoreError as exc:
        raise ScoreError(f"{exc.message} in token {tok!r}", lineno, col) from None


def parse_score(source: str, registry: TechniqueRegistry = DEFAULT_TECHNIQUES,
                strict: bool = True) -> Score:
    """Parse ``.jp`` text into a :class:`Score`.

    Raises :class:`ScoreError` with a line/column position on any problem.
    With ``strict`` (the default) measure-length violations are errors too;
    pass ``strict=False`` to get the score and check it with
    :func:`validate_measures` yourself.
    """
    if not isinstance(source, str):
        raise ScoreError("score source must be text")
    headers: dict[str, str] = {}
    measures: list[list[NoteEvent]] = []
    measure_lines: list[int] = []
    current: list[NoteEvent] = []
    current_line: int | None = None
    in_body = False

    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("%", 1)[0]
        if not line.strip():
            continue
        if not in_body:
            hm = _HEADER_RE.fullmatch(line.strip())
            if hm:
                name = hm.group(1).lower()
                if name not in HEADER_FIELDS:
                    raise ScoreError(f"unknown header field {hm.group(1)!r}", lineno, 1)
                if name in headers:
                    raise ScoreError(f"duplicate header field {name!r}", lineno, 1)
                headers[name] = hm.group(2).strip()
                continue
            in_body = True
        for tm in _TOKEN_RE.finditer(line):
            tok, col = tm.group(), tm.start() + 1
            if tok == "|":
                if not current:
                    raise ScoreError("empty measure", lineno, col)
                measures.append(current)
                measure_lines.append(current_line)
                current, current_line = [], None
            elif tok == "-":
                if not current:
                    raise ScoreError("'-' must follow a note in the same measure", lineno, col)
                prev = current[-1]
                try:
                    current[-1] = NoteEvent(prev.degree, prev.accidental, prev.octave,
                                            prev.duration + 1, prev.technique)
                except ScoreError as exc:
                    raise ScoreError(exc.message, lineno, col) from None
            else:
                note = _parse_note(tok, registry, lineno, col)
                if current_line is None:
                    current_line = lineno
                current.append(note)
    if current:
        measures.append(current)
        measure_lines.append(current_line)
    if not measures:
        raise ScoreError("score has no measures")

    try:
        title = headers.get("title", "")
        school = School.parse(headers["school"]) if "school" in headers else School.OTHER
        key = _parse_key(headers["key"]) if "key" in headers else KeySignature()
        time = _parse_time(headers["time"]) if "time" in headers else TimeSignature()
    except ValueError as exc:
        raise ScoreError(f"bad header: {exc}") from None

    score = Score(tuple(Measure(tuple(m)) for m in measures), title, school, key, time)
    if strict:
        problems = validate_measures(score, measure_lines)
        if problems:
            d = problems[0]
            raise ScoreError(f"measure {d.measure} lasts {d.actual} quarter lengths, "
                             f"expected {d.expected}", d.line)
    return score


# --- serialization ------------------------------------------------------------

_SLASH_DURATIONS = {Fraction(1, 2 ** k): "/" * k for k in range(5)}


def _duration_text(d: Fraction) -> str:
    if d in _SLASH_DURATIONS:
        return _SLASH_DURATIONS[d]
    undotted = d * Fraction(2, 3)
    if undotted in _SLASH_DURATIONS and undotted <= 1:
        return _SLASH_DURATIONS[undotted] + "."
    if d.denominator == 1:
        return " -" * (d.numerator - 1)
    return f"{{{d.numerator}/{d.denominator}}}"


def format_note(note: NoteEvent, registry: TechniqueRegistry = DEFAULT_TECHNIQUES) -> str:
    acc = {0: "", 1: "#", -1: "b"}[note.accidental]
    marks = "'" * note.octave if note.octave > 0 else "," * -note.octave
    dur = _duration_text(note.duration)
    tech = ""
    if note.technique != "None":
        tech = "!" + registry.by_name(note.technique).code
    if dur.startswith(" "):
        # dash extension: the technique belongs on the note head
        return f"{acc}{note.degree}{marks}{tech}{dur}"
    return f"{acc}{note.degree}{marks}{dur}{tech}"


def serialize_score(score: Score, registry: TechniqueRegistry = DEFAULT_TECHNIQUES,
                    measures_per_line: int = 4) -> str:
    """Render a score as canonical ``.jp`` text."""
    lines = []
    if score.title:
        lines.append(f"title: {score.title}")
    lines.append(f"school: {score.school.value}")
    lines.append(f"key: {score.key}")
    lines.append(f"time: {score.time}")
    body = [" ".join(format_note(n, registry) for n in m.notes) for m in score.measures]
    for i in range(0, len(body), measures_per_line):
        lines.append(" | ".join(body[i:i + measures_per_line]) + " |")
    return "\n".join(lines) + "\n"
