"""MusicXML 3.1 export for numbered-notation scores.

Playing techniques are written as lyric syllables (verse 1, placed below the
staff) carrying the technique's short code, e.g. ``tk`` for tonguing.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from fractions import Fraction

from .notation import (
    ALLOWED_DENOMINATORS,
    DEFAULT_TECHNIQUES,
    PITCH_CLASSES,
    KeySignature,
    NoteEvent,
    Score,
    TechniqueRegistry,
)

MAJOR_SCALE = (0, 2, 4, 5, 7, 9, 11)
# circle-of-fifths position of each major tonic, C=0
_FIFTHS = {0: 0, 7: 1, 2: 2, 9: 3, 4: 4, 11: 5, 6: 6, 1: 7, 5: -1, 10: -2, 3: -3, 8: -4}
_TYPES = {
    Fraction(4): "whole",
    Fraction(2): "half",
    Fraction(1): "quarter",
    Fraction(1, 2): "eighth",
    Fraction(1, 4): "16th",
    Fraction(1, 8): "32nd",
    Fraction(1, 16): "64th",
}
_DOCTYPE = ('<!DOCTYPE score-partwise PUBLIC "-//Recordare//DTD MusicXML 3.1 Partwise//EN" '
            '"http://www.musicxml.org/dtds/partwise.dtd">')


class MusicXMLError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Pitch:
    midi: int

    @property
    def name(self) -> str:
        return PITCH_CLASSES[self.midi % 12]

    @property
    def octave(self) -> int:
        return self.midi // 12 - 1

    @property
    def step(self) -> str:
        return self.name[0]

    @property
    def alter(self) -> int:
        return 1 if self.name.endswith("#") else 0

    def __str__(self) -> str:
        return f"{self.name}{self.octave}"


def degree_to_pitch(degree: int, accidental: int, octave_shift: int, key: KeySignature) -> Pitch:
    if not 1 <= degree <= 7:
        raise ValueError(f"degree must be 1-7, got {degree}")
    return Pitch(key.tonic_midi + MAJOR_SCALE[degree - 1] + accidental + 12 * octave_shift)


def note_pitch(note: NoteEvent, key: KeySignature) -> Pitch | None:
    if note.is_rest:
        return None
    return degree_to_pitch(note.degree, note.accidental, note.octave, key)


def divisions_for(score: Score) -> int:
    """Smallest divisions-per-quarter making every duration integral."""
    div = 1
    for note in score.notes:
        div = math.lcm(div, note.duration.denominator)
    return div


def _type_and_dots(duration: Fraction) -> tuple[str | None, int]:
    if duration in _TYPES:
        return _TYPES[duration], 0
    base = duration * Fraction(2, 3)
    if base in _TYPES:
        return _TYPES[base], 1
    return None, 0


def _sub(parent: ET.Element, tag: str, text: object = None, **attrib) -> ET.Element:
    el = ET.SubElement(parent, tag, attrib)
    if text is not None:
        el.text = str(text)
    return el


def _note_element(note: NoteEvent, key: KeySignature, divisions: int,
                  registry: TechniqueRegistry) -> ET.Element:
    d = note.duration
    if d.denominator not in ALLOWED_DENOMINATORS:
        raise MusicXMLError(f"unrepresentable duration {d}")
    el = ET.Element("note")
    if note.is_rest:
        _sub(el, "rest")
    else:
        p = note_pitch(note, key)
        pitch = _sub(el, "pitch")
        _sub(pitch, "step", p.step)
        if p.alter:
            _sub(pitch, "alter", p.alter)
        _sub(pitch, "octave", p.octave)
    _sub(el, "duration", d * divisions)
    triplet = d.denominator % 3 == 0
    shown = d * Fraction(3, 2) if triplet else d
    note_type, dots = _type_and_dots(shown)
    if note_type:
        _sub(el, "type", note_type)
    for _ in range(dots):
        _sub(el, "dot")
    if not note.is_rest and p.alter:
        _sub(el, "accidental", "sharp")
    if triplet:
        tm = _sub(el, "time-modification")
        _sub(tm, "actual-notes", 3)
        _sub(tm, "normal-notes", 2)
    if note.technique != "None":
        lyric = _sub(el, "lyric", number="1", placement="below")
        _sub(lyric, "syllabic", "single")
        _sub(lyric, "text", registry.by_name(note.technique).code)
    return el


def export_musicxml(score: Score, registry: TechniqueRegistry = DEFAULT_TECHNIQUES) -> str:
    """Render ``score`` as an uncompressed MusicXML partwise document."""
    for note in score.notes:
        if note.duration.denominator not in ALLOWED_DENOMINATORS:
            raise MusicXMLError(f"unrepresentable duration {note.duration}")
    divisions = divisions_for(score)
    root = ET.Element("score-partwise", version="3.1")
    if score.title:
        work = _sub(root, "work")
        _sub(work, "work-title", score.title)
    ident = _sub(root, "identification")
    misc = _sub(ident, "miscellaneous")
    _sub(misc, "miscellaneous-field", score.school.value, name="school")
    part_list = _sub(root, "part-list")
    sp = _sub(part_list, "score-part", id="P1")
    _sub(sp, "part-name", score.title or "Dizi")
    part = _sub(root, "part", id="P1")

    # a short first measure is a pickup, numbered 0
    pickup = score.measures[0].duration < score.time.measure_length
    for i, measure in enumerate(score.measures):
        attrs = {"number": str(i if pickup else i + 1)}
        if i == 0 and pickup:
            attrs["implicit"] = "yes"
        m = _sub(part, "measure", **attrs)
        if i == 0:
            a = _sub(m, "attributes")
            _sub(a, "divisions", divisions)
            k = _sub(a, "key")
            _sub(k, "fifths", _FIFTHS[score.key.tonic])
            _sub(k, "mode", "major")
            t = _sub(a, "time")
            _sub(t, "beats", score.time.beats)
            _sub(t, "beat-type", score.time.unit)
            c = _sub(a, "clef")
            _sub(c, "sign", "G")
            _sub(c, "line", 2)
        for note in measure.notes:
            m.append(_note_element(note, score.key, divisions, registry))
    ET.indent(root, space="  ")
    body = ET.tostring(root, encoding="unicode")
    return f'<?xml version="1.0" encoding="UTF-8" standalone="no"?>\n{_DOCTYPE}\n{body}\n'
