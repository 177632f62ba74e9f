"""Synthetic two-school corpus for tests and demos.

Both styles are written in ``1=D``, 2/4, four measures per piece, over
disjoint pitch sets, so their token distributions never overlap:

* "North": upper register (6 1' 2' 3' 5'), eighth/sixteenth rhythms, tonguing
  on sixteenths, flutter tonguing on high 5', portamento on dotted eighths.
* "South": lower register (1 2 3 5), quarter/half/triplet rhythms, trills and
  upper acciaccaturas on long notes, lower acciaccaturas on triplets.
"""

from __future__ import annotations

from fractions import Fraction as F
from pathlib import Path

import numpy as np

from .notation import KeySignature, Measure, NoteEvent, Score, School, TimeSignature, serialize_score

KEY = KeySignature(tonic=2)
TIME = TimeSignature(2, 4)

NORTH_PITCHES = ((6, 0), (1, 1), (2, 1), (3, 1), (5, 1))  # (degree, octave shift)
SOUTH_PITCHES = ((1, 0), (2, 0), (3, 0), (5, 0))
NORTH_RHYTHMS = (
    (F(1, 2),) * 4,
    (F(1, 4), F(1, 4), F(1, 2), F(1, 2), F(1, 2)),
    (F(1, 2), F(1, 4), F(1, 4), F(1, 2), F(1, 2)),
    (F(1, 2), F(1, 2), F(1, 4), F(1, 4), F(1, 4), F(1, 4)),
    (F(3, 4), F(1, 4), F(1, 2), F(1, 2)),
)
SOUTH_RHYTHMS = (
    (F(1), F(1)),
    (F(2),),
    (F(3, 2), F(1, 2)),
    (F(1), F(1, 2), F(1, 2)),
    (F(1, 3), F(1, 3), F(1, 3), F(1)),
)


def _north_technique(degree: int, octave: int, d: F, rng) -> str:
    u = rng.random()
    if d == F(1, 4):
        return "Tonguing" if u < 0.7 else "None"
    if d == F(3, 4):
        return "Portamento" if u < 0.6 else "None"
    if (degree, octave) == (5, 1):
        return "FlutterTonguing" if u < 0.5 else "None"
    return "Tonguing" if u < 0.1 else "None"


def _south_technique(degree: int, octave: int, d: F, rng) -> str:
    u = rng.random()
    if d >= 1:
        if u < 0.4:
            return "Trill"
        return "UpperAcciaccatura" if u < 0.7 else "None"
    if d.denominator == 3:
        return "LowerAcciaccatura" if u < 0.3 else "None"
    return "None"


def synth_piece(school: School, rng: np.random.Generator, title: str = "", measures: int = 4) -> Score:
    if school is School.NORTH:
        pitches, rhythms, tech = NORTH_PITCHES, NORTH_RHYTHMS, _north_technique
    elif school is School.SOUTH:
        pitches, rhythms, tech = SOUTH_PITCHES, SOUTH_RHYTHMS, _south_technique
    else:
        raise ValueError("synthetic pieces are North or South")
    bars = []
    for _ in range(measures):
        rhythm = rhythms[int(rng.integers(len(rhythms)))]
        notes = []
        for d in rhythm:
            degree, octave = pitches[int(rng.integers(len(pitches)))]
            notes.append(NoteEvent(degree, 0, octave, d, tech(degree, octave, d, rng)))
        bars.append(Measure(tuple(notes)))
    return Score(tuple(bars), title, school, KEY, TIME)


def synth_corpus(pieces: int = 200, seed: int = 0, measures: int = 4) -> list[Score]:
    """``pieces`` scores, the first half North and the rest South (North gets any odd one)."""
    rng = np.random.default_rng(seed)
    n_north = (pieces + 1) // 2
    out = []
    for i in range(pieces):
        school = School.NORTH if i < n_north else School.SOUTH
        k = i if i < n_north else i - n_north
        out.append(synth_piece(school, rng, f"synth {school.value.lower()} {k:03d}", measures))
    return out


def write_corpus(scores: list[Score], out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in scores:
        path = out / (s.title.replace(" ", "_") + ".jp")
        path.write_text(serialize_score(s), encoding="utf-8")
        paths.append(path)
    return paths
